//! Simulation study: repeated draws from a known model, every estimation
//! method applied to each draw, and bias / RMSE / ASE-ESD / coverage
//! summaries per method and coefficient.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{nmr_impute_with, NmrConfig};
use crate::basis::BasisSpec;
use crate::bootstrap::{run_variants, BootstrapConfig, FailurePolicy, Generator, Variant};
use crate::cokrige::BoundingBox;
use crate::covariate_field::{CovariateFieldParams, CrossCorrelation, MarginalCovariateParams};
use crate::error::{CnrError, Result};
use crate::geo::{Location, LocationSet, MaternParams, Metric};
use crate::pipeline::{fit_cnr_with, CnrConfig, Geometry, MisalignedDataset};
use crate::rng::{derive_seed, rng_stream};
use crate::scalar::{lit, to_f64, Real};
use crate::slmm::{build_design, fit_with, naive_variance, DesignMatrix, SlmmFit, SpatialParams};
use crate::stats::{mean, sample_variance};

/// Estimation methods compared in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Mixed model fitted on the true (hidden) covariates at `S`.
    Oracle,
    Cnr,
    /// `2 β̂ − mean β̂^(t)` over the preliminary bootstrap.
    BcCnr,
    /// L-nearest-matching-and-regress with the given `L`.
    Nmr(usize),
    /// CNR estimate with the model-based standard error.
    Naive,
    /// CNR estimate with the model-based standard error at bias-corrected
    /// spatial parameters.
    NaiveBc,
    Bootstrap,
    UnadjustedBootstrap,
    NccBootstrap,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Oracle => "Oracle".into(),
            Method::Cnr => "CNR".into(),
            Method::BcCnr => "BC-CNR".into(),
            Method::Nmr(l) => format!("{l}-NMR"),
            Method::Naive => "Naive".into(),
            Method::NaiveBc => "Naive-BC".into(),
            Method::Bootstrap => "Bootstrap".into(),
            Method::UnadjustedBootstrap => "Unadj-Bootstrap".into(),
            Method::NccBootstrap => "NCC-Bootstrap".into(),
        }
    }

    fn variant(&self) -> Option<Variant> {
        match self {
            Method::Bootstrap => Some(Variant::Proposed),
            Method::UnadjustedBootstrap => Some(Variant::Unadjusted),
            Method::NccBootstrap => Some(Variant::NonCrossCorrelated),
            _ => None,
        }
    }

    fn needs_bias_correction(&self) -> bool {
        matches!(self, Method::BcCnr | Method::NaiveBc)
    }

    pub fn all() -> Vec<Method> {
        vec![
            Method::Oracle,
            Method::Cnr,
            Method::BcCnr,
            Method::Nmr(1),
            Method::Nmr(3),
            Method::Nmr(5),
            Method::Naive,
            Method::NaiveBc,
            Method::Bootstrap,
            Method::UnadjustedBootstrap,
            Method::NccBootstrap,
        ]
    }
}

/// A complete simulation design. Station coordinates are drawn uniformly
/// over `bbox` once per scenario and held fixed across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig<T> {
    /// Number of covariate stations.
    pub m: usize,
    /// Number of response locations.
    pub n: usize,
    pub covariates: Vec<MarginalCovariateParams<T>>,
    /// Between-covariate correlation, row major.
    pub cross: Vec<Vec<T>>,
    pub spatial: SpatialParams<T>,
    pub beta: Vec<T>,
    pub n_reps: usize,
    /// Bootstrap size for both phases.
    pub t: usize,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    pub bbox: BoundingBox<T>,
    pub metric: Metric,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

fn ar1_rows<T: Real>(k: usize, block: &[usize], rho: T) -> Result<Vec<Vec<T>>> {
    let r = CrossCorrelation::ar1_block(k, block, rho)?;
    Ok(r.matrix().row_iter().map(|row| row.iter().copied().collect()).collect())
}

impl<T: Real> ScenarioConfig<T> {
    fn with_sizes(m: usize, n: usize, k: usize, ar1_block: &[usize], bbox: BoundingBox<T>) -> Self {
        let beta_full = [2.0, 1.0, 0.5, 1.0, 0.5, 1.0];
        let covariate = MarginalCovariateParams {
            mu: T::zero(),
            matern: MaternParams {
                sigma2: T::one(),
                nu: lit(0.5),
                alpha: lit(0.0015),
                tau: lit(0.15),
            },
        };
        Self {
            m,
            n,
            covariates: vec![covariate; k],
            cross: ar1_rows(k, ar1_block, lit(0.5)).expect("valid AR(1) block"),
            spatial: SpatialParams {
                sigma2_rho: lit(0.2),
                nu_rho: lit(0.5),
                alpha_rho: lit(0.0015),
                tau_eps: lit(0.01),
            },
            beta: (0..=k).map(|i| lit(beta_full[i % beta_full.len()])).collect(),
            n_reps: 100,
            t: 100,
            methods: vec![
                Method::Cnr,
                Method::BcCnr,
                Method::Nmr(5),
                Method::Naive,
                Method::NaiveBc,
                Method::Bootstrap,
                Method::UnadjustedBootstrap,
                Method::NccBootstrap,
            ],
            master_seed: 20_240_601,
            bbox,
            metric: Metric::GreatCircleKm,
            level: default_level(),
        }
    }

    /// Full-size design: 243 covariate stations, 796 response sites, five
    /// covariates with AR(1) correlation 0.5 among the last three, 400
    /// replications of a 250-draw bootstrap, over a box covering China.
    pub fn full_scale() -> Self {
        let bbox = BoundingBox {
            lon_min: lit(75.0),
            lon_max: lit(135.0),
            lat_min: lit(18.0),
            lat_max: lit(50.0),
        };
        let mut c = Self::with_sizes(243, 796, 5, &[2, 3, 4], bbox);
        c.n_reps = 400;
        c.t = 250;
        c.methods = Method::all();
        c
    }

    /// Desk-scale design: 60 stations, 120 response sites, three covariates
    /// with AR(1) correlation 0.5 across all of them, 100 replications of a
    /// 100-draw bootstrap. The box is sized so the quartiles of pairwise
    /// distance (about 456 and 983 km) give correlations near 0.5 and 0.2
    /// under the default range.
    pub fn desk_scale() -> Self {
        let bbox = BoundingBox {
            lon_min: lit(105.8),
            lon_max: lit(120.2),
            lat_min: lit(25.7),
            lat_max: lit(38.3),
        };
        Self::with_sizes(60, 120, 3, &[0, 1, 2], bbox)
    }

    pub fn k(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_law(&self) -> Result<CovariateFieldParams<T>> {
        let k = self.k();
        if self.cross.len() != k || self.cross.iter().any(|r| r.len() != k) {
            return Err(CnrError::DimensionMismatch {
                what: "cross-correlation rows",
                expected: k,
                found: self.cross.len(),
            });
        }
        let r = DMatrix::from_fn(k, k, |i, j| self.cross[i][j]);
        CovariateFieldParams::new(self.covariates.clone(), CrossCorrelation::new(r)?)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(CnrError::Empty("covariates"));
        }
        if self.beta.len() != k + 1 {
            return Err(CnrError::DimensionMismatch {
                what: "beta (intercept plus one slope per covariate)",
                expected: k + 1,
                found: self.beta.len(),
            });
        }
        if self.m < 10 || self.n < k + 6 {
            return Err(CnrError::InvalidParameter(format!(
                "scenario too small: M = {}, N = {}",
                self.m, self.n
            )));
        }
        if self.n_reps == 0 {
            return Err(CnrError::InvalidParameter("n_reps must be positive".into()));
        }
        if self.methods.iter().any(|m| m.variant().is_some() || m.needs_bias_correction()) && self.t < 2 {
            return Err(CnrError::InvalidParameter("bootstrap size must be at least 2".into()));
        }
        for m in &self.methods {
            if let Method::Nmr(l) = m {
                if *l == 0 || *l > self.m {
                    return Err(CnrError::InvalidParameter(format!("L = {l} outside [1, {}]", self.m)));
                }
            }
        }
        for c in &self.covariates {
            c.matern.validate_for(self.metric)?;
        }
        self.spatial.validate()?;
        self.covariate_law()?;
        Ok(())
    }

    /// Covariate stations and response sites, drawn uniformly over the box
    /// from the scenario seed.
    pub fn station_layout(&self) -> Result<(LocationSet<T>, LocationSet<T>)> {
        let mut rng = rng_stream(self.master_seed, "scenario-layout", 0);
        let b = &self.bbox;
        let (x0, x1, y0, y1) = (to_f64(b.lon_min), to_f64(b.lon_max), to_f64(b.lat_min), to_f64(b.lat_max));
        if !(x1 > x0 && y1 > y0) {
            return Err(CnrError::InvalidParameter("empty bounding box".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut draw = |count: usize| {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let lon: f64 = x0 + (x1 - x0) * rng.random::<f64>();
                let lat: f64 = y0 + (y1 - y0) * rng.random::<f64>();
                if seen.insert((lon.to_bits(), lat.to_bits())) {
                    out.push(Location::new(lit::<T>(lon), lit::<T>(lat)));
                }
            }
            out
        };
        let tilde = draw(self.m);
        let s = draw(self.n);
        Ok((LocationSet::new(tilde, self.metric)?, LocationSet::new(s, self.metric)?))
    }
}

/// What one method produced on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub estimate: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub intervals: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub outcomes: BTreeMap<Method, MethodOutcome>,
    pub sigma2_rho_hat: f64,
    pub sigma2_rho_bc: Option<f64>,
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub coefficient: String,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub ase_esd: Option<f64>,
    pub coverage: Option<f64>,
    pub avg_width: Option<f64>,
    /// Replications contributing to the row.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// Quantities that could not be computed, with the reason.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub table: MetricsTable,
    pub records: Vec<ReplicateRecord>,
    pub n_failed: usize,
}

/// `mean(estimates) − truth`.
pub fn metric_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(CnrError::Empty("estimates"));
    }
    Ok(mean(estimates) - truth)
}

/// `sqrt(bias² + V_emp)` with the `1/(n−1)` empirical variance.
pub fn metric_rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    let bias = metric_bias(estimates, truth)?;
    let v = sample_variance(estimates)
        .ok_or_else(|| CnrError::DegenerateInput("empirical variance needs two replications".into()))?;
    Ok((bias * bias + v).sqrt())
}

/// Average standard error divided by the empirical standard deviation.
pub fn metric_ase_esd(se_estimates: &[f64], estimates: &[f64]) -> Result<f64> {
    if se_estimates.is_empty() {
        return Err(CnrError::Empty("standard errors"));
    }
    let esd = sample_variance(estimates)
        .ok_or_else(|| CnrError::DegenerateInput("ESD needs two replications".into()))?
        .sqrt();
    Ok(mean(se_estimates) / esd)
}

/// Fraction of intervals containing `truth`.
pub fn metric_coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(CnrError::Empty("intervals"));
    }
    let hits = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    Ok(hits as f64 / intervals.len() as f64)
}

fn wald(estimate: &[f64], se: &[f64]) -> Vec<(f64, f64)> {
    estimate.iter().zip(se).map(|(b, s)| (b - 1.96 * s, b + 1.96 * s)).collect()
}

fn to_vec<T: Real>(v: impl IntoIterator<Item = T>) -> Vec<f64> {
    v.into_iter().map(to_f64).collect()
}

fn diag_sqrt<T: Real>(m: &DMatrix<T>) -> Vec<f64> {
    (0..m.nrows()).map(|i| to_f64(m[(i, i)]).sqrt()).collect()
}

fn model_outcome<T: Real>(fit: &SlmmFit<T>) -> MethodOutcome {
    let estimate = to_vec(fit.params.beta.iter().copied());
    let se = diag_sqrt(&fit.naive_cov);
    MethodOutcome {
        intervals: Some(wald(&estimate, &se)),
        estimate,
        se: Some(se),
    }
}

struct Shared<'a, T: Real> {
    cfg: &'a ScenarioConfig<T>,
    geometry: Geometry<T>,
    generator: Generator<T>,
    cnr: CnrConfig<T>,
    locs_tilde: LocationSet<T>,
    locs_s: LocationSet<T>,
    nmr_cross: DMatrix<T>,
}

impl<T: Real> Shared<'_, T> {
    fn replicate(&self, index: usize) -> Result<ReplicateRecord> {
        let cfg = self.cfg;
        let seed = derive_seed(cfg.master_seed, "scenario-rep", index as u64);
        let sim = self.generator.simulate(&mut rng_stream(seed, "simulate", 0));
        let fit = fit_cnr_with(&sim.y, &sim.x_tilde, &self.geometry, &self.cnr, None)?;
        let mut outcomes = BTreeMap::new();
        let cnr_outcome = model_outcome(&fit.slmm);
        let methods = &cfg.methods;

        if methods.contains(&Method::Oracle) {
            let design = build_design(&sim.x_s_hidden, &self.cnr.specs, None)?;
            let oracle = fit_with(&sim.y, &design, &self.geometry.response, cfg.metric, cfg.spatial.nu_rho, &self.cnr.optimizer)?;
            outcomes.insert(Method::Oracle, model_outcome(&oracle));
        }
        for m in methods {
            if let Method::Nmr(l) = *m {
                let x_hat = nmr_impute_with(&sim.x_tilde, &self.nmr_cross, &NmrConfig::new(l)?)?;
                let design = build_design(&x_hat, &self.cnr.specs, None)?;
                let f = fit_with(&sim.y, &design, &self.geometry.response, cfg.metric, cfg.spatial.nu_rho, &self.cnr.optimizer)?;
                outcomes.insert(*m, model_outcome(&f));
            }
        }

        let variants: Vec<Variant> = methods.iter().filter_map(|m| m.variant()).collect();
        let needs_boot = !variants.is_empty() || methods.iter().any(|m| m.needs_bias_correction());
        let mut sigma2_rho_bc = None;
        let mut n_dropped = 0;
        if needs_boot {
            let dataset = MisalignedDataset::new(
                sim.y.clone(),
                self.locs_s.clone(),
                sim.x_tilde.clone(),
                self.locs_tilde.clone(),
                (1..=cfg.k()).map(|k| format!("x{k}")).collect(),
            )?;
            let boot_cfg = BootstrapConfig {
                t_prelim: cfg.t,
                t_second: cfg.t,
                variant: Variant::Proposed,
                master_seed: seed,
                failure_policy: FailurePolicy::DropAndWarn,
                level: cfg.level,
                band_points: 2,
            };
            let runs = run_variants(&dataset, &self.geometry, &fit, &self.cnr, &boot_cfg, &variants)?;
            for r in &runs.results {
                let method = match r.variant {
                    Variant::Proposed => Method::Bootstrap,
                    Variant::Unadjusted => Method::UnadjustedBootstrap,
                    Variant::NonCrossCorrelated => Method::NccBootstrap,
                };
                outcomes.insert(
                    method,
                    MethodOutcome {
                        estimate: cnr_outcome.estimate.clone(),
                        se: Some(to_vec(r.standard_errors())),
                        intervals: Some(r.intervals.iter().map(|(a, b)| (to_f64(*a), to_f64(*b))).collect()),
                    },
                );
                n_dropped += r.n_dropped;
            }
            if let Some(bc) = runs.bc_params {
                sigma2_rho_bc = Some(to_f64(bc.sigma2_rho_bc));
                if methods.contains(&Method::NaiveBc) {
                    let v = naive_variance(&fit.slmm, &self.geometry.response, &bc.as_spatial())?;
                    let se = diag_sqrt(&v);
                    outcomes.insert(
                        Method::NaiveBc,
                        MethodOutcome {
                            estimate: cnr_outcome.estimate.clone(),
                            intervals: Some(wald(&cnr_outcome.estimate, &se)),
                            se: Some(se),
                        },
                    );
                }
            }
            if let (Some(b), true) = (&runs.beta_bc, methods.contains(&Method::BcCnr)) {
                outcomes.insert(
                    Method::BcCnr,
                    MethodOutcome {
                        estimate: to_vec(b.iter().copied()),
                        se: None,
                        intervals: None,
                    },
                );
            }
        }
        if methods.contains(&Method::Naive) {
            outcomes.insert(Method::Naive, cnr_outcome.clone());
        }
        if methods.contains(&Method::Cnr) {
            outcomes.insert(
                Method::Cnr,
                MethodOutcome {
                    estimate: cnr_outcome.estimate.clone(),
                    se: None,
                    intervals: None,
                },
            );
        }
        Ok(ReplicateRecord {
            index,
            outcomes,
            sigma2_rho_hat: to_f64(fit.slmm.params.spatial.sigma2_rho),
            sigma2_rho_bc,
            n_dropped,
        })
    }
}

/// Which summaries a method reports: point-estimate accuracy, interval
/// calibration, or both.
fn reports(method: Method) -> (bool, bool) {
    match method {
        Method::Oracle | Method::Nmr(_) => (true, true),
        Method::Cnr | Method::BcCnr => (true, false),
        _ => (false, true),
    }
}

fn aggregate(cfg: &ScenarioConfig<impl Real>, design: &DesignMatrix<impl Real>, records: &[ReplicateRecord]) -> MetricsTable {
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    let truth: Vec<f64> = cfg.beta.iter().map(|&b| to_f64(b)).collect();
    let mut methods = cfg.methods.clone();
    methods.dedup();
    for method in methods {
        let label = method.label();
        let outs: Vec<&MethodOutcome> = records.iter().filter_map(|r| r.outcomes.get(&method)).collect();
        let (point, interval) = reports(method);
        for (j, name) in design.column_names.iter().enumerate() {
            let est: Vec<f64> = outs.iter().map(|o| o.estimate[j]).collect();
            let mut note = |what: &str, r: Result<f64>| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    flags.push(format!("{label} {name} {what}: {e}"));
                    None
                }
            };
            let bias = if point { note("bias", metric_bias(&est, truth[j])) } else { None };
            let rmse = if point { note("rmse", metric_rmse(&est, truth[j])) } else { None };
            let ses: Vec<f64> = outs.iter().filter_map(|o| o.se.as_ref().map(|s| s[j])).collect();
            let ase_esd = if interval && !ses.is_empty() {
                note("ase/esd", metric_ase_esd(&ses, &est))
            } else {
                None
            };
            let ints: Vec<(f64, f64)> = outs.iter().filter_map(|o| o.intervals.as_ref().map(|i| i[j])).collect();
            let (coverage, avg_width) = if interval && !ints.is_empty() {
                (
                    note("coverage", metric_coverage(&ints, truth[j])),
                    Some(mean(&ints.iter().map(|(a, b)| b - a).collect::<Vec<_>>())),
                )
            } else {
                (None, None)
            };
            rows.push(MetricsRow {
                method: label.clone(),
                coefficient: name.clone(),
                bias,
                rmse,
                ase_esd,
                coverage,
                avg_width,
                n: outs.len(),
            });
        }
    }
    MetricsTable { rows, flags }
}

#[allow(clippy::type_complexity)]
fn scenario_law<T: Real>(
    cfg: &ScenarioConfig<T>,
) -> Result<(LocationSet<T>, LocationSet<T>, Geometry<T>, DesignMatrix<T>, Generator<T>)> {
    cfg.validate()?;
    let k = cfg.k();
    let (locs_tilde, locs_s) = cfg.station_layout()?;
    let geometry = Geometry::new(&locs_tilde, &locs_s)?;
    let design = DesignMatrix::from_basis(&vec![BasisSpec::Linear; k], vec![None; k])?;
    let beta = DVector::from_vec(cfg.beta.clone());
    let generator = Generator::new(&cfg.covariate_law()?, &cfg.spatial, &beta, &design, &geometry)?;
    Ok((locs_tilde, locs_s, geometry, design, generator))
}

/// The dataset of replication `index`, identical to the one `run_scenario`
/// fits, together with the hidden covariates at the response sites.
pub fn simulate_replicate<T: Real>(cfg: &ScenarioConfig<T>, index: usize) -> Result<(MisalignedDataset<T>, DMatrix<T>)> {
    let (locs_tilde, locs_s, _, _, generator) = scenario_law(cfg)?;
    let seed = derive_seed(cfg.master_seed, "scenario-rep", index as u64);
    let sim = generator.simulate(&mut rng_stream(seed, "simulate", 0));
    let names = (1..=cfg.k()).map(|k| format!("x{k}")).collect();
    let dataset = MisalignedDataset::new(sim.y, locs_s, sim.x_tilde, locs_tilde, names)?;
    Ok((dataset, sim.x_s_hidden))
}

/// Runs every replication of the scenario and aggregates the metrics.
/// Replications run in parallel; results are reduced in index order.
pub fn run_scenario<T: Real>(cfg: &ScenarioConfig<T>) -> Result<ScenarioResult> {
    let k = cfg.k();
    let (locs_tilde, locs_s, geometry, design, generator) = scenario_law(cfg)?;
    let mut cnr = CnrConfig::exponential_linear(k);
    cnr.nu_x = cfg.covariates.iter().map(|c| c.matern.nu).collect();
    cnr.nu_rho = cfg.spatial.nu_rho;
    let shared = Shared {
        cfg,
        nmr_cross: geometry.cross.clone(),
        geometry,
        generator,
        cnr,
        locs_tilde,
        locs_s,
    };
    let results: Vec<Result<ReplicateRecord>> = (0..cfg.n_reps).into_par_iter().map(|i| shared.replicate(i)).collect();
    let mut records = Vec::with_capacity(cfg.n_reps);
    let mut n_failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("replication {i} failed: {e}");
                n_failed += 1;
            }
        }
    }
    let mut table = aggregate(cfg, &design, &records);
    if n_failed > 0 {
        table.flags.push(format!("{n_failed} of {} replications failed", cfg.n_reps));
    }
    Ok(ScenarioResult { table, records, n_failed })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rounds to six significant digits for display.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

impl MetricsTable {
    /// Machine-readable table; numbers use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,coefficient,bias,rmse,ase_esd,coverage,avg_width,n\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.coefficient,
                csv_cell(r.bias),
                csv_cell(r.rmse),
                csv_cell(r.ase_esd),
                csv_cell(r.coverage),
                csv_cell(r.avg_width),
                r.n
            );
        }
        out
    }

    /// Column-aligned table at six significant digits.
    pub fn to_text(&self) -> String {
        let header = ["method", "coefficient", "bias", "rmse", "ase/esd", "coverage", "width", "n"];
        let cell = |v: Option<f64>| v.map(sig6).unwrap_or_else(|| "-".into());
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.coefficient.clone(),
                    cell(r.bias),
                    cell(r.rmse),
                    cell(r.ase_esd),
                    cell(r.coverage),
                    cell(r.avg_width),
                    r.n.to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| if i < 2 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for row in &body {
            line(row.iter().map(|s| s.as_str()).collect(), &mut out);
        }
        for f in &self.flags {
            let _ = writeln!(out, "note: {f}");
        }
        out
    }

    pub fn get(&self, method: &str, coefficient: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.coefficient == coefficient)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(metric_bias(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(metric_bias(&[1.0, 3.0], 1.0).unwrap(), 1.0);
        assert!(metric_bias(&[], 1.0).is_err());
        assert_eq!(metric_rmse(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!((metric_rmse(&[0.0, 2.0], 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let est = [0.0, 2.0, 4.0];
        let esd = 2.0;
        assert!((metric_ase_esd(&[esd; 3], &est).unwrap() - 1.0).abs() < 1e-15);
        assert!((metric_ase_esd(&[esd / 2.0; 3], &est).unwrap() - 0.5).abs() < 1e-15);
        assert!(metric_ase_esd(&[1.0], &[1.0]).is_err());
        let all = [(f64::NEG_INFINITY, f64::INFINITY); 4];
        assert_eq!(metric_coverage(&all, 3.0).unwrap(), 1.0);
        assert_eq!(metric_coverage(&[(0.0, 1.0), (2.0, 3.0)], 5.0).unwrap(), 0.0);
        assert_eq!(metric_coverage(&[(0.0, 1.0), (2.0, 3.0)], 0.5).unwrap(), 0.5);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(-12.3456789), "-12.3457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1.00000");
    }

    #[test]
    fn presets_are_valid() {
        let desk = ScenarioConfig::<f64>::desk_scale();
        desk.validate().unwrap();
        assert_eq!((desk.m, desk.n, desk.k(), desk.n_reps, desk.t), (60, 120, 3, 100, 100));
        assert_eq!(desk.beta, vec![2.0, 1.0, 0.5, 1.0]);
        assert_eq!(desk.cross[0][2], 0.25);
        let full = ScenarioConfig::<f64>::full_scale();
        full.validate().unwrap();
        assert_eq!((full.m, full.n, full.k(), full.n_reps, full.t), (243, 796, 5, 400, 250));
        assert_eq!(full.beta, vec![2.0, 1.0, 0.5, 1.0, 0.5, 1.0]);
        assert_eq!(full.cross[0][1], 0.0);
        assert_eq!(full.cross[2][4], 0.25);
    }

    fn tiny(n_reps: usize) -> ScenarioConfig<f64> {
        let mut c = ScenarioConfig::desk_scale();
        c.m = 20;
        c.n = 25;
        c.k_truncate(2);
        c.n_reps = n_reps;
        c.t = 4;
        c.methods = vec![Method::Oracle, Method::Cnr, Method::BcCnr, Method::Nmr(3), Method::Naive, Method::NaiveBc, Method::Bootstrap, Method::UnadjustedBootstrap];
        c
    }

    impl ScenarioConfig<f64> {
        fn k_truncate(&mut self, k: usize) {
            self.covariates.truncate(k);
            self.cross = self.cross.iter().take(k).map(|r| r[..k].to_vec()).collect();
            self.beta.truncate(k + 1);
        }
    }

    #[test]
    fn tiny_scenario_is_deterministic() {
        let cfg = tiny(3);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.table.to_csv(), b.table.to_csv());
        assert_eq!(a.records.len() + a.n_failed, 3);
        let row = a.table.get("CNR", "x1").unwrap();
        assert!(row.rmse.unwrap() >= row.bias.unwrap().abs());
        let cov = a.table.get("Bootstrap", "x2").unwrap().coverage.unwrap();
        assert!((0.0..=1.0).contains(&cov));
        assert!(a.table.to_text().lines().count() > a.table.rows.len());
    }

    #[test]
    fn single_replication_flags_esd() {
        let mut cfg = tiny(1);
        cfg.methods = vec![Method::Cnr, Method::Naive];
        let r = run_scenario(&cfg).unwrap();
        let row = r.table.get("CNR", "x1").unwrap();
        assert!(row.bias.is_some() && row.rmse.is_none());
        assert!(r.table.get("Naive", "x1").unwrap().ase_esd.is_none());
        assert!(!r.table.flags.is_empty());
    }
}
