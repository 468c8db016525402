//! Two-phase parametric bootstrap: a preliminary phase that bias-corrects
//! the spatial covariance parameters on the log scale, and a second phase
//! that draws coefficient and smoother replicates for percentile intervals
//! and bands.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate_field::{CovariateFieldParams, FactoredField};
use crate::error::{CnrError, Result};
use crate::gaussian::{cholesky, standard_normal_vector, CholeskyFactor};
use crate::geo::{matern_cov_from_distances, LocationSet, MaternParams};
use crate::pipeline::{fit_cnr_with, CnrConfig, CnrFit, Geometry, MisalignedDataset};
use crate::rng::{rng_stream, RngStream};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::slmm::{smoother_values, DesignMatrix, SlmmParams, SpatialParams};
use crate::stats::{quantile_sorted, sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Bias-corrected spatial parameters and estimated `R̂` in the second phase.
    Proposed,
    /// Second phase at the uncorrected estimates, no preliminary phase.
    Unadjusted,
    /// As `Proposed` but with `R̂` replaced by the identity in the second phase.
    NonCrossCorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    DropAndWarn,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub t_prelim: usize,
    pub t_second: usize,
    pub variant: Variant,
    pub master_seed: u64,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    /// Nominal coverage of intervals and bands.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Grid points per smoother band.
    #[serde(default = "default_band_points")]
    pub band_points: usize,
}

fn default_level() -> f64 {
    0.95
}

fn default_band_points() -> usize {
    50
}

impl BootstrapConfig {
    pub fn new(t: usize, variant: Variant, master_seed: u64) -> Self {
        Self {
            t_prelim: t,
            t_second: t,
            variant,
            master_seed,
            failure_policy: FailurePolicy::DropAndWarn,
            level: default_level(),
            band_points: default_band_points(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_prelim < 2 || self.t_second < 2 {
            return Err(CnrError::InvalidParameter("bootstrap sizes must be at least 2".into()));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return Err(CnrError::InvalidParameter(format!("level {} outside (0, 1]", self.level)));
        }
        if self.t_prelim < 50 || self.t_second < 50 {
            log::warn!(
                "bootstrap sizes ({}, {}) below the recommended 50",
                self.t_prelim,
                self.t_second
            );
        }
        Ok(())
    }
}

/// Log-scale bias-corrected `(σ²_ρ, α_ρ, τ_ε)`; `ν_ρ` is carried unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrectedSpatialParams<T> {
    pub sigma2_rho_bc: T,
    pub nu_rho: T,
    pub alpha_rho_bc: T,
    pub tau_eps_bc: T,
}

impl<T: Real> BiasCorrectedSpatialParams<T> {
    pub fn as_spatial(&self) -> SpatialParams<T> {
        SpatialParams {
            sigma2_rho: self.sigma2_rho_bc,
            nu_rho: self.nu_rho,
            alpha_rho: self.alpha_rho_bc,
            tau_eps: self.tau_eps_bc,
        }
    }
}

/// `exp{2 log θ̂ − mean_t log θ̂^(t)}` for each of `σ²_ρ`, `α_ρ`, `τ_ε`.
pub fn bias_correct<T: Real>(original: &SpatialParams<T>, replicates: &[SpatialParams<T>]) -> Result<BiasCorrectedSpatialParams<T>> {
    if replicates.is_empty() {
        return Err(CnrError::Empty("bootstrap replicates"));
    }
    original.validate()?;
    let tf = from_usize::<T>(replicates.len());
    let mut log_means = [T::zero(); 3];
    for (t, r) in replicates.iter().enumerate() {
        for (i, v) in r.free().into_iter().enumerate() {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(CnrError::ReplicateFailure {
                    index: t,
                    reason: format!("non-positive spatial parameter {v}"),
                });
            }
            log_means[i] += v.ln();
        }
    }
    let orig = original.free();
    let bc: Vec<T> = (0..3)
        .map(|i| (lit::<T>(2.0) * orig[i].ln() - log_means[i] / tf).exp())
        .collect();
    Ok(BiasCorrectedSpatialParams {
        sigma2_rho_bc: bc[0],
        nu_rho: original.nu_rho,
        alpha_rho_bc: bc[1],
        tau_eps_bc: bc[2],
    })
}

/// Type-7 empirical quantiles at `(1 − level)/2` and `(1 + level)/2`.
pub fn percentile_interval<T: Real>(draws: &[T], level: f64) -> Result<(T, T)> {
    if draws.len() < 2 {
        return Err(CnrError::InvalidParameter("at least two draws required".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(CnrError::InvalidParameter(format!("level {level} outside (0, 1]")));
    }
    let s = sorted(draws);
    let a = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a)))
}

/// One simulated dataset; `x_s_hidden` holds the covariates at `S` that the
/// pipeline never sees.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset<T: Real> {
    pub y: DVector<T>,
    pub x_tilde: DMatrix<T>,
    pub x_s_hidden: DMatrix<T>,
}

/// Precomputed law of `(x̃, x_S, y)`: covariates from the generalized
/// Kronecker field over `S̃ ∪ S`, then `y = B β + ρ + ε` with `B` built from
/// the simulated `x_S` under a fixed basis.
#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    field: FactoredField<T>,
    means: Vec<T>,
    m: usize,
    design: DesignMatrix<T>,
    beta: DVector<T>,
    response_factor: Option<CholeskyFactor<T>>,
}

impl<T: Real> Generator<T> {
    /// `design` supplies the basis specs and knots; `spatial` may have zero
    /// variances, in which case `y = B β` exactly.
    pub fn new(
        theta_x: &CovariateFieldParams<T>,
        spatial: &SpatialParams<T>,
        beta: &DVector<T>,
        design: &DesignMatrix<T>,
        geometry: &Geometry<T>,
    ) -> Result<Self> {
        if beta.len() != design.p() {
            return Err(CnrError::DimensionMismatch {
                what: "coefficients vs design columns",
                expected: design.p(),
                found: beta.len(),
            });
        }
        if theta_x.k() != design.k() {
            return Err(CnrError::DimensionMismatch {
                what: "covariate law vs basis",
                expected: design.k(),
                found: theta_x.k(),
            });
        }
        let field = FactoredField::from_distances(theta_x, &geometry.joint())?;
        let params = MaternParams {
            sigma2: spatial.sigma2_rho,
            nu: spatial.nu_rho,
            alpha: spatial.alpha_rho,
            tau: spatial.tau_eps,
        };
        let response_factor = if spatial.sigma2_rho == T::zero() && spatial.tau_eps == T::zero() {
            None
        } else {
            params.validate_for(geometry.metric).or_else(|e| {
                if spatial.sigma2_rho == T::zero() && spatial.tau_eps > T::zero() {
                    Ok(())
                } else {
                    Err(e)
                }
            })?;
            Some(cholesky(&matern_cov_from_distances(&geometry.response, &params, true))?)
        };
        Ok(Self {
            field,
            means: theta_x.means(),
            m: geometry.m(),
            design: design.clone(),
            beta: beta.clone(),
            response_factor,
        })
    }

    pub fn simulate(&self, rng: &mut RngStream) -> SimulatedDataset<T> {
        let all = self.field.sample(&self.means, rng);
        let n = all.nrows() - self.m;
        let x_tilde = all.rows(0, self.m).into_owned();
        let x_s_hidden = all.rows(self.m, n).into_owned();
        let b = self.design.evaluate(&x_s_hidden);
        let mut y = b * &self.beta;
        if let Some(f) = &self.response_factor {
            let z = standard_normal_vector::<T, _>(n, rng);
            y += f.lower() * z;
        }
        SimulatedDataset { y, x_tilde, x_s_hidden }
    }
}

/// Single draw from the joint law over `S̃ ∪ S`.
pub fn simulate_dataset<T: Real>(
    theta_x: &CovariateFieldParams<T>,
    slmm: &SlmmParams<T>,
    design: &DesignMatrix<T>,
    locs_s: &LocationSet<T>,
    locs_s_tilde: &LocationSet<T>,
    rng: &mut RngStream,
) -> Result<SimulatedDataset<T>> {
    let geometry = Geometry::new(locs_s_tilde, locs_s)?;
    Ok(Generator::new(theta_x, &slmm.spatial, &slmm.beta, design, &geometry)?.simulate(rng))
}

/// Percentile envelope of the smoother draws for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band<T> {
    pub covariate: usize,
    pub x: Vec<T>,
    pub fit: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult<T: Real> {
    pub variant: Variant,
    /// Second-phase coefficient draws, one row per retained replicate.
    pub beta_draws: DMatrix<T>,
    /// Second-phase `(σ²_ρ, α_ρ, τ_ε)` draws.
    pub spatial_draws: DMatrix<T>,
    /// Preliminary-phase coefficient draws (empty for `Unadjusted`).
    pub prelim_beta_draws: DMatrix<T>,
    /// Preliminary-phase `(σ²_ρ, α_ρ, τ_ε)` draws (empty for `Unadjusted`).
    pub prelim_spatial_draws: DMatrix<T>,
    pub bc_params: Option<BiasCorrectedSpatialParams<T>>,
    /// `2 β̂ − mean β̂^(t)` over the preliminary draws.
    pub beta_bc: Option<DVector<T>>,
    pub intervals: Vec<(T, T)>,
    pub bands: Vec<Band<T>>,
    pub n_dropped: usize,
}

impl<T: Real> BootstrapResult<T> {
    /// Standard deviation of each coefficient across second-phase draws.
    pub fn standard_errors(&self) -> Vec<T> {
        column_sd(&self.beta_draws)
    }
}

fn column_sd<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    m.column_iter()
        .map(|c| {
            let v: Vec<T> = c.iter().copied().collect();
            crate::stats::sample_variance(&v).map(|s| s.sqrt()).unwrap_or(T::zero())
        })
        .collect()
}

struct Replicate<T: Real> {
    beta: DVector<T>,
    spatial: SpatialParams<T>,
    smoothers: Vec<Vec<T>>,
}

struct Phase<T: Real> {
    replicates: Vec<Replicate<T>>,
    dropped: usize,
}

/// Shared state for all replicates of one bootstrap run.
struct Context<'a, T: Real> {
    geometry: &'a Geometry<T>,
    cfg: &'a CnrConfig<T>,
    original: &'a CnrFit<T>,
    grids: Vec<Vec<T>>,
    conditioning: Vec<T>,
    policy: FailurePolicy,
    master_seed: u64,
}

impl<T: Real> Context<'_, T> {
    fn replicate(&self, generator: &Generator<T>, tag: &str, t: usize) -> Result<Replicate<T>> {
        let mut rng = rng_stream(self.master_seed, tag, t as u64);
        let sim = generator.simulate(&mut rng);
        let fit = fit_cnr_with(&sim.y, &sim.x_tilde, self.geometry, self.cfg, None)?;
        let alpha0 = self.original.slmm.params.spatial.alpha_rho;
        let alpha = fit.slmm.params.spatial.alpha_rho;
        if alpha > alpha0 * lit(1e3) || alpha < alpha0 * lit(1e-3) {
            return Err(CnrError::OptimizerFailure(format!(
                "range estimate {} far from original {}",
                to_f64(alpha),
                to_f64(alpha0)
            )));
        }
        let smoothers = self
            .grids
            .iter()
            .enumerate()
            .map(|(k, g)| smoother_values(&fit.slmm.design, &fit.slmm.params.beta, k, g, &self.conditioning))
            .collect();
        Ok(Replicate {
            beta: fit.slmm.params.beta,
            spatial: fit.slmm.params.spatial,
            smoothers,
        })
    }

    fn phase(&self, generator: &Generator<T>, tag: &str, count: usize) -> Result<Phase<T>> {
        let results: Vec<Result<Replicate<T>>> = (0..count)
            .into_par_iter()
            .map(|t| self.replicate(generator, tag, t))
            .collect();
        let mut replicates = Vec::with_capacity(count);
        let mut dropped = 0;
        for (t, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) => replicates.push(r),
                Err(e) => match self.policy {
                    FailurePolicy::Abort => {
                        return Err(CnrError::ReplicateFailure {
                            index: t,
                            reason: e.to_string(),
                        })
                    }
                    FailurePolicy::DropAndWarn => {
                        log::debug!("{tag} replicate {t} dropped: {e}");
                        dropped += 1;
                    }
                },
            }
        }
        if dropped > 0 {
            log::warn!("{tag} bootstrap: {dropped} of {count} replicates dropped");
        }
        if replicates.len() < 2 {
            return Err(CnrError::DegenerateInput(format!(
                "{tag} bootstrap retained {} replicates",
                replicates.len()
            )));
        }
        Ok(Phase { replicates, dropped })
    }

    fn generator(&self, spatial: &SpatialParams<T>, identity_cross: bool) -> Result<Generator<T>> {
        let theta = if identity_cross {
            self.original.covariate_params.without_cross_correlation()
        } else {
            self.original.covariate_params.clone()
        };
        Generator::new(
            &theta,
            spatial,
            &self.original.slmm.params.beta,
            &self.original.slmm.design,
            self.geometry,
        )
    }

    fn summarize(
        &self,
        variant: Variant,
        level: f64,
        second: &Phase<T>,
        prelim: Option<&Phase<T>>,
        bc_params: Option<BiasCorrectedSpatialParams<T>>,
    ) -> Result<BootstrapResult<T>> {
        let beta_draws = beta_matrix(&second.replicates);
        let intervals = beta_draws
            .column_iter()
            .map(|c| percentile_interval(c.as_slice(), level))
            .collect::<Result<Vec<_>>>()?;
        let mut bands = Vec::with_capacity(self.grids.len());
        for (k, grid) in self.grids.iter().enumerate() {
            let fit = smoother_values(
                &self.original.slmm.design,
                &self.original.slmm.params.beta,
                k,
                grid,
                &self.conditioning,
            );
            let mut lower = Vec::with_capacity(grid.len());
            let mut upper = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let draws: Vec<T> = second.replicates.iter().map(|r| r.smoothers[k][g]).collect();
                let (lo, hi) = percentile_interval(&draws, level)?;
                lower.push(lo);
                upper.push(hi);
            }
            bands.push(Band {
                covariate: k,
                x: grid.clone(),
                fit,
                lower,
                upper,
            });
        }
        let beta_hat = &self.original.slmm.params.beta;
        let (prelim_beta_draws, prelim_spatial_draws, beta_bc) = match prelim {
            Some(p) => {
                let b = beta_matrix(&p.replicates);
                let mean = DVector::from_fn(b.ncols(), |j, _| b.column(j).mean());
                let bc = beta_hat * lit::<T>(2.0) - mean;
                (b, spatial_matrix(&p.replicates), Some(bc))
            }
            None => (DMatrix::zeros(0, beta_hat.len()), DMatrix::zeros(0, 3), None),
        };
        Ok(BootstrapResult {
            variant,
            beta_draws,
            spatial_draws: spatial_matrix(&second.replicates),
            prelim_beta_draws,
            prelim_spatial_draws,
            bc_params,
            beta_bc,
            intervals,
            bands,
            n_dropped: second.dropped + prelim.map_or(0, |p| p.dropped),
        })
    }
}

fn beta_matrix<T: Real>(reps: &[Replicate<T>]) -> DMatrix<T> {
    let p = reps[0].beta.len();
    DMatrix::from_fn(reps.len(), p, |t, j| reps[t].beta[j])
}

fn spatial_matrix<T: Real>(reps: &[Replicate<T>]) -> DMatrix<T> {
    DMatrix::from_fn(reps.len(), 3, |t, j| reps[t].spatial.free()[j])
}

/// Evenly spaced smoother grid spanning the cokriged values of covariate `k`.
pub fn band_grid<T: Real>(x_hat: &DMatrix<T>, k: usize, points: usize) -> Vec<T> {
    let col = x_hat.column(k);
    let lo = col.min();
    let hi = col.max();
    if points < 2 {
        return vec![lo];
    }
    let step = (hi - lo) / from_usize::<T>(points - 1);
    (0..points).map(|i| lo + step * from_usize::<T>(i)).collect()
}

const PRELIM_TAG: &str = "bootstrap-prelim";
const SECOND_TAG: &str = "bootstrap-second";
const NCC_TAG: &str = "bootstrap-second-ncc";

/// Output of [`run_variants`]: the preliminary-phase corrections (when that
/// phase ran) and one result per requested variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRuns<T: Real> {
    pub bc_params: Option<BiasCorrectedSpatialParams<T>>,
    pub beta_bc: Option<DVector<T>>,
    pub results: Vec<BootstrapResult<T>>,
}

/// Runs several variants on one dataset, sharing work between them: the
/// preliminary phase is run once, and the unadjusted second phase (which
/// has the same law as the preliminary phase) reuses the preliminary draws
/// when the two sizes agree. An empty `variants` runs the preliminary
/// phase alone.
pub fn run_variants<T: Real>(
    dataset: &MisalignedDataset<T>,
    geometry: &Geometry<T>,
    original: &CnrFit<T>,
    cnr_cfg: &CnrConfig<T>,
    cfg: &BootstrapConfig,
    variants: &[Variant],
) -> Result<BootstrapRuns<T>> {
    cfg.validate()?;
    if geometry.m() != dataset.locs_covariates.len() || geometry.n() != dataset.locs_response.len() {
        return Err(CnrError::DimensionMismatch {
            what: "geometry vs dataset",
            expected: dataset.locs_response.len(),
            found: geometry.n(),
        });
    }
    let k = dataset.k();
    let ctx = Context {
        geometry,
        cfg: cnr_cfg,
        original,
        grids: (0..k).map(|j| band_grid(&original.x_hat, j, cfg.band_points)).collect(),
        conditioning: original.covariate_params.means(),
        policy: cfg.failure_policy,
        master_seed: cfg.master_seed,
    };
    let uncorrected = original.slmm.params.spatial;
    let needs_prelim = variants.is_empty()
        || variants.iter().any(|v| *v != Variant::Unadjusted)
        || cfg.t_prelim == cfg.t_second;
    let prelim = if needs_prelim {
        Some(ctx.phase(&ctx.generator(&uncorrected, false)?, PRELIM_TAG, cfg.t_prelim)?)
    } else {
        None
    };
    let (bc, beta_bc) = match &prelim {
        Some(p) => {
            let reps: Vec<SpatialParams<T>> = p.replicates.iter().map(|r| r.spatial).collect();
            let b = beta_matrix(&p.replicates);
            let mean = DVector::from_fn(b.ncols(), |j, _| b.column(j).mean());
            let beta_hat = &original.slmm.params.beta;
            (Some(bias_correct(&uncorrected, &reps)?), Some(beta_hat * lit::<T>(2.0) - mean))
        }
        None => (None, None),
    };
    let mut results = Vec::with_capacity(variants.len());
    for &variant in variants {
        let result = match variant {
            Variant::Unadjusted => match prelim.as_ref() {
                Some(p) if cfg.t_prelim == cfg.t_second => ctx.summarize(variant, cfg.level, p, None, None)?,
                _ => {
                    let second = ctx.phase(&ctx.generator(&uncorrected, false)?, PRELIM_TAG, cfg.t_second)?;
                    ctx.summarize(variant, cfg.level, &second, None, None)?
                }
            },
            Variant::Proposed | Variant::NonCrossCorrelated => {
                let bc = bc.expect("preliminary phase ran");
                let ncc = variant == Variant::NonCrossCorrelated;
                let tag = if ncc { NCC_TAG } else { SECOND_TAG };
                let second = ctx.phase(&ctx.generator(&bc.as_spatial(), ncc)?, tag, cfg.t_second)?;
                ctx.summarize(variant, cfg.level, &second, prelim.as_ref(), Some(bc))?
            }
        };
        results.push(result);
    }
    Ok(BootstrapRuns {
        bc_params: bc,
        beta_bc,
        results,
    })
}

/// Runs the configured variant starting from an existing CNR fit.
pub fn run<T: Real>(
    dataset: &MisalignedDataset<T>,
    original: &CnrFit<T>,
    cnr_cfg: &CnrConfig<T>,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    let geometry = Geometry::new(&dataset.locs_covariates, &dataset.locs_response)?;
    let mut runs = run_variants(dataset, &geometry, original, cnr_cfg, cfg, &[cfg.variant])?;
    Ok(runs.results.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::covariate_field::tests::random_locs;
    use crate::covariate_field::{CrossCorrelation, MarginalCovariateParams};
    use crate::slmm::build_design;

    fn spatial(s: f64, a: f64, t: f64) -> SpatialParams<f64> {
        SpatialParams {
            sigma2_rho: s,
            nu_rho: 0.5,
            alpha_rho: a,
            tau_eps: t,
        }
    }

    #[test]
    fn bias_correct_examples() {
        let orig = spatial(0.2, 0.5, 1.0);
        let same = bias_correct(&orig, &[orig; 5]).unwrap();
        assert!((same.sigma2_rho_bc - 0.2).abs() < 1e-15);
        assert!((same.alpha_rho_bc - 0.5).abs() < 1e-15);
        let reps = [spatial(0.2, 0.5, 1.0), spatial(0.2, 0.5, 4.0)];
        let bc = bias_correct(&orig, &reps).unwrap();
        assert!((bc.tau_eps_bc - 0.5).abs() < 1e-14);
        assert!(bias_correct(&orig, &[spatial(0.0, 0.5, 1.0)]).is_err());
        assert!(bias_correct(&orig, &[]).is_err());
    }

    #[test]
    fn percentile_examples() {
        let draws: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let (lo, hi) = percentile_interval(&draws, 0.95).unwrap();
        assert!((lo - 3.475).abs() < 1e-12 && (hi - 97.525).abs() < 1e-12);
        assert_eq!(percentile_interval(&[2.5; 7], 0.9).unwrap(), (2.5, 2.5));
        assert_eq!(percentile_interval(&[3.0, 1.0, 2.0], 1.0).unwrap(), (1.0, 3.0));
        assert!(percentile_interval(&[1.0], 0.9).is_err());
    }

    fn field(k: usize, rho: f64) -> CovariateFieldParams<f64> {
        let marginals = (0..k)
            .map(|j| MarginalCovariateParams {
                mu: j as f64,
                matern: MaternParams::new(1.0, 0.5, 0.3, 0.15).unwrap(),
            })
            .collect();
        let all: Vec<usize> = (0..k).collect();
        CovariateFieldParams::new(marginals, CrossCorrelation::ar1_block(k, &all, rho).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_response_is_exact() {
        let st = random_locs(20, 1, 10.0);
        let s = random_locs(15, 2, 10.0);
        let theta = field(2, 0.5);
        let x0 = DMatrix::from_fn(30, 2, |i, j| (i * (j + 2)) as f64 % 7.0);
        let design = build_design(&x0, &[BasisSpec::Linear; 2], None).unwrap();
        let params = SlmmParams {
            beta: DVector::from_vec(vec![1.0, 2.0, -1.0]),
            spatial: spatial(0.0, 1.0, 0.0),
        };
        let sim = simulate_dataset(&theta, &params, &design, &s, &st, &mut rng_stream(3, "t", 0)).unwrap();
        let expected = design.evaluate(&sim.x_s_hidden) * &params.beta;
        assert!((sim.y - expected).amax() < 1e-12);
        assert_eq!(sim.x_tilde.shape(), (20, 2));
    }

    #[test]
    fn covariate_moments_and_independence() {
        let st = random_locs(15, 4, 10.0);
        let s = random_locs(10, 5, 10.0);
        let x0 = DMatrix::from_fn(30, 3, |i, j| ((i + 1) * (j + 3)) as f64 % 11.0);
        let design = build_design(&x0, &[BasisSpec::Linear; 3], None).unwrap();
        let params = SlmmParams {
            beta: DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0]),
            spatial: spatial(0.2, 0.5, 0.01),
        };
        let geometry = Geometry::new(&st, &s).unwrap();
        let reps = 4000;
        for (rho, ncc) in [(0.6, false), (0.6, true)] {
            let theta = if ncc { field(3, rho).without_cross_correlation() } else { field(3, rho) };
            let gen = Generator::new(&theta, &params.spatial, &params.beta, &design, &geometry).unwrap();
            let mut sums = [0.0; 3];
            let mut sq = [0.0; 3];
            let mut cross01 = 0.0;
            for t in 0..reps {
                let sim = gen.simulate(&mut rng_stream(6, "mom", t));
                let v: Vec<f64> = (0..3).map(|k| sim.x_tilde[(0, k)]).collect();
                for k in 0..3 {
                    sums[k] += v[k];
                    sq[k] += (v[k] - k as f64).powi(2);
                }
                cross01 += (v[0] - 0.0) * (v[1] - 1.0);
            }
            let r = reps as f64;
            for k in 0..3 {
                // mean k, variance sigma2 + tau = 1.15
                assert!((sums[k] / r - k as f64).abs() < 4.0 * (1.15f64 / r).sqrt());
                assert!((sq[k] / r - 1.15).abs() < 0.1);
            }
            let corr = cross01 / r / 1.15;
            // nugget is shared through R as well, so the correlation is rho
            let expected = if ncc { 0.0 } else { rho };
            assert!((corr - expected).abs() < 0.07, "corr {corr} expected {expected}");
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_reuses_prelim_draws() {
        let st = random_locs(25, 7, 10.0);
        let s = random_locs(30, 8, 10.0);
        let theta = field(2, 0.5);
        let x0 = DMatrix::from_fn(30, 2, |i, j| ((i + 1) * (j + 3)) as f64 % 11.0);
        let design = build_design(&x0, &[BasisSpec::Linear; 2], None).unwrap();
        let params = SlmmParams {
            beta: DVector::from_vec(vec![2.0, 1.0, 0.5]),
            spatial: spatial(0.2, 0.3, 0.05),
        };
        let sim = simulate_dataset(&theta, &params, &design, &s, &st, &mut rng_stream(9, "d", 0)).unwrap();
        let ds = MisalignedDataset::new(sim.y, s, sim.x_tilde, st, vec!["a".into(), "b".into()]).unwrap();
        let cnr = CnrConfig::exponential_linear(2);
        let original = crate::pipeline::fit_cnr(&ds, &cnr).unwrap();
        let cfg = BootstrapConfig::new(8, Variant::Proposed, 11);
        let geometry = Geometry::new(&ds.locs_covariates, &ds.locs_response).unwrap();
        let runs = run_variants(&ds, &geometry, &original, &cnr, &cfg, &[Variant::Proposed, Variant::Unadjusted]).unwrap();
        let all = &runs.results;
        assert_eq!(runs.bc_params, all[0].bc_params);
        let again = run(&ds, &original, &cnr, &cfg).unwrap();
        assert_eq!(all[0], again);
        let unadj = run(&ds, &original, &cnr, &BootstrapConfig { variant: Variant::Unadjusted, ..cfg }).unwrap();
        assert_eq!(all[1].beta_draws, unadj.beta_draws);
        assert_eq!(all[1].beta_draws, all[0].prelim_beta_draws);
        let r = &all[0];
        assert!(r.intervals.iter().all(|(lo, hi)| lo <= hi));
        let bc = r.bc_params.unwrap();
        assert!(bc.sigma2_rho_bc > 0.0 && bc.alpha_rho_bc > 0.0 && bc.tau_eps_bc > 0.0);
        assert_eq!(r.bands.len(), 2);
        for b in &r.bands {
            assert_eq!(b.x.len(), 50);
            assert!(b.lower.iter().zip(&b.upper).all(|(l, u)| l <= u));
        }
        assert_eq!(r.beta_draws.nrows() + r.prelim_beta_draws.nrows() + r.n_dropped, 16);
    }
}
