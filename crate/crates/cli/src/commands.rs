//! The five subcommands. Each returns the files it wrote, relative to the
//! output directory.

use std::path::{Path, PathBuf};

use cnr::bench::{run_scenario, sig6, simulate_replicate};
use cnr::bootstrap;
use cnr::cokrige::{cokrige_marginal, prediction_grid};
use cnr::geo::LocationSet;
use cnr::pipeline::{fit_cnr, fit_covariate_field, CnrFit};
use cnr::slmm::DesignMatrix;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, ingest_covariates};
use crate::mask::Polygon;
use crate::station::StationTable;

/// Output directory plus the list of files written so far.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::schema(format!("{}: {e}", path.display())))?;
        let err = |e: csv::Error| CliError::schema(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn stations(&mut self, name: &str, table: &StationTable) -> CliResult<()> {
        let path = self.path(name);
        table.write_path(&path)
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::schema(e.to_string()))?;
        self.text(name, &(text + "\n"))
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

/// Design column labels with `x{k}` replaced by the covariate names.
pub fn term_labels(design: &DesignMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut labels = design.column_names.clone();
    for (k, range) in design.column_map.iter().enumerate() {
        let placeholder = format!("x{}", k + 1);
        for label in &mut labels[range.clone()] {
            *label = label.replacen(&placeholder, &names[k], 1);
        }
    }
    labels
}

/// Replaces `x{k}` placeholders in model errors with covariate names.
fn named(e: cnr::CnrError, names: &[String]) -> CliError {
    match e {
        cnr::CnrError::RankDeficient { columns } => {
            let columns = columns
                .into_iter()
                .map(|c| {
                    (0..names.len())
                        .rev()
                        .find_map(|k| {
                            let p = format!("x{}", k + 1);
                            c.contains(&p).then(|| c.replacen(&p, &names[k], 1))
                        })
                        .unwrap_or(c)
                })
                .collect();
            cnr::CnrError::RankDeficient { columns }.into()
        }
        other => other.into(),
    }
}

fn write_fit(out: &mut Outputs, fit: &CnrFit<f64>, names: &[String], response: &StationTable) -> CliResult<()> {
    let cp = &fit.covariate_params;
    out.csv(
        "covariate_params.csv",
        &["covariate", "mu", "sigma2", "nu", "alpha", "tau"],
        cp.marginals.iter().zip(names).map(|(m, n)| {
            vec![
                n.clone(),
                num(m.mu),
                num(m.matern.sigma2),
                num(m.matern.nu),
                num(m.matern.alpha),
                num(m.matern.tau),
            ]
        }),
    )?;
    let r = cp.cross.matrix();
    let mut header = vec!["covariate"];
    header.extend(names.iter().map(String::as_str));
    out.csv(
        "cross_correlation.csv",
        &header,
        names.iter().enumerate().map(|(i, n)| {
            let mut row = vec![n.clone()];
            row.extend(r.row(i).iter().map(|&v| num(v)));
            row
        }),
    )?;
    let labels = term_labels(&fit.slmm.design, names);
    let se = fit.slmm.naive_se();
    out.csv(
        "coefficients.csv",
        &["term", "estimate", "naive_se"],
        labels
            .iter()
            .zip(fit.slmm.params.beta.iter())
            .zip(&se)
            .map(|((t, &b), &s)| vec![t.clone(), num(b), num(s)]),
    )?;
    let sp = &fit.slmm.params.spatial;
    out.csv(
        "spatial_params.csv",
        &["parameter", "value"],
        [
            ("sigma2_rho", sp.sigma2_rho),
            ("nu_rho", sp.nu_rho),
            ("alpha_rho", sp.alpha_rho),
            ("tau_eps", sp.tau_eps),
            ("loglik", fit.slmm.loglik),
        ]
        .into_iter()
        .map(|(n, v)| vec![n.to_string(), num(v)]),
    )?;
    let predicted = StationTable {
        ids: response.ids.clone(),
        coords: response.coords.clone(),
        variables: names.to_vec(),
        values: fit.x_hat.clone(),
    };
    out.stations("cokriged_covariates.csv", &predicted)?;

    let mut s = String::from("covariate\tmu\tsigma2\tnu\talpha\ttau\n");
    for (m, n) in cp.marginals.iter().zip(names) {
        s += &format!(
            "{n}\t{}\t{}\t{}\t{}\t{}\n",
            sig6(m.mu),
            sig6(m.matern.sigma2),
            sig6(m.matern.nu),
            sig6(m.matern.alpha),
            sig6(m.matern.tau)
        );
    }
    s += "\nterm\testimate\tnaive_se\n";
    for ((t, &b), &e) in labels.iter().zip(fit.slmm.params.beta.iter()).zip(&se) {
        s += &format!("{t}\t{}\t{}\n", sig6(b), sig6(e));
    }
    s += &format!(
        "\nsigma2_rho\t{}\nnu_rho\t{}\nalpha_rho\t{}\ntau_eps\t{}\nloglik\t{}\n",
        sig6(sp.sigma2_rho),
        sig6(sp.nu_rho),
        sig6(sp.alpha_rho),
        sig6(sp.tau_eps),
        sig6(fit.slmm.loglik)
    );
    out.text("summary.txt", &s)
}

pub fn fit(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let data = ingest(cfg.data()?, cfg.metric)?;
    let cnr_cfg = cfg.model.cnr_config(data.dataset.k())?;
    let fit = fit_cnr(&data.dataset, &cnr_cfg).map_err(|e| named(e, &data.dataset.covariate_names))?;
    write_fit(out, &fit, &data.dataset.covariate_names, &data.response)
}

#[derive(Serialize)]
struct BootstrapSummary {
    variant: bootstrap::Variant,
    t_prelim: usize,
    t_second: usize,
    level: f64,
    retained: usize,
    n_dropped: usize,
}

pub fn run_bootstrap(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let boot_cfg = cfg.bootstrap()?.config(cfg.seed);
    let data = ingest(cfg.data()?, cfg.metric)?;
    let names = &data.dataset.covariate_names;
    let cnr_cfg = cfg.model.cnr_config(data.dataset.k())?;
    let fit = fit_cnr(&data.dataset, &cnr_cfg).map_err(|e| named(e, names))?;
    write_fit(out, &fit, names, &data.response)?;
    let res = bootstrap::run(&data.dataset, &fit, &cnr_cfg, &boot_cfg)?;
    if res.n_dropped > 0 {
        log::warn!("{} bootstrap replicates dropped", res.n_dropped);
    }

    let labels = term_labels(&fit.slmm.design, names);
    let se = res.standard_errors();
    let bc_beta = res.beta_bc.as_ref();
    out.csv(
        "intervals.csv",
        &["term", "estimate", "bc_estimate", "bootstrap_se", "lower", "upper"],
        labels.iter().enumerate().map(|(j, t)| {
            vec![
                t.clone(),
                num(fit.slmm.params.beta[j]),
                bc_beta.map(|b| num(b[j])).unwrap_or_default(),
                num(se[j]),
                num(res.intervals[j].0),
                num(res.intervals[j].1),
            ]
        }),
    )?;
    out.csv(
        "bands.csv",
        &["covariate", "x", "fit", "lower", "upper"],
        res.bands.iter().flat_map(|b| {
            (0..b.x.len()).map(move |g| {
                vec![names[b.covariate].clone(), num(b.x[g]), num(b.fit[g]), num(b.lower[g]), num(b.upper[g])]
            })
        }),
    )?;
    if let Some(bc) = &res.bc_params {
        let sp = &fit.slmm.params.spatial;
        out.csv(
            "bc_params.csv",
            &["parameter", "estimate", "bias_corrected"],
            [
                ("sigma2_rho", sp.sigma2_rho, bc.sigma2_rho_bc),
                ("nu_rho", sp.nu_rho, bc.nu_rho),
                ("alpha_rho", sp.alpha_rho, bc.alpha_rho_bc),
                ("tau_eps", sp.tau_eps, bc.tau_eps_bc),
            ]
            .into_iter()
            .map(|(n, a, b)| vec![n.to_string(), num(a), num(b)]),
        )?;
    }
    out.json(
        "bootstrap_summary.json",
        &BootstrapSummary {
            variant: boot_cfg.variant,
            t_prelim: boot_cfg.t_prelim,
            t_second: boot_cfg.t_second,
            level: boot_cfg.level,
            retained: res.beta_draws.nrows(),
            n_dropped: res.n_dropped,
        },
    )
}

pub fn predict(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let section = cfg.predict()?;
    let mask = section.mask.as_deref().map(Polygon::read_path).transpose()?;
    let cov = ingest_covariates(cfg.data()?, cfg.metric)?;
    let cnr_cfg = cfg.model.cnr_config(cov.names.len())?;
    let params = fit_covariate_field(&cov.values, &cov.locs, &cnr_cfg)?;
    let grid = prediction_grid(&section.bbox, section.cell, cfg.metric)?;
    let grid = match &mask {
        Some(poly) => {
            let kept: Vec<_> = grid
                .locations()
                .iter()
                .filter(|l| poly.contains(l.coord1, l.coord2))
                .copied()
                .collect();
            if kept.is_empty() {
                return Err(cnr::CnrError::Empty("prediction grid after masking").into());
            }
            LocationSet::new(kept, cfg.metric)?
        }
        None => grid,
    };
    log::info!("predicting {} covariates at {} grid cells", cov.names.len(), grid.len());
    let pred = cokrige_marginal(&params, &cov.values, &cov.locs, &grid)?;
    let mut header = vec!["lon", "lat"];
    header.extend(cov.names.iter().map(String::as_str));
    out.csv(
        "predictions.csv",
        &header,
        grid.locations().iter().enumerate().map(|(i, l)| {
            let mut row = vec![num(l.coord1), num(l.coord2)];
            row.extend(pred.values.row(i).iter().map(|&v| num(v)));
            row
        }),
    )
}

fn station_table(prefix: &str, locs: &LocationSet<f64>, variables: Vec<String>, values: DMatrix<f64>) -> StationTable {
    StationTable {
        ids: (1..=locs.len()).map(|i| format!("{prefix}{i:04}")).collect(),
        coords: locs.locations().iter().map(|l| (l.coord1, l.coord2)).collect(),
        variables,
        values,
    }
}

pub fn simulate(cfg: &RunConfig, replicate: usize, out: &mut Outputs) -> CliResult<()> {
    let scenario = cfg.scenario()?;
    let (ds, hidden) = simulate_replicate(&scenario, replicate)?;
    let y = DMatrix::from_column_slice(ds.y.len(), 1, ds.y.as_slice());
    out.stations("response.csv", &station_table("S", &ds.locs_response, vec!["y".into()], y))?;
    out.stations(
        "covariates.csv",
        &station_table("C", &ds.locs_covariates, ds.covariate_names.clone(), ds.x_tilde.clone()),
    )?;
    out.stations(
        "hidden_covariates.csv",
        &station_table("S", &ds.locs_response, ds.covariate_names.clone(), hidden),
    )?;
    out.json("scenario.json", &scenario)
}

pub fn benchmark(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let scenario = cfg.scenario()?;
    log::info!(
        "scenario: M = {}, N = {}, K = {}, {} replications, T = {}",
        scenario.m,
        scenario.n,
        scenario.k(),
        scenario.n_reps,
        scenario.t
    );
    let res = run_scenario(&scenario)?;
    for f in &res.table.flags {
        log::warn!("{f}");
    }
    out.text("metrics.csv", &res.table.to_csv())?;
    out.text("metrics.txt", &res.table.to_text())?;
    out.csv(
        "replicates.csv",
        &["index", "sigma2_rho", "sigma2_rho_bc", "n_dropped"],
        res.records.iter().map(|r| {
            vec![
                r.index.to_string(),
                num(r.sigma2_rho_hat),
                r.sigma2_rho_bc.map(num).unwrap_or_default(),
                r.n_dropped.to_string(),
            ]
        }),
    )?;
    out.json("scenario.json", &scenario)
}
