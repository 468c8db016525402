//! TOML run configuration. Every section is validated before any
//! computation starts; relative paths resolve against the config file.

use std::path::{Path, PathBuf};

use cnr::basis::BasisSpec;
use cnr::bench::{Method, ScenarioConfig};
use cnr::bootstrap::{BootstrapConfig, FailurePolicy, Variant};
use cnr::cokrige::BoundingBox;
use cnr::geo::Metric;
use cnr::pipeline::CnrConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_metric")]
    pub metric: Metric,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    pub bootstrap: Option<BootstrapSection>,
    pub predict: Option<PredictSection>,
    pub scenario: Option<ScenarioSection>,
}

fn default_metric() -> Metric {
    Metric::GreatCircleKm
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub response: PathBuf,
    pub covariates: PathBuf,
    pub response_column: String,
    /// Defaults to every variable column of the covariate file.
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    #[serde(default)]
    pub log_response: bool,
    /// Hourly wind records, aggregated into four sector covariates.
    pub hourly_wind: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One value per covariate, or a single value for all.
    #[serde(default = "default_nu")]
    pub nu_x: Vec<f64>,
    #[serde(default = "default_nu_rho")]
    pub nu_rho: f64,
    /// One spec per covariate, or a single spec for all.
    #[serde(default = "default_basis")]
    pub basis: Vec<BasisSpec>,
    #[serde(default)]
    pub standardize_r: bool,
}

fn default_nu() -> Vec<f64> {
    vec![0.5]
}

fn default_nu_rho() -> f64 {
    0.5
}

fn default_basis() -> Vec<BasisSpec> {
    vec![BasisSpec::Linear]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nu_x: default_nu(),
            nu_rho: default_nu_rho(),
            basis: default_basis(),
            standardize_r: false,
        }
    }
}

fn broadcast<T: Clone>(values: &[T], k: usize, what: &str) -> CliResult<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); k]),
        n if n == k => Ok(values.to_vec()),
        n => Err(CliError::schema(format!("model.{what} has {n} entries for {k} covariates"))),
    }
}

impl ModelConfig {
    pub fn cnr_config(&self, k: usize) -> CliResult<CnrConfig<f64>> {
        let mut cfg = CnrConfig::exponential_linear(k);
        cfg.nu_x = broadcast(&self.nu_x, k, "nu_x")?;
        cfg.nu_rho = self.nu_rho;
        cfg.specs = broadcast(&self.basis, k, "basis")?;
        cfg.standardize_r = self.standardize_r;
        cfg.validate(k)?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.nu_x.is_empty() || self.basis.is_empty() {
            return Err(CliError::schema("model.nu_x and model.basis need at least one entry"));
        }
        for &nu in self.nu_x.iter().chain(std::iter::once(&self.nu_rho)) {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(CliError::schema(format!("smoothness must be positive, got {nu}")));
            }
        }
        for b in &self.basis {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_t")]
    pub t_prelim: usize,
    #[serde(default = "default_t")]
    pub t_second: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_band_points")]
    pub band_points: usize,
}

fn default_t() -> usize {
    250
}

fn default_variant() -> Variant {
    Variant::Proposed
}

fn default_level() -> f64 {
    0.95
}

fn default_band_points() -> usize {
    50
}

impl BootstrapSection {
    pub fn config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            t_prelim: self.t_prelim,
            t_second: self.t_second,
            variant: self.variant,
            master_seed: seed,
            failure_policy: self.failure_policy,
            level: self.level,
            band_points: self.band_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub bbox: BoundingBox<f64>,
    /// Grid spacing in degrees.
    pub cell: f64,
    /// CSV of `lon,lat` polygon vertices.
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

/// A preset with optional overrides. The top-level seed becomes the
/// scenario master seed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub n_reps: Option<usize>,
    pub t: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub bbox: Option<BoundingBox<f64>>,
    pub level: Option<f64>,
}

fn default_preset() -> Preset {
    Preset::Desk
}

impl ScenarioSection {
    pub fn scenario(&self, seed: u64, metric: Metric) -> CliResult<ScenarioConfig<f64>> {
        let mut c = match self.preset {
            Preset::Desk => ScenarioConfig::desk_scale(),
            Preset::Full => ScenarioConfig::full_scale(),
        };
        c.master_seed = seed;
        c.metric = metric;
        if let Some(v) = self.m {
            c.m = v;
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.n_reps {
            c.n_reps = v;
        }
        if let Some(v) = self.t {
            c.t = v;
        }
        if let Some(v) = &self.methods {
            c.methods = v.clone();
        }
        if let Some(v) = self.bbox {
            c.bbox = v;
        }
        if let Some(v) = self.level {
            c.level = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::schema(format!("config: {e}")))?;
        cfg.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates; also returns the raw bytes for hashing.
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::schema(format!("{}: not UTF-8", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(text, base)?, bytes))
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let Some(d) = &mut self.data {
            join(&mut d.response);
            join(&mut d.covariates);
            if let Some(w) = &mut d.hourly_wind {
                join(w);
            }
        }
        if let Some(p) = &mut self.predict {
            if let Some(m) = &mut p.mask {
                join(m);
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        if let Some(d) = &self.data {
            if d.response_column.is_empty() {
                return Err(CliError::schema("data.response_column is empty"));
            }
        }
        if let Some(b) = &self.bootstrap {
            b.config(self.seed).validate()?;
        }
        if let Some(p) = &self.predict {
            if !(p.cell > 0.0 && p.cell.is_finite()) {
                return Err(CliError::schema(format!("predict.cell must be positive, got {}", p.cell)));
            }
            let b = &p.bbox;
            if !(b.lon_max > b.lon_min && b.lat_max > b.lat_min) {
                return Err(CliError::schema("predict.bbox must have lon_max > lon_min and lat_max > lat_min"));
            }
        }
        if let Some(s) = &self.scenario {
            s.scenario(self.seed, self.metric)?;
        }
        Ok(())
    }

    pub fn data(&self) -> CliResult<&DataConfig> {
        self.data.as_ref().ok_or_else(|| CliError::schema("config has no [data] section"))
    }

    pub fn bootstrap(&self) -> CliResult<&BootstrapSection> {
        self.bootstrap.as_ref().ok_or_else(|| CliError::schema("config has no [bootstrap] section"))
    }

    pub fn predict(&self) -> CliResult<&PredictSection> {
        self.predict.as_ref().ok_or_else(|| CliError::schema("config has no [predict] section"))
    }

    pub fn scenario(&self) -> CliResult<ScenarioConfig<f64>> {
        self.scenario
            .as_ref()
            .ok_or_else(|| CliError::schema("config has no [scenario] section"))?
            .scenario(self.seed, self.metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
metric = "great_circle_km"
seed = 7
output_dir = "out"

[data]
response = "pm25.csv"
covariates = "met.csv"
response_column = "pm25"
covariate_columns = ["temp", "rh"]
log_response = true

[model]
nu_x = [0.5]
basis = [{ kind = "natural_cubic_spline", interior_knots = 4 }, { kind = "linear" }]

[bootstrap]
t_prelim = 100
t_second = 100
variant = "non_cross_correlated"

[predict]
bbox = { lon_min = 100.0, lon_max = 110.0, lat_min = 20.0, lat_max = 30.0 }
cell = 0.1

[scenario]
preset = "desk"
n_reps = 3
methods = ["cnr", { nmr = 5 }]
"#;

    #[test]
    fn parses_all_sections() {
        let c = RunConfig::parse(FULL, Path::new("/base")).unwrap();
        assert_eq!(c.output_dir, Path::new("/base/out"));
        assert_eq!(c.data().unwrap().response, Path::new("/base/pm25.csv"));
        let cnr = c.model.cnr_config(2).unwrap();
        assert_eq!(cnr.nu_x, vec![0.5, 0.5]);
        assert_eq!(cnr.specs[0], BasisSpec::NaturalCubicSpline { interior_knots: 4 });
        assert!(c.model.cnr_config(3).is_err());
        assert_eq!(c.bootstrap().unwrap().variant, Variant::NonCrossCorrelated);
        let s = c.scenario().unwrap();
        assert_eq!((s.n_reps, s.master_seed), (3, 7));
        assert_eq!(s.methods, vec![Method::Cnr, Method::Nmr(5)]);
    }

    #[test]
    fn rejects_schema_violations() {
        let base = Path::new(".");
        assert!(RunConfig::parse("seed = 1\noutput_dir = \"o\"\nbogus = 2\n", base).is_err());
        assert!(RunConfig::parse("output_dir = \"o\"\n", base).is_err());
        assert!(RunConfig::parse("seed = 1\noutput_dir = \"o\"\n[model]\nnu_x = [-1.0]\n", base).is_err());
        let bad_cell = "seed = 1\noutput_dir = \"o\"\n[predict]\ncell = 0.0\nbbox = { lon_min = 0.0, lon_max = 1.0, lat_min = 0.0, lat_max = 1.0 }\n";
        assert!(RunConfig::parse(bad_cell, base).is_err());
        let bad_t = "seed = 1\noutput_dir = \"o\"\n[bootstrap]\nt_prelim = 1\n";
        assert!(RunConfig::parse(bad_t, base).is_err());
        let minimal = RunConfig::parse("seed = 1\noutput_dir = \"o\"\n", base).unwrap();
        assert!(minimal.data().is_err());
        assert_eq!(minimal.metric, Metric::GreatCircleKm);
    }
}
