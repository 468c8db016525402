//! The cokrig-and-regress pipeline: fit the covariate field at the
//! covariate stations, cokrige to the response locations, fit the mixed
//! model on the predictions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SplineKnots};
use crate::cokrige::cokrige_marginal_with;
use crate::covariate_field::{fit_marginal_with, one_step_r_with, CovariateFieldParams};
use crate::error::{CnrError, Result};
use crate::gaussian::OptimizerConfig;
use crate::geo::{LocationSet, Metric};
use crate::scalar::{lit, to_f64, Real};
use crate::stats::sample_variance;
use crate::slmm::{build_design, fit_with, SlmmFit};

/// Response at `S` and covariates at the disjoint station set `S̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisalignedDataset<T: Real> {
    pub y: DVector<T>,
    pub locs_response: LocationSet<T>,
    /// `M × K`, one column per covariate.
    pub x_tilde: DMatrix<T>,
    pub locs_covariates: LocationSet<T>,
    pub covariate_names: Vec<String>,
}

impl<T: Real> MisalignedDataset<T> {
    pub fn new(
        y: DVector<T>,
        locs_response: LocationSet<T>,
        x_tilde: DMatrix<T>,
        locs_covariates: LocationSet<T>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if y.len() != locs_response.len() {
            return Err(CnrError::DimensionMismatch {
                what: "response values vs response locations",
                expected: locs_response.len(),
                found: y.len(),
            });
        }
        if x_tilde.nrows() != locs_covariates.len() {
            return Err(CnrError::DimensionMismatch {
                what: "covariate rows vs covariate locations",
                expected: locs_covariates.len(),
                found: x_tilde.nrows(),
            });
        }
        if covariate_names.len() != x_tilde.ncols() {
            return Err(CnrError::DimensionMismatch {
                what: "covariate names",
                expected: x_tilde.ncols(),
                found: covariate_names.len(),
            });
        }
        if locs_response.metric() != locs_covariates.metric() {
            return Err(CnrError::InvalidParameter("location sets use different metrics".into()));
        }
        if locs_response.is_empty() {
            return Err(CnrError::Empty("response locations"));
        }
        if locs_covariates.is_empty() {
            return Err(CnrError::Empty("covariate locations"));
        }
        Ok(Self {
            y,
            locs_response,
            x_tilde,
            locs_covariates,
            covariate_names,
        })
    }

    pub fn k(&self) -> usize {
        self.x_tilde.ncols()
    }

    /// Number of locations shared by `S` and `S̃`.
    pub fn shared_locations(&self) -> usize {
        let tilde: std::collections::HashSet<_> = self
            .locs_covariates
            .locations()
            .iter()
            .map(|l| (to_bits(l.coord1), to_bits(l.coord2)))
            .collect();
        self.locs_response
            .locations()
            .iter()
            .filter(|l| tilde.contains(&(to_bits(l.coord1), to_bits(l.coord2))))
            .count()
    }
}

fn to_bits<T: Real>(v: T) -> u64 {
    crate::scalar::to_f64(v).to_bits()
}

/// Pairwise distances within and between `S̃` and `S`, computed once.
#[derive(Debug, Clone)]
pub struct Geometry<T: Real> {
    pub metric: Metric,
    /// `M × M` over the covariate stations.
    pub covariates: DMatrix<T>,
    /// `N × N` over the response locations.
    pub response: DMatrix<T>,
    /// `N × M`, response rows against covariate stations.
    pub cross: DMatrix<T>,
}

impl<T: Real> Geometry<T> {
    pub fn new(locs_covariates: &LocationSet<T>, locs_response: &LocationSet<T>) -> Result<Self> {
        Ok(Self {
            metric: locs_covariates.metric(),
            covariates: locs_covariates.distance_matrix(),
            response: locs_response.distance_matrix(),
            cross: locs_response.cross_distances(locs_covariates)?,
        })
    }

    pub fn m(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n(&self) -> usize {
        self.response.nrows()
    }

    /// Distances over `S̃` followed by `S`.
    pub fn joint(&self) -> DMatrix<T> {
        let (m, n) = (self.m(), self.n());
        let mut d = DMatrix::zeros(m + n, m + n);
        d.view_mut((0, 0), (m, m)).copy_from(&self.covariates);
        d.view_mut((m, m), (n, n)).copy_from(&self.response);
        d.view_mut((m, 0), (n, m)).copy_from(&self.cross);
        d.view_mut((0, m), (m, n)).copy_from(&self.cross.transpose());
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnrConfig<T> {
    /// Fixed smoothness per covariate.
    pub nu_x: Vec<T>,
    pub nu_rho: T,
    pub specs: Vec<BasisSpec>,
    /// Rescale the one-step `R̂` to unit diagonal.
    pub standardize_r: bool,
    #[serde(skip)]
    pub optimizer: OptimizerConfig,
}

impl<T: Real> CnrConfig<T> {
    /// Exponential kernels and linear terms for `k` covariates.
    pub fn exponential_linear(k: usize) -> Self {
        Self {
            nu_x: vec![lit(0.5); k],
            nu_rho: lit(0.5),
            specs: vec![BasisSpec::Linear; k],
            standardize_r: false,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.nu_x.len() != k || self.specs.len() != k {
            return Err(CnrError::DimensionMismatch {
                what: "per-covariate settings",
                expected: k,
                found: if self.nu_x.len() != k { self.nu_x.len() } else { self.specs.len() },
            });
        }
        for s in &self.specs {
            s.validate()?;
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnrFit<T: Real> {
    pub covariate_params: CovariateFieldParams<T>,
    /// Cokriged covariates at `S`, `N × K`.
    pub x_hat: DMatrix<T>,
    pub slmm: SlmmFit<T>,
}

fn covariate_field_with<T: Real>(
    x_tilde: &DMatrix<T>,
    dist: &DMatrix<T>,
    metric: Metric,
    cfg: &CnrConfig<T>,
) -> Result<CovariateFieldParams<T>> {
    let marginals = (0..x_tilde.ncols())
        .map(|j| fit_marginal_with(&x_tilde.column(j).into_owned(), dist, metric, cfg.nu_x[j], &cfg.optimizer))
        .collect::<Result<Vec<_>>>()?;
    let cross = one_step_r_with(x_tilde, &marginals, dist, cfg.standardize_r)?;
    Ok(CovariateFieldParams { marginals, cross })
}

/// Marginal fits and the one-step `R̂` from the covariate stations alone.
pub fn fit_covariate_field<T: Real>(
    x_tilde: &DMatrix<T>,
    locs: &LocationSet<T>,
    cfg: &CnrConfig<T>,
) -> Result<CovariateFieldParams<T>> {
    cfg.validate(x_tilde.ncols())?;
    if x_tilde.nrows() != locs.len() {
        return Err(CnrError::DimensionMismatch {
            what: "covariate rows vs locations",
            expected: locs.len(),
            found: x_tilde.nrows(),
        });
    }
    covariate_field_with(x_tilde, &locs.distance_matrix(), locs.metric(), cfg)
}

/// Runs the pipeline on precomputed geometry. `knots` fixes the spline
/// knots; otherwise they come from the cokriged covariates.
pub fn fit_cnr_with<T: Real>(
    y: &DVector<T>,
    x_tilde: &DMatrix<T>,
    geometry: &Geometry<T>,
    cfg: &CnrConfig<T>,
    knots: Option<&[Option<SplineKnots<T>>]>,
) -> Result<CnrFit<T>> {
    cfg.validate(x_tilde.ncols())?;
    let covariate_params = covariate_field_with(x_tilde, &geometry.covariates, geometry.metric, cfg)?;
    let x_hat = cokrige_marginal_with(&covariate_params, x_tilde, &geometry.covariates, &geometry.cross)?;
    check_predicted_spread(&x_hat, x_tilde)?;
    let design = build_design(&x_hat, &cfg.specs, knots)?;
    let slmm = fit_with(y, &design, &geometry.response, geometry.metric, cfg.nu_rho, &cfg.optimizer)?;
    Ok(CnrFit {
        covariate_params,
        x_hat,
        slmm,
    })
}

/// Predicted covariates keeping less than this fraction of the observed
/// standard deviation are treated as constant.
pub const MIN_PREDICTED_SPREAD: f64 = 1e-3;

/// A marginal fit that collapses onto the nugget leaves the cokriged
/// covariate flat, which makes its column collinear with the intercept.
fn check_predicted_spread<T: Real>(x_hat: &DMatrix<T>, x_tilde: &DMatrix<T>) -> Result<()> {
    for k in 0..x_hat.ncols() {
        let sd = |c: Vec<T>| sample_variance(&c).map(|v| to_f64(v).sqrt()).unwrap_or(0.0);
        let predicted = sd(x_hat.column(k).iter().copied().collect());
        let observed = sd(x_tilde.column(k).iter().copied().collect());
        if !(predicted > MIN_PREDICTED_SPREAD * observed) {
            return Err(CnrError::RankDeficient {
                columns: vec!["intercept".into(), format!("x{}", k + 1)],
            });
        }
    }
    Ok(())
}

pub fn fit_cnr<T: Real>(dataset: &MisalignedDataset<T>, cfg: &CnrConfig<T>) -> Result<CnrFit<T>> {
    let geometry = Geometry::new(&dataset.locs_covariates, &dataset.locs_response)?;
    fit_cnr_with(&dataset.y, &dataset.x_tilde, &geometry, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cokrige::cokrige_joint;
    use crate::covariate_field::tests::random_locs;

    #[test]
    fn geometry_joint_matches_concatenation() {
        let a = random_locs(7, 1, 10.0);
        let b = random_locs(5, 2, 10.0);
        let g = Geometry::new(&a, &b).unwrap();
        let direct = a.concat(&b).unwrap().distance_matrix();
        assert!((g.joint() - direct).amax() < 1e-12);
    }

    #[test]
    fn pipeline_runs_and_matches_joint_cokriging() {
        let s_tilde = random_locs(30, 3, 10.0);
        let s = random_locs(40, 4, 10.0);
        let mut rng = crate::rng::rng_stream(5, "x", 0);
        use rand::Rng;
        let x = DMatrix::from_fn(30, 2, |i, j| (s_tilde.get(i).coord1 * (j as f64 + 1.0)).sin() + 0.1 * rng.random::<f64>());
        let y = DVector::from_fn(40, |i, _| s.get(i).coord2 + rng.random::<f64>());
        let ds = MisalignedDataset::new(y, s.clone(), x.clone(), s_tilde.clone(), vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(ds.shared_locations(), 0);
        let f = fit_cnr(&ds, &CnrConfig::exponential_linear(2)).unwrap();
        let joint = cokrige_joint(&f.covariate_params, &x, &s_tilde, &s).unwrap();
        assert!((joint.values - &f.x_hat).amax() < 1e-8);
        assert_eq!(f.slmm.params.beta.len(), 3);
    }

    #[test]
    fn flat_predictions_are_rejected() {
        let x_tilde = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64);
        let mut x_hat = DMatrix::from_fn(5, 2, |i, _| i as f64 * 0.5);
        assert!(check_predicted_spread(&x_hat, &x_tilde).is_ok());
        x_hat.set_column(1, &DVector::from_fn(5, |i, _| 3.0 + 1e-6 * i as f64));
        match check_predicted_spread(&x_hat, &x_tilde) {
            Err(CnrError::RankDeficient { columns }) => assert_eq!(columns, vec!["intercept", "x2"]),
            other => panic!("{other:?}"),
        }
    }
}
