//! L-nearest-matching-and-regress: each target takes the plain mean of the
//! covariates at its L nearest stations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{CnrError, Result};
use crate::gaussian::OptimizerConfig;
use crate::geo::LocationSet;
use crate::scalar::{from_usize, Real};
use crate::slmm::{build_design, fit_with, SlmmFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmrConfig {
    pub l: usize,
}

impl NmrConfig {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(CnrError::InvalidParameter("L must be at least 1".into()));
        }
        Ok(Self { l })
    }
}

/// Indices of the `l` smallest entries of each row of `cross` (targets ×
/// stations). Equal distances keep station order.
pub fn nearest_indices<T: Real>(cross: &DMatrix<T>, l: usize) -> Vec<Vec<usize>> {
    let m = cross.ncols();
    (0..cross.nrows())
        .map(|i| {
            let mut idx: Vec<usize> = (0..m).collect();
            // stable sort preserves station order on ties
            idx.sort_by(|&a, &b| cross[(i, a)].partial_cmp(&cross[(i, b)]).unwrap_or(std::cmp::Ordering::Equal));
            idx.truncate(l);
            idx
        })
        .collect()
}

/// Imputation from a precomputed targets × stations distance matrix.
pub fn nmr_impute_with<T: Real>(obs: &DMatrix<T>, cross: &DMatrix<T>, cfg: &NmrConfig) -> Result<DMatrix<T>> {
    let m = obs.nrows();
    if m == 0 {
        return Err(CnrError::Empty("observed stations"));
    }
    if cross.ncols() != m {
        return Err(CnrError::DimensionMismatch {
            what: "distance columns vs observed stations",
            expected: m,
            found: cross.ncols(),
        });
    }
    if cfg.l == 0 || cfg.l > m {
        return Err(CnrError::InvalidParameter(format!("L = {} outside [1, {m}]", cfg.l)));
    }
    let lf = from_usize::<T>(cfg.l);
    let near = nearest_indices(cross, cfg.l);
    let mut out = DMatrix::zeros(cross.nrows(), obs.ncols());
    for (i, idx) in near.iter().enumerate() {
        for k in 0..obs.ncols() {
            let s = idx.iter().fold(T::zero(), |acc, &j| acc + obs[(j, k)]);
            out[(i, k)] = s / lf;
        }
    }
    Ok(out)
}

/// Mean over the `L` nearest observed stations, per covariate.
pub fn nmr_impute<T: Real>(
    obs: &DMatrix<T>,
    locs_obs: &LocationSet<T>,
    locs_target: &LocationSet<T>,
    cfg: &NmrConfig,
) -> Result<DMatrix<T>> {
    if obs.nrows() != locs_obs.len() {
        return Err(CnrError::DimensionMismatch {
            what: "observed covariate rows vs locations",
            expected: locs_obs.len(),
            found: obs.nrows(),
        });
    }
    if locs_obs.is_empty() {
        return Err(CnrError::Empty("observed stations"));
    }
    nmr_impute_with(obs, &locs_target.cross_distances(locs_obs)?, cfg)
}

/// Imputes the covariates, then fits the mixed model on the imputed design.
pub fn nmr_fit<T: Real>(
    y: &DVector<T>,
    obs: &DMatrix<T>,
    locs_obs: &LocationSet<T>,
    locs_target: &LocationSet<T>,
    cfg: &NmrConfig,
    specs: &[BasisSpec],
    nu_rho: T,
) -> Result<SlmmFit<T>> {
    let x_hat = nmr_impute(obs, locs_obs, locs_target, cfg)?;
    let design = build_design(&x_hat, specs, None)?;
    fit_with(
        y,
        &design,
        &locs_target.distance_matrix(),
        locs_target.metric(),
        nu_rho,
        &OptimizerConfig::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Location, Metric};
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> LocationSet<f64> {
        LocationSet::new(xs.iter().map(|&x| Location::new(x, 0.0)).collect(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn transect_example() {
        let obs = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let out = nmr_impute(&obs, &line(&[0.0, 10.0]), &line(&[1.0]), &NmrConfig::new(2).unwrap()).unwrap();
        assert_eq!(out[(0, 0)], 0.5);
        let out = nmr_impute(&obs, &line(&[0.0, 10.0]), &line(&[1.0, 9.0]), &NmrConfig::new(1).unwrap()).unwrap();
        assert_eq!(out.column(0).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn l_equal_m_gives_global_mean() {
        let obs = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 6.0, 2.0]);
        let out = nmr_impute(&obs, &line(&[0.0, 1.0, 2.0, 3.0]), &line(&[-4.0, 1.5, 8.0]), &NmrConfig::new(4).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(out[(i, 0)], 3.0);
            assert_eq!(out[(i, 1)], 5.0);
        }
    }

    #[test]
    fn ties_follow_station_order() {
        let obs = DMatrix::from_column_slice(2, 1, &[7.0, 9.0]);
        let out = nmr_impute(&obs, &line(&[-1.0, 1.0]), &line(&[0.0]), &NmrConfig::new(1).unwrap()).unwrap();
        assert_eq!(out[(0, 0)], 7.0);
    }

    #[test]
    fn errors() {
        let obs = DMatrix::<f64>::zeros(0, 1);
        let cross = DMatrix::<f64>::zeros(1, 0);
        assert!(matches!(nmr_impute_with(&obs, &cross, &NmrConfig::new(1).unwrap()), Err(CnrError::Empty(_))));
        let obs = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(nmr_impute(&obs, &line(&[0.0, 1.0]), &line(&[0.0]), &NmrConfig { l: 3 }).is_err());
        assert!(NmrConfig::new(0).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariance_and_hull(
            pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, -5.0f64..5.0), 3..20),
            targets in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..10),
            l in 1usize..4,
            shift in 0usize..20,
        ) {
            let m = pts.len();
            let l = l.min(m);
            let locs = LocationSet::with_duplicates(pts.iter().map(|p| Location::new(p.0, p.1)).collect(), Metric::Euclidean).unwrap();
            let obs = DMatrix::from_iterator(m, 1, pts.iter().map(|p| p.2));
            let tl = LocationSet::with_duplicates(targets.iter().map(|p| Location::new(p.0, p.1)).collect(), Metric::Euclidean).unwrap();
            let cfg = NmrConfig::new(l).unwrap();
            let a = nmr_impute(&obs, &locs, &tl, &cfg).unwrap();
            let lo = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));

            // rotate the station order; skip when the L-th and (L+1)-th distances tie
            let cross = tl.cross_distances(&locs).unwrap();
            let tied = (0..cross.nrows()).any(|i| {
                let mut d: Vec<f64> = cross.row(i).iter().copied().collect();
                d.sort_by(|x, y| x.partial_cmp(y).unwrap());
                l < m && d[l] == d[l - 1]
            });
            prop_assume!(!tied);
            let perm: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
            let locs_p = LocationSet::with_duplicates(perm.iter().map(|&i| *locs.get(i)).collect(), Metric::Euclidean).unwrap();
            let obs_p = DMatrix::from_iterator(m, 1, perm.iter().map(|&i| obs[(i, 0)]));
            let b = nmr_impute(&obs_p, &locs_p, &tl, &cfg).unwrap();
            prop_assert!((a - b).amax() < 1e-12);
        }
    }
}
