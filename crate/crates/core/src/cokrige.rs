//! Cokriging of the covariates at unobserved locations.
//!
//! Under the generalized Kronecker covariance the joint predictor of all K
//! covariates coincides with K independent simple-kriging predictors, so
//! [`cokrige_marginal`] is the production path and [`cokrige_joint`] the
//! reference implementation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariate_field::{CovariateFieldParams, FactoredField};
use crate::error::{CnrError, Result};
use crate::gaussian::cholesky;
use crate::geo::{matern_cov_from_distances, Location, LocationSet, Metric};
use crate::scalar::{lit, to_f64, Real};

/// Predicted covariates, one row per target location.
#[derive(Debug, Clone, PartialEq)]
pub struct CokrigePrediction<T: Real> {
    pub values: DMatrix<T>,
    pub target_locs: LocationSet<T>,
}

const TARGET_BATCH: usize = 4096;

fn check_obs<T: Real>(params: &CovariateFieldParams<T>, obs: &DMatrix<T>, locs_obs: &LocationSet<T>) -> Result<()> {
    if obs.ncols() != params.k() {
        return Err(CnrError::DimensionMismatch {
            what: "observed covariate columns",
            expected: params.k(),
            found: obs.ncols(),
        });
    }
    if obs.nrows() != locs_obs.len() {
        return Err(CnrError::DimensionMismatch {
            what: "observed covariate rows vs locations",
            expected: locs_obs.len(),
            found: obs.nrows(),
        });
    }
    Ok(())
}

/// Kriging weights `Σ_k⁻¹ (x̃_k − μ_k 1)` per covariate, stored as columns.
pub fn kriging_weights<T: Real>(
    params: &CovariateFieldParams<T>,
    obs: &DMatrix<T>,
    dist_obs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let mut w = DMatrix::zeros(obs.nrows(), params.k());
    for (k, marg) in params.marginals.iter().enumerate() {
        let chol = cholesky(&matern_cov_from_distances(dist_obs, &marg.matern, true))?;
        let centered = obs.column(k).map(|v| v - marg.mu);
        w.set_column(k, &chol.solve(&centered));
    }
    Ok(w)
}

/// Per-covariate predictor from precomputed distances: `cross_dist` is
/// targets × observed. Nugget-free cross-covariance throughout.
pub fn cokrige_marginal_with<T: Real>(
    params: &CovariateFieldParams<T>,
    obs: &DMatrix<T>,
    dist_obs: &DMatrix<T>,
    cross_dist: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let w = kriging_weights(params, obs, dist_obs)?;
    let n = cross_dist.nrows();
    let mut out = DMatrix::zeros(n, params.k());
    for (k, marg) in params.marginals.iter().enumerate() {
        let c = matern_cov_from_distances(cross_dist, &marg.matern, false);
        let pred = (c * w.column(k)).add_scalar(marg.mu);
        out.set_column(k, &pred);
    }
    Ok(out)
}

/// Cokriging prediction computed covariate by covariate (M × M and M × N work only).
pub fn cokrige_marginal<T: Real>(
    params: &CovariateFieldParams<T>,
    obs: &DMatrix<T>,
    locs_obs: &LocationSet<T>,
    locs_target: &LocationSet<T>,
) -> Result<CokrigePrediction<T>> {
    check_obs(params, obs, locs_obs)?;
    let w = kriging_weights(params, obs, &locs_obs.distance_matrix())?;
    let n = locs_target.len();
    let mut values = DMatrix::zeros(n, params.k());
    let mut start = 0;
    while start < n {
        let len = TARGET_BATCH.min(n - start);
        let batch = LocationSet::with_duplicates(locs_target.locations()[start..start + len].to_vec(), locs_target.metric())?;
        let cross = batch.cross_distances(locs_obs)?;
        for (k, marg) in params.marginals.iter().enumerate() {
            let c = matern_cov_from_distances(&cross, &marg.matern, false);
            let pred = (c * w.column(k)).add_scalar(marg.mu);
            values.view_mut((start, k), (len, 1)).copy_from(&pred);
        }
        start += len;
    }
    Ok(CokrigePrediction {
        values,
        target_locs: locs_target.clone(),
    })
}

/// Joint cokriging `μ ⊗ 1 + Σ_{S S̃} Σ_{S̃}⁻¹ (x_{S̃} − μ ⊗ 1)` with the
/// cross-covariance read out of the joint generalized Kronecker factor over
/// observed-then-target locations.
pub fn cokrige_joint<T: Real>(
    params: &CovariateFieldParams<T>,
    obs: &DMatrix<T>,
    locs_obs: &LocationSet<T>,
    locs_target: &LocationSet<T>,
) -> Result<CokrigePrediction<T>> {
    check_obs(params, obs, locs_obs)?;
    let m = locs_obs.len();
    let n = locs_target.len();
    let k = params.k();
    let all = locs_obs.concat(locs_target)?;
    let joint = FactoredField::new(params, &all)?;
    let observed = FactoredField::new(params, locs_obs)?;

    let mut centered = DVector::zeros(m * k);
    for (j, marg) in params.marginals.iter().enumerate() {
        for i in 0..m {
            centered[j * m + i] = obs[(i, j)] - marg.mu;
        }
    }
    let weights = observed.precision_apply(&centered)?;

    let r = params.cross.matrix();
    let mut values = DMatrix::zeros(n, k);
    for a in 0..k {
        // rows of L_a at target locations
        let la_s = joint.factor(a).lower().view((m, 0), (n, m + n));
        let mut acc = DVector::from_element(n, params.marginals[a].mu);
        for b in 0..k {
            let rab = r[(a, b)];
            if rab == T::zero() {
                continue;
            }
            // rows of L_b at observed locations: Σ_{a,S; b,S̃} = r_ab L_a[S,:] L_b[S̃,:]ᵀ
            let lb_obs = joint.factor(b).lower().view((0, 0), (m, m + n));
            let wb = weights.rows(b * m, m);
            let tmp = lb_obs.transpose() * wb;
            acc += (&la_s * tmp) * rab;
        }
        values.set_column(a, &acc);
    }
    Ok(CokrigePrediction {
        values,
        target_locs: locs_target.clone(),
    })
}

/// Longitude/latitude bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub lon_min: T,
    pub lon_max: T,
    pub lat_min: T,
    pub lat_max: T,
}

fn cell_count(extent: f64, cell: f64) -> usize {
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

fn centers(lo: f64, hi: f64, cell: f64) -> Vec<f64> {
    let n = cell_count(hi - lo, cell);
    (0..n)
        .map(|i| {
            let c = lo + (i as f64 + 0.5) * cell;
            if c > hi {
                0.5 * (lo + i as f64 * cell + hi)
            } else {
                c
            }
        })
        .collect()
}

/// Pixel centres of a regular grid over `bbox`, longitude varying fastest.
pub fn prediction_grid<T: Real>(bbox: &BoundingBox<T>, cell: T, metric: Metric) -> Result<LocationSet<T>> {
    let (x0, x1, y0, y1) = (
        to_f64(bbox.lon_min),
        to_f64(bbox.lon_max),
        to_f64(bbox.lat_min),
        to_f64(bbox.lat_max),
    );
    let c = to_f64(cell);
    if !(c > 0.0) || !c.is_finite() {
        return Err(CnrError::InvalidParameter(format!("grid cell must be positive, got {c}")));
    }
    if !(x1 > x0) || !(y1 > y0) {
        return Err(CnrError::Empty("prediction grid (degenerate bounding box)"));
    }
    let xs = centers(x0, x1, c);
    let ys = centers(y0, y1, c);
    let locs: Vec<Location<T>> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Location::new(lit(x), lit(y))))
        .collect();
    LocationSet::new(locs, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate_field::{CrossCorrelation, MarginalCovariateParams};
    use crate::geo::MaternParams;
    use crate::rng::rng_stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_locs(n: usize, seed: u64, tag: &str, extent: f64) -> LocationSet<f64> {
        let mut rng = rng_stream(seed, tag, 0);
        let locs = (0..n)
            .map(|_| Location::new(rng.random::<f64>() * extent, rng.random::<f64>() * extent))
            .collect();
        LocationSet::new(locs, Metric::Euclidean).unwrap()
    }

    fn field(k: usize, tau: f64, seed: u64) -> CovariateFieldParams<f64> {
        let mut rng = rng_stream(seed, "params", 0);
        let marginals = (0..k)
            .map(|_| MarginalCovariateParams {
                mu: rng.random::<f64>() * 4.0 - 2.0,
                matern: MaternParams::new(0.5 + rng.random::<f64>(), 0.5, 0.3 + rng.random::<f64>(), tau).unwrap(),
            })
            .collect();
        let block: Vec<usize> = (0..k).collect();
        CovariateFieldParams::new(marginals, CrossCorrelation::ar1_block(k, &block, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn joint_equals_marginal_random_instances() {
        for seed in 0..5u64 {
            let k = 1 + (seed as usize % 5);
            let obs_locs = random_locs(40, seed, "obs", 10.0);
            let tgt = random_locs(20, seed, "tgt", 10.0);
            let p = field(k, 0.1, seed);
            let f = FactoredField::new(&p, &obs_locs).unwrap();
            let obs = f.sample(&p.means(), &mut rng_stream(seed, "x", 0));
            let a = cokrige_joint(&p, &obs, &obs_locs, &tgt).unwrap();
            let b = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap();
            assert!((a.values - b.values).abs().max() < 1e-8);
        }
    }

    #[test]
    fn exact_interpolation_without_nugget() {
        let obs_locs = random_locs(25, 1, "obs", 5.0);
        let p = field(2, 0.0, 1);
        let f = FactoredField::new(&p, &obs_locs).unwrap();
        let obs = f.sample(&p.means(), &mut rng_stream(1, "x", 0));
        let tgt = LocationSet::new(vec![*obs_locs.get(3), *obs_locs.get(17)], Metric::Euclidean).unwrap();
        let pred = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap();
        for k in 0..2 {
            assert!((pred.values[(0, k)] - obs[(3, k)]).abs() < 1e-8);
            assert!((pred.values[(1, k)] - obs[(17, k)]).abs() < 1e-8);
        }
    }

    #[test]
    fn far_targets_revert_to_mean() {
        let obs_locs = random_locs(20, 2, "obs", 5.0);
        let p = field(3, 0.1, 2);
        let obs = FactoredField::new(&p, &obs_locs).unwrap().sample(&p.means(), &mut rng_stream(2, "x", 0));
        let tgt = LocationSet::from_coords(&[(1e6, 1e6)], Metric::Euclidean).unwrap();
        let pred = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap();
        for k in 0..3 {
            assert!((pred.values[(0, k)] - p.marginals[k].mu).abs() < 1e-12);
        }
    }

    #[test]
    fn nugget_shrinks_toward_mean_monotonically() {
        let coords: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, 0.0)).collect();
        let obs_locs = LocationSet::from_coords(&coords, Metric::Euclidean).unwrap();
        let obs = DMatrix::from_fn(12, 1, |i, _| if i == 5 { 3.0 } else { (i as f64 * 0.7).sin() });
        let tgt = LocationSet::from_coords(&[(5.0, 0.0)], Metric::Euclidean).unwrap();
        let mut prev_gap = 0.0f64;
        for (step, tau) in [0.0, 0.05, 0.2, 0.5, 1.0, 3.0].into_iter().enumerate() {
            let p = CovariateFieldParams::new(
                vec![MarginalCovariateParams {
                    mu: 0.0,
                    matern: MaternParams::new(1.0, 0.5, 0.5, tau).unwrap(),
                }],
                CrossCorrelation::identity(1),
            )
            .unwrap();
            let pred = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap().values[(0, 0)];
            let gap = (pred - 3.0).abs();
            if step == 0 {
                assert!(gap < 1e-9);
            } else {
                assert!(gap > prev_gap, "tau {tau}: gap {gap} <= {prev_gap}");
                assert!(pred > 0.0);
            }
            prev_gap = gap;
        }
    }

    #[test]
    fn single_covariate_is_simple_kriging() {
        let obs_locs = random_locs(15, 4, "obs", 5.0);
        let tgt = random_locs(6, 4, "tgt", 5.0);
        let p = field(1, 0.2, 4);
        let obs = FactoredField::new(&p, &obs_locs).unwrap().sample(&p.means(), &mut rng_stream(4, "x", 0));
        let m = &p.marginals[0];
        let sigma = crate::geo::matern_cov_matrix(&obs_locs, &obs_locs, &m.matern).unwrap();
        let cross = crate::geo::matern_cov_matrix(&tgt, &obs_locs, &m.matern).unwrap();
        let inv = sigma.try_inverse().unwrap();
        let want = (cross * inv * obs.column(0).add_scalar(-m.mu)).add_scalar(m.mu);
        let got = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap();
        assert!((got.values.column(0) - want).abs().max() < 1e-10);
    }

    #[test]
    fn grid_examples() {
        let bbox = BoundingBox { lon_min: 0.0, lon_max: 1.0, lat_min: 0.0, lat_max: 1.0 };
        let g = prediction_grid(&bbox, 0.5, Metric::Euclidean).unwrap();
        let pts: Vec<(f64, f64)> = g.locations().iter().map(|l| (l.coord1, l.coord2)).collect();
        assert_eq!(pts, vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]);
        assert_eq!(prediction_grid(&bbox, 5.0, Metric::Euclidean).unwrap().len(), 1);
        let china = BoundingBox { lon_min: 73.5, lon_max: 135.1, lat_min: 18.1, lat_max: 53.6 };
        let g = prediction_grid(&china, 0.1, Metric::GreatCircleKm).unwrap();
        assert_eq!(g.len(), 616 * 355);
        assert!(prediction_grid(&bbox, 0.0, Metric::Euclidean).is_err());
        let flat = BoundingBox { lon_min: 1.0, lon_max: 1.0, lat_min: 0.0, lat_max: 1.0 };
        assert!(prediction_grid(&flat, 0.1, Metric::Euclidean).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn affine_equivariance(a in 0.2f64..5.0, b in -10.0f64..10.0, seed in 0u64..1000) {
            let obs_locs = random_locs(15, seed, "obs", 5.0);
            let tgt = random_locs(5, seed, "tgt", 5.0);
            let p = field(2, 0.1, seed);
            let obs = FactoredField::new(&p, &obs_locs).unwrap().sample(&p.means(), &mut rng_stream(seed, "x", 0));
            let base = cokrige_marginal(&p, &obs, &obs_locs, &tgt).unwrap().values;
            let mut q = p.clone();
            for m in &mut q.marginals {
                m.mu = a * m.mu + b;
                m.matern.sigma2 *= a * a;
                m.matern.tau *= a * a;
            }
            let obs2 = obs.map(|v| a * v + b);
            let moved = cokrige_marginal(&q, &obs2, &obs_locs, &tgt).unwrap().values;
            let want = base.map(|v| a * v + b);
            prop_assert!((moved - want).abs().max() < 1e-8 * (1.0 + a + b.abs()));
        }
    }
}
