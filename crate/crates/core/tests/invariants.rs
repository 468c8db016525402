use cnr::baselines::{nmr_impute, NmrConfig};
use cnr::bootstrap::{bias_correct, percentile_interval};
use cnr::geo::{distance, matern_correlation, matern_correlation_bessel, Location, LocationSet, Metric};
use cnr::slmm::SpatialParams;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn lonlat() -> impl Strategy<Value = Location<f64>> {
    (-180.0..180.0f64, -89.0..89.0f64).prop_map(|(a, b)| Location::new(a, b))
}

fn spatial(s: f64, a: f64, t: f64) -> SpatialParams<f64> {
    SpatialParams {
        sigma2_rho: s,
        nu_rho: 0.5,
        alpha_rho: a,
        tau_eps: t,
    }
}

proptest! {
    #[test]
    fn haversine_is_a_metric(a in lonlat(), b in lonlat(), c in lonlat()) {
        let d = |p: &Location<f64>, q: &Location<f64>| distance(p, q, Metric::GreatCircleKm).unwrap();
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        prop_assert!(d(&a, &a).abs() < 1e-9);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-6);
        prop_assert!(d(&a, &b) <= std::f64::consts::PI * 6371.0 + 1e-6);
    }

    #[test]
    fn matern_is_a_decreasing_correlation(d1 in 0.0..2000.0f64, gap in 0.0..500.0f64, nu in 0.2..3.0f64, alpha in 1e-4..0.05f64) {
        let a: f64 = matern_correlation(d1, nu, alpha);
        let b: f64 = matern_correlation(d1 + gap, nu, alpha);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn closed_forms_agree_with_bessel_path(d in 1e-3..3000.0f64, alpha in 1e-4..0.05f64, which in 0usize..3) {
        let nu = [0.5, 1.5, 2.5][which];
        let a: f64 = matern_correlation(d, nu, alpha);
        let b: f64 = matern_correlation_bessel(d, nu, alpha);
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn bias_correction_is_positive_and_identity_at_fixed_point(s in 0.01..10.0f64, a in 1e-4..1.0f64, t in 1e-4..1.0f64, f in 0.2..5.0f64) {
        let orig = spatial(s, a, t);
        let same = bias_correct(&orig, &[orig, orig]).unwrap();
        prop_assert!((same.sigma2_rho_bc - s).abs() < 1e-9 * s);
        prop_assert!((same.tau_eps_bc - t).abs() < 1e-9 * t);
        let bc = bias_correct(&orig, &[spatial(s * f, a * f, t * f)]).unwrap();
        prop_assert!(bc.sigma2_rho_bc > 0.0 && bc.alpha_rho_bc > 0.0 && bc.tau_eps_bc > 0.0);
        prop_assert!((bc.sigma2_rho_bc - s / f).abs() < 1e-9 * s / f);
    }

    #[test]
    fn percentile_interval_is_ordered_and_bounded(draws in prop::collection::vec(-1e3..1e3f64, 2..200), level in 0.5..0.99f64) {
        let (lo, hi) = percentile_interval(&draws, level).unwrap();
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= lo && lo <= hi && hi <= max);
    }

    #[test]
    fn one_nearest_neighbour_copies_the_closest_station(pts in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 3..30), target in (0.0..100.0f64, 0.0..100.0f64)) {
        let Ok(obs_locs) = LocationSet::from_coords(&pts, Metric::Euclidean) else { return Ok(()) };
        let obs = DMatrix::from_fn(pts.len(), 2, |i, j| (i * 10 + j) as f64);
        let tgt = LocationSet::from_coords(&[target], Metric::Euclidean).unwrap();
        let x = nmr_impute(&obs, &obs_locs, &tgt, &NmrConfig::new(1).unwrap()).unwrap();
        let d = |p: (f64, f64)| (p.0 - target.0).hypot(p.1 - target.1);
        let best = pts.iter().map(|&p| d(p)).fold(f64::INFINITY, f64::min);
        let i = (x[(0, 0)] / 10.0).round() as usize;
        prop_assert!((d(pts[i]) - best).abs() < 1e-9);
        prop_assert_eq!(x[(0, 1)], obs[(i, 1)]);
    }
}
