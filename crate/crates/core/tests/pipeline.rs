use cnr::bench::{simulate_replicate, ScenarioConfig};
use cnr::bootstrap::{run, BootstrapConfig, Variant};
use cnr::pipeline::{fit_cnr, CnrConfig, MisalignedDataset};
use cnr::{CnrConfig32, MisalignedDataset32};

fn small() -> ScenarioConfig<f64> {
    let mut c = ScenarioConfig::desk_scale();
    c.m = 30;
    c.n = 40;
    c
}

#[test]
fn fit_recovers_coefficients_roughly() {
    let (ds, _) = simulate_replicate(&small(), 0).unwrap();
    let fit = fit_cnr(&ds, &CnrConfig::exponential_linear(3)).unwrap();
    let beta = &fit.slmm.params.beta;
    assert_eq!(beta.len(), 4);
    assert_eq!(fit.x_hat.shape(), (40, 3));
    assert!(beta.iter().all(|b| b.is_finite()));
    assert!((beta[0] - 2.0).abs() < 1.5, "intercept {}", beta[0]);
    assert!(fit.covariate_params.cross.matrix()[(0, 1)] > 0.0);
}

#[test]
fn bootstrap_is_reproducible() {
    let (ds, _) = simulate_replicate(&small(), 1).unwrap();
    let cfg = CnrConfig::exponential_linear(3);
    let fit = fit_cnr(&ds, &cfg).unwrap();
    let mut bc = BootstrapConfig::new(4, Variant::Proposed, 9);
    bc.band_points = 5;
    let a = run(&ds, &fit, &cfg, &bc).unwrap();
    let b = run(&ds, &fit, &cfg, &bc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.intervals.len(), 4);
    assert!(a.intervals.iter().all(|(lo, hi)| lo <= hi));
    assert!(a.bc_params.is_some());
    assert_eq!(a.bands.len(), 3);
}

#[test]
fn single_precision_pipeline_runs() {
    let (ds, _) = simulate_replicate(&small(), 2).unwrap();
    let locs = |s: &cnr::geo::LocationSet<f64>| {
        let c: Vec<(f32, f32)> = s.locations().iter().map(|l| (l.coord1 as f32, l.coord2 as f32)).collect();
        cnr::geo::LocationSet::from_coords(&c, s.metric()).unwrap()
    };
    let ds32 = MisalignedDataset32::new(
        ds.y.map(|v| v as f32),
        locs(&ds.locs_response),
        ds.x_tilde.map(|v| v as f32),
        locs(&ds.locs_covariates),
        ds.covariate_names.clone(),
    )
    .unwrap();
    let fit32 = fit_cnr(&ds32, &CnrConfig32::exponential_linear(3)).unwrap();
    let fit64 = fit_cnr(&ds, &CnrConfig::exponential_linear(3)).unwrap();
    for (a, b) in fit32.slmm.params.beta.iter().zip(fit64.slmm.params.beta.iter()) {
        assert!((*a as f64 - b).abs() < 0.05 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn dataset_rejects_mismatched_shapes() {
    let (ds, _) = simulate_replicate(&small(), 3).unwrap();
    let bad = MisalignedDataset::new(
        ds.y.rows(0, 5).into_owned(),
        ds.locs_response.clone(),
        ds.x_tilde.clone(),
        ds.locs_covariates.clone(),
        ds.covariate_names.clone(),
    );
    assert!(bad.is_err());
}
