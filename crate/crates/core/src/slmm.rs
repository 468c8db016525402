//! Spatial linear mixed model
//! `y = B β + ρ + ε`, `ρ ~ N(0, Σ_ρ)` Matérn, `ε ~ N(0, τ_ε I)`,
//! fitted by maximum likelihood with β in generalized-least-squares form.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_row, column_names, BasisSpec, SplineKnots};
use crate::covariate_field::search_range_and_ratio;
use crate::error::{CnrError, Result};
use crate::gaussian::{cholesky, CholeskyFactor, OptimizerConfig};
use crate::geo::{matern_cov_from_distances, matern_cov_lower, LocationSet, MaternParams, Metric};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Regression design `B` with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T: Real> {
    pub b: DMatrix<T>,
    pub specs: Vec<BasisSpec>,
    /// Columns of `b` belonging to each covariate.
    pub column_map: Vec<Range<usize>>,
    /// Knots per covariate (`None` unless the basis is a spline).
    pub knots: Vec<Option<SplineKnots<T>>>,
    pub column_names: Vec<String>,
}

impl<T: Real> DesignMatrix<T> {
    /// A basis without data rows, for evaluating fixed specs and knots.
    pub fn from_basis(specs: &[BasisSpec], knots: Vec<Option<SplineKnots<T>>>) -> Result<Self> {
        if knots.len() != specs.len() {
            return Err(CnrError::DimensionMismatch {
                what: "knots vs basis specs",
                expected: specs.len(),
                found: knots.len(),
            });
        }
        let mut column_map = Vec::with_capacity(specs.len());
        let mut names = vec!["intercept".to_string()];
        let mut p = 1;
        for (j, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if spec.needs_knots() != knots[j].is_some() {
                return Err(CnrError::InvalidParameter(format!("knots for covariate {j} do not match its basis")));
            }
            column_map.push(p..p + spec.dim());
            names.extend(column_names(spec, j));
            p += spec.dim();
        }
        Ok(Self {
            b: DMatrix::zeros(0, p),
            specs: specs.to_vec(),
            column_map,
            knots,
            column_names: names,
        })
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn k(&self) -> usize {
        self.specs.len()
    }

    /// One design row `(1, f_1(x_1)ᵀ, …, f_K(x_K)ᵀ)` with this design's knots.
    pub fn row(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.p());
        out.push(T::one());
        for (k, spec) in self.specs.iter().enumerate() {
            basis_row(spec, self.knots[k].as_ref(), x[k], &mut out);
        }
        out
    }

    /// Re-evaluates the basis (same specs and knots) on new covariate values.
    pub fn evaluate(&self, x: &DMatrix<T>) -> DMatrix<T> {
        evaluate_rows(x, &self.specs, &self.knots, self.p())
    }
}

fn evaluate_rows<T: Real>(
    x: &DMatrix<T>,
    specs: &[BasisSpec],
    knots: &[Option<SplineKnots<T>>],
    p: usize,
) -> DMatrix<T> {
    let n = x.nrows();
    let mut b = DMatrix::zeros(n, p);
    let mut row = Vec::with_capacity(p);
    for i in 0..n {
        row.clear();
        row.push(T::one());
        for (k, spec) in specs.iter().enumerate() {
            basis_row(spec, knots[k].as_ref(), x[(i, k)], &mut row);
        }
        for (j, &v) in row.iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    b
}

/// Builds `B̂` from predicted covariates. Spline knots come from `knots_in`
/// when given, otherwise from the quantiles of each column of `x_hat`.
pub fn build_design<T: Real>(
    x_hat: &DMatrix<T>,
    specs: &[BasisSpec],
    knots_in: Option<&[Option<SplineKnots<T>>]>,
) -> Result<DesignMatrix<T>> {
    let (n, k) = x_hat.shape();
    if specs.len() != k {
        return Err(CnrError::DimensionMismatch {
            what: "basis specs vs covariates",
            expected: k,
            found: specs.len(),
        });
    }
    for s in specs {
        s.validate()?;
    }
    let mut knots = Vec::with_capacity(k);
    for (j, spec) in specs.iter().enumerate() {
        let kn = match (spec, knots_in) {
            (BasisSpec::NaturalCubicSpline { interior_knots }, given) => {
                let kn = match given.and_then(|g| g.get(j).cloned().flatten()) {
                    Some(kn) => kn,
                    None => {
                        let col: Vec<T> = x_hat.column(j).iter().copied().collect();
                        SplineKnots::from_quantiles(&col, *interior_knots)?
                    }
                };
                if kn.interior.len() != *interior_knots || !kn.is_strictly_increasing() {
                    return Err(CnrError::DuplicateKnots { covariate: j });
                }
                Some(kn)
            }
            _ => None,
        };
        knots.push(kn);
    }
    let mut column_map = Vec::with_capacity(k);
    let mut names = vec!["intercept".to_string()];
    let mut p = 1;
    for (j, spec) in specs.iter().enumerate() {
        column_map.push(p..p + spec.dim());
        names.extend(column_names(spec, j));
        p += spec.dim();
    }
    if n < p + 5 {
        return Err(CnrError::DegenerateInput(format!(
            "{n} observations cannot support {p} regression coefficients"
        )));
    }
    let b = evaluate_rows(x_hat, specs, &knots, p);
    check_rank(&b, &names)?;
    Ok(DesignMatrix {
        b,
        specs: specs.to_vec(),
        column_map,
        knots,
        column_names: names,
    })
}

/// Fails with the names of the columns spanning a numerical null space.
fn check_rank<T: Real>(b: &DMatrix<T>, names: &[String]) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(CnrError::DegenerateInput("non-finite design entries".into()));
    }
    // column-equilibrate so the rank test is scale free
    let norms: Vec<T> = b.column_iter().map(|c| c.norm()).collect();
    let zero_cols: Vec<String> = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == T::zero())
        .map(|(j, _)| names[j].clone())
        .collect();
    if !zero_cols.is_empty() {
        return Err(CnrError::RankDeficient { columns: zero_cols });
    }
    let scaled = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] / norms[j]);
    let svd = scaled.svd(false, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let tol = smax * lit::<T>(1e-10);
    let vt = svd.v_t.as_ref().unwrap();
    let mut offending = Vec::new();
    for (i, &sv) in s.iter().enumerate() {
        if sv <= tol {
            let row = vt.row(i);
            let peak = row.amax();
            for (j, &v) in row.iter().enumerate() {
                if v.abs() > peak * lit(0.1) && !offending.contains(&names[j]) {
                    offending.push(names[j].clone());
                }
            }
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(CnrError::RankDeficient { columns: offending })
    }
}

/// Covariance parameters of the random effect and the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams<T> {
    pub sigma2_rho: T,
    pub nu_rho: T,
    pub alpha_rho: T,
    pub tau_eps: T,
}

impl<T: Real> SpatialParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_rho", self.sigma2_rho),
            ("nu_rho", self.nu_rho),
            ("alpha_rho", self.alpha_rho),
            ("tau_eps", self.tau_eps),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(CnrError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `Σ_ρ` as a Matérn parameter set (no nugget).
    pub fn random_effect(&self) -> MaternParams<T> {
        MaternParams {
            sigma2: self.sigma2_rho,
            nu: self.nu_rho,
            alpha: self.alpha_rho,
            tau: T::zero(),
        }
    }

    /// `Σ_ρ + τ_ε I` as a Matérn parameter set with nugget.
    pub fn marginal(&self) -> MaternParams<T> {
        MaternParams {
            tau: self.tau_eps,
            ..self.random_effect()
        }
    }

    /// `(σ²_ρ, α_ρ, τ_ε)` in that order.
    pub fn free(&self) -> [T; 3] {
        [self.sigma2_rho, self.alpha_rho, self.tau_eps]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlmmParams<T: Real> {
    pub beta: DVector<T>,
    pub spatial: SpatialParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlmmFit<T: Real> {
    pub params: SlmmParams<T>,
    /// `{Bᵀ (Σ̂_ρ + τ̂_ε I)⁻¹ B}⁻¹` at the fitted covariance.
    pub naive_cov: DMatrix<T>,
    pub loglik: T,
    pub design: DesignMatrix<T>,
}

struct Gls<T: Real> {
    beta: DVector<T>,
    /// `(B̃ᵀ B̃)⁻¹` with `B̃ = L⁻¹ B`.
    info_inv: DMatrix<T>,
    rss: T,
    logdet: T,
}

fn gls<T: Real>(y: &DVector<T>, b: &DMatrix<T>, chol: &CholeskyFactor<T>) -> Option<Gls<T>> {
    let bt = chol.solve_lower_mat(b);
    let yt = chol.solve_lower(y);
    let info = bt.transpose() * &bt;
    let ic = nalgebra::Cholesky::new(info)?;
    let beta = ic.solve(&(bt.transpose() * &yt));
    let r = yt - bt * &beta;
    Some(Gls {
        beta,
        info_inv: ic.inverse(),
        rss: r.norm_squared(),
        logdet: chol.logdet(),
    })
}

/// Profiled log-likelihood at `(alpha, eta)` where `eta = τ_ε / σ²_ρ`.
fn profiled<T: Real>(y: &DVector<T>, b: &DMatrix<T>, dist: &DMatrix<T>, nu: T, alpha: T, eta: T) -> Option<(T, Gls<T>, T)> {
    let unit = MaternParams {
        sigma2: T::one(),
        nu,
        alpha,
        tau: eta,
    };
    let a = matern_cov_lower(dist, &unit);
    let l = nalgebra::Cholesky::new(a)?.unpack();
    let chol = CholeskyFactor::from_lower_unchecked(l);
    let g = gls(y, b, &chol)?;
    let nf = from_usize::<T>(y.len());
    let sigma2 = g.rss / nf;
    if !(sigma2 > T::zero()) {
        return None;
    }
    let two_pi = lit::<T>(2.0) * T::pi();
    let ll = -lit::<T>(0.5) * (nf * two_pi.ln() + nf * sigma2.ln() + g.logdet + nf);
    Some((ll, g, sigma2))
}

/// Full log-likelihood of `y` at arbitrary `(β, θ_ρ, τ_ε)`.
pub fn loglik_at<T: Real>(y: &DVector<T>, b: &DMatrix<T>, dist: &DMatrix<T>, beta: &DVector<T>, spatial: &SpatialParams<T>) -> Result<T> {
    let chol = cholesky(&matern_cov_from_distances(dist, &spatial.marginal(), true))?;
    let mean = b * beta;
    crate::gaussian::mvn_logpdf(y, &mean, &chol)
}

/// ML fit of the mixed model on `design` at locations `locs`, `ν_ρ` fixed.
pub fn fit<T: Real>(y: &DVector<T>, design: &DesignMatrix<T>, locs: &LocationSet<T>, nu_rho_fixed: T) -> Result<SlmmFit<T>> {
    fit_with(
        y,
        design,
        &locs.distance_matrix(),
        locs.metric(),
        nu_rho_fixed,
        &OptimizerConfig::default(),
    )
}

/// [`fit`] on a precomputed distance matrix. `β` and `σ²_ρ` are profiled
/// in closed form, leaving a search over `(log α_ρ, log τ_ε/σ²_ρ)`.
pub fn fit_with<T: Real>(
    y: &DVector<T>,
    design: &DesignMatrix<T>,
    dist: &DMatrix<T>,
    metric: Metric,
    nu_rho_fixed: T,
    cfg: &OptimizerConfig,
) -> Result<SlmmFit<T>> {
    let n = y.len();
    if design.n() != n || dist.nrows() != n {
        return Err(CnrError::DimensionMismatch {
            what: "response vs design/locations",
            expected: n,
            found: if design.n() != n { design.n() } else { dist.nrows() },
        });
    }
    MaternParams::new(T::one(), nu_rho_fixed, T::one(), T::zero())?.validate_for(metric)?;
    let b = &design.b;
    let (alpha, eta, _) = search_range_and_ratio(
        dist,
        |alpha, eta| profiled(y, b, dist, nu_rho_fixed, alpha, eta).map(|r| r.0),
        cfg,
    )?;
    let (loglik, g, sigma2) = profiled(y, b, dist, nu_rho_fixed, alpha, eta)
        .ok_or_else(|| CnrError::OptimizerFailure("profiled likelihood failed at optimum".into()))?;
    let spatial = SpatialParams {
        sigma2_rho: sigma2,
        nu_rho: nu_rho_fixed,
        alpha_rho: alpha,
        tau_eps: eta * sigma2,
    };
    Ok(SlmmFit {
        params: SlmmParams {
            beta: g.beta,
            spatial,
        },
        naive_cov: g.info_inv * sigma2,
        loglik,
        design: design.clone(),
    })
}

/// GLS coefficients `{Bᵀ V⁻¹ B}⁻¹ Bᵀ V⁻¹ y` at a given covariance.
pub fn gls_beta<T: Real>(y: &DVector<T>, b: &DMatrix<T>, dist: &DMatrix<T>, spatial: &SpatialParams<T>) -> Result<DVector<T>> {
    let chol = cholesky(&matern_cov_from_distances(dist, &spatial.marginal(), true))?;
    gls(y, b, &chol)
        .map(|g| g.beta)
        .ok_or(CnrError::RankDeficient { columns: vec!["<design>".into()] })
}

/// Naive coefficient covariance `{Bᵀ (Σ_ρ + τ_ε I)⁻¹ B}⁻¹` evaluated at
/// `spatial`, which may differ from the fit's own estimates (e.g.
/// bias-corrected values).
pub fn naive_variance<T: Real>(fit: &SlmmFit<T>, dist: &DMatrix<T>, spatial: &SpatialParams<T>) -> Result<DMatrix<T>> {
    spatial.validate()?;
    let chol = cholesky(&matern_cov_from_distances(dist, &spatial.marginal(), true))?;
    let bt = chol.solve_lower_mat(&fit.design.b);
    let info = bt.transpose() * bt;
    nalgebra::Cholesky::new(info)
        .map(|c| c.inverse())
        .ok_or_else(|| CnrError::RankDeficient {
            columns: fit.design.column_names.clone(),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherCurve<T> {
    pub x: Vec<T>,
    pub values: Vec<T>,
    /// Grid points outside the boundary knots of a spline basis.
    pub extrapolated: Vec<bool>,
}

/// `β₀ + f_k(x)ᵀ β_k + Σ_{l≠k} f_l(c_l)ᵀ β_l` for a coefficient vector laid
/// out like `design`.
pub fn smoother_values<T: Real>(design: &DesignMatrix<T>, beta: &DVector<T>, k: usize, x_grid: &[T], c: &[T]) -> Vec<T> {
    let mut point = c.to_vec();
    x_grid
        .iter()
        .map(|&x| {
            point[k] = x;
            let row = design.row(&point);
            row.iter().zip(beta.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
        .collect()
}

/// Conditional smoother for covariate `k`, other covariates held at `c`.
pub fn conditional_smoother<T: Real>(fit: &SlmmFit<T>, k: usize, x_grid: &[T], c: &[T]) -> Result<SmootherCurve<T>> {
    let design = &fit.design;
    if k >= design.k() || c.len() != design.k() {
        return Err(CnrError::DimensionMismatch {
            what: "smoother covariate index / conditioning values",
            expected: design.k(),
            found: c.len().max(k + 1),
        });
    }
    let extrapolated = x_grid
        .iter()
        .map(|&x| match &design.knots[k] {
            Some(kn) => x < kn.lower || x > kn.upper,
            None => false,
        })
        .collect();
    Ok(SmootherCurve {
        x: x_grid.to_vec(),
        values: smoother_values(design, &fit.params.beta, k, x_grid, c),
        extrapolated,
    })
}

impl<T: Real> SlmmFit<T> {
    pub fn slopes(&self) -> Vec<T> {
        self.params.beta.iter().skip(1).copied().collect()
    }

    /// Standard errors from the naive covariance.
    pub fn naive_se(&self) -> Vec<T> {
        (0..self.naive_cov.nrows()).map(|i| self.naive_cov[(i, i)].sqrt()).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (name, b) in self.design.column_names.iter().zip(self.params.beta.iter()) {
            s.push_str(&format!("{name}\t{:.6}\n", to_f64(*b)));
        }
        let sp = &self.params.spatial;
        s.push_str(&format!(
            "sigma2_rho\t{:.6}\nalpha_rho\t{:.6e}\ntau_eps\t{:.6}\nloglik\t{:.6}\n",
            to_f64(sp.sigma2_rho),
            to_f64(sp.alpha_rho),
            to_f64(sp.tau_eps),
            to_f64(self.loglik)
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::mvn_sample;
    use crate::geo::Location;
    use crate::rng::rng_stream;
    use rand::Rng;

    fn setup(n: usize, seed: u64) -> (LocationSet<f64>, DMatrix<f64>) {
        let mut rng = rng_stream(seed, "locs", 0);
        let locs: Vec<Location<f64>> = (0..n)
            .map(|_| Location::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0))
            .collect();
        let locs = LocationSet::new(locs, Metric::Euclidean).unwrap();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        (locs, x)
    }

    fn simulate_y(locs: &LocationSet<f64>, b: &DMatrix<f64>, beta: &DVector<f64>, sp: &SpatialParams<f64>, seed: u64) -> DVector<f64> {
        let cov = crate::geo::matern_cov_matrix(locs, locs, &sp.marginal()).unwrap();
        let chol = cholesky(&cov).unwrap();
        mvn_sample(&(b * beta), &chol, &mut rng_stream(seed, "y", 0))
    }

    #[test]
    fn linear_and_polynomial_designs() {
        let (_, x) = setup(30, 1);
        let d = build_design(&x, &[BasisSpec::Linear, BasisSpec::Linear], None).unwrap();
        assert_eq!(d.p(), 3);
        assert!(d.b.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.b.column(2), x.column(1));
        let d = build_design(&x, &[BasisSpec::Polynomial { degree: 2 }; 2], None).unwrap();
        assert_eq!(d.p(), 5);
        assert!((d.b[(4, 2)] - x[(4, 0)].powi(2)).abs() < 1e-15);
        assert_eq!(d.column_map, vec![1..3, 3..5]);
    }

    #[test]
    fn spline_design_records_quintile_knots() {
        let (_, x) = setup(60, 2);
        let specs = [BasisSpec::NaturalCubicSpline { interior_knots: 4 }, BasisSpec::Linear];
        let d = build_design(&x, &specs, None).unwrap();
        assert_eq!(d.p(), 1 + 5 + 1);
        let kn = d.knots[0].as_ref().unwrap();
        assert_eq!(kn.interior.len(), 4);
        // supplied knots are used verbatim
        let again = build_design(&x.map(|v| v * 0.5), &specs, Some(&d.knots)).unwrap();
        assert_eq!(again.knots, d.knots);
    }

    #[test]
    fn design_errors() {
        let (_, x) = setup(30, 3);
        let dup = DMatrix::from_columns(&[x.column(0).into_owned(), x.column(0).into_owned()]);
        match build_design(&dup, &[BasisSpec::Linear, BasisSpec::Linear], None) {
            Err(CnrError::RankDeficient { columns }) => {
                assert!(columns.contains(&"x1".to_string()) && columns.contains(&"x2".to_string()))
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let ties = DMatrix::from_fn(30, 1, |i, _| if i < 25 { 1.0 } else { i as f64 });
        assert!(matches!(
            build_design(&ties, &[BasisSpec::NaturalCubicSpline { interior_knots: 4 }], None),
            Err(CnrError::DuplicateKnots { covariate: 0 })
        ));
        let small = DMatrix::from_fn(6, 2, |i, j| (i * 3 + j) as f64);
        assert!(build_design(&small, &[BasisSpec::Linear, BasisSpec::Linear], None).is_err());
    }

    #[test]
    fn gls_identity_and_loglik_consistency() {
        let (locs, x) = setup(80, 4);
        let d = build_design(&x, &[BasisSpec::Linear, BasisSpec::Linear], None).unwrap();
        let beta = DVector::from_vec(vec![2.0, 1.0, -0.5]);
        let truth = SpatialParams { sigma2_rho: 0.5, nu_rho: 0.5, alpha_rho: 0.5, tau_eps: 0.1 };
        let y = simulate_y(&locs, &d.b, &beta, &truth, 5);
        let dist = locs.distance_matrix();
        let f = fit(&y, &d, &locs, 0.5).unwrap();
        let direct = gls_beta(&y, &d.b, &dist, &f.params.spatial).unwrap();
        let scale = 1.0 + f.params.beta.amax();
        assert!((direct - &f.params.beta).amax() < 1e-8 * scale);
        let at_truth = loglik_at(&y, &d.b, &dist, &f.params.beta, &truth).unwrap();
        assert!(f.loglik >= at_truth);
        let refit = loglik_at(&y, &d.b, &dist, &f.params.beta, &f.params.spatial).unwrap();
        assert!((refit - f.loglik).abs() < 1e-8 * f.loglik.abs());
        let nv = naive_variance(&f, &dist, &f.params.spatial).unwrap();
        assert!((nv - &f.naive_cov).amax() < 1e-10);
    }

    #[test]
    fn pure_noise_limit_is_ols() {
        let (locs, x) = setup(50, 6);
        let d = build_design(&x, &[BasisSpec::Linear, BasisSpec::Linear], None).unwrap();
        let mut rng = rng_stream(7, "e", 0);
        let y = DVector::from_fn(50, |i, _| 1.0 + x[(i, 0)] - 2.0 * x[(i, 1)] + rng.random::<f64>() - 0.5);
        let dist = locs.distance_matrix();
        let nugget_only = SpatialParams { sigma2_rho: 1e-12, nu_rho: 0.5, alpha_rho: 1.0, tau_eps: 1.0 };
        let g = gls_beta(&y, &d.b, &dist, &nugget_only).unwrap();
        let btb = d.b.transpose() * &d.b;
        let ols = btb.clone().try_inverse().unwrap() * d.b.transpose() * &y;
        assert!((g - ols).amax() < 1e-9);
        let dummy = SlmmFit {
            params: SlmmParams { beta: DVector::zeros(3), spatial: nugget_only },
            naive_cov: DMatrix::zeros(3, 3),
            loglik: 0.0,
            design: d.clone(),
        };
        let unit = SpatialParams { tau_eps: 1.0, sigma2_rho: 1e-300, ..nugget_only };
        let nv = naive_variance(&dummy, &dist, &unit).unwrap();
        assert!((nv - btb.try_inverse().unwrap()).amax() < 1e-12);
    }

    #[test]
    fn translation_changes_only_intercept() {
        let (locs, x) = setup(60, 8);
        let d = build_design(&x, &[BasisSpec::Linear, BasisSpec::Linear], None).unwrap();
        let truth = SpatialParams { sigma2_rho: 0.3, nu_rho: 0.5, alpha_rho: 0.4, tau_eps: 0.05 };
        let y = simulate_y(&locs, &d.b, &DVector::from_vec(vec![1.0, 0.5, 0.5]), &truth, 9);
        let a = fit(&y, &d, &locs, 0.5).unwrap();
        let b = fit(&y.add_scalar(10.0), &d, &locs, 0.5).unwrap();
        assert!((b.params.beta[0] - a.params.beta[0] - 10.0).abs() < 1e-6);
        for j in 1..3 {
            assert!((b.params.beta[j] - a.params.beta[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn smoother_examples() {
        let (locs, x) = setup(60, 10);
        let specs = [BasisSpec::NaturalCubicSpline { interior_knots: 4 }, BasisSpec::Linear];
        let d = build_design(&x, &specs, None).unwrap();
        let truth = SpatialParams { sigma2_rho: 0.3, nu_rho: 0.5, alpha_rho: 0.4, tau_eps: 0.05 };
        let beta = DVector::from_fn(d.p(), |i, _| 0.3 * i as f64 - 0.5);
        let y = simulate_y(&locs, &d.b, &beta, &truth, 11);
        let f = fit(&y, &d, &locs, 0.5).unwrap();
        let c = [0.1, -0.2];
        let kn = d.knots[0].clone().unwrap();
        let grid = kn.all();
        let curve = conditional_smoother(&f, 0, &grid, &c).unwrap();
        for (g, v) in grid.iter().zip(&curve.values) {
            let row = d.row(&[*g, c[1]]);
            let direct: f64 = row.iter().zip(f.params.beta.iter()).map(|(a, b)| a * b).sum();
            assert!((direct - v).abs() < 1e-10);
        }
        assert!(curve.extrapolated.iter().all(|e| !e));
        let out = conditional_smoother(&f, 0, &[kn.upper + 1.0], &c).unwrap();
        assert!(out.extrapolated[0]);

        // linear covariate: straight line with slope beta_2
        let line = conditional_smoother(&f, 1, &[0.0, 1.0, 2.0], &c).unwrap();
        let slope = f.params.beta[d.column_map[1].start];
        assert!(((line.values[1] - line.values[0]) - slope).abs() < 1e-12);
        assert!(((line.values[2] - line.values[1]) - slope).abs() < 1e-12);

        let mut zero = f.clone();
        zero.params.beta.iter_mut().skip(1).for_each(|b| *b = 0.0);
        let flat = conditional_smoother(&zero, 0, &grid, &c).unwrap();
        assert!(flat.values.iter().all(|&v| v == zero.params.beta[0]));
    }
}
