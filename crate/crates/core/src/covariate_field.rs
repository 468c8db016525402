//! Joint law of the K covariates: per-covariate Matérn marginals tied
//! together by a cross-correlation matrix `R` in generalized Kronecker
//! form, `Σ = Bdiag(L_k) (R ⊗ I) Bdiag(L_k)ᵀ`, where `L_k` is the lower
//! Cholesky factor of covariate k's marginal covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CnrError, Result};
use crate::gaussian::{cholesky, maximize, standard_normal_vector, Bounds, CholeskyFactor, OptimizerConfig};
use crate::geo::{matern_cov_from_distances, matern_cov_lower, LocationSet, MaternParams, Metric};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Mean and Matérn covariance of one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalCovariateParams<T> {
    pub mu: T,
    pub matern: MaternParams<T>,
}

/// Between-covariate correlation matrix `R` (K × K, symmetric positive definite).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation<T: Real>(DMatrix<T>);

impl<T: Real> CrossCorrelation<T> {
    pub fn new(r: DMatrix<T>) -> Result<Self> {
        let k = r.nrows();
        if k == 0 || r.ncols() != k {
            return Err(CnrError::DimensionMismatch {
                what: "cross-correlation (square)",
                expected: k,
                found: r.ncols(),
            });
        }
        for i in 0..k {
            for j in 0..i {
                let a = r[(i, j)];
                let b = r[(j, i)];
                if to_f64((a - b).abs()) > 1e-12 * to_f64(a.abs().max(b.abs()).max(T::one())) {
                    return Err(CnrError::NotSymmetric(to_f64((a - b).abs())));
                }
            }
        }
        if nalgebra::Cholesky::new(r.clone()).is_none() {
            return Err(CnrError::NotPositiveDefinite { dim: k });
        }
        Ok(Self(r))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    /// AR(1) structure `rho^|i-j|` on the covariates listed in `block`
    /// (in order); all other covariates are independent.
    pub fn ar1_block(k: usize, block: &[usize], rho: T) -> Result<Self> {
        let mut r = DMatrix::identity(k, k);
        for (a, &i) in block.iter().enumerate() {
            for (b, &j) in block.iter().enumerate() {
                if i >= k || j >= k {
                    return Err(CnrError::InvalidParameter(format!(
                        "covariate index out of range in AR(1) block: {i}, {j} (K = {k})"
                    )));
                }
                r[(i, j)] = rho.powi((a as i32 - b as i32).abs());
            }
        }
        Self::new(r)
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Rescaled to unit diagonal.
    pub fn standardized(&self) -> Self {
        let d: Vec<T> = (0..self.dim()).map(|i| self.0[(i, i)].sqrt()).collect();
        Self(DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.0[(i, j)] / (d[i] * d[j])
        }))
    }
}

/// All covariate-law parameters `θ_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateFieldParams<T: Real> {
    pub marginals: Vec<MarginalCovariateParams<T>>,
    pub cross: CrossCorrelation<T>,
}

impl<T: Real> CovariateFieldParams<T> {
    pub fn new(marginals: Vec<MarginalCovariateParams<T>>, cross: CrossCorrelation<T>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(CnrError::Empty("covariate marginals"));
        }
        if cross.dim() != marginals.len() {
            return Err(CnrError::DimensionMismatch {
                what: "cross-correlation vs number of covariates",
                expected: marginals.len(),
                found: cross.dim(),
            });
        }
        for m in &marginals {
            m.matern.validate()?;
        }
        Ok(Self { marginals, cross })
    }

    pub fn k(&self) -> usize {
        self.marginals.len()
    }

    pub fn means(&self) -> Vec<T> {
        self.marginals.iter().map(|m| m.mu).collect()
    }

    /// Same marginals with `R` replaced by the identity.
    pub fn without_cross_correlation(&self) -> Self {
        Self {
            marginals: self.marginals.clone(),
            cross: CrossCorrelation::identity(self.k()),
        }
    }
}

/// Full marginal log-likelihood of one covariate (the objective maximized by
/// [`fit_marginal`]), from a precomputed distance matrix.
pub fn marginal_loglik<T: Real>(x: &DVector<T>, dist: &DMatrix<T>, params: &MarginalCovariateParams<T>) -> Result<T> {
    let cov = matern_cov_from_distances(dist, &params.matern, true);
    let chol = cholesky(&cov)?;
    let mean = DVector::from_element(x.len(), params.mu);
    crate::gaussian::mvn_logpdf(x, &mean, &chol)
}

/// Marginal log-likelihood with `(mu, sigma2)` profiled out, as a function of
/// `alpha` and the noise ratio `eta = tau / sigma2`. Returns the maximized
/// value together with `(mu, sigma2)`.
fn profiled_marginal<T: Real>(x: &DVector<T>, dist: &DMatrix<T>, nu: T, alpha: T, eta: T) -> Option<(T, T, T)> {
    let unit = MaternParams {
        sigma2: T::one(),
        nu,
        alpha,
        tau: eta,
    };
    let a = matern_cov_lower(dist, &unit);
    let chol = nalgebra::Cholesky::new(a)?;
    let l = chol.l_dirty();
    let m = x.len();
    let mut u = DVector::from_element(m, T::one());
    l.solve_lower_triangular_mut(&mut u);
    let mut v = x.clone();
    l.solve_lower_triangular_mut(&mut v);
    let mu = u.dot(&v) / u.dot(&u);
    let r = v - u * mu;
    let mf = from_usize::<T>(m);
    let sigma2 = r.norm_squared() / mf;
    if !(sigma2 > T::zero()) {
        return None;
    }
    let logdet = (0..m).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * lit(2.0);
    let two_pi = lit::<T>(2.0) * T::pi();
    let ll = -lit::<T>(0.5) * (mf * two_pi.ln() + mf * sigma2.ln() + logdet + mf);
    Some((ll, mu, sigma2))
}

/// Smallest strictly positive and largest entries of a distance matrix.
pub(crate) fn distance_range<T: Real>(dist: &DMatrix<T>) -> (T, T) {
    let mut min_pos = T::max_value().unwrap();
    let mut max = T::zero();
    for &d in dist.iter() {
        if d > T::zero() && d < min_pos {
            min_pos = d;
        }
        if d > max {
            max = d;
        }
    }
    (min_pos, max)
}

pub(crate) fn median_offdiag<T: Real>(dist: &DMatrix<T>) -> T {
    let n = dist.nrows();
    let mut v: Vec<T> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for i in (j + 1)..n {
            v.push(dist[(i, j)]);
        }
    }
    if v.is_empty() {
        return T::one();
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Profile-likelihood search over `(log alpha, log eta)` shared by the
/// covariate and mixed-model fits: coarse grid, then Nelder–Mead.
pub(crate) fn search_range_and_ratio<T: Real, F>(
    dist: &DMatrix<T>,
    mut objective: F,
    cfg: &OptimizerConfig,
) -> Result<(T, T, T)>
where
    F: FnMut(T, T) -> Option<T>,
{
    let (dmin, dmax) = distance_range(dist);
    if !(dmax > T::zero()) {
        return Err(CnrError::DegenerateInput("all locations coincide".into()));
    }
    let med = median_offdiag(dist).max(dmin);
    let bounds = Bounds {
        lower: vec![(lit::<T>(0.01) / dmax).ln(), lit::<T>(1e-6).ln()],
        upper: vec![(lit::<T>(100.0) / dmin).ln(), lit::<T>(1e3).ln()],
    };
    let mut eval = |p: &[T]| -> T {
        match objective(p[0].exp(), p[1].exp()) {
            Some(v) if v.is_finite() => v,
            _ => T::min_value().unwrap(),
        }
    };
    let mut best: Option<(Vec<T>, T)> = None;
    for &a in &[0.3, 1.0, 3.0, 10.0] {
        for &e in &[0.01, 0.1, 1.0] {
            let mut p = vec![(lit::<T>(a) / med).ln(), lit::<T>(e).ln()];
            for i in 0..2 {
                p[i] = p[i].max(bounds.lower[i]).min(bounds.upper[i]);
            }
            let v = eval(&p);
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((p, v));
            }
        }
    }
    let (start, start_val) = best.unwrap();
    if start_val == T::min_value().unwrap() {
        return Err(CnrError::OptimizerFailure(
            "likelihood not finite anywhere on the starting grid".into(),
        ));
    }
    let res = maximize(
        |p: &[T]| {
            let v = eval(p);
            if v == T::min_value().unwrap() {
                lit::<T>(f64::NAN)
            } else {
                v
            }
        },
        &start,
        Some(&bounds),
        cfg,
    )?;
    Ok((res.argmax[0].exp(), res.argmax[1].exp(), res.value))
}

/// Maximum-likelihood fit of one covariate's mean and Matérn parameters
/// (smoothness held at `nu_fixed`).
pub fn fit_marginal<T: Real>(x_tilde_k: &DVector<T>, locs: &LocationSet<T>, nu_fixed: T) -> Result<MarginalCovariateParams<T>> {
    fit_marginal_with(
        x_tilde_k,
        &locs.distance_matrix(),
        locs.metric(),
        nu_fixed,
        &OptimizerConfig::default(),
    )
}

/// [`fit_marginal`] on a precomputed distance matrix.
///
/// `mu` and `sigma2` are profiled in closed form (GLS mean, scale from the
/// quadratic form), which leaves the same maximizer as the joint search.
pub fn fit_marginal_with<T: Real>(
    x: &DVector<T>,
    dist: &DMatrix<T>,
    metric: Metric,
    nu_fixed: T,
    cfg: &OptimizerConfig,
) -> Result<MarginalCovariateParams<T>> {
    let m = x.len();
    if dist.nrows() != m || dist.ncols() != m {
        return Err(CnrError::DimensionMismatch {
            what: "covariate vector vs distance matrix",
            expected: dist.nrows(),
            found: m,
        });
    }
    if m < 10 {
        return Err(CnrError::DegenerateInput(format!(
            "at least 10 observed locations required, got {m}"
        )));
    }
    let mean = x.mean();
    let spread = x.iter().fold(T::zero(), |acc, &v| acc.max((v - mean).abs()));
    if !(spread > T::zero()) {
        return Err(CnrError::DegenerateInput("covariate is constant".into()));
    }
    MaternParams::new(T::one(), nu_fixed, T::one(), T::zero())?.validate_for(metric)?;

    let (alpha, eta, _) = search_range_and_ratio(
        dist,
        |alpha, eta| profiled_marginal(x, dist, nu_fixed, alpha, eta).map(|r| r.0),
        cfg,
    )?;
    let (_, mu, sigma2) = profiled_marginal(x, dist, nu_fixed, alpha, eta)
        .ok_or_else(|| CnrError::OptimizerFailure("profiled likelihood failed at optimum".into()))?;
    Ok(MarginalCovariateParams {
        mu,
        matern: MaternParams::new(sigma2, nu_fixed, alpha, eta * sigma2)?,
    })
}

fn check_columns<T: Real>(x_tilde: &DMatrix<T>, k: usize, m: usize) -> Result<()> {
    if x_tilde.ncols() != k {
        return Err(CnrError::DimensionMismatch {
            what: "number of covariate columns",
            expected: k,
            found: x_tilde.ncols(),
        });
    }
    if x_tilde.nrows() != m {
        return Err(CnrError::DimensionMismatch {
            what: "covariate rows vs observed locations",
            expected: m,
            found: x_tilde.nrows(),
        });
    }
    Ok(())
}

/// Whitened residuals: column k is `L_k⁻¹ (x̃_k − μ_k 1)`.
pub fn whitened_residuals<T: Real>(
    x_tilde: &DMatrix<T>,
    marginals: &[MarginalCovariateParams<T>],
    dist: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let (m, k) = x_tilde.shape();
    check_columns(x_tilde, marginals.len(), m)?;
    let mut z = DMatrix::zeros(m, k);
    for (j, marg) in marginals.iter().enumerate() {
        let chol = cholesky(&matern_cov_from_distances(dist, &marg.matern, true))?;
        let centered = x_tilde.column(j).map(|v| v - marg.mu);
        z.set_column(j, &chol.solve_lower(&centered));
    }
    Ok(z)
}

/// One-step estimator `R̂ = Zᵀ Z / M` of the cross-correlation, where `Z`
/// holds the whitened residuals. Not rescaled to unit diagonal unless
/// `standardize` is set.
pub fn one_step_r<T: Real>(
    x_tilde: &DMatrix<T>,
    marginals: &[MarginalCovariateParams<T>],
    locs: &LocationSet<T>,
    standardize: bool,
) -> Result<CrossCorrelation<T>> {
    one_step_r_with(x_tilde, marginals, &locs.distance_matrix(), standardize)
}

pub fn one_step_r_with<T: Real>(
    x_tilde: &DMatrix<T>,
    marginals: &[MarginalCovariateParams<T>],
    dist: &DMatrix<T>,
    standardize: bool,
) -> Result<CrossCorrelation<T>> {
    let z = whitened_residuals(x_tilde, marginals, dist)?;
    let m = from_usize::<T>(z.nrows());
    let mut r = z.transpose() * &z / m;
    // exact symmetry
    let k = r.nrows();
    for i in 0..k {
        for j in 0..i {
            let avg = (r[(i, j)] + r[(j, i)]) * lit(0.5);
            r[(i, j)] = avg;
            r[(j, i)] = avg;
        }
    }
    // PSD by construction; exactly collinear whitened residuals give a singular R̂
    let out = CrossCorrelation(r);
    for i in 0..k {
        let d = to_f64(out.matrix()[(i, i)]);
        if !(0.8..=1.2).contains(&d) {
            log::warn!("one-step R diagonal entry {i} = {d:.4} outside [0.8, 1.2]");
        }
    }
    Ok(if standardize { out.standardized() } else { out })
}

/// Per-covariate Cholesky factors over one location set plus `R`, giving
/// fast products with the joint covariance and its inverse.
#[derive(Debug, Clone)]
pub struct FactoredField<T: Real> {
    factors: Vec<CholeskyFactor<T>>,
    r: DMatrix<T>,
    r_inv: DMatrix<T>,
    r_chol: DMatrix<T>,
    n_locs: usize,
}

impl<T: Real> FactoredField<T> {
    pub fn new(params: &CovariateFieldParams<T>, locs: &LocationSet<T>) -> Result<Self> {
        Self::from_distances(params, &locs.distance_matrix())
    }

    pub fn from_distances(params: &CovariateFieldParams<T>, dist: &DMatrix<T>) -> Result<Self> {
        let factors = params
            .marginals
            .iter()
            .map(|m| cholesky(&matern_cov_from_distances(dist, &m.matern, true)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(factors, &params.cross)
    }

    pub(crate) fn from_factors(factors: Vec<CholeskyFactor<T>>, cross: &CrossCorrelation<T>) -> Result<Self> {
        let r = cross.matrix().clone();
        let rc = cholesky(&r)?;
        let k = r.nrows();
        let r_inv = rc.solve_mat(&DMatrix::identity(k, k));
        let n_locs = factors.first().map(|f| f.dim()).unwrap_or(0);
        Ok(Self {
            factors,
            r,
            r_inv,
            r_chol: rc.into_lower(),
            n_locs,
        })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn n_locs(&self) -> usize {
        self.n_locs
    }

    pub fn factor(&self, k: usize) -> &CholeskyFactor<T> {
        &self.factors[k]
    }

    fn check_len(&self, v: &DVector<T>) -> Result<()> {
        let want = self.k() * self.n_locs;
        if v.len() != want {
            return Err(CnrError::DimensionMismatch {
                what: "stacked covariate vector",
                expected: want,
                found: v.len(),
            });
        }
        Ok(())
    }

    fn block(&self, v: &DVector<T>, k: usize) -> DVector<T> {
        v.rows(k * self.n_locs, self.n_locs).into_owned()
    }

    fn mix(&self, blocks: &[DVector<T>], coef: &DMatrix<T>) -> Vec<DVector<T>> {
        (0..self.k())
            .map(|k| {
                let mut acc = DVector::zeros(self.n_locs);
                for (l, b) in blocks.iter().enumerate() {
                    let c = coef[(k, l)];
                    if c != T::zero() {
                        acc.axpy(c, b, T::one());
                    }
                }
                acc
            })
            .collect()
    }

    /// `Σ⁻¹ v` using only per-block triangular solves and `R⁻¹`.
    pub fn precision_apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(v)?;
        let w: Vec<DVector<T>> = (0..self.k())
            .map(|k| self.factors[k].solve_lower(&self.block(v, k)))
            .collect();
        let u = self.mix(&w, &self.r_inv);
        let mut out = DVector::zeros(v.len());
        for (k, uk) in u.iter().enumerate() {
            out.rows_mut(k * self.n_locs, self.n_locs)
                .copy_from(&self.factors[k].solve_upper(uk));
        }
        Ok(out)
    }

    /// `Σ v`.
    pub fn cov_apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(v)?;
        let w: Vec<DVector<T>> = (0..self.k())
            .map(|k| self.factors[k].lower().transpose() * self.block(v, k))
            .collect();
        let u = self.mix(&w, &self.r);
        let mut out = DVector::zeros(v.len());
        for (k, uk) in u.iter().enumerate() {
            out.rows_mut(k * self.n_locs, self.n_locs)
                .copy_from(&(self.factors[k].lower() * uk));
        }
        Ok(out)
    }

    /// Dense `Σ`, block `(k1, k2)` equal to `r[k1,k2] L_k1 L_k2ᵀ`.
    pub fn dense(&self) -> DMatrix<T> {
        let n = self.n_locs;
        let k = self.k();
        let mut out = DMatrix::zeros(k * n, k * n);
        for a in 0..k {
            for b in 0..k {
                let r = self.r[(a, b)];
                if r == T::zero() {
                    continue;
                }
                let blk = self.factors[a].lower() * self.factors[b].lower().transpose() * r;
                out.view_mut((a * n, b * n), (n, n)).copy_from(&blk);
            }
        }
        out
    }

    /// Draw of the stacked covariates: block k is `μ_k 1 + L_k Σ_l C_kl z_l`
    /// with `C` the Cholesky factor of `R` and `z_l` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, means: &[T], rng: &mut R) -> DMatrix<T> {
        let z: Vec<DVector<T>> = (0..self.k())
            .map(|_| standard_normal_vector::<T, R>(self.n_locs, rng))
            .collect();
        let mixed = self.mix(&z, &self.r_chol);
        let mut out = DMatrix::zeros(self.n_locs, self.k());
        for (k, zk) in mixed.iter().enumerate() {
            let col = self.factors[k].lower() * zk;
            out.set_column(k, &col.add_scalar(means[k]));
        }
        out
    }
}

/// Joint covariance of all covariates over `locs_all` (ordering: covariate
/// blocks `x_1, x_2, …`, each over every location in `locs_all`; pass `S̃`
/// followed by `S`).
pub fn assemble_joint_cov<T: Real>(params: &CovariateFieldParams<T>, locs_all: &LocationSet<T>) -> Result<DMatrix<T>> {
    Ok(FactoredField::new(params, locs_all)?.dense())
}

/// `Σ_{S̃}⁻¹ v` for the joint covariance of all covariates observed at `locs`.
pub fn factored_precision_apply<T: Real>(
    params: &CovariateFieldParams<T>,
    locs: &LocationSet<T>,
    v: &DVector<T>,
) -> Result<DVector<T>> {
    FactoredField::new(params, locs)?.precision_apply(v)
}

/// Stacks the columns of an `M × K` matrix into `(x_1ᵀ, …, x_Kᵀ)ᵀ`.
pub fn stack_columns<T: Real>(x: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(x.as_slice())
}
