//! Dense Gaussian algebra: Cholesky with bounded jitter, log-densities,
//! sampling, and the derivative-free maximizer used for covariance fits.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CnrError, Result};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Lower Cholesky factor `L` with `L Lᵀ = m + jitter I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T: Real> {
    lower: DMatrix<T>,
    jitter: T,
}

impl<T: Real> CholeskyFactor<T> {
    /// Wraps an externally supplied lower-triangular factor without checks.
    ///
    /// Used for degenerate generators (e.g. an all-zero factor); solves on
    /// such a factor are meaningless.
    pub fn from_lower_unchecked(lower: DMatrix<T>) -> Self {
        Self {
            lower,
            jitter: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    pub fn into_lower(self) -> DMatrix<T> {
        self.lower
    }

    /// Diagonal inflation that was needed to factor the matrix (0 if none).
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn logdet(&self) -> T {
        self.lower
            .diagonal()
            .iter()
            .fold(T::zero(), |acc, &d| acc + d.ln())
            * lit(2.0)
    }

    /// `L⁻¹ v`.
    pub fn solve_lower(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = v.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L⁻¹ B` column by column.
    pub fn solve_lower_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L⁻ᵀ v`.
    pub fn solve_upper(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = v.clone();
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `(L Lᵀ)⁻¹ v`.
    pub fn solve(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = v.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.lower * self.lower.transpose()
    }
}

fn relative_asymmetry<T: Real>(m: &DMatrix<T>) -> f64 {
    let n = m.nrows();
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(to_f64(m[(i, j)]).abs());
            if i > j {
                worst = worst.max(to_f64(m[(i, j)] - m[(j, i)]).abs());
            }
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// On failure the diagonal is inflated by `1e-10 · trace/n`, escalating
/// tenfold up to `1e-6 · trace/n`, before giving up.
pub fn cholesky<T: Real>(m: &DMatrix<T>) -> Result<CholeskyFactor<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(CnrError::DimensionMismatch {
            what: "cholesky (square matrix)",
            expected: n,
            found: m.ncols(),
        });
    }
    if n == 0 {
        return Err(CnrError::Empty("matrix"));
    }
    let asym = relative_asymmetry(m);
    if asym > 1e-10 {
        return Err(CnrError::NotSymmetric(asym));
    }
    if let Some(ch) = nalgebra::Cholesky::new(m.clone()) {
        let lower = ch.unpack();
        if lower.iter().all(|v| v.is_finite()) {
            return Ok(CholeskyFactor {
                lower,
                jitter: T::zero(),
            });
        }
    }
    let mean_diag = m.trace() / from_usize(n);
    if !(mean_diag > T::zero()) {
        return Err(CnrError::NotPositiveDefinite { dim: n });
    }
    let mut rel = 1e-10;
    while rel <= 1e-6 * 1.000_001 {
        let jitter = lit::<T>(rel) * mean_diag;
        let mut work = m.clone();
        for i in 0..n {
            work[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(work) {
            log::debug!("cholesky succeeded with jitter {}", to_f64(jitter));
            return Ok(CholeskyFactor {
                lower: ch.unpack(),
                jitter,
            });
        }
        rel *= 10.0;
    }
    Err(CnrError::NotPositiveDefinite { dim: n })
}

/// Multivariate normal log-density, including the `-(n/2) log(2π)` term.
pub fn mvn_logpdf<T: Real>(x: &DVector<T>, mean: &DVector<T>, chol: &CholeskyFactor<T>) -> Result<T> {
    let n = chol.dim();
    if x.len() != n || mean.len() != n {
        return Err(CnrError::DimensionMismatch {
            what: "mvn_logpdf",
            expected: n,
            found: if x.len() != n { x.len() } else { mean.len() },
        });
    }
    let z = chol.solve_lower(&(x - mean));
    let two_pi = lit::<T>(2.0) * T::pi();
    Ok(-lit::<T>(0.5) * (from_usize::<T>(n) * two_pi.ln() + chol.logdet() + z.norm_squared()))
}

pub fn standard_normal_vector<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(n, |_, _| lit::<T>(rng.sample::<f64, _>(StandardNormal)))
}

/// One draw `mean + L z`, `z` standard normal.
pub fn mvn_sample<T: Real, R: Rng + ?Sized>(
    mean: &DVector<T>,
    chol: &CholeskyFactor<T>,
    rng: &mut R,
) -> DVector<T> {
    let z = standard_normal_vector::<T, R>(chol.dim(), rng);
    mean + chol.lower() * z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Relative tolerance on the spread of objective values across the simplex.
    pub rel_tol: f64,
    pub restarts: usize,
    /// Edge length of the initial simplex, in the (log) search coordinates.
    pub initial_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-8,
            restarts: 2,
            initial_step: 0.5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_iters == 0 || !(self.initial_step > 0.0) {
            return Err(CnrError::InvalidParameter(format!(
                "invalid optimizer config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Box constraints in the search coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum<T> {
    pub argmax: Vec<T>,
    pub value: T,
    pub evaluations: usize,
    /// The objective never changed from its initial value.
    pub flat: bool,
}

struct Search<'a, T: Real, F> {
    objective: F,
    bounds: Option<&'a Bounds<T>>,
    evaluations: usize,
    any_finite: bool,
}

impl<T: Real, F: FnMut(&[T]) -> T> Search<'_, T, F> {
    fn clamp(&self, x: &mut [T]) {
        if let Some(b) = self.bounds {
            for (i, v) in x.iter_mut().enumerate() {
                *v = v.max(b.lower[i]).min(b.upper[i]);
            }
        }
    }

    /// Cost to minimize: the negated objective, +inf when not finite.
    fn cost(&mut self, x: &[T]) -> T {
        self.evaluations += 1;
        let v = (self.objective)(x);
        if v.is_finite() {
            self.any_finite = true;
            -v
        } else {
            T::max_value().unwrap()
        }
    }

    fn nelder_mead(&mut self, start: &[T], cfg: &OptimizerConfig) -> (Vec<T>, T) {
        let n = start.len();
        let step = lit::<T>(cfg.initial_step);
        let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut p = start.to_vec();
            p[i] += step;
            self.clamp(&mut p);
            if p[i] == start[i] {
                p[i] -= step;
                self.clamp(&mut p);
            }
            simplex.push(p);
        }
        let mut costs: Vec<T> = simplex.iter().map(|p| self.cost(p)).collect();
        let (alpha, gamma, rho, sigma) = (T::one(), lit::<T>(2.0), lit::<T>(0.5), lit::<T>(0.5));
        let tol = lit::<T>(cfg.rel_tol);

        for _ in 0..cfg.max_iters {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap_or(std::cmp::Ordering::Equal));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            costs = order.iter().map(|&i| costs[i]).collect();

            let best = costs[0];
            let worst = costs[n];
            let spread = (worst - best).abs();
            if worst < T::max_value().unwrap() && spread <= tol * (best.abs() + tol) {
                break;
            }

            let mut centroid = vec![T::zero(); n];
            for p in simplex.iter().take(n) {
                for (c, &v) in centroid.iter_mut().zip(p) {
                    *c += v;
                }
            }
            let inv = T::one() / from_usize::<T>(n);
            centroid.iter_mut().for_each(|c| *c *= inv);

            let along = |coef: T, from: &[T]| -> Vec<T> {
                centroid
                    .iter()
                    .zip(from)
                    .map(|(&c, &w)| c + coef * (c - w))
                    .collect()
            };

            let mut reflected = along(alpha, &simplex[n]);
            self.clamp(&mut reflected);
            let fr = self.cost(&reflected);
            if fr < costs[0] {
                let mut expanded = along(gamma, &simplex[n]);
                self.clamp(&mut expanded);
                let fe = self.cost(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    costs[n] = fe;
                } else {
                    simplex[n] = reflected;
                    costs[n] = fr;
                }
                continue;
            }
            if fr < costs[n - 1] {
                simplex[n] = reflected;
                costs[n] = fr;
                continue;
            }
            let (mut contracted, outside) = if fr < costs[n] {
                (along(rho, &simplex[n]), true)
            } else {
                (along(-rho, &simplex[n]), false)
            };
            self.clamp(&mut contracted);
            let fc = self.cost(&contracted);
            if (outside && fc <= fr) || (!outside && fc < costs[n]) {
                simplex[n] = contracted;
                costs[n] = fc;
                continue;
            }
            let best_point = simplex[0].clone();
            for i in 1..=n {
                let mut p: Vec<T> = best_point
                    .iter()
                    .zip(&simplex[i])
                    .map(|(&b, &v)| b + sigma * (v - b))
                    .collect();
                self.clamp(&mut p);
                costs[i] = self.cost(&p);
                simplex[i] = p;
            }
        }
        let mut best = 0;
        for i in 1..=n {
            if costs[i] < costs[best] {
                best = i;
            }
        }
        (simplex[best].clone(), costs[best])
    }
}

/// Derivative-free (Nelder–Mead) maximization with restarts from the
/// incumbent. Positive parameters should be passed on the log scale.
///
/// The returned value is never below the value at `init`.
pub fn maximize<T: Real, F: FnMut(&[T]) -> T>(
    objective: F,
    init: &[T],
    bounds: Option<&Bounds<T>>,
    cfg: &OptimizerConfig,
) -> Result<Maximum<T>> {
    cfg.validate()?;
    if init.is_empty() {
        return Err(CnrError::Empty("optimizer start point"));
    }
    if let Some(b) = bounds {
        if b.lower.len() != init.len() || b.upper.len() != init.len() {
            return Err(CnrError::DimensionMismatch {
                what: "optimizer bounds",
                expected: init.len(),
                found: b.lower.len().min(b.upper.len()),
            });
        }
    }
    let mut search = Search {
        objective,
        bounds,
        evaluations: 0,
        any_finite: false,
    };
    let mut start = init.to_vec();
    search.clamp(&mut start);
    let init_cost = search.cost(&start);
    let mut best = (start.clone(), init_cost);

    for _ in 0..=cfg.restarts {
        let (x, c) = search.nelder_mead(&best.0, cfg);
        let improved = c < best.1;
        let rel_gain = if improved {
            to_f64((best.1 - c).abs()) / (to_f64(c.abs()) + cfg.rel_tol)
        } else {
            0.0
        };
        if improved {
            best = (x, c);
        }
        if !improved || rel_gain <= cfg.rel_tol {
            break;
        }
    }

    if !search.any_finite {
        return Err(CnrError::OptimizerFailure(
            "objective was non-finite at every evaluated point".into(),
        ));
    }
    if best.1 == T::max_value().unwrap() {
        return Err(CnrError::OptimizerFailure(
            "no finite objective value found".into(),
        ));
    }
    let flat = best.1 == init_cost && best.0 == start;
    Ok(Maximum {
        argmax: best.0,
        value: -best.1,
        evaluations: search.evaluations,
        flat,
    })
}
