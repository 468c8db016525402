//! Covariate basis expansions `f_k(x)`: linear, polynomial and natural
//! cubic splines (truncated-power form, linear beyond the boundary knots).

use serde::{Deserialize, Serialize};

use crate::error::{CnrError, Result};
use crate::scalar::{lit, Real};
use crate::stats::{quantile_sorted, sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Linear,
    Polynomial { degree: usize },
    NaturalCubicSpline { interior_knots: usize },
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSpec::Polynomial { degree } if degree == 0 => Err(CnrError::InvalidParameter(
                "polynomial degree must be at least 1".into(),
            )),
            BasisSpec::NaturalCubicSpline { interior_knots } if interior_knots == 0 => Err(
                CnrError::InvalidParameter("natural spline needs at least one interior knot".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Number of design columns contributed (the intercept is separate).
    pub fn dim(&self) -> usize {
        match *self {
            BasisSpec::Linear => 1,
            BasisSpec::Polynomial { degree } => degree,
            BasisSpec::NaturalCubicSpline { interior_knots } => interior_knots + 1,
        }
    }

    pub fn needs_knots(&self) -> bool {
        matches!(self, BasisSpec::NaturalCubicSpline { .. })
    }
}

/// Boundary and interior knots of a natural cubic spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineKnots<T> {
    pub lower: T,
    pub upper: T,
    pub interior: Vec<T>,
}

impl<T: Real> SplineKnots<T> {
    /// Interior knots at the `j/(m+1)` sample quantiles (quintiles for
    /// `m = 4`), boundary knots at the sample extremes.
    pub fn from_quantiles(values: &[T], interior: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(CnrError::Empty("covariate values for knot placement"));
        }
        let s = sorted(values);
        let knots = Self {
            lower: s[0],
            upper: s[s.len() - 1],
            interior: (1..=interior)
                .map(|j| quantile_sorted(&s, j as f64 / (interior + 1) as f64))
                .collect(),
        };
        Ok(knots)
    }

    /// All knots in ascending order, boundary included.
    pub fn all(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.interior.len() + 2);
        v.push(self.lower);
        v.extend_from_slice(&self.interior);
        v.push(self.upper);
        v
    }

    /// Strictly increasing knot sequence.
    pub fn is_strictly_increasing(&self) -> bool {
        let all = self.all();
        let scale = (self.upper - self.lower).abs().max(T::one());
        let tol = lit::<T>(1e-12) * scale;
        all.windows(2).all(|w| w[1] - w[0] > tol)
    }

    fn scaled(&self) -> (T, T, Vec<T>) {
        let width = self.upper - self.lower;
        let all = self.all();
        let t: Vec<T> = all.iter().map(|&k| (k - self.lower) / width).collect();
        (self.lower, width, t)
    }
}

fn cube_plus<T: Real>(v: T) -> T {
    if v > T::zero() {
        v * v * v
    } else {
        T::zero()
    }
}

fn sq_plus<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Natural-spline basis values at `x`: `t` followed by
/// `d_j(t) - d_{K-1}(t)`, with `t` the position rescaled to the boundary
/// knots and `d_j(t) = ((t-ξ_j)₊³ - (t-ξ_K)₊³) / (ξ_K - ξ_j)`.
pub fn natural_spline_row<T: Real>(knots: &SplineKnots<T>, x: T, out: &mut Vec<T>) {
    let (lo, width, xi) = knots.scaled();
    let t = (x - lo) / width;
    let kk = xi.len();
    let last = xi[kk - 1];
    let d = |j: usize| (cube_plus(t - xi[j]) - cube_plus(t - last)) / (last - xi[j]);
    let d_pen = d(kk - 2);
    out.push(t);
    for j in 0..kk - 2 {
        out.push(d(j) - d_pen);
    }
}

/// Analytic second derivative (with respect to `x`) of each natural-spline column.
pub fn natural_spline_second_derivative<T: Real>(knots: &SplineKnots<T>, x: T) -> Vec<T> {
    let (lo, width, xi) = knots.scaled();
    let t = (x - lo) / width;
    let kk = xi.len();
    let last = xi[kk - 1];
    let six = lit::<T>(6.0);
    let d2 = |j: usize| six * (sq_plus(t - xi[j]) - sq_plus(t - last)) / (last - xi[j]);
    let pen = d2(kk - 2);
    let scale = T::one() / (width * width);
    let mut out = vec![T::zero()];
    for j in 0..kk - 2 {
        out.push((d2(j) - pen) * scale);
    }
    out
}

/// Appends `f(x)` for one covariate to `out`.
pub fn basis_row<T: Real>(spec: &BasisSpec, knots: Option<&SplineKnots<T>>, x: T, out: &mut Vec<T>) {
    match *spec {
        BasisSpec::Linear => out.push(x),
        BasisSpec::Polynomial { degree } => {
            let mut p = x;
            for _ in 0..degree {
                out.push(p);
                p *= x;
            }
        }
        BasisSpec::NaturalCubicSpline { .. } => {
            natural_spline_row(knots.expect("spline basis evaluated without knots"), x, out)
        }
    }
}

/// Column labels for covariate `k` (1-based in the label).
pub fn column_names(spec: &BasisSpec, k: usize) -> Vec<String> {
    match *spec {
        BasisSpec::Linear => vec![format!("x{}", k + 1)],
        BasisSpec::Polynomial { degree } => (1..=degree)
            .map(|d| if d == 1 { format!("x{}", k + 1) } else { format!("x{}^{d}", k + 1) })
            .collect(),
        BasisSpec::NaturalCubicSpline { interior_knots } => (1..=interior_knots + 1)
            .map(|j| format!("ns(x{})[{j}]", k + 1))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knots() -> SplineKnots<f64> {
        SplineKnots {
            lower: -2.0,
            upper: 3.0,
            interior: vec![-1.0, 0.2, 1.1, 2.0],
        }
    }

    fn row(k: &SplineKnots<f64>, x: f64) -> Vec<f64> {
        let mut v = Vec::new();
        natural_spline_row(k, x, &mut v);
        v
    }

    #[test]
    fn spline_dimension() {
        let spec = BasisSpec::NaturalCubicSpline { interior_knots: 4 };
        assert_eq!(spec.dim(), 5);
        assert_eq!(row(&knots(), 0.3).len(), 5);
    }

    #[test]
    fn spline_linear_outside_boundary() {
        // second differences evaluated from the outer side of each boundary knot
        let k = knots();
        let h = 1e-2;
        for &(x, dir) in &[(-2.0, -1.0), (3.0, 1.0), (-5.0, -1.0), (7.5, 1.0), (40.0, 1.0)] {
            let f0 = row(&k, x);
            let f1 = row(&k, x + dir * h);
            let f2 = row(&k, x + dir * 2.0 * h);
            for c in 0..5 {
                let dd = (f0[c] - 2.0 * f1[c] + f2[c]) / (h * h);
                assert!(dd.abs() < 1e-6, "column {c} at {x}: {dd}");
            }
            for v in natural_spline_second_derivative(&k, x) {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences_inside() {
        let k = knots();
        let h = 1e-4;
        for &x in &[-1.5, -0.3, 0.9, 1.7, 2.6] {
            let (a, b, c) = (row(&k, x - h), row(&k, x), row(&k, x + h));
            let an = natural_spline_second_derivative(&k, x);
            for j in 0..5 {
                let fd = (a[j] - 2.0 * b[j] + c[j]) / (h * h);
                assert!((fd - an[j]).abs() < 1e-4 * (1.0 + an[j].abs()));
            }
        }
    }

    #[test]
    fn quintile_knots() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let k = SplineKnots::from_quantiles(&v, 4).unwrap();
        assert_eq!(k.interior, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!((k.lower, k.upper), (0.0, 100.0));
        let ties = vec![1.0; 20];
        assert!(!SplineKnots::from_quantiles(&ties, 4).unwrap().is_strictly_increasing());
    }

    #[test]
    fn polynomial_row() {
        let mut v = Vec::new();
        basis_row::<f64>(&BasisSpec::Polynomial { degree: 3 }, None, 2.0, &mut v);
        assert_eq!(v, vec![2.0, 4.0, 8.0]);
        assert!(BasisSpec::Polynomial { degree: 0 }.validate().is_err());
        assert!(BasisSpec::NaturalCubicSpline { interior_knots: 0 }.validate().is_err());
    }
}
