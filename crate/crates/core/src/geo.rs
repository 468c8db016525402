//! Locations, distance metrics and the Matérn covariance family.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CnrError, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::special::{bessel_k, ln_gamma};

/// Mean earth radius used by the haversine distance.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Haversine distance in kilometres; coordinates are (lon, lat) in degrees.
    GreatCircleKm,
}

/// A point: (longitude, latitude) in degrees, or planar (x, y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location<T> {
    pub coord1: T,
    pub coord2: T,
}

impl<T: Real> Location<T> {
    pub fn new(coord1: T, coord2: T) -> Self {
        Self { coord1, coord2 }
    }

    pub fn validate(&self, metric: Metric) -> Result<()> {
        let (lon, lat) = (to_f64(self.coord1), to_f64(self.coord2));
        let bad = !lon.is_finite()
            || !lat.is_finite()
            || (metric == Metric::GreatCircleKm
                && (!(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat)));
        if bad {
            Err(CnrError::InvalidCoordinate { lon, lat })
        } else {
            Ok(())
        }
    }
}

/// Distance between two points under `metric`.
pub fn distance<T: Real>(a: &Location<T>, b: &Location<T>, metric: Metric) -> Result<T> {
    a.validate(metric)?;
    b.validate(metric)?;
    Ok(raw_distance(a, b, metric))
}

#[inline]
fn raw_distance<T: Real>(a: &Location<T>, b: &Location<T>, metric: Metric) -> T {
    match metric {
        Metric::Euclidean => {
            let dx = a.coord1 - b.coord1;
            let dy = a.coord2 - b.coord2;
            (dx * dx + dy * dy).sqrt()
        }
        Metric::GreatCircleKm => {
            if a == b {
                return T::zero();
            }
            let rad = T::pi() / lit(180.0);
            let (lon1, lat1) = (a.coord1 * rad, a.coord2 * rad);
            let (lon2, lat2) = (b.coord1 * rad, b.coord2 * rad);
            let half = lit::<T>(0.5);
            let s_lat = ((lat2 - lat1) * half).sin();
            let s_lon = ((lon2 - lon1) * half).sin();
            let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
            let h = h.min(T::one()).max(T::zero());
            lit::<T>(2.0 * EARTH_RADIUS_KM) * h.sqrt().asin()
        }
    }
}

/// Ordered set of locations sharing one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet<T> {
    locations: Vec<Location<T>>,
    metric: Metric,
}

impl<T: Real> LocationSet<T> {
    /// Builds a set of distinct, valid locations.
    pub fn new(locations: Vec<Location<T>>, metric: Metric) -> Result<Self> {
        Self::build(locations, metric, false)
    }

    /// Like [`LocationSet::new`] but tolerates repeated points.
    pub fn with_duplicates(locations: Vec<Location<T>>, metric: Metric) -> Result<Self> {
        Self::build(locations, metric, true)
    }

    pub fn from_coords(coords: &[(T, T)], metric: Metric) -> Result<Self> {
        Self::new(
            coords.iter().map(|&(a, b)| Location::new(a, b)).collect(),
            metric,
        )
    }

    fn build(locations: Vec<Location<T>>, metric: Metric, allow_duplicates: bool) -> Result<Self> {
        if locations.is_empty() {
            return Err(CnrError::Empty("location set"));
        }
        for loc in &locations {
            loc.validate(metric)?;
        }
        if !allow_duplicates {
            let mut seen = HashSet::with_capacity(locations.len());
            for (i, loc) in locations.iter().enumerate() {
                let key = (to_f64(loc.coord1).to_bits(), to_f64(loc.coord2).to_bits());
                if !seen.insert(key) {
                    return Err(CnrError::DuplicateLocation(i));
                }
            }
        }
        Ok(Self { locations, metric })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location<T>] {
        &self.locations
    }

    pub fn get(&self, i: usize) -> &Location<T> {
        &self.locations[i]
    }

    /// Concatenation `self` then `other`; duplicates across the two are allowed.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.metric != other.metric {
            return Err(CnrError::InvalidParameter(
                "cannot concatenate location sets with different metrics".into(),
            ));
        }
        let mut locs = self.locations.clone();
        locs.extend_from_slice(&other.locations);
        Ok(Self {
            locations: locs,
            metric: self.metric,
        })
    }

    /// Symmetric matrix of pairwise distances.
    pub fn distance_matrix(&self) -> DMatrix<T> {
        let n = self.len();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let v = raw_distance(&self.locations[i], &self.locations[j], self.metric);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Distances from every point of `self` (rows) to every point of `other` (columns).
    pub fn cross_distances(&self, other: &Self) -> Result<DMatrix<T>> {
        if self.metric != other.metric {
            return Err(CnrError::InvalidParameter(
                "location sets use different metrics".into(),
            ));
        }
        Ok(DMatrix::from_fn(self.len(), other.len(), |i, j| {
            raw_distance(&self.locations[i], &other.locations[j], self.metric)
        }))
    }

    /// Median of the pairwise distances (0 for a single point).
    pub fn median_pairwise_distance(&self) -> T {
        let n = self.len();
        let mut all: Vec<T> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                all.push(raw_distance(&self.locations[i], &self.locations[j], self.metric));
            }
        }
        if all.is_empty() {
            return T::zero();
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = all.len();
        if m % 2 == 1 {
            all[m / 2]
        } else {
            (all[m / 2 - 1] + all[m / 2]) * lit(0.5)
        }
    }
}

/// Matérn parameters: variance, smoothness, inverse range and nugget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams<T> {
    pub sigma2: T,
    pub nu: T,
    pub alpha: T,
    pub tau: T,
}

impl<T: Real> MaternParams<T> {
    pub fn new(sigma2: T, nu: T, alpha: T, tau: T) -> Result<Self> {
        let p = Self {
            sigma2,
            nu,
            alpha,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !pos(self.sigma2) || !pos(self.nu) || !pos(self.alpha) {
            return Err(CnrError::InvalidParameter(format!(
                "Matérn sigma2, nu, alpha must be positive (got {}, {}, {})",
                self.sigma2, self.nu, self.alpha
            )));
        }
        if !(self.tau >= T::zero()) || !self.tau.is_finite() {
            return Err(CnrError::InvalidParameter(format!(
                "nugget must be nonnegative (got {})",
                self.tau
            )));
        }
        Ok(())
    }

    /// Positive-definiteness on the sphere requires `nu <= 1/2` with great-circle distance.
    pub fn validate_for(&self, metric: Metric) -> Result<()> {
        self.validate()?;
        if metric == Metric::GreatCircleKm && self.nu > lit::<T>(0.5) + T::default_epsilon() {
            return Err(CnrError::InvalidParameter(format!(
                "nu = {} exceeds 0.5, not valid with great-circle distance",
                self.nu
            )));
        }
        Ok(())
    }
}

/// If `nu` is `p + 1/2` for a small integer `p`, returns `p`.
fn half_integer_order<T: Real>(nu: T) -> Option<usize> {
    let twice = to_f64(nu) * 2.0;
    let r = twice.round();
    if (twice - r).abs() < 1e-12 && r >= 1.0 && (r as i64) % 2 == 1 && r <= 41.0 {
        Some(((r as usize) - 1) / 2)
    } else {
        None
    }
}

/// `exp(-x) * p!/(2p)! * Σ_i (p+i)! / (i! (p-i)!) (2x)^(p-i)`.
fn matern_half_integer<T: Real>(x: T, p: usize) -> T {
    if p == 0 {
        return (-x).exp();
    }
    let fact = |n: usize| (1..=n).fold(1.0f64, |acc, k| acc * k as f64);
    let scale = fact(p) / fact(2 * p);
    let two_x = lit::<T>(2.0) * x;
    let mut poly = T::zero();
    for i in 0..=p {
        let coef = fact(p + i) / (fact(i) * fact(p - i));
        poly += lit::<T>(coef) * two_x.powi((p - i) as i32);
    }
    lit::<T>(scale) * poly * (-x).exp()
}

/// Matérn correlation `2^(1-nu) (alpha d)^nu K_nu(alpha d) / Γ(nu)`, equal to 1 at `d = 0`.
pub fn matern_correlation<T: Real>(d: T, nu: T, alpha: T) -> T {
    if d <= T::zero() {
        return T::one();
    }
    let x = alpha * d;
    if let Some(p) = half_integer_order(nu) {
        return matern_half_integer(x, p);
    }
    matern_correlation_bessel(d, nu, alpha)
}

/// The Matérn correlation always evaluated through `K_nu`, with no closed-form shortcut.
pub fn matern_correlation_bessel<T: Real>(d: T, nu: T, alpha: T) -> T {
    if d <= T::zero() {
        return T::one();
    }
    let x = alpha * d;
    match bessel_k(nu, x) {
        Ok(k) => {
            let log_m = (T::one() - nu) * lit::<T>(2.0).ln() + nu * x.ln() + k.ln() - ln_gamma(nu);
            log_m.exp().min(T::one())
        }
        Err(CnrError::BesselUnderflow { .. }) => T::zero(),
        // x below the representable range of K_nu: the continuity limit.
        Err(_) => T::one(),
    }
}

/// Covariance matrix from precomputed distances.
///
/// The nugget is added on the diagonal only when `nugget_on_diagonal` is set,
/// i.e. when rows and columns index the same location set.
pub fn matern_cov_from_distances<T: Real>(
    dist: &DMatrix<T>,
    p: &MaternParams<T>,
    nugget_on_diagonal: bool,
) -> DMatrix<T> {
    let half = half_integer_order(p.nu);
    let mut c = dist.map(|d| {
        let r = match half {
            Some(0) => (-(p.alpha * d)).exp(),
            _ => matern_correlation(d, p.nu, p.alpha),
        };
        p.sigma2 * r
    });
    if nugget_on_diagonal {
        let n = c.nrows().min(c.ncols());
        for i in 0..n {
            c[(i, i)] += p.tau;
        }
    }
    c
}

/// Lower triangle, diagonal and nugget included, of the covariance over a
/// single location set; the strict upper triangle stays zero. Enough input
/// for a Cholesky factorization at half the kernel evaluations.
pub fn matern_cov_lower<T: Real>(dist: &DMatrix<T>, p: &MaternParams<T>) -> DMatrix<T> {
    let n = dist.nrows();
    let exponential = half_integer_order(p.nu) == Some(0);
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        c[(j, j)] = p.sigma2 + p.tau;
        for i in (j + 1)..n {
            let d = dist[(i, j)];
            let r = if exponential {
                (-(p.alpha * d)).exp()
            } else {
                matern_correlation(d, p.nu, p.alpha)
            };
            c[(i, j)] = p.sigma2 * r;
        }
    }
    c
}

/// Matérn covariance between `a` (rows) and `b` (columns).
///
/// When `a` and `b` are the same set the result is symmetric and carries the
/// nugget on its diagonal; across distinct sets the nugget never applies,
/// even where two points coincide.
pub fn matern_cov_matrix<T: Real>(
    a: &LocationSet<T>,
    b: &LocationSet<T>,
    p: &MaternParams<T>,
) -> Result<DMatrix<T>> {
    p.validate_for(a.metric())?;
    if a.metric() != b.metric() {
        return Err(CnrError::InvalidParameter(
            "location sets use different metrics".into(),
        ));
    }
    if std::ptr::eq(a, b) || a == b {
        Ok(matern_cov_from_distances(&a.distance_matrix(), p, true))
    } else {
        Ok(matern_cov_from_distances(&a.cross_distances(b)?, p, false))
    }
}
