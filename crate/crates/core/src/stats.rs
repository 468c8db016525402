use crate::scalar::{from_usize, lit, Real};

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n-1) p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = lit::<T>(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted<T: Real>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn mean<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |a, &b| a + b) / from_usize(values.len())
}

/// Variance with the `1/(n-1)` divisor; `None` for fewer than two values.
pub fn sample_variance<T: Real>(values: &[T]) -> Option<T> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values);
    Some(values.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / from_usize(n - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((quantile_sorted(&v, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.975) - 97.525).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 100.0);
        assert_eq!(quantile_sorted(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn variance_divisor() {
        assert_eq!(sample_variance(&[0.0, 2.0]), Some(2.0));
        assert_eq!(sample_variance(&[1.0]), None);
    }
}
