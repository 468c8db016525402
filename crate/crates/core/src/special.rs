//! Special functions needed by the Matérn family: the modified Bessel
//! function of the second kind and the (log-)gamma function.
//!
//! `bessel_k` follows Temme's series for small arguments and Steed's
//! continued fraction for large ones, then recurses upward in order.
//! Both branches work on the fractional order `mu = nu - round(nu)`, so
//! half-integer orders go through exactly the same code as general ones.

use crate::error::{CnrError, Result};
use crate::scalar::{lit, to_f64, Real};

/// Taylor coefficients of `1/Γ(z)` about zero: `1/Γ(z) = Σ c[k] z^(k+1)`.
const RGAMMA_TAYLOR: [f64; 28] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
];

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of `|Γ(x)|` via the Lanczos approximation (g = 7).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    if x < half {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = T::pi();
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = lit::<T>(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += lit::<T>(c) / (x + lit::<T>(i as f64));
    }
    let t = x + lit::<T>(LANCZOS_G) + half;
    lit::<T>(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

pub fn gamma<T: Real>(x: T) -> T {
    if x > T::zero() {
        ln_gamma(x).exp()
    } else {
        let pi = T::pi();
        pi / ((pi * x).sin() * ln_gamma(T::one() - x).exp())
    }
}

/// Returns `(gam1, gam2, 1/Γ(1+mu), 1/Γ(1-mu))` for `|mu| <= 1/2`, where
/// `gam1 = (1/Γ(1-mu) - 1/Γ(1+mu)) / (2 mu)` and
/// `gam2 = (1/Γ(1-mu) + 1/Γ(1+mu)) / 2`, evaluated without cancellation.
fn temme_gammas<T: Real>(mu: T) -> (T, T, T, T) {
    // 1/Γ(1+x) = Σ c[k] x^k; even powers feed gam2, odd powers gam1.
    let mut gam1 = T::zero();
    let mut gam2 = T::zero();
    let mu2 = mu * mu;
    let mut pow = T::one();
    for pair in RGAMMA_TAYLOR.chunks(2) {
        gam2 += lit::<T>(pair[0]) * pow;
        if let Some(&odd) = pair.get(1) {
            gam1 -= lit::<T>(odd) * pow;
        }
        pow *= mu2;
    }
    let gampl = gam2 - mu * gam1;
    let gammi = gam2 + mu * gam1;
    (gam1, gam2, gampl, gammi)
}

fn sinhc<T: Real>(e: T) -> T {
    if e.abs() < lit(1e-4) {
        let e2 = e * e;
        T::one() + e2 / lit(6.0) + e2 * e2 / lit(120.0)
    } else {
        e.sinh() / e
    }
}

fn x_over_sin<T: Real>(x: T) -> T {
    if x.abs() < lit(1e-4) {
        let x2 = x * x;
        T::one() + x2 / lit(6.0) + lit::<T>(7.0 / 360.0) * x2 * x2
    } else {
        x / x.sin()
    }
}

/// Modified Bessel function of the second kind `K_nu(x)` for `nu >= 0`, `x > 0`.
pub fn bessel_k<T: Real>(nu: T, x: T) -> Result<T> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(CnrError::InvalidParameter(format!(
            "bessel_k requires x > 0, got {x}"
        )));
    }
    if !(nu >= T::zero()) || !nu.is_finite() {
        return Err(CnrError::InvalidParameter(format!(
            "bessel_k requires nu >= 0, got {nu}"
        )));
    }
    let eps = T::default_epsilon();
    let max_iter = 100_000;
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);

    let order = (nu + half).floor();
    let steps = to_f64(order) as usize;
    let mu = nu - order;
    let mu2 = mu * mu;
    let xi = T::one() / x;
    let xi2 = two * xi;

    let (mut k_mu, mut k_mu1);
    if x < two {
        let x2 = half * x;
        let fact = x_over_sin(T::pi() * mu);
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = sinhc(e);
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        let mut p = half * e / gampl;
        let mut q = half / (e * gammi);
        let mut c = T::one();
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=max_iter {
            let fi = lit::<T>(i as f64);
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * eps {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(CnrError::InvalidParameter(format!(
                "bessel_k series did not converge at nu = {nu}, x = {x}"
            )));
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = two * (T::one() + x);
        let mut d = T::one() / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = T::zero();
        let mut q2 = T::one();
        let a1 = lit::<T>(0.25) - mu2;
        let mut c = a1;
        let mut q = a1;
        let mut a = -a1;
        let mut s = T::one() + q * delh;
        let mut converged = false;
        for i in 1..=max_iter {
            let fi = lit::<T>(i as f64);
            a -= two * fi;
            c = -a * c / (fi + T::one());
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += two;
            d = T::one() / (b + a * d);
            delh = (b * d - T::one()) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < eps {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(CnrError::InvalidParameter(format!(
                "bessel_k continued fraction did not converge at nu = {nu}, x = {x}"
            )));
        }
        h *= a1;
        k_mu = (T::pi() / (two * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + half - h) * xi;
    }

    for i in 1..=steps {
        let next = (mu + lit::<T>(i as f64)) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }

    if !k_mu.is_finite() {
        return Err(CnrError::BesselOverflow {
            nu: to_f64(nu),
            x: to_f64(x),
        });
    }
    if k_mu <= T::zero() {
        return Err(CnrError::BesselUnderflow {
            nu: to_f64(nu),
            x: to_f64(x),
        });
    }
    Ok(k_mu)
}
