//! The Kolmogorov–Smirnov law and the logistic normal-scale mixture built on it.

use std::f64::consts::PI;
use std::sync::LazyLock;

use rand::Rng;

use super::quad::integrate;
use super::sample_open01;

/// Terms smaller than this end a series.
const SERIES_EPS: f64 = 1e-14;

/// Below this point the Jacobi-theta dual series is used: the alternating
/// series needs O(1/x) terms there and loses digits to cancellation.
const DUAL_SWITCH: f64 = 0.6;

/// The alternating series 8 Σ (−1)^(α+1) α² ν exp(−2α²ν²).
fn density_alternating(nu: f64) -> f64 {
    let peak = 1.0 / (nu * std::f64::consts::SQRT_2);
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut alpha = 1.0_f64;
    loop {
        let term = 8.0 * alpha * alpha * nu * (-2.0 * alpha * alpha * nu * nu).exp();
        sum += sign * term;
        if term < SERIES_EPS && alpha > peak {
            break;
        }
        sign = -sign;
        alpha += 1.0;
    }
    sum
}

/// Dual form: derivative of (√(2π)/x) Σ exp(−(2k−1)²π²/(8x²)).
fn density_dual(nu: f64) -> f64 {
    let x2 = nu * nu;
    let mut sum = 0.0;
    let mut k = 1.0_f64;
    loop {
        let b = (2.0 * k - 1.0).powi(2) * PI * PI / 8.0;
        let term = (-b / x2).exp() * (2.0 * b / (x2 * x2) - 1.0 / x2);
        sum += term;
        if term.abs() < SERIES_EPS {
            break;
        }
        k += 1.0;
    }
    (2.0 * PI).sqrt() * sum
}

/// Kolmogorov–Smirnov density; zero for `nu <= 0`.
pub fn ks_density(nu: f64) -> f64 {
    if !(nu > 0.0) {
        return 0.0;
    }
    if nu < DUAL_SWITCH {
        density_dual(nu)
    } else {
        density_alternating(nu)
    }
}

fn cdf_alternating(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut k = 1.0_f64;
    loop {
        let term = (-2.0 * k * k * x * x).exp();
        sum += sign * term;
        if term < SERIES_EPS {
            break;
        }
        sign = -sign;
        k += 1.0;
    }
    1.0 - 2.0 * sum
}

fn cdf_dual(x: f64) -> f64 {
    let x2 = x * x;
    let mut sum = 0.0;
    let mut k = 1.0_f64;
    loop {
        let term = (-(2.0 * k - 1.0).powi(2) * PI * PI / (8.0 * x2)).exp();
        sum += term;
        if term < SERIES_EPS {
            break;
        }
        k += 1.0;
    }
    (2.0 * PI).sqrt() / x * sum
}

/// Kolmogorov–Smirnov CDF, F(x) = 1 − 2 Σ (−1)^(k−1) exp(−2k²x²).
pub fn ks_cdf(x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x < DUAL_SWITCH {
        cdf_dual(x)
    } else {
        cdf_alternating(x)
    }
}

const TABLE_KNOTS: usize = 1024;
const TABLE_LO: f64 = 0.05;
const TABLE_HI: f64 = 6.0;
const INVERSION_TOL: f64 = 1e-10;

/// Quantiles of the K–S law at u = j / 1024, used to bracket inversion.
static QUANTILE_TABLE: LazyLock<Vec<f64>> = LazyLock::new(|| {
    let mut table = Vec::with_capacity(TABLE_KNOTS + 1);
    table.push(TABLE_LO);
    for j in 1..TABLE_KNOTS {
        let u = j as f64 / TABLE_KNOTS as f64;
        table.push(bisect_cdf(u, TABLE_LO, TABLE_HI, 1e-15));
    }
    table.push(TABLE_HI);
    table
});

fn bisect_cdf(u: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ks_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Invert the CDF at `u` inside the bracket `[lo, hi]`.
///
/// Newton steps (the density is the derivative) are taken while they stay
/// inside the bracket; otherwise the step is a bisection.
fn invert_cdf(u: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let diff = ks_cdf(x) - u;
        if diff < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = ks_density(x);
        let newton = x - diff / dens;
        let step_ok = dens > 0.0 && newton > lo && newton < hi;
        let next = if step_ok { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() < 0.01 * INVERSION_TOL || hi - lo < INVERSION_TOL {
            return next;
        }
        x = next;
    }
    x
}

/// Draw from the Kolmogorov–Smirnov law by numerical CDF inversion.
pub fn sample_ks<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let table = &*QUANTILE_TABLE;
    let u = sample_open01(rng);
    let j = ((u * TABLE_KNOTS as f64) as usize).min(TABLE_KNOTS - 1);
    let (lo, hi) = if j == 0 {
        (1e-3, table[1])
    } else if j == TABLE_KNOTS - 1 {
        (table[j], 12.0)
    } else {
        (table[j], table[j + 1])
    };
    invert_cdf(u, lo, hi).max(f64::MIN_POSITIVE)
}

/// Standard logistic density e^{−y} / (1 + e^{−y})².
pub fn logistic_density(y: f64) -> f64 {
    let e = (-y.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// ∫ N(y; 0, 4ν²) π_KS(ν) dν by adaptive quadrature.
///
/// Equals [`logistic_density`] exactly; kept for certifying the augmentation.
pub fn logistic_mixture_density(y: f64) -> f64 {
    let integrand = |nu: f64| {
        if nu <= 0.0 {
            return 0.0;
        }
        let sd = 2.0 * nu;
        (-(y * y) / (2.0 * sd * sd)).exp() / ((2.0 * PI).sqrt() * sd) * ks_density(nu)
    };
    // The K–S mass beyond 8 is below exp(-128).
    [(0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 8.0)]
        .iter()
        .map(|&(a, b)| integrate(integrand, a, b, 1e-14))
        .sum()
}
