//! Scalar special functions.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma;

pub use libm::erfc;

pub const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 26.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    // Asymptotic series; at x >= 26 ten terms are well below 1e-16.
    let inv = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..10 {
        term *= -((2 * n - 1) as f64) * inv;
        sum += term;
    }
    sum / (x * SQRT_PI)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    let mut z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(p);
    if !z.is_finite() {
        return z;
    }
    // Newton polish against the erfc-based CDF.
    for _ in 0..3 {
        let dens = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if dens < 1e-300 {
            break;
        }
        z -= (normal_cdf(z) - p) / dens;
    }
    z
}

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

pub fn ln_factorial(n: u64) -> f64 {
    statrs::function::factorial::ln_factorial(n)
}

pub fn factorial(n: u64) -> f64 {
    statrs::function::factorial::factorial(n)
}

pub fn binomial(n: u64, k: u64) -> f64 {
    statrs::function::factorial::binomial(n, k)
}

/// Physicists' Hermite polynomial by the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `H_0(x), ..., H_n(x)`.
pub fn hermite_all(n: usize, x: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(n + 1);
    h.push(1.0);
    if n >= 1 {
        h.push(2.0 * x);
    }
    for k in 1..n {
        h.push(2.0 * x * h[k] - 2.0 * k as f64 * h[k - 1]);
    }
    h
}

/// `<z> = sqrt(z^2 + 1)`.
pub fn japanese(z: f64) -> f64 {
    z.hypot(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn hermite_explicit(n: usize, x: f64) -> f64 {
        // n! sum_m (-1)^m (2x)^(n-2m) / (m! (n-2m)!)
        (0..=n / 2)
            .map(|m| {
                let s = if m % 2 == 0 { 1.0 } else { -1.0 };
                s * factorial(n as u64) / (factorial(m as u64) * factorial((n - 2 * m) as u64))
                    * (2.0 * x).powi((n - 2 * m) as i32)
            })
            .sum()
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(0, 3.7), 1.0);
        assert_eq!(hermite(1, 2.0), 4.0);
        assert_eq!(hermite(2, 1.0), 2.0);
        for n in 0..=12 {
            for &x in &[-2.3, -0.4, 0.0, 0.9, 3.1] {
                let a = hermite(n, x);
                let b = hermite_explicit(n, x);
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "n={n} x={x}");
                assert_eq!(hermite_all(n, x)[n], a);
            }
        }
    }

    #[test]
    fn erfcx_against_quadrature() {
        for &x in &[0.0, 0.3, 1.0, 2.5, 5.0, 10.0, 25.0, 26.0, 40.0] {
            // erfcx(x) = 2/sqrt(pi) * int_0^inf exp(-t^2 - 2 x t) dt
            let q = 2.0 / SQRT_PI * integrate(|t| (-t * t - 2.0 * x * t).exp(), 0.0, 12.0, 1e-14);
            let v = erfcx(x);
            assert!((v - q).abs() <= 1e-12 * q, "x={x} {v} {q}");
        }
        assert!((erfcx(-1.0) - 2.0 * 1f64.exp() + erfcx(1.0)).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_and_quantile_roundtrip() {
        for &p in &[0.001, 0.1, 0.5, 0.77, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12);
        }
    }
}
