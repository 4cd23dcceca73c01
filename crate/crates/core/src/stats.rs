//! Goodness-of-fit statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSReport {
    pub statistic: f64,
    pub sample_count: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Minimum sample count accepted by the KS tests.
pub const KS_MIN_SAMPLES: usize = 10;

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form converges fast for small lambda.
        let pi2 = std::f64::consts::PI.powi(2);
        let l2 = lambda * lambda;
        let s: f64 = (1..=6)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * pi2 / (8.0 * l2)).exp()
            })
            .sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic p-value for statistic `d` at effective sample size `n`.
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS distance, defined for any nonempty sample.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("empty sample");
    }
    if samples.iter().any(|x| x.is_nan()) {
        return invalid("NaN in sample");
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d.clamp(0.0, 1.0))
}

pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KSReport> {
    if samples.len() < KS_MIN_SAMPLES {
        return invalid(format!("KS test needs at least {KS_MIN_SAMPLES} samples, got {}", samples.len()));
    }
    let d = ks_statistic(samples, cdf)?;
    Ok(KSReport { statistic: d, sample_count: samples.len(), p_value: ks_p_value(d, samples.len() as f64) })
}

/// Two-sample KS test; `sample_count` is the smaller sample size.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KSReport> {
    if a.len() < KS_MIN_SAMPLES || b.len() < KS_MIN_SAMPLES {
        return invalid(format!("KS test needs at least {KS_MIN_SAMPLES} samples per side"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return invalid("NaN in sample");
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    Ok(KSReport { statistic: d, sample_count: xs.len().min(ys.len()), p_value: ks_p_value(d, ne) })
}

/// Pearson chi-square against expected counts; `constraints` is subtracted from
/// `cells - 1` to get the degrees of freedom.
pub fn chi_square_test(observed: &[f64], expected: &[f64], constraints: usize) -> Result<ChiSquareReport> {
    if observed.len() != expected.len() {
        return invalid("observed and expected differ in length");
    }
    if observed.len() < constraints + 2 {
        return invalid("too few cells");
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return invalid("expected counts must be positive");
    }
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = observed.len() - 1 - constraints;
    let p = ChiSquared::new(dof as f64).unwrap().sf(stat);
    Ok(ChiSquareReport { statistic: stat, dof, p_value: p })
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::exec::pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = crate::exec::pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::RngSpec;
    use rand::Rng;

    fn uniforms(n: usize, seed: u64) -> Vec<f64> {
        let mut r = RngSpec::new(seed, 0).rng();
        (0..n).map(|_| r.random::<f64>()).collect()
    }

    #[test]
    fn single_sample_distance() {
        assert_eq!(ks_statistic(&[0.5], |x| x.clamp(0.0, 1.0)).unwrap(), 0.5);
        assert!(ks_test(&[0.5], |x| x).is_err());
    }

    #[test]
    fn survival_function_values() {
        // Reference values of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.0) - 0.26999967167735456).abs() < 1e-10);
        assert!((kolmogorov_survival(1.36) - 0.049485876755377876).abs() < 1e-10);
        assert!((kolmogorov_survival(0.5) - 0.9639452436648751).abs() < 1e-10);
        // Both series agree at the switch point.
        let a = kolmogorov_survival(1.18 - 1e-12);
        let b = kolmogorov_survival(1.18 + 1e-12);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn null_calibration() {
        let xs = uniforms(100_000, 1);
        assert!(ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap().p_value > 1e-3);
    }

    #[test]
    fn power_against_shift() {
        let xs: Vec<f64> = uniforms(10_000, 2).iter().map(|x| x + 0.2).collect();
        assert!(ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap().p_value < 1e-6);
    }

    #[test]
    fn p_values_uniform_under_null() {
        let ps: Vec<f64> = (0..200)
            .map(|i| ks_test(&uniforms(500, 100 + i), |x| x.clamp(0.0, 1.0)).unwrap().p_value)
            .collect();
        assert!(ks_test(&ps, |x| x.clamp(0.0, 1.0)).unwrap().p_value > 1e-3);
    }

    #[test]
    fn two_sample() {
        let a = uniforms(5000, 3);
        let b = uniforms(7000, 4);
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 1e-3);
        let c: Vec<f64> = b.iter().map(|x| x * 0.9).collect();
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        let same = ks_two_sample(&a, &a).unwrap();
        assert_eq!(same.statistic, 0.0);
    }

    #[test]
    fn chi_square() {
        let r = chi_square_test(&[10.0, 10.0, 10.0], &[10.0, 10.0, 10.0], 0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let r = chi_square_test(&[12.0, 8.0, 10.0], &[10.0, 10.0, 10.0], 0).unwrap();
        assert!((r.statistic - 0.8).abs() < 1e-12);
        // Statistic 20 on 2 dof: p = exp(-10).
        let r = chi_square_test(&[20.0, 10.0, 0.0], &[10.0, 10.0, 10.0], 0).unwrap();
        assert!((r.p_value - (-10.0f64).exp()).abs() < 1e-12);
    }
}
