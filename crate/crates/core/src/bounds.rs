//! Closed-form pathwise and integral bounds, each with a checker.
//!
//! Bounds are returned in log form. A `BoundReport` always reads
//! `lhs <= rhs`, so `margin = ln rhs - ln lhs` is non-negative exactly when
//! the inequality holds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{phi_iter, warren_density, warren_density_drop_bottom};
use crate::error::{invalid, Error, Result};
use crate::logreal::LogReal;
use crate::paths::RngSpec;
use crate::quad::{gauss_hermite, integrate, integrate_tol};
use crate::reflect::InitialData;
use crate::special::{binomial, erfcx, factorial, ln_factorial, ln_gamma, SQRT_PI};

/// The universal constants left unpinned by the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c: f64,
    pub d: f64,
    /// `d_m = d_m_rate * m` in the exponential moment of the bottom line.
    pub d_m_rate: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants { c: 2.0, d: 2.0, d_m_rate: 1.0 }
    }
}

impl BoundConstants {
    pub fn new(c: f64, d: f64, d_m_rate: f64) -> Result<Self> {
        let k = BoundConstants { c, d, d_m_rate };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.c, self.d, self.d_m_rate].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid(format!("bound constants must be positive: {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: LogReal,
    pub rhs: LogReal,
    pub satisfied: bool,
    pub margin: f64,
}

impl BoundReport {
    pub fn new(lhs: LogReal, rhs: LogReal) -> Self {
        let margin = match (lhs.sign > 0, rhs.sign > 0) {
            (true, true) => rhs.log_mag - lhs.log_mag,
            (true, false) => f64::NEG_INFINITY,
            (false, true) => f64::INFINITY,
            // Both non-positive: compare magnitudes directly.
            (false, false) => {
                if lhs.to_f64() <= rhs.to_f64() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        };
        BoundReport { lhs, rhs, satisfied: margin >= 0.0, margin }
    }
}

/// A report with the parameters it was produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: BoundReport,
}

fn check_window(ell: f64, r: f64) -> Result<()> {
    if !(ell > 0.0 && ell < r && r.is_finite()) {
        return invalid(format!("need 0 < ell < r, got ell={ell}, r={r}"));
    }
    Ok(())
}

fn ln_superfactorial(n: usize) -> f64 {
    (1..n).map(|j| ln_factorial(j as u64)).sum()
}

/// `c^{n(n-1)} n^{n(n-1)} / prod_{j<n} j!`.
fn ln_melon_prefactor(n: usize, c: f64) -> f64 {
    let nf = n as f64;
    let e = nf * (nf - 1.0);
    e * c.ln() + e * nf.ln() - ln_superfactorial(n)
}

/// Pathwise bound on the density of the top line of `n`-Dyson Brownian motion
/// against standard Brownian motion on `[ell, r]`:
/// `c^{n(n-1)} n^{n(n-1)} / prod j! * (xi(ell)_+/sqrt ell + 1)^{n-1} (xi(r)_+/sqrt r + 1)^{n-1}`.
pub fn dyson_rn_bound(n: usize, ell: f64, r: f64, xi_ell: f64, xi_r: f64, k: &BoundConstants) -> Result<LogReal> {
    check_window(ell, r)?;
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let e = n as f64 - 1.0;
    let log = ln_melon_prefactor(n, k.c)
        + e * (xi_ell.max(0.0) / ell.sqrt() + 1.0).ln()
        + e * (xi_r.max(0.0) / r.sqrt() + 1.0).ln();
    Ok(LogReal::from_ln(log))
}

/// `ln[(prod_{j<=n} Gamma(1 + jp/2))^{2/p} / (prod_{j<=n} j!)^2]`.
pub fn lp_lower_bound_gamma(n: usize, p: f64) -> Result<LogReal> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if !(p > 1.0 && p.is_finite()) {
        return invalid(format!("p must exceed 1, got {p}"));
    }
    let log: f64 = (1..=n)
        .map(|j| 2.0 / p * ln_gamma(1.0 + j as f64 * p / 2.0) - 2.0 * ln_factorial(j as u64))
        .sum();
    Ok(LogReal::from_ln(log))
}

/// `E prod_{i<j} |X_i - X_j|^{2 gamma}` for iid standard normals, i.e.
/// `prod_{j<=n} Gamma(1 + j gamma) / Gamma(1 + gamma)`.
pub fn mehta_integral(n: usize, gamma: f64) -> Result<LogReal> {
    if n == 0 || !(gamma > 0.0) {
        return invalid("need n >= 1 and gamma > 0");
    }
    let g1 = ln_gamma(1.0 + gamma);
    Ok(LogReal::from_ln((1..=n).map(|j| ln_gamma(1.0 + j as f64 * gamma) - g1).sum()))
}

/// Pathwise bound on the density of inhomogeneous BLPP started from `b`
/// against rate-two Brownian motion from the origin on `[ell, r]`.
///
/// The unspecified leading constant is taken as `exp(d m^2 ln m + d_m^2 / 2)`.
pub fn tasep_rn_bound(
    m: usize,
    ell: f64,
    r: f64,
    b: &InitialData,
    xi_ell: f64,
    xi_r: f64,
    k: &BoundConstants,
) -> Result<LogReal> {
    check_window(ell, r)?;
    k.validate()?;
    if b.m() != m {
        return invalid(format!("b has {} entries, expected {m}", b.m()));
    }
    let mf = m as f64;
    let bm = b.get(m);
    let b1 = b.get(1);
    let sum_gap: f64 = b.values().iter().map(|v| v - bm).sum();
    let d_m = k.d_m_rate * mf;
    let mut log = k.d * mf * mf * mf.ln() + d_m * d_m / 2.0;
    log -= b.values().iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (4.0 * ell);
    log += mf * mf * ((b1 - bm) / (2.0 * ell)).max(1.0).ln();
    log += (xi_ell - bm) * sum_gap / (2.0 * ell);
    log += mf * (xi_ell - b1).max(0.0) / (2.0 * ell).sqrt();
    log += (mf * mf + mf) * ((xi_ell - bm).max(0.0) + mf * ell.sqrt()).ln();
    log += mf * ((xi_r - bm).max(0.0) / ell.sqrt() + 1.0).ln();
    log += xi_ell * bm / (2.0 * ell) - bm * bm / (4.0 * ell);
    Ok(LogReal::from_ln(log))
}

/// Density of `(H_1(ell), H_1(r))` for two-line TASEP from `b` against the
/// same marginals of rate-two Brownian motion from the origin.
pub fn tasep_two_time_rn(ell: f64, r: f64, b: &InitialData, x: f64, y: f64) -> Result<f64> {
    check_window(ell, r)?;
    if b.m() != 2 {
        return Err(Error::UnsupportedSize("two-time density implemented for m = 2".into()));
    }
    let lo = x.min(b.get(2)) - 12.0 * (2.0 * ell).sqrt() - 1.0;
    let integrand = |x2: f64| -> f64 {
        let q = match warren_density(ell, &[x, x2], b) {
            Ok(q) => q.to_f64(),
            Err(_) => return 0.0,
        };
        let start = InitialData::new(vec![x, x2.min(x)]).expect("ordered start");
        q * warren_density_drop_bottom(r - ell, &[y], &start).unwrap_or(0.0)
    };
    let joint = integrate_tol(integrand, lo, x, 1e-9, 1e-300).value;
    let gauss = phi_iter(0, ell, x)? * phi_iter(0, r - ell, y - x)?;
    Ok(joint / gauss)
}

/// Checks `tasep_two_time_rn <= tasep_rn_bound` at `n` points `(B(ell), B(r))`
/// of rate-two Brownian motion and reports the tightest one.
pub fn change_of_measure_sanity(
    ell: f64,
    r: f64,
    b: &InitialData,
    n: usize,
    rng: &RngSpec,
    k: &BoundConstants,
) -> Result<BoundReport> {
    let mut g = rng.rng();
    let mut worst: Option<BoundReport> = None;
    for _ in 0..n {
        let z1: f64 = g.sample(StandardNormal);
        let z2: f64 = g.sample(StandardNormal);
        let x = (2.0 * ell).sqrt() * z1;
        let y = x + (2.0 * (r - ell)).sqrt() * z2;
        let rn = LogReal::from_f64(tasep_two_time_rn(ell, r, b, x, y)?);
        let rep = BoundReport::new(rn, tasep_rn_bound(2, ell, r, b, x, y, k)?);
        if worst.is_none_or(|w| rep.margin < w.margin) {
            worst = Some(rep);
        }
    }
    worst.ok_or_else(|| Error::InvalidArgument("need at least one sample".into()))
}

/// Samples of the top line of `n`-Dyson Brownian motion at time `t`, built
/// as the TASEP top line from zero initial data on `grid_steps` steps and
/// rescaled from rate two to standard.
pub fn dyson_top_samples(n: usize, t: f64, samples: usize, grid_steps: usize, rng: &RngSpec) -> Result<Vec<f64>> {
    let grid = crate::paths::make_grid(0.0, t, grid_steps)?;
    let g = InitialData::zeros(n);
    Ok(crate::exec::map_indices(samples, |i| {
        let mut gen = rng.with_stream(rng.stream_index + i as u64).rng();
        crate::reflect::tasep_terminal(grid, &g, &mut gen)[0] / std::f64::consts::SQRT_2
    }))
}

/// For slabs `A = {xi(ell) in [a, a + width]}` compares the estimated
/// `P(H in A) / mu(A)`, lowered by three standard errors, with
/// `E_mu[bound | A]` under standard Brownian motion.
pub fn dyson_slab_check(
    n: usize,
    ell: f64,
    r: f64,
    slabs: &[f64],
    width: f64,
    top_samples: &[f64],
    k: &BoundConstants,
) -> Result<Vec<NamedReport>> {
    check_window(ell, r)?;
    let total = top_samples.len() as f64;
    let (z, w) = gauss_hermite(40);
    let mut out = Vec::with_capacity(slabs.len());
    for &a in slabs {
        let (lo, hi) = (a, a + width);
        let mu = crate::special::normal_cdf(hi / ell.sqrt()) - crate::special::normal_cdf(lo / ell.sqrt());
        let hits = top_samples.iter().filter(|&&h| h >= lo && h < hi).count() as f64;
        let p = hits / total;
        let ratio = (p - 3.0 * (p * (1.0 - p) / total).sqrt()).max(0.0) / mu;
        let cond = |x: f64| -> f64 {
            let mut e = 0.0;
            for (zi, wi) in z.iter().zip(&w) {
                let y = x + (2.0 * (r - ell)).sqrt() * zi;
                e += wi * dyson_rn_bound(n, ell, r, x, y, k).map(|v| v.to_f64()).unwrap_or(f64::NAN);
            }
            e / SQRT_PI * (-x * x / (2.0 * ell)).exp() / (2.0 * std::f64::consts::PI * ell).sqrt()
        };
        let mean_bound = integrate(cond, lo, hi, 1e-10) / mu;
        out.push(NamedReport {
            name: format!("dyson-slab n={n} a={a} width={width}"),
            report: BoundReport::new(LogReal::from_f64(ratio), LogReal::from_f64(mean_bound)),
        });
    }
    Ok(out)
}

/// Gauss-Hermite order for the uniform increment bound.
pub const UNIFORM_GH_NODES: usize = 128;

/// `c^{m(m-1)} m^{m(m-1)} / prod j! * E_Z[(Z_+ + 1)^{m(m-1)/2}
///  ((xi_end + sqrt(T + ell) Z)_+ / sqrt(T + r) + 1)^{m(m-1)/2}]`, `Z ~ N(0, 2)`.
pub fn uniform_increment_rn_bound(m: usize, t: f64, ell: f64, r: f64, xi_end: f64, k: &BoundConstants) -> Result<f64> {
    check_window(ell, r)?;
    if m == 0 || !(t >= 0.0) {
        return invalid("need m >= 1 and T >= 0");
    }
    let e = (m * (m - 1) / 2) as i32;
    let (sl, sr) = ((t + ell).sqrt(), (t + r).sqrt());
    let f = |z: f64| (z.max(0.0) + 1.0).powi(e) * ((xi_end + sl * z).max(0.0) / sr + 1.0).powi(e);
    // Z = sqrt2 * sqrt2 * node for the exp(-x^2) weight.
    let (z, w) = gauss_hermite(UNIFORM_GH_NODES);
    let (mut num, mut den) = (0.0, 0.0);
    for (zi, wi) in z.iter().zip(&w) {
        num += wi * f(2.0 * zi);
        den += wi;
    }
    Ok(ln_melon_prefactor(m, k.c).exp() * (num / den))
}

/// The uniform increment bound over a log-spaced grid of `T` in `[0, t_max]`,
/// plus its supremum over the grid.
pub fn uniform_increment_sweep(
    m: usize,
    ell: f64,
    r: f64,
    xi_end: f64,
    t_max: f64,
    points: usize,
    k: &BoundConstants,
) -> Result<(Vec<(f64, f64)>, f64)> {
    if points < 2 || !(t_max > 0.0) {
        return invalid("need at least two grid points and t_max > 0");
    }
    let lo = (t_max * 1e-4).ln();
    let mut ts = vec![0.0];
    ts.extend((0..points - 1).map(|i| (lo + (t_max.ln() - lo) * i as f64 / (points - 2).max(1) as f64).exp()));
    let mut out = Vec::with_capacity(ts.len());
    for t in ts {
        out.push((t, uniform_increment_rn_bound(m, t, ell, r, xi_end, k)?));
    }
    let sup = out.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((out, sup))
}

/// Extra weight on the innermost variable `x_1` of an appendix integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weight {
    None,
    /// `exp(-lambda x_1)`.
    ExpLambda(f64),
    /// `|x_1|^N`.
    PowerN(u32),
}

/// Largest number of nested integrals accepted.
pub const APPENDIX_MAX_K: usize = 4;
const APPENDIX_REL_TOL: f64 = 1e-8;

fn lower_limit(ell: f64, b: f64) -> f64 {
    -(12.0 * (2.0 * ell).sqrt() + b.abs())
}

/// `int_0^inf v^p e^{-v^2/4 ell} dv`.
fn half_gauss_moment(ell: f64, p: u32) -> f64 {
    let a = (p as f64 + 1.0) / 2.0;
    0.5 * (a * (4.0 * ell).ln() + ln_gamma(a)).exp()
}

/// `int_0^inf u^j e^{-(y-u)^2/4 ell} du`.
fn shifted_moment(ell: f64, j: u32, y: f64) -> f64 {
    factorial(j as u64) * 2.0 * SQRT_PI * ell.sqrt() * phi_iter(j as i64 + 1, ell, y).unwrap()
}

/// `int_{-inf}^y w(x) e^{-x^2/4 ell} (y - x)^m dx`.
fn innermost(ell: f64, m: u32, y: f64, weight: Weight) -> f64 {
    match weight {
        Weight::None => shifted_moment(ell, m, y),
        // e^{-lambda x - x^2/4l} = e^{lambda^2 l} e^{-(x + 2 lambda l)^2/4l}
        Weight::ExpLambda(lambda) => (lambda * lambda * ell).exp() * shifted_moment(ell, m, y + 2.0 * lambda * ell),
        Weight::PowerN(n) => {
            // Every expansion below has non-negative terms.
            if y <= 0.0 {
                // x = y - u, |x|^N = (|y| + u)^N
                return (0..=n)
                    .map(|j| binomial(n as u64, j as u64) * (-y).powi((n - j) as i32) * shifted_moment(ell, m + j, y))
                    .sum();
            }
            let below: f64 = (0..=m)
                .map(|i| binomial(m as u64, i as u64) * y.powi((m - i) as i32) * half_gauss_moment(ell, n + i))
                .sum();
            let above = integrate(
                |x: f64| x.powi(n as i32) * (y - x).powi(m as i32) * (-x * x / (4.0 * ell)).exp(),
                0.0,
                y,
                APPENDIX_REL_TOL,
            );
            below + above
        }
    }
}

fn nested(ell: f64, ms: &[u32], y: f64, weight: Weight, lo: f64) -> f64 {
    let k = ms.len();
    if k == 1 {
        return innermost(ell, ms[0], y, weight);
    }
    let m = ms[k - 1];
    let inner = &ms[..k - 1];
    if y <= lo {
        return 0.0;
    }
    integrate(
        |x: f64| (-x * x / (4.0 * ell)).exp() * nested(ell, inner, x, weight, lo) * (y - x).powi(m as i32),
        lo,
        y,
        APPENDIX_REL_TOL,
    )
}

fn check_appendix_args(ell: f64, ms: &[u32]) -> Result<()> {
    if !(ell > 0.0 && ell.is_finite()) {
        return invalid(format!("ell must be positive, got {ell}"));
    }
    if ms.is_empty() {
        return invalid("ms must be nonempty");
    }
    if ms.len() > APPENDIX_MAX_K {
        return Err(Error::UnsupportedSize(format!("at most {APPENDIX_MAX_K} nested integrals, got {}", ms.len())));
    }
    Ok(())
}

/// `g^ell_{m_1..m_k}(b) = int_{x_1 <= ... <= x_k <= b} prod e^{-x_i^2/4 ell}
///  (x_2 - x_1)^{m_1} ... (b - x_k)^{m_k} dx`.
pub fn appendix_g(ell: f64, ms: &[u32], b: f64) -> Result<f64> {
    appendix_weighted_g(ell, ms, b, Weight::None)
}

/// `appendix_g` with an extra weight on `x_1`.
pub fn appendix_weighted_g(ell: f64, ms: &[u32], b: f64, weight: Weight) -> Result<f64> {
    check_appendix_args(ell, ms)?;
    if let Weight::ExpLambda(l) = weight {
        if !l.is_finite() {
            return invalid("lambda must be finite");
        }
    }
    Ok(nested(ell, ms, b, weight, lower_limit(ell, b)))
}

/// `C_1 = c 2^{m_1}`, `C_{j+1} = 2^{m_{j+1}} (C_j e^{j+1} v e^{d sum_{i<=j} m_i ln m_i})`.
pub fn appendix_constant(ms: &[u32], k: &BoundConstants) -> f64 {
    let mut c = k.c * 2f64.powi(ms[0] as i32);
    let mut entropy = 0.0;
    for j in 1..ms.len() {
        let mj = ms[j - 1] as f64;
        if mj > 0.0 {
            entropy += mj * mj.ln();
        }
        c = 2f64.powi(ms[j] as i32) * (c * (j as f64 + 1.0).exp()).max((k.d * entropy).exp());
    }
    c
}

/// One point of the appendix parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixPoint {
    pub ell: f64,
    pub ms: Vec<u32>,
    pub b: f64,
    pub power: u32,
}

/// The standard grid: `b` in `[-5, 5]` with unit steps, `k <= 3`, `m_i <= 3`,
/// `ell` in `{0.5, 1}`, `N` in `{1, 2}`.
pub fn standard_appendix_grid() -> Vec<AppendixPoint> {
    let mut ms_all: Vec<Vec<u32>> = Vec::new();
    for k in 1..=3u32 {
        for code in 0..4u32.pow(k) {
            ms_all.push((0..k).map(|i| (code / 4u32.pow(i)) % 4).collect());
        }
    }
    let mut out = Vec::new();
    for &ell in &[0.5, 1.0] {
        for ms in &ms_all {
            for bi in -5..=5 {
                for power in 1..=2 {
                    out.push(AppendixPoint { ell, ms: ms.clone(), b: bi as f64, power });
                }
            }
        }
    }
    out
}

fn reports_from_values(p: &AppendixPoint, k: &BoundConstants, g: f64, g1: f64, f: f64) -> (BoundReport, BoundReport) {
    let kk = p.ms.len() as f64;
    let c = appendix_constant(&p.ms, k);
    let shift = LogReal::from_f64(g1) / LogReal::from_f64(g);
    let shift_rhs = LogReal::from_ln(c.ln() + (-kk * p.b).exp().ln_1p());
    let s = (2.0 * p.ell).sqrt();
    let n = p.power as u64;
    let weighted = LogReal::from_f64(f) / LogReal::from_f64(g);
    let weighted_rhs = LogReal::from_ln(
        ln_factorial(n) + n as f64 / 2.0 * (2.0 * p.ell).ln() + c.ln() + ((kk * p.b / s).exp() + (-p.b / s).exp()).ln(),
    );
    (BoundReport::new(shift, shift_rhs), BoundReport::new(weighted, weighted_rhs))
}

/// Reports for `g(b+1) <= C (1 + e^{-kb}) g(b)` and
/// `f/g <= N! (2 ell)^{N/2} C (e^{kb/sqrt(2 ell)} + e^{-b/sqrt(2 ell)})`.
pub fn appendix_reports(p: &AppendixPoint, k: &BoundConstants) -> Result<(BoundReport, BoundReport)> {
    let g = appendix_g(p.ell, &p.ms, p.b)?;
    let g1 = appendix_g(p.ell, &p.ms, p.b + 1.0)?;
    let f = appendix_weighted_g(p.ell, &p.ms, p.b, Weight::PowerN(p.power))?;
    Ok(reports_from_values(p, k, g, g1, f))
}

/// Evaluates both appendix inequalities over `grid`, sharing the `g` values
/// between points with equal `(ell, ms)`.
pub fn check_appendix_inequalities(grid: &[AppendixPoint], k: &BoundConstants) -> Result<Vec<NamedReport>> {
    let mut groups: Vec<(f64, Vec<u32>, Vec<&AppendixPoint>)> = Vec::new();
    for p in grid {
        match groups.iter_mut().find(|g| g.0 == p.ell && g.1 == p.ms) {
            Some(g) => g.2.push(p),
            None => groups.push((p.ell, p.ms.clone(), vec![p])),
        }
    }
    let done = crate::exec::map_slice(&groups, |(ell, ms, pts)| -> Result<Vec<NamedReport>> {
        let mut cache: Vec<(f64, f64)> = Vec::new();
        let mut g_at = |b: f64| -> Result<f64> {
            if let Some(v) = cache.iter().find(|c| c.0 == b) {
                return Ok(v.1);
            }
            let v = appendix_g(*ell, ms, b)?;
            cache.push((b, v));
            Ok(v)
        };
        let mut out = Vec::new();
        for p in pts {
            let (g, g1) = (g_at(p.b)?, g_at(p.b + 1.0)?);
            let f = appendix_weighted_g(p.ell, &p.ms, p.b, Weight::PowerN(p.power))?;
            let (shift, weighted) = reports_from_values(p, k, g, g1, f);
            let tag = format!("ell={} ms={:?} b={} N={}", p.ell, p.ms, p.b, p.power);
            out.push(NamedReport { name: format!("appendix-shift {tag}"), report: shift });
            out.push(NamedReport { name: format!("appendix-weighted {tag}"), report: weighted });
        }
        Ok(out)
    });
    let mut out = Vec::with_capacity(2 * grid.len());
    for d in done {
        out.extend(d?);
    }
    Ok(out)
}

/// The two complementary error function tail bounds; `None` outside their
/// domains (`r^2 >= 6L` and `r^2 >= 30L`).
///
/// First: `(L/2r) e^{-x^2} <= (sqrt(pi L)/2) erfc(x)` with `x = r/(2 sqrt L)`.
/// Second: `(L^2/r^2) e^{-x^2} <= L e^{-x^2} - r (sqrt(pi L)/2) erfc(x)`.
pub fn erf_tail_bounds(l: f64, r: f64) -> Result<(Option<BoundReport>, Option<BoundReport>)> {
    if !(l > 0.0 && r > 0.0 && l.is_finite() && r.is_finite()) {
        return invalid("L and r must be positive");
    }
    let x = r / (2.0 * l.sqrt());
    let half = (std::f64::consts::PI * l).sqrt() / 2.0;
    let cx = erfcx(x);
    let slack = 1.0 - 1e-12;
    let first = (r * r >= 6.0 * l * slack).then(|| {
        let lhs = LogReal::from_ln((l / (2.0 * r)).ln() - x * x);
        let rhs = LogReal::from_ln((half * cx).ln() - x * x);
        BoundReport::new(lhs, rhs)
    });
    let second = (r * r >= 30.0 * l * slack).then(|| {
        let lhs = LogReal::from_ln((l * l / (r * r)).ln() - x * x);
        let rhs = LogReal::from_f64(l - r * half * cx) * LogReal::from_ln(-x * x);
        BoundReport::new(lhs, rhs)
    });
    Ok((first, second))
}

/// Gauss-Hermite order for the contractivity check.
pub const CONTRACTIVITY_NODES: usize = 96;

fn contractivity_sides<F: Fn(f64, f64) -> f64>(f: &F, ell: f64, r: f64, p: f64, nodes: usize) -> (f64, f64) {
    let (z, w) = gauss_hermite(nodes);
    let wsum: f64 = w.iter().sum();
    let (sx, sy) = ((4.0 * ell).sqrt(), (4.0 * (r - ell)).sqrt());
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (zy, wy) in z.iter().zip(&w) {
        let y = sy * zy;
        let (mut inner, mut inner_p) = (0.0, 0.0);
        for (zx, wx) in z.iter().zip(&w) {
            let x = sx * zx;
            let v = f(x, x + y);
            inner += wx * v;
            inner_p += wx * v.powf(p);
        }
        lhs += wy * (inner / wsum).powf(p);
        rhs += wy * (inner_p / wsum);
    }
    (lhs / wsum, rhs / wsum)
}

/// `E_Y[E_X[f(X, X + Y)]^p] <= E[f(X, X + Y)^p]` with `X ~ N(0, 2 ell)` and
/// `Y ~ N(0, 2(r - ell))` independent, by tensor Gauss-Hermite.
pub fn increment_contractivity_check<F: Fn(f64, f64) -> f64>(f: F, ell: f64, r: f64, p: f64) -> Result<BoundReport> {
    check_window(ell, r)?;
    if !(p > 1.0 && p.is_finite()) {
        return invalid(format!("p must exceed 1, got {p}"));
    }
    let (lhs, rhs) = contractivity_sides(&f, ell, r, p, CONTRACTIVITY_NODES);
    let (_, rhs_half) = contractivity_sides(&f, ell, r, p, CONTRACTIVITY_NODES / 2);
    if !(lhs.is_finite() && rhs.is_finite()) || lhs < 0.0 || ((rhs - rhs_half) / rhs).abs() > 1e-2 {
        return invalid("quadrature does not converge; f grows too fast against the Gaussian weight");
    }
    Ok(BoundReport::new(LogReal::from_f64(lhs), LogReal::from_f64(rhs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::composite_gl;
    use crate::stats::mean_se;

    fn k0() -> BoundConstants {
        BoundConstants::default()
    }

    #[test]
    fn report_sign_conventions() {
        let r = BoundReport::new(LogReal::from_f64(1.0), LogReal::from_f64(2.0));
        assert!(r.satisfied && (r.margin - 2f64.ln()).abs() < 1e-15);
        let r = BoundReport::new(LogReal::from_f64(1.0), LogReal::from_f64(-2.0));
        assert!(!r.satisfied);
        let r = BoundReport::new(LogReal::ZERO, LogReal::from_f64(2.0));
        assert!(r.satisfied);
        assert!(BoundConstants::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn dyson_examples() {
        let one = BoundConstants::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(dyson_rn_bound(1, 0.5, 1.0, 3.0, 4.0, &k0()).unwrap().to_f64(), 1.0);
        assert!((dyson_rn_bound(2, 0.5, 1.0, 0.0, 0.0, &one).unwrap().to_f64() - 4.0).abs() < 1e-14);
        assert!(dyson_rn_bound(2, 1.0, 1.0, 0.0, 0.0, &one).is_err());
        // n = 3, c = 1: 3^6 / 2 * (1 + 1)^2 * (2/sqrt2 + 1)^2
        let v = dyson_rn_bound(3, 1.0, 4.0, 1.0, 4.0, &one).unwrap().to_f64();
        assert!((v - 729.0 / 2.0 * 4.0 * 9.0).abs() < 1e-9);
    }

    #[test]
    fn dyson_and_tasep_monotone_in_positive_parts() {
        let k = k0();
        let b = InitialData::new(vec![1.5, 0.5, 0.0]).unwrap();
        let xs: Vec<f64> = (0..60).map(|i| -3.0 + 0.1 * i as f64).collect();
        for w in xs.windows(2) {
            for &other in &[-1.0, 0.0, 2.0] {
                let d0 = dyson_rn_bound(3, 1.0, 2.0, w[0], other, &k).unwrap();
                let d1 = dyson_rn_bound(3, 1.0, 2.0, w[1], other, &k).unwrap();
                assert!(d1.log_mag >= d0.log_mag);
                let d0 = dyson_rn_bound(3, 1.0, 2.0, other, w[0], &k).unwrap();
                let d1 = dyson_rn_bound(3, 1.0, 2.0, other, w[1], &k).unwrap();
                assert!(d1.log_mag >= d0.log_mag);
                let t0 = tasep_rn_bound(3, 1.0, 2.0, &b, other, w[0], &k).unwrap();
                let t1 = tasep_rn_bound(3, 1.0, 2.0, &b, other, w[1], &k).unwrap();
                assert!(t1.log_mag >= t0.log_mag);
            }
        }
        // In xi(ell) the bound is non-decreasing on the positive half-line.
        let z = InitialData::zeros(3);
        for w in xs.windows(2).filter(|w| w[0] >= 0.0) {
            let t0 = tasep_rn_bound(3, 1.0, 2.0, &z, w[0], 1.0, &k).unwrap();
            let t1 = tasep_rn_bound(3, 1.0, 2.0, &z, w[1], 1.0, &k).unwrap();
            assert!(t1.log_mag >= t0.log_mag);
        }
    }

    #[test]
    fn dyson_slabs_hold() {
        let k = BoundConstants::new(1.0, 1.0, 1.0).unwrap();
        let tops = dyson_top_samples(2, 1.0, 20_000, 256, &RngSpec::new(5, 0)).unwrap();
        // Continuum mean 2/sqrt(pi), less the grid-maximum bias 0.5826 sqrt(2 delta).
        let (m, se) = mean_se(&tops);
        let expect = 2.0 / SQRT_PI - 0.5826 * (2.0f64 / 256.0).sqrt();
        assert!((m - expect).abs() < 3.0 * se + 0.005, "{m} vs {expect}");
        let slabs: Vec<f64> = (0..20).map(|i| -1.0 + 0.15 * i as f64).collect();
        for r in dyson_slab_check(2, 1.0, 2.0, &slabs, 0.1, &tops, &k).unwrap() {
            assert!(r.report.satisfied, "{} {:?}", r.name, r.report);
        }
    }

    #[test]
    fn lp_gamma_examples() {
        assert!(lp_lower_bound_gamma(1, 2.0).unwrap().log_mag.abs() < 1e-14);
        assert!((lp_lower_bound_gamma(2, 2.0).unwrap().to_f64() - 0.5).abs() < 1e-14);
        assert!(lp_lower_bound_gamma(3, 1.0).is_err());
        // Direct product for n = 3, p = 3.
        let direct = (libm::tgamma(2.5) * libm::tgamma(4.0) * libm::tgamma(5.5)).powf(2.0 / 3.0) / (1.0 * 2.0 * 6.0f64).powi(2);
        assert!((lp_lower_bound_gamma(3, 3.0).unwrap().to_f64() / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_gamma_is_non_decreasing_in_p() {
        for n in 3..=10 {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..40 {
                let p = 1.1 + 0.25 * i as f64;
                let v = lp_lower_bound_gamma(n, p).unwrap().log_mag;
                assert!(v >= prev - 1e-12, "n={n} p={p}");
                prev = v;
            }
        }
    }

    #[test]
    fn mehta_examples() {
        assert!(mehta_integral(1, 0.7).unwrap().log_mag.abs() < 1e-15);
        assert!((mehta_integral(2, 1.0).unwrap().to_f64() - 2.0).abs() < 1e-12);
        assert!((mehta_integral(2, 0.5).unwrap().to_f64() - 2.0 / SQRT_PI).abs() < 1e-12);
        // n = 3, gamma = 1: 1 * 3 * 4!/... = Gamma(2)Gamma(3)Gamma(4) = 12.
        assert!((mehta_integral(3, 1.0).unwrap().to_f64() - 12.0).abs() < 1e-10);
    }

    #[test]
    fn mehta_matches_monte_carlo() {
        let mut g = RngSpec::new(7, 0).rng();
        let n = 200_000;
        let (mut sq, mut ab) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let x: f64 = g.sample(StandardNormal);
            let y: f64 = g.sample(StandardNormal);
            sq.push((x - y).powi(2));
            ab.push((x - y).abs());
        }
        let (m, se) = mean_se(&sq);
        assert!((m - mehta_integral(2, 1.0).unwrap().to_f64()).abs() < 3.0 * se);
        let (m, se) = mean_se(&ab);
        assert!((m - mehta_integral(2, 0.5).unwrap().to_f64()).abs() < 3.0 * se);
    }

    #[test]
    fn tasep_bound_examples() {
        let k = k0();
        let one = InitialData::zeros(1);
        let v = tasep_rn_bound(1, 0.5, 1.0, &one, -2.0, -1.0, &k).unwrap();
        // m = 1 below the origin: only the constant survives, times (sqrt l)^2.
        let expect = k.d_m_rate.powi(2) / 2.0 + 2.0 * 0.5f64.sqrt().ln();
        assert!((v.log_mag - expect).abs() < 1e-12);
        assert!(tasep_rn_bound(2, 0.5, 1.0, &one, 0.0, 0.0, &k).is_err());
    }

    #[test]
    fn tasep_bound_constant_shift_is_girsanov() {
        let k = k0();
        let (ell, r) = (0.7, 1.6);
        for &beta in &[-1.3, 0.0, 0.4, 2.0] {
            for m in 1..=5 {
                let b = InitialData::new(vec![beta; m]).unwrap();
                let z = InitialData::zeros(m);
                for &(xl, xr) in &[(0.3, 1.1), (-0.5, 2.0), (2.5, -1.0)] {
                    let lhs = tasep_rn_bound(m, ell, r, &b, xl, xr, &k).unwrap().log_mag;
                    let base = tasep_rn_bound(m, ell, r, &z, xl - beta, xr - beta, &k).unwrap().log_mag;
                    let gir = xl * beta / (2.0 * ell) - beta * beta / (4.0 * ell);
                    assert!((lhs - base - gir).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn tasep_bound_growth_is_m2_log_m() {
        let k = k0();
        for pattern in [0.0, 0.1] {
            let log_at = |m: usize| {
                let b = InitialData::new((0..m).map(|i| pattern * (m - 1 - i) as f64).collect()).unwrap();
                tasep_rn_bound(m, 1.0, 2.0, &b, 1.0, 1.5, &k).unwrap().log_mag
            };
            let c = log_at(2) / (4.0 * 2f64.ln());
            for m in 2..=12 {
                let mf = m as f64;
                assert!(log_at(m) <= c * mf * mf * mf.ln() + 1e-9, "m={m}");
            }
        }
    }

    #[test]
    fn two_time_rn_dominated_by_bound() {
        let b = InitialData::new(vec![1.0, 0.0]).unwrap();
        let rep = change_of_measure_sanity(0.5, 1.0, &b, 300, &RngSpec::new(3, 0), &k0()).unwrap();
        assert!(rep.satisfied, "{rep:?}");
    }

    #[test]
    fn two_time_rn_integrates_to_one() {
        let (ell, r): (f64, f64) = (0.5, 1.0);
        let b = InitialData::new(vec![1.0, 0.0]).unwrap();
        // E over the Gaussian pair of the two-time ratio is the total mass.
        let (z, w) = gauss_hermite(40);
        let mut total = 0.0;
        for (z1, w1) in z.iter().zip(&w) {
            for (z2, w2) in z.iter().zip(&w) {
                let x = (4.0 * ell).sqrt() * z1;
                let y = x + (4.0 * (r - ell)).sqrt() * z2;
                total += w1 * w2 * tasep_two_time_rn(ell, r, &b, x, y).unwrap();
            }
        }
        total /= std::f64::consts::PI;
        assert!((total - 1.0).abs() < 2e-3, "{total}");
    }

    #[test]
    fn uniform_bound_examples() {
        let k = k0();
        assert_eq!(uniform_increment_rn_bound(1, 3.0, 0.5, 1.0, 2.0, &k).unwrap(), 1.0);
        let pre = ln_melon_prefactor(3, k.c).exp();
        // Kink-split adaptive quadrature as the oracle.
        for &(t, xi) in &[(0.0f64, 0.5f64), (2.0, -1.0), (10.0, 3.0)] {
            let (ell, r) = (0.5f64, 1.5f64);
            let (sl, sr) = ((t + ell).sqrt(), (t + r).sqrt());
            let f = |z: f64| {
                (z.max(0.0) + 1.0).powi(3) * ((xi + sl * z).max(0.0) / sr + 1.0).powi(3) * (-z * z / 4.0).exp() / (2.0 * SQRT_PI)
            };
            let kink = -xi / sl;
            let (a, c) = (kink.min(0.0), kink.max(0.0));
            let oracle = integrate(f, -40.0, a, 1e-13) + integrate(f, a, c, 1e-13) + integrate(f, c, 40.0, 1e-13);
            let v = uniform_increment_rn_bound(3, t, ell, r, xi, &k).unwrap() / pre;
            assert!((v / oracle - 1.0).abs() < 1e-4, "t={t} xi={xi}: {v} vs {oracle}");
        }
    }

    #[test]
    fn uniform_bound_matches_monte_carlo() {
        let k = k0();
        let (t, ell, r, xi) = (1.0, 0.5, 1.5, 0.7);
        let pre = ln_melon_prefactor(3, k.c).exp();
        let q = uniform_increment_rn_bound(3, t, ell, r, xi, &k).unwrap() / pre;
        let mut g = RngSpec::new(11, 0).rng();
        let (sl, sr) = ((t + ell).sqrt(), (t + r).sqrt());
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let z = std::f64::consts::SQRT_2 * g.sample::<f64, _>(StandardNormal);
                (z.max(0.0) + 1.0).powi(3) * ((xi + sl * z).max(0.0) / sr + 1.0).powi(3)
            })
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - q).abs() < 3.0 * se, "{m} +- {se} vs {q}");
    }

    #[test]
    fn uniform_sweep_has_a_finite_supremum() {
        let (pts, sup) = uniform_increment_sweep(3, 0.5, 1.5, 1.0, 1e4, 30, &k0()).unwrap();
        assert_eq!(pts.len(), 30);
        assert_eq!(pts[0].0, 0.0);
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(sup.is_finite() && pts.iter().all(|p| p.1 <= sup));
    }

    #[test]
    fn appendix_examples() {
        let half_gauss = (std::f64::consts::PI / 2.0).sqrt();
        assert!((appendix_g(0.5, &[0], 0.0).unwrap() - half_gauss).abs() < 1e-12);
        assert!((appendix_g(0.5, &[1], 0.0).unwrap() - 1.0).abs() < 1e-12);
        let f = appendix_weighted_g(0.5, &[0], 0.0, Weight::PowerN(1)).unwrap();
        assert!((f - 1.0).abs() < 1e-9);
        for ms in [vec![2], vec![1, 0], vec![0, 2, 1]] {
            let g = appendix_g(0.7, &ms, 0.3).unwrap();
            let n0 = appendix_weighted_g(0.7, &ms, 0.3, Weight::PowerN(0)).unwrap();
            let l0 = appendix_weighted_g(0.7, &ms, 0.3, Weight::ExpLambda(0.0)).unwrap();
            assert!((n0 / g - 1.0).abs() < 1e-7 && (l0 / g - 1.0).abs() < 1e-12);
        }
        assert!(matches!(appendix_g(1.0, &[0; 5], 0.0), Err(Error::UnsupportedSize(_))));
    }

    #[test]
    fn appendix_two_level_matches_dense_grid() {
        let (ell, b) = (0.5, 0.4);
        let lo = lower_limit(ell, b);
        let inner = |x2: f64| {
            composite_gl(|x1| (-x1 * x1 / (4.0 * ell)).exp() * (x2 - x1), lo, x2, 200, 10)
        };
        let dense = composite_gl(|x2| (-x2 * x2 / (4.0 * ell)).exp() * inner(x2) * (b - x2), lo, b, 200, 10);
        let g = appendix_g(ell, &[1, 1], b).unwrap();
        assert!((g / dense - 1.0).abs() < 1e-6, "{g} vs {dense}");
    }

    #[test]
    fn exp_weight_obeys_shift_inequality() {
        // h(b) <= e^{k lambda^2/2} e^{(k-1) lambda b} g(b + lambda) at ell = 1/2; the induction
        // picks up e^{+lambda^2/2} per level.
        for ms in [vec![1], vec![0, 1], vec![2, 1, 0]] {
            let kk = ms.len() as f64;
            for &lambda in &[0.3, 1.0] {
                for &b in &[-2.0, 0.0, 1.5] {
                    let h = appendix_weighted_g(0.5, &ms, b, Weight::ExpLambda(lambda)).unwrap();
                    let g = appendix_g(0.5, &ms, b + lambda).unwrap();
                    let rhs = (kk * lambda * lambda / 2.0 + (kk - 1.0) * lambda * b).exp() * g;
                    assert!(h <= rhs * (1.0 + 1e-7), "ms={ms:?} lambda={lambda} b={b}");
                }
            }
        }
    }

    #[test]
    fn appendix_constants() {
        let k = k0();
        assert_eq!(appendix_constant(&[0], &k), 2.0);
        assert_eq!(appendix_constant(&[3], &k), 16.0);
        // C_2 for (2, 1): 2 * max(8 e^2, e^{2 * 2 ln 2}) = 16 e^2.
        assert!((appendix_constant(&[2, 1], &k) - 16.0 * 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn appendix_single_level_grid_holds() {
        let grid: Vec<AppendixPoint> =
            standard_appendix_grid().into_iter().filter(|p| p.ms.len() == 1 && p.ms[0] == 0).collect();
        for r in check_appendix_inequalities(&grid, &k0()).unwrap() {
            assert!(r.report.satisfied && r.report.margin > 0.0, "{}", r.name);
        }
    }

    #[test]
    fn appendix_shift_ratio_stabilizes() {
        for ms in [vec![0], vec![1, 3], vec![2, 0, 3]] {
            let mk = *ms.last().unwrap();
            let ratios: Vec<f64> = [3.0, 4.0, 5.0]
                .iter()
                .map(|&b| appendix_g(0.5, &ms, b + 1.0).unwrap() / appendix_g(0.5, &ms, b).unwrap())
                .collect();
            assert!(ratios.iter().all(|&q| q >= 1.0 && q <= 2f64.powi(mk.max(1) as i32)), "{ms:?} {ratios:?}");
            assert!(ratios.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }

    #[test]
    fn erf_bounds() {
        let (a, b) = erf_tail_bounds(1.0, 6f64.sqrt()).unwrap();
        assert!(a.unwrap().satisfied && b.is_none());
        let (a, b) = erf_tail_bounds(1.0, 10.0).unwrap();
        assert!(a.unwrap().margin > 0.5 && b.unwrap().satisfied);
        let (a, b) = erf_tail_bounds(1.0, 1.0).unwrap();
        assert!(a.is_none() && b.is_none());
        // Quadrature oracle for erfc at the boundary point.
        let x = 6f64.sqrt() / 2.0;
        let q = 2.0 / SQRT_PI * integrate(|s| (-s * s).exp(), x, x + 40.0, 1e-14);
        assert!((erfcx(x) * (-x * x).exp() / q - 1.0).abs() < 1e-12);
        for i in 0..200 {
            let l = 0.1 + 0.05 * i as f64;
            for j in 0..50 {
                let r = 0.2 * (j + 1) as f64;
                let (a, b) = erf_tail_bounds(l, r).unwrap();
                assert!(a.is_none_or(|x| x.satisfied) && b.is_none_or(|x| x.satisfied), "L={l} r={r}");
            }
        }
    }

    #[test]
    fn contractivity_cases() {
        let one = increment_contractivity_check(|_, _| 1.0, 0.5, 1.5, 3.0).unwrap();
        assert!(one.satisfied && one.margin == 0.0);
        assert!((one.lhs.to_f64() - 1.0).abs() < 1e-15);
        let prod = increment_contractivity_check(|x, y| (x.max(0.0) + 1.0) * (y.max(0.0) + 1.0), 0.5, 1.5, 2.0).unwrap();
        assert!(prod.satisfied && prod.margin > 0.0);
        let k = k0();
        let dy = increment_contractivity_check(|x, y| dyson_rn_bound(2, 0.5, 1.5, x, y, &k).unwrap().to_f64(), 0.5, 1.5, 2.0)
            .unwrap();
        assert!(dy.satisfied);
        assert!(increment_contractivity_check(|x, _| (x * x).exp(), 0.5, 1.5, 2.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn report_sign_matches_margin(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let r = BoundReport::new(LogReal::from_ln(a), LogReal::from_ln(b));
            proptest::prop_assert_eq!(r.satisfied, r.margin >= 0.0);
            proptest::prop_assert!((r.margin - (b - a)).abs() < 1e-12);
        }

        #[test]
        fn bounds_monotone_in_positive_parts(x in -3.0f64..3.0, y in -3.0f64..3.0, dx in 0.0f64..2.0, dy in 0.0f64..2.0, m in 1usize..6) {
            let k = k0();
            let b = InitialData::new((0..m).map(|i| 0.3 * (m - 1 - i) as f64).collect()).unwrap();
            let d0 = dyson_rn_bound(m, 0.5, 1.5, x, y, &k).unwrap().log_mag;
            let d1 = dyson_rn_bound(m, 0.5, 1.5, x + dx, y + dy, &k).unwrap().log_mag;
            proptest::prop_assert!(d1 >= d0 - 1e-12);
            let t0 = tasep_rn_bound(m, 0.5, 1.5, &b, x, y, &k).unwrap().log_mag;
            let t1 = tasep_rn_bound(m, 0.5, 1.5, &b, x + dx, y + dy, &k).unwrap().log_mag;
            proptest::prop_assert!(t1 >= t0 - 1e-12);
        }

        #[test]
        fn erf_bounds_hold_on_domain(l in 0.01f64..50.0, s in 1.0f64..10.0) {
            let (a, b) = erf_tail_bounds(l, s * (6.0 * l).sqrt()).unwrap();
            proptest::prop_assert!(a.map_or(false, |r| r.satisfied));
            if let Some(b) = b {
                proptest::prop_assert!(b.satisfied);
            }
        }
    }
}
