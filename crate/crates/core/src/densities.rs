//! Warren transition densities and the functions used to bound them.
//!
//! Conventions: `x_1` is the top (largest) coordinate and `b_1` the largest
//! initial value. The rate-two heat kernel is `phi_t(y) = exp(-y^2/4t)/sqrt(4 pi t)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::log_det;
use crate::logreal::LogReal;
use crate::reflect::InitialData;
use crate::special::{binomial, erfc, erfcx, factorial, hermite, SQRT_PI};

/// Determinants with a larger pivot ratio are treated as degenerate.
pub const CONDITION_LIMIT: f64 = 1e12;

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid(format!("time must be positive, got {t}"));
    }
    Ok(())
}

fn phi0(t: f64, y: f64) -> f64 {
    (-y * y / (4.0 * t)).exp() / (2.0 * SQRT_PI * t.sqrt())
}

pub fn phi_gauss(t: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    Ok(phi0(t, y))
}

/// `(-1)^k (4t)^{-k/2} H_k(y / sqrt(4t))`, i.e. `Phi^(-k) / phi_t`.
fn hermite_ratio(k: u32, t: f64, y: f64) -> f64 {
    let s = (4.0 * t).sqrt();
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * s.powi(-(k as i32)) * hermite(k as usize, y / s)
}

/// `F^1, ..., F^k` for `y < 0` where `F^j = Phi^(j) / phi_t`.
fn f_positive_orders_negative_y(k: usize, t: f64, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    let u = -y / (2.0 * t).sqrt();
    if u <= 1.5 {
        let (mut f0, mut f1) = (1.0, (SQRT_PI * t.sqrt()) * erfcx(-y / (2.0 * t.sqrt())));
        out.push(f1);
        for j in 2..=k {
            let f2 = (y * f1 + 2.0 * t * f0) / (j - 1) as f64;
            f0 = f1;
            f1 = f2;
            out.push(f1);
        }
        return out;
    }
    // Forward recursion loses accuracy here; run the ratio recursion
    // rho_j = F^j / F^{j-1} downward from a zero start.
    let extra = ((40.0 / (0.22 * (u - 1.0))).ceil() as usize).max(30);
    let top = k + extra;
    let mut rho = vec![0.0; top + 1];
    for j in (1..top).rev() {
        rho[j] = 2.0 * t / (j as f64 * rho[j + 1] - y);
    }
    let mut f = 1.0;
    for r in rho.iter().take(k + 1).skip(1) {
        f *= r;
        out.push(f);
    }
    out
}

fn phi_raw(m: i64, t: f64, y: f64) -> f64 {
    if m <= 0 {
        return hermite_ratio((-m) as u32, t, y) * phi0(t, y);
    }
    if y >= 0.0 {
        let (mut p0, mut p1) = (phi0(t, y), 0.5 * erfc(-y / (2.0 * t.sqrt())));
        for j in 2..=m {
            let p2 = (y * p1 + 2.0 * t * p0) / (j - 1) as f64;
            p0 = p1;
            p1 = p2;
        }
        return p1;
    }
    phi0(t, y) * f_positive_orders_negative_y(m as usize, t, y)[m as usize - 1]
}

fn f_raw(k: i64, t: f64, y: f64) -> f64 {
    if k <= 0 {
        return hermite_ratio((-k) as u32, t, y);
    }
    if y < 0.0 {
        return f_positive_orders_negative_y(k as usize, t, y)[k as usize - 1];
    }
    phi_raw(k, t, y) / phi0(t, y)
}

/// `Phi^(m)_t(y)`: the `m`-fold iterated integral of `phi_t` for `m >= 1`, its
/// `-m`-th derivative for `m <= 0`.
pub fn phi_iter(m: i64, t: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    Ok(phi_raw(m, t, y))
}

/// `F^k_r(y)`, equal to `Phi^(k)_r(y) / phi_r(y)`.
pub fn f_kernel(k: i64, r: f64, y: f64) -> Result<f64> {
    check_time(r)?;
    Ok(f_raw(k, r, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEval {
    pub value: LogReal,
    pub condition_hint: f64,
}

impl DensityEval {
    pub fn to_f64(&self) -> f64 {
        self.value.to_f64()
    }
}

fn check_density_args(r: f64, x: &[f64], b: &InitialData) -> Result<()> {
    check_time(r)?;
    if x.len() != b.m() {
        return invalid(format!("x has {} coordinates, b has {}", x.len(), b.m()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("x must be finite");
    }
    if x.windows(2).any(|w| w[0] < w[1]) {
        return invalid("x must be non-increasing (x_1 on top)");
    }
    Ok(())
}

/// Entry `(i, j)` is `Phi^(i-j)_r(x_{m-j+1} - b_{m-i+1})`, row-major.
pub fn warren_matrix(r: f64, x: &[f64], b: &InitialData) -> Result<Vec<f64>> {
    check_density_args(r, x, b)?;
    let m = x.len();
    let mut a = vec![0.0; m * m];
    for i in 1..=m {
        for j in 1..=m {
            a[(i - 1) * m + j - 1] = phi_raw(i as i64 - j as i64, r, x[m - j] - b.get(m - i + 1));
        }
    }
    Ok(a)
}

/// The transposed layout: entry `(i, j)` is `Phi^(j-i)_r(x_{m-i+1} - b_{m-j+1})`.
pub fn warren_matrix_transposed(r: f64, x: &[f64], b: &InitialData) -> Result<Vec<f64>> {
    check_density_args(r, x, b)?;
    let m = x.len();
    let mut a = vec![0.0; m * m];
    for i in 1..=m {
        for j in 1..=m {
            a[(i - 1) * m + j - 1] = phi_raw(j as i64 - i as i64, r, x[m - i] - b.get(m - j + 1));
        }
    }
    Ok(a)
}

/// `q_r(x; b)`.
pub fn warren_density(r: f64, x: &[f64], b: &InitialData) -> Result<DensityEval> {
    let m = x.len();
    let d = log_det(warren_matrix(r, x, b)?, m);
    Ok(DensityEval { value: d.value, condition_hint: d.condition_hint })
}

pub fn warren_density_transposed(r: f64, x: &[f64], b: &InitialData) -> Result<DensityEval> {
    let m = x.len();
    let d = log_det(warren_matrix_transposed(r, x, b)?, m);
    Ok(DensityEval { value: d.value, condition_hint: d.condition_hint })
}

/// Density of `(x_1, ..., x_{m-1})` after integrating out the bottom
/// coordinate; requires `m >= 2`. Column 1 becomes `Phi^(i)(x_{m-1} - b_{m-i+1})`.
pub fn warren_density_drop_bottom(r: f64, x_upper: &[f64], b: &InitialData) -> Result<f64> {
    let m = b.m();
    if m < 2 || x_upper.len() != m - 1 {
        return invalid("need m >= 2 and m - 1 upper coordinates");
    }
    warren_density_bottom_cdf(r, x_upper, x_upper[m - 2], b)
}

/// `int_{-inf}^{z} q_r(x_upper, x_m; b) dx_m` for `z <= x_{m-1}`.
pub fn warren_density_bottom_cdf(r: f64, x_upper: &[f64], z: f64, b: &InitialData) -> Result<f64> {
    check_time(r)?;
    let m = b.m();
    if m < 2 || x_upper.len() != m - 1 {
        return invalid("need m >= 2 and m - 1 upper coordinates");
    }
    let z = z.min(x_upper[m - 2]);
    let mut a = vec![0.0; m * m];
    for i in 1..=m {
        let bi = b.get(m - i + 1);
        a[(i - 1) * m] = phi_raw(i as i64, r, z - bi);
        for j in 2..=m {
            a[(i - 1) * m + j - 1] = phi_raw(i as i64 - j as i64, r, x_upper[m - j] - bi);
        }
    }
    Ok(log_det(a, m).value.to_f64())
}

/// `q_r(x; b) / q_r(x; 0)` as the quotient of two density evaluations. The
/// F-kernel form is evaluated alongside and must agree to `1e-8` relative.
pub fn rn_ratio(r: f64, x: &[f64], b: &InitialData) -> Result<LogReal> {
    let (q, f) = rn_ratio_forms(r, x, b)?;
    let rel = q.rel_diff(f);
    if rel > 1e-8 {
        return Err(Error::ContractViolation(format!("ratio forms disagree: rel diff {rel:e} at x={x:?}")));
    }
    Ok(q)
}

/// `(quotient form, F-kernel form)`.
pub fn rn_ratio_forms(r: f64, x: &[f64], b: &InitialData) -> Result<(LogReal, LogReal)> {
    check_density_args(r, x, b)?;
    let m = x.len();
    let num = warren_density(r, x, b)?;
    let den = warren_density(r, x, &InitialData::zeros(m))?;
    if den.value.is_zero() || den.value.sign < 0 || den.condition_hint > CONDITION_LIMIT {
        return Err(Error::NumericalDegeneracy {
            msg: "homogeneous density vanishes or is ill-conditioned".into(),
            condition_hint: den.condition_hint,
        });
    }
    let quotient = num.value / den.value;

    let mut fnum = vec![0.0; m * m];
    let mut fden = vec![0.0; m * m];
    for i in 1..=m {
        let bi = b.get(m - i + 1);
        for j in 1..=m {
            let xj = x[m - j];
            let k = i as i64 - j as i64;
            fnum[(i - 1) * m + j - 1] = (xj * bi / (2.0 * r)).exp() * f_raw(k, r, xj - bi);
            fden[(i - 1) * m + j - 1] = f_raw(k, r, xj);
        }
    }
    let pre = LogReal::from_ln(-b.values().iter().map(|v| v * v).sum::<f64>() / (4.0 * r));
    let fform = pre * log_det(fnum, m).value / log_det(fden, m).value;
    Ok((quotient, fform))
}

/// `H_n((x - b)/s)` against `sum_k C(n,k) H_k(x/s) (-2b/s)^{n-k}`, relative residual.
pub fn hermite_translation_residual(n: usize, x: f64, b: f64, r: f64) -> f64 {
    let s = (4.0 * r).sqrt();
    let lhs = hermite(n, (x - b) / s);
    let rhs: f64 = (0..=n)
        .map(|k| binomial(n as u64, k as u64) * hermite(k, x / s) * (-2.0 * b / s).powi((n - k) as i32))
        .sum();
    let mag: f64 = (0..=n)
        .map(|k| (binomial(n as u64, k as u64) * hermite(k, x / s) * (-2.0 * b / s).powi((n - k) as i32)).abs())
        .sum();
    (lhs - rhs).abs() / mag.max(lhs.abs()).max(f64::MIN_POSITIVE)
}

/// `f[x_1], f[x_1, x_2], ..., f[x_1, ..., x_n]` for strictly increasing nodes.
pub fn divided_differences(f: impl Fn(f64) -> f64, xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return invalid("need at least one node");
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("nodes must be strictly increasing");
    }
    let mut col: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut out = vec![col[0]];
    for d in 1..xs.len() {
        for i in 0..xs.len() - d {
            col[i] = (col[i + 1] - col[i]) / (xs[i + d] - xs[i]);
        }
        out.push(col[0]);
    }
    Ok(out)
}

/// Multi-index with `0 <= k_i <= n - i` (one-based `i`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KVector {
    k: Vec<usize>,
}

impl KVector {
    pub fn new(k: Vec<usize>) -> Result<Self> {
        let n = k.len();
        if let Some(i) = (0..n).find(|&i| k[i] > n - 1 - i) {
            return invalid(format!("k_{} = {} exceeds {}", i + 1, k[i], n - 1 - i));
        }
        Ok(KVector { k })
    }

    pub fn values(&self) -> &[usize] {
        &self.k
    }

    /// All admissible vectors of length `n`, in lexicographic order.
    pub fn all(n: usize) -> Vec<KVector> {
        let mut out = vec![vec![]];
        for i in 0..n {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (0..n - i).map(move |v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out.into_iter().map(|k| KVector { k }).collect()
    }
}

/// `f(x) = H_p(x / s) e^{beta x}` with exact derivatives.
#[derive(Clone, Copy)]
struct HermiteExp {
    p: usize,
    s: f64,
    beta: f64,
}

impl HermiteExp {
    fn value(&self, x: f64) -> f64 {
        hermite(self.p, x / self.s) * (self.beta * x).exp()
    }

    /// `f^(q)(x) / q!`.
    fn taylor_coeff(&self, q: usize, x: f64) -> f64 {
        let y = x / self.s;
        let mut acc = 0.0;
        for a in 0..=q.min(self.p) {
            // d^a/dx^a H_p(x/s) = s^{-a} 2^a p!/(p-a)! H_{p-a}(x/s)
            let dh = (2.0 / self.s).powi(a as i32) * factorial(self.p as u64) / factorial((self.p - a) as u64)
                * hermite(self.p - a, y);
            acc += binomial(q as u64, a as u64) * self.beta.powi((q - a) as i32) * dh;
        }
        acc * (self.beta * x).exp() / factorial(q as u64)
    }
}

/// Complete homogeneous symmetric polynomials `h_0..=h_deg` of `z`.
fn complete_homogeneous(z: &[f64], deg: usize) -> Vec<f64> {
    let mut h = vec![0.0; deg + 1];
    h[0] = 1.0;
    for &v in z {
        for p in 1..=deg {
            h[p] += v * h[p - 1];
        }
    }
    h
}

const CONFLUENT_TERMS: usize = 8;

/// Divided-difference row `f[x_1..x_j]`, `j = 1..n`, for non-decreasing nodes.
/// Blocks of diameter below `1e-6 * scale` use the Taylor expansion of `f`.
fn newton_row(f: &HermiteExp, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let scale = xs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-6 * scale;
    // table[i] holds f[x_i .. x_{i+d}] at level d.
    let mut table: Vec<f64> = xs.iter().map(|&x| f.value(x)).collect();
    let mut out = vec![table[0]];
    for d in 1..n {
        for i in 0..n - d {
            let gap = xs[i + d] - xs[i];
            table[i] = if gap < tol {
                let c = xs[i];
                let z: Vec<f64> = xs[i..=i + d].iter().map(|v| v - c).collect();
                let h = complete_homogeneous(&z, CONFLUENT_TERMS);
                (0..=CONFLUENT_TERMS).map(|p| f.taylor_coeff(d + p, c) * h[p]).sum()
            } else {
                (table[i + 1] - table[i]) / gap
            };
        }
        out.push(table[0]);
    }
    out
}

fn gk_rows(r: f64, b: &InitialData, k: &KVector, x: &[f64]) -> Result<Vec<HermiteExp>> {
    check_time(r)?;
    let n = x.len();
    if b.m() != n || k.values().len() != n {
        return invalid("b, k and x must have equal length");
    }
    if x.windows(2).any(|w| w[0] > w[1]) || x.iter().any(|v| !v.is_finite()) {
        return invalid("x must be finite and non-decreasing");
    }
    let s = (4.0 * r).sqrt();
    Ok((1..=n).map(|i| HermiteExp { p: k.values()[i - 1], s, beta: b.get(n - i + 1) / (2.0 * r) }).collect())
}

/// Signed `det(f_i[x_1..x_j])`.
pub(crate) fn gk_signed(r: f64, b: &InitialData, k: &KVector, x: &[f64]) -> Result<LogReal> {
    let rows = gk_rows(r, b, k, x)?;
    let n = x.len();
    let mut a = Vec::with_capacity(n * n);
    for f in &rows {
        a.extend(newton_row(f, x));
    }
    Ok(log_det(a, n).value)
}

/// `G^k(x) = |det(H_{k_i}(x_j/sqrt(4r)) e^{x_j b_{n-i+1}/2r})| / prod_{i<j}(x_j - x_i)`
/// through divided differences, with a confluent limit at coincident nodes.
pub fn gk_function(r: f64, b: &InitialData, k: &KVector, x: &[f64]) -> Result<LogReal> {
    Ok(gk_signed(r, b, k, x)?.abs())
}

/// The quotient form; nodes must be distinct.
pub fn gk_direct_quotient(r: f64, b: &InitialData, k: &KVector, x: &[f64]) -> Result<LogReal> {
    let rows = gk_rows(r, b, k, x)?;
    if x.windows(2).any(|w| w[0] == w[1]) {
        return invalid("quotient form needs distinct nodes");
    }
    let n = x.len();
    let a: Vec<f64> = rows.iter().flat_map(|f| x.iter().map(move |&v| f.value(v))).collect();
    let mut vander = LogReal::ONE;
    for i in 0..n {
        for j in i + 1..n {
            vander = vander * LogReal::from_f64(x[j] - x[i]);
        }
    }
    Ok((log_det(a, n).value / vander).abs())
}

/// `2^{n^2} (n!)^n 2^{n(n+1)/2} (b_1/2r v 1)^{n^2} exp(n (x_high)_+ b_1 / 2r)
///  <((x_low)_- + (x_high)_+)/sqrt(4r)>^{n^2}`.
pub fn gk_hadamard_bound(r: f64, b: &InitialData, n: usize, x_low: f64, x_high: f64) -> LogReal {
    let nf = n as f64;
    let n2 = nf * nf;
    let b1 = b.get(1);
    let ln2 = std::f64::consts::LN_2;
    let z = ((-x_low).max(0.0) + x_high.max(0.0)) / (4.0 * r).sqrt();
    let log = n2 * ln2
        + nf * crate::special::ln_factorial(n as u64)
        + nf * (nf + 1.0) / 2.0 * ln2
        + n2 * (b1 / (2.0 * r)).max(1.0).ln()
        + nf * x_high.max(0.0) * b1 / (2.0 * r)
        + n2 * crate::special::japanese(z).ln();
    LogReal::from_ln(log)
}

/// Largest size accepted by `nu_integrand`.
pub const NU_MAX_N: usize = 4;

fn nu_prefactor(r: f64, b: &InitialData, x: &[f64]) -> LogReal {
    let n = x.len();
    let mut log = -b.values().iter().map(|v| v * v).sum::<f64>() / (4.0 * r);
    log += (1..=n).map(|i| (i as f64 - n as f64) / 2.0 * (4.0 * r).ln()).sum::<f64>();
    log += x.iter().map(|&v| phi0(r, v).ln()).sum::<f64>();
    let mut out = LogReal::from_ln(log);
    for i in 0..n {
        for j in i + 1..n {
            out = out * LogReal::from_f64(x[j] - x[i]);
        }
    }
    out
}

fn nu_weight(r: f64, b: &InitialData, k: &KVector, signed: bool) -> LogReal {
    let n = b.m();
    let s = (4.0 * r).sqrt();
    let mut w = LogReal::ONE;
    for i in 1..=n {
        let ki = k.values()[i - 1];
        let e = (n - i - ki) as i32;
        let bi = b.get(n - i + 1);
        let base = if signed { -2.0 * bi / s } else { 2.0 * bi.abs() / s };
        let sign = if signed && (n - i) % 2 == 1 { -1.0 } else { 1.0 };
        w = w * LogReal::from_f64(sign * binomial((n - i) as u64, ki as u64) * base.powi(e));
    }
    w
}

/// `prod_i e^{-b_i^2/4r} prod_i (4r)^{(i-n)/2} prod_j phi_r(x_j) prod_{i<j}(x_j - x_i)
///  sum_k G^k(x) prod_i (2|b_{n-i+1}|/sqrt(4r))^{n-i-k_i} C(n-i, k_i)`
/// for non-decreasing `x`.
pub fn nu_integrand(r: f64, b: &InitialData, x: &[f64]) -> Result<LogReal> {
    let n = x.len();
    if n > NU_MAX_N {
        return Err(Error::UnsupportedSize(format!("nu integrand limited to n <= {NU_MAX_N}, got {n}")));
    }
    let mut sum = LogReal::ZERO;
    for k in KVector::all(n) {
        let w = nu_weight(r, b, &k, false);
        if w.is_zero() {
            continue;
        }
        sum = sum + w * gk_function(r, b, &k, x)?;
    }
    Ok(nu_prefactor(r, b, x) * sum)
}

/// The same expansion with signs kept; equals `det(Phi^(i-n)(x_j - b_{n-i+1}))`.
pub fn nu_signed_expansion(r: f64, b: &InitialData, x: &[f64]) -> Result<LogReal> {
    let n = x.len();
    if n > NU_MAX_N {
        return Err(Error::UnsupportedSize(format!("nu integrand limited to n <= {NU_MAX_N}, got {n}")));
    }
    let mut sum = LogReal::ZERO;
    for k in KVector::all(n) {
        let w = nu_weight(r, b, &k, true);
        if w.is_zero() {
            continue;
        }
        sum = sum + w * gk_signed(r, b, &k, x)?;
    }
    Ok(nu_prefactor(r, b, x) * sum)
}

/// `det(Phi^(i-n)(x_j - b_{n-i+1}))` for non-decreasing `x`.
pub fn top_row_determinant(r: f64, b: &InitialData, x: &[f64]) -> Result<LogReal> {
    check_time(r)?;
    let n = x.len();
    if b.m() != n {
        return invalid("b and x must have equal length");
    }
    let mut a = vec![0.0; n * n];
    for i in 1..=n {
        for j in 1..=n {
            a[(i - 1) * n + j - 1] = phi_raw(i as i64 - n as i64, r, x[j - 1] - b.get(n - i + 1));
        }
    }
    Ok(log_det(a, n).value)
}

/// `mu^n_t(x) = (2 pi)^{-n/2} (2t)^{-n^2/2} exp(-|x|^2/4t) prod_{i<j}(x_j - x_i)`
/// for non-decreasing `x`.
pub fn gt_entrance_density(n: usize, t: f64, x_top: &[f64]) -> Result<f64> {
    check_time(t)?;
    if x_top.len() != n || n == 0 {
        return invalid(format!("expected {n} coordinates"));
    }
    if x_top.windows(2).any(|w| w[0] > w[1]) {
        return invalid("x must be non-decreasing");
    }
    let nf = n as f64;
    let mut log = -nf / 2.0 * (2.0 * std::f64::consts::PI).ln() - nf * nf / 2.0 * (2.0 * t).ln()
        - x_top.iter().map(|v| v * v).sum::<f64>() / (4.0 * t);
    let mut sign = 1.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = x_top[j] - x_top[i];
            if d == 0.0 {
                return Ok(0.0);
            }
            sign *= d.signum();
            log += d.abs().ln();
        }
    }
    Ok(sign * log.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::RngSpec;
    use crate::quad::{integrate, integrate_tol};
    use proptest::prelude::*;
    use rand::Rng;

    fn phi_by_quadrature(m: i64, t: f64, y: f64) -> f64 {
        // int_0^inf z^{m-1}/(m-1)! phi_t(z - y) dz
        let hi = y.max(0.0) + 40.0 * t.sqrt() + 10.0;
        integrate_tol(
            |z| z.powi(m as i32 - 1) / factorial(m as u64 - 1) * phi0(t, z - y),
            0.0,
            hi,
            1e-14,
            0.0,
        )
        .value
    }

    #[test]
    fn heat_kernel_basics() {
        assert!((phi_gauss(0.5, 0.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(phi_gauss(1.3, 0.7).unwrap(), phi_gauss(1.3, -0.7).unwrap());
        assert!(phi_gauss(0.0, 1.0).is_err());
        assert!(phi_iter(1, -1.0, 1.0).is_err());
        assert!(f_kernel(1, 0.0, 1.0).is_err());
        let total = integrate(|y| phi0(0.8, y), -40.0, 40.0, 1e-13);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn phi_simple_values() {
        assert!((phi_iter(1, 0.7, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(phi_iter(-1, 0.7, 0.0).unwrap(), 0.0);
        assert_eq!(phi_iter(0, 0.7, 0.3).unwrap(), phi0(0.7, 0.3));
    }

    #[test]
    fn recurrence_matches_quadrature() {
        for &t in &[0.3, 1.0, 3.0] {
            for m in 1..=10 {
                for &y in &[-6.0, -3.0, -1.2, -0.4, 0.0, 0.7, 2.5, 5.0] {
                    let q = phi_by_quadrature(m, t, y);
                    let v = phi_iter(m, t, y).unwrap();
                    assert!((v - q).abs() <= 1e-10 * q.abs(), "m={m} t={t} y={y}: {v} vs {q}");
                }
            }
        }
        let q = phi_by_quadrature(3, 1.0, 0.7);
        assert!((phi_iter(3, 1.0, 0.7).unwrap() - q).abs() <= 1e-10 * q);
    }

    #[test]
    fn f_kernel_values() {
        for &r in &[0.5, 1.0, 2.0] {
            assert_eq!(f_kernel(0, r, 1.7).unwrap(), 1.0);
            assert!((f_kernel(1, r, 0.0).unwrap() - (std::f64::consts::PI * r).sqrt()).abs() < 1e-14);
            for k in -4..=4 {
                for &y in &[-7.0, -2.0, -0.3, 0.0, 0.8, 3.0] {
                    let lhs = f_kernel(k, r, y).unwrap() * phi0(r, y);
                    let rhs = phi_iter(k, r, y).unwrap();
                    assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300), "k={k} r={r} y={y}");
                }
            }
        }
        // Positive orders against the defining integral at strongly negative y.
        for k in 1..=8 {
            let y = -9.0;
            let q = integrate_tol(
                |z| z.powi(k - 1) / factorial(k as u64 - 1) * (-z * z / 4.0 + y * z / 2.0).exp(),
                0.0,
                30.0,
                1e-14,
                0.0,
            )
            .value;
            let v = f_kernel(k as i64, 1.0, y).unwrap();
            assert!((v - q).abs() <= 1e-10 * q, "k={k}: {v} vs {q}");
        }
    }

    #[test]
    fn derivative_ladder() {
        for m in -3..=4 {
            for &y in &[-2.5, -0.6, 0.0, 0.4, 1.9] {
                let t = 0.9;
                let h = 1e-4;
                let fd = (phi_raw(m, t, y + h) - phi_raw(m, t, y - h)) / (2.0 * h);
                let exact = phi_raw(m - 1, t, y);
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "m={m} y={y}");
            }
        }
    }

    #[test]
    fn one_by_one_density() {
        let b = InitialData::zeros(1);
        let d = warren_density(0.5, &[0.0], &b).unwrap();
        assert!((d.to_f64() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(d.condition_hint >= 1.0);
        let b = InitialData::new(vec![0.4]).unwrap();
        assert!((warren_density(1.0, &[1.1], &b).unwrap().to_f64() - phi0(1.0, 0.7)).abs() < 1e-16);
    }

    #[test]
    fn density_argument_checks() {
        let b = InitialData::zeros(2);
        assert!(warren_density(1.0, &[0.0], &b).is_err());
        assert!(warren_density(1.0, &[0.0, 1.0], &b).is_err());
        assert!(warren_density(0.0, &[1.0, 0.0], &b).is_err());
    }

    #[test]
    fn transpose_invariance() {
        let mut rng = RngSpec::new(8, 0).rng();
        for _ in 0..200 {
            let m = rng.random_range(1..=5);
            let mut x: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            x.sort_by(|a, b| b.total_cmp(a));
            let mut g: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            g.sort_by(|a, b| b.total_cmp(a));
            let b = InitialData::new(g).unwrap();
            let r = rng.random_range(0.5..2.0);
            let a = warren_density(r, &x, &b).unwrap().value;
            let t = warren_density_transposed(r, &x, &b).unwrap().value;
            assert!(a.rel_diff(t) <= 1e-12);
        }
    }

    #[test]
    fn drop_bottom_matches_quadrature() {
        let b = InitialData::new(vec![1.0, 0.3, 0.0]).unwrap();
        let x = [1.2, 0.1];
        let q = integrate(|z| warren_density(0.8, &[x[0], x[1], z], &b).unwrap().to_f64(), -30.0, x[1], 1e-12);
        let v = warren_density_drop_bottom(0.8, &x, &b).unwrap();
        assert!((v - q).abs() <= 1e-9 * q);
        for zc in [-1.5, -0.2, 0.05] {
            let q = integrate(|z| warren_density(0.8, &[x[0], x[1], z], &b).unwrap().to_f64(), -30.0, zc, 1e-12);
            let v = warren_density_bottom_cdf(0.8, &x, zc, &b).unwrap();
            assert!((v - q).abs() <= 1e-9 * q, "{zc}");
        }
    }

    #[test]
    fn ratio_trivial_and_cross_form() {
        let z = InitialData::zeros(3);
        let (q, f) = rn_ratio_forms(1.0, &[1.0, 0.2, -0.5], &z).unwrap();
        assert!((q.to_f64() - 1.0).abs() < 1e-15);
        assert!((f.to_f64() - 1.0).abs() < 1e-12);
        let mut rng = RngSpec::new(9, 0).rng();
        for _ in 0..500 {
            let m = rng.random_range(1..=4);
            let mut x: Vec<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
            x.sort_by(|a, b| b.total_cmp(a));
            let mut g: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            g.sort_by(|a, b| b.total_cmp(a));
            let b = InitialData::new(g).unwrap();
            if let Ok(v) = rn_ratio(1.0, &x, &b) {
                assert!(v.sign >= 0);
            }
        }
    }

    #[test]
    fn hermite_translation() {
        for n in 0..=10 {
            for &(x, b) in &[(0.3, 1.0), (-2.0, 0.5), (4.0, 2.0), (1.0, 0.0)] {
                assert!(hermite_translation_residual(n, x, b, 0.7) <= 1e-10);
            }
        }
    }

    #[test]
    fn divided_difference_examples() {
        let d = divided_differences(|_| 3.0, &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!(d, vec![3.0, 0.0, 0.0]);
        let d = divided_differences(|x| x * x, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 1.0]);
        let d = divided_differences(|x| 2.0 * x * x * x - x + 1.0, &[-1.0, 0.3, 0.5, 2.0]).unwrap();
        assert!((d[3] - 2.0).abs() < 1e-12);
        assert!(divided_differences(|x| x, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn kvectors() {
        assert_eq!(KVector::all(3).len(), 6);
        assert!(KVector::new(vec![2, 1, 0]).is_ok());
        assert!(KVector::new(vec![0, 2, 0]).is_err());
        assert!(KVector::all(4).iter().all(|k| KVector::new(k.values().to_vec()).is_ok()));
    }

    #[test]
    fn gk_small_cases() {
        let b = InitialData::new(vec![0.6]).unwrap();
        let k = KVector::new(vec![0]).unwrap();
        let g = gk_function(1.0, &b, &k, &[0.8]).unwrap().to_f64();
        assert!((g - (0.8f64 * 0.6 / 2.0).exp()).abs() < 1e-14);

        let b = InitialData::new(vec![1.3, 0.0]).unwrap();
        for k in KVector::all(2) {
            let x = [-0.7, 1.1];
            let a = gk_function(0.8, &b, &k, &x).unwrap();
            let d = gk_direct_quotient(0.8, &b, &k, &x).unwrap();
            assert!(a.rel_diff(d) < 1e-8);
        }
    }

    #[test]
    fn gk_confluent_limit() {
        let b = InitialData::new(vec![1.3, 0.0]).unwrap();
        let k = KVector::new(vec![1, 0]).unwrap();
        let at = |gap: f64| gk_function(0.8, &b, &k, &[0.4, 0.4 + gap]).unwrap().to_f64();
        let limit = at(0.0);
        // Richardson extrapolation of the distinct-node values to gap 0.
        for &h in &[1e-2, 1e-3, 1e-4, 1e-5] {
            let extrap = 2.0 * at(h / 2.0) - at(h);
            assert!((extrap - limit).abs() <= (1e-6 + 10.0 * h * h) * limit.abs(), "h={h}");
        }
        let b3 = InitialData::new(vec![2.0, 1.0, 0.0]).unwrap();
        let k3 = KVector::new(vec![2, 1, 0]).unwrap();
        let tie = gk_function(1.0, &b3, &k3, &[0.5, 0.5, 0.5]).unwrap().to_f64();
        let near = gk_function(1.0, &b3, &k3, &[0.5, 0.5 + 1e-3, 0.5 + 2e-3]).unwrap().to_f64();
        assert!((tie - near).abs() <= 1e-2 * tie.abs());
    }

    #[test]
    fn gk_bound_dominates() {
        let mut rng = RngSpec::new(10, 0).rng();
        for _ in 0..2000 {
            let n = rng.random_range(1..=5);
            let r = rng.random_range(0.5..2.0);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            x.sort_by(f64::total_cmp);
            let mut g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            g.sort_by(|a, b| b.total_cmp(a));
            g[n - 1] = 0.0;
            let b = InitialData::new(g).unwrap();
            let ks = KVector::all(n);
            let k = &ks[rng.random_range(0..ks.len())];
            let val = gk_function(r, &b, k, &x).unwrap();
            let bound = gk_hadamard_bound(r, &b, n, x[0], x[n - 1]);
            assert!(val.ln_abs() <= bound.ln_abs());
        }
        let one = gk_hadamard_bound(1.0, &InitialData::zeros(1), 1, 0.0, 0.0).to_f64();
        assert!(one >= 1.0);
    }

    #[test]
    fn gk_bound_monotone() {
        let b = InitialData::new(vec![1.0, 0.5, 0.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let v = gk_hadamard_bound(1.0, &b, 3, -1.0, i as f64 * 0.3).ln_abs();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let b = InitialData::new(vec![i as f64 * 0.4, 0.0]).unwrap();
            let v = gk_hadamard_bound(1.0, &b, 2, -1.0, 1.0).ln_abs();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn nu_cases() {
        let z1 = InitialData::zeros(1);
        for &x in &[-1.0, 0.0, 2.2] {
            let v = nu_integrand(0.9, &z1, &[x]).unwrap().to_f64();
            assert!((v - phi0(0.9, x)).abs() < 1e-15);
        }
        let z2 = InitialData::zeros(2);
        let mut rng = RngSpec::new(11, 0).rng();
        let mut ratio = None;
        for _ in 0..1000 {
            let mut x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            x.sort_by(f64::total_cmp);
            if x[1] - x[0] < 1e-3 {
                continue;
            }
            let q = nu_integrand(1.0, &z2, &x).unwrap().to_f64() / gt_entrance_density(2, 1.0, &x).unwrap();
            let r0 = *ratio.get_or_insert(q);
            assert!((q - r0).abs() <= 1e-12 * r0);
        }
        assert!(matches!(nu_integrand(1.0, &InitialData::zeros(5), &[0.0; 5]), Err(Error::UnsupportedSize(_))));
    }

    #[test]
    fn nu_expansion_is_exact_and_dominates() {
        let mut rng = RngSpec::new(12, 0).rng();
        for _ in 0..300 {
            let n = rng.random_range(2..=3);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            x.sort_by(f64::total_cmp);
            let mut g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            g.sort_by(|a, b| b.total_cmp(a));
            g[n - 1] = 0.0;
            let b = InitialData::new(g).unwrap();
            let det = top_row_determinant(0.8, &b, &x).unwrap();
            let signed = nu_signed_expansion(0.8, &b, &x).unwrap();
            let scale = nu_integrand(0.8, &b, &x).unwrap();
            assert!((det.to_f64() - signed.to_f64()).abs() <= 1e-9 * scale.to_f64());
            assert!(det.abs().ln_abs() <= scale.ln_abs() + 1e-12);
        }
    }

    #[test]
    fn entrance_density() {
        for &x in &[-1.0, 0.5] {
            assert!((gt_entrance_density(1, 1.7, &[x]).unwrap() - phi0(1.7, x)).abs() < 1e-16);
        }
        assert!(gt_entrance_density(2, 1.0, &[1.0, 0.0]).is_err());
        assert!(gt_entrance_density(3, 1.0, &[-1.0, 0.0, 2.0]).unwrap() > 0.0);
    }

    #[test]
    fn diagonal_identity_at_one_point() {
        // q_1((x1, x2); 0) = int_{-inf}^{x2} mu^2_1(a, x1) da
        let z = InitialData::zeros(2);
        let (x1, x2) = (0.9, -0.2);
        let q = warren_density(1.0, &[x1, x2], &z).unwrap().to_f64();
        let i = integrate(|a| gt_entrance_density(2, 1.0, &[a, x1]).unwrap(), -40.0, x2, 1e-13);
        assert!((q - i).abs() <= 1e-9 * q);
    }

    proptest! {
        #[test]
        fn density_positive_inside(x1 in -4.0f64..4.0, d1 in 1e-3f64..3.0, d2 in 1e-3f64..3.0, r in 0.5f64..2.0, b1 in 0.0f64..2.0) {
            let b = InitialData::new(vec![b1 + 0.5, b1, 0.0]).unwrap();
            let x = [x1, x1 - d1, x1 - d1 - d2];
            prop_assert!(warren_density(r, &x, &b).unwrap().value.sign > 0);
        }
    }
}
