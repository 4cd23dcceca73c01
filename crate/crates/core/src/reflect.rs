//! Skorokhod reflection and Brownian TASEP.
//!
//! `skorokhod_reflect(f1, f2)` pushes `f1` up by the running maximal excess of
//! `f2` over it; `w_bottom` is the Pitman partner. Brownian TASEP reflects each
//! line off the already-built line below it, bottom-up.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lpp::lpp_profile;
use crate::paths::{fmt_f64, sample_ensemble, Ensemble, RngSpec, SampledPath, TimeGrid};

/// Non-increasing starting values `g_1 >= ... >= g_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    g: Vec<f64>,
}

impl InitialData {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if g.is_empty() {
            return invalid("initial data must be nonempty");
        }
        if g.iter().any(|x| !x.is_finite()) {
            return invalid("initial data must be finite");
        }
        if g.windows(2).any(|w| w[0] < w[1]) {
            return invalid(format!("initial data must be non-increasing: {g:?}"));
        }
        Ok(InitialData { g })
    }

    pub fn zeros(m: usize) -> Self {
        InitialData { g: vec![0.0; m.max(1)] }
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    /// One-based.
    pub fn get(&self, k: usize) -> f64 {
        self.g[k - 1]
    }

    /// `g_m = 0`.
    pub fn is_anchored(&self) -> bool {
        *self.g.last().unwrap() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionOutput {
    pub w_top: SampledPath,
    pub w_bottom: SampledPath,
    pub alpha: SampledPath,
}

pub fn skorokhod_reflect(f1: &SampledPath, f2: &SampledPath) -> Result<ReflectionOutput> {
    if f1.grid != f2.grid {
        return invalid("reflection needs a shared grid");
    }
    let n = f1.values.len();
    let mut alpha = Vec::with_capacity(n);
    let mut a = 0.0f64;
    for (x1, x2) in f1.values.iter().zip(&f2.values) {
        a = a.max(x2 - x1);
        alpha.push(a);
    }
    // The max only guards against a one-ulp undershoot of `f2`.
    let w_top = f1.values.iter().zip(&alpha).zip(&f2.values).map(|((x, a), y)| (x + a).max(*y)).collect();
    let w_bottom = f2.values.iter().zip(&alpha).map(|(x, a)| x - a).collect();
    let grid = f1.grid;
    Ok(ReflectionOutput {
        w_top: SampledPath { grid, values: w_top },
        w_bottom: SampledPath { grid, values: w_bottom },
        alpha: SampledPath { grid, values: alpha },
    })
}

fn check_tasep_inputs(b: &Ensemble, g: &InitialData) -> Result<()> {
    if b.m() != g.m() {
        return invalid(format!("ensemble has {} lines, initial data {}", b.m(), g.m()));
    }
    if b.lines.iter().any(|l| l.first() != 0.0) {
        return invalid("driving ensemble must start at the origin");
    }
    Ok(())
}

/// Iterated reflection: `H_m = g_m + B_m`, `H_k = top(reflect(g_k + B_k, H_{k+1}))`.
pub fn brownian_tasep(b: &Ensemble, g: &InitialData) -> Result<Ensemble> {
    check_tasep_inputs(b, g)?;
    let m = b.m();
    let shifted = |k: usize| SampledPath { grid: b.grid, values: b.line(k).values.iter().map(|x| g.get(k) + x).collect() };
    let mut h = vec![shifted(m)];
    for k in (1..m).rev() {
        let top = skorokhod_reflect(&shifted(k), h.last().unwrap())?.w_top;
        h.push(top);
    }
    h.reverse();
    Ensemble::new(h)
}

/// Direct route: `H_k(y) = max_{k <= l <= m} (g_l + lpp((0,l) -> (y,k)))`.
pub fn tasep_via_lpp(b: &Ensemble, g: &InitialData) -> Result<Ensemble> {
    check_tasep_inputs(b, g)?;
    let m = b.m();
    let n = b.grid.len();
    let mut h = vec![vec![f64::NEG_INFINITY; n]; m];
    for l in 1..=m {
        let prof = lpp_profile(b, l)?;
        for k in 1..=l {
            for (dst, v) in h[k - 1].iter_mut().zip(&prof.line(k).values) {
                *dst = dst.max(g.get(l) + v);
            }
        }
    }
    Ensemble::new(h.into_iter().map(|values| SampledPath { grid: b.grid, values }).collect())
}

/// Draws a driving ensemble of rate-two Brownian motions from the origin and
/// runs the reflection construction.
pub fn simulate_tasep(grid: TimeGrid, g: &InitialData, rng: &RngSpec) -> Result<(Ensemble, Ensemble)> {
    let b = sample_ensemble(grid, &vec![0.0; g.m()], 2.0, rng)?;
    let h = brownian_tasep(&b, g)?;
    Ok((b, h))
}

/// `alphas[j]` is the push `H_{j+1} - B_{j+1} - H_{j+1}(t0)` received by line
/// `j + 1` from line `j + 2`; `support_residuals[j]` is the largest gap
/// `H_{j+1} - H_{j+2}` at the left end of a step where that push grows by more
/// than `INCREASE_THRESHOLD`. `first_meeting[j]` is the first grid time the push
/// is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDecomposition {
    pub alphas: Vec<SampledPath>,
    pub support_residuals: Vec<f64>,
    pub first_meeting: Vec<Option<f64>>,
}

pub const INCREASE_THRESHOLD: f64 = 1e-9;

pub fn extract_alpha(h: &Ensemble, b: &Ensemble) -> Result<AlphaDecomposition> {
    if h.m() != b.m() || h.grid != b.grid {
        return invalid("H and B must share line count and grid");
    }
    let m = h.m();
    let scale = 1.0
        + h.lines.iter().chain(&b.lines).flat_map(|l| l.values.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    let slack = 1e-12 * scale;
    let mut out = AlphaDecomposition { alphas: vec![], support_residuals: vec![], first_meeting: vec![] };
    for k in 1..m {
        let hk = &h.line(k).values;
        let below = &h.line(k + 1).values;
        let bk = &b.line(k).values;
        let a: Vec<f64> = hk.iter().zip(bk).map(|(x, y)| x - y - hk[0]).collect();
        let mut resid = 0.0f64;
        for j in 1..a.len() {
            let inc = a[j] - a[j - 1];
            if inc < -slack {
                return Err(Error::ContractViolation(format!(
                    "alpha on line {k} decreases by {} at step {j}",
                    -inc
                )));
            }
            if inc > INCREASE_THRESHOLD {
                resid = resid.max(hk[j - 1] - below[j - 1]);
            }
        }
        let meet = a.iter().position(|&x| x > slack).map(|j| h.grid.point(j));
        out.alphas.push(SampledPath { grid: h.grid, values: a });
        out.support_residuals.push(resid);
        out.first_meeting.push(meet);
    }
    Ok(out)
}

/// Incremental reflection state: feeds Brownian increments one grid step at a
/// time and keeps only the current values.
#[derive(Debug, Clone)]
pub struct TasepStream {
    g: Vec<f64>,
    alpha: Vec<f64>,
    h: Vec<f64>,
}

impl TasepStream {
    pub fn new(g: &InitialData) -> Self {
        let m = g.m();
        let mut s = TasepStream { g: g.values().to_vec(), alpha: vec![0.0; m], h: vec![0.0; m] };
        s.update(&vec![0.0; m]);
        s
    }

    /// Recompute `H` from the driving values `b` at the current time.
    pub fn update(&mut self, b: &[f64]) {
        let m = self.g.len();
        self.h[m - 1] = self.g[m - 1] + b[m - 1];
        for k in (0..m - 1).rev() {
            let f1 = self.g[k] + b[k];
            self.alpha[k] = self.alpha[k].max(self.h[k + 1] - f1);
            self.h[k] = (f1 + self.alpha[k]).max(self.h[k + 1]);
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }
}

/// Terminal values `H(t1)` for several coarsenings of one fine driving ensemble.
/// `factors[i]` must divide `grid.n_steps`; entry `i` of the result is the TASEP
/// built on every `factors[i]`-th fine grid point. Increments are drawn
/// time-major (all lines for step 1, then step 2, ...).
pub fn tasep_terminal_multilevel(grid: TimeGrid, g: &InitialData, rng: &mut ChaCha8Rng, factors: &[usize]) -> Result<Vec<Vec<f64>>> {
    if factors.iter().any(|&q| q == 0 || !grid.n_steps.is_multiple_of(q)) {
        return invalid("coarsening factors must divide the step count");
    }
    let m = g.m();
    let sd = (2.0 * grid.delta()).sqrt();
    let mut b = vec![0.0; m];
    let mut streams: Vec<TasepStream> = factors.iter().map(|_| TasepStream::new(g)).collect();
    for j in 1..=grid.n_steps {
        for x in b.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
        for (s, &q) in streams.iter_mut().zip(factors) {
            if j % q == 0 {
                s.update(&b);
            }
        }
    }
    Ok(streams.into_iter().map(|s| s.h).collect())
}

pub fn tasep_terminal(grid: TimeGrid, g: &InitialData, rng: &mut ChaCha8Rng) -> Vec<f64> {
    tasep_terminal_multilevel(grid, g, rng, &[1]).unwrap().pop().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthKind {
    Fixed,
    TruncatedCubicTail,
}

/// Law of the random depth `L_0`. `Fixed` puts all mass on `max_depth`;
/// `TruncatedCubicTail` has `P(L_0 >= k) = exp(-c (k^3 - 1))` for `k <= max_depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLaw {
    pub kind: DepthKind,
    pub max_depth: usize,
    pub c: f64,
}

impl DepthLaw {
    pub fn fixed(depth: usize) -> Result<Self> {
        DepthLaw { kind: DepthKind::Fixed, max_depth: depth, c: 1.0 }.validated()
    }

    pub fn cubic_tail(max_depth: usize, c: f64) -> Result<Self> {
        DepthLaw { kind: DepthKind::TruncatedCubicTail, max_depth, c }.validated()
    }

    fn validated(self) -> Result<Self> {
        if self.max_depth < 1 {
            return invalid("max depth must be at least 1");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return invalid("tail rate must be positive");
        }
        Ok(self)
    }

    /// `weights[k - 1] = P(L_0 = k)`.
    pub fn weights(&self) -> Vec<f64> {
        match self.kind {
            DepthKind::Fixed => {
                let mut w = vec![0.0; self.max_depth];
                w[self.max_depth - 1] = 1.0;
                w
            }
            DepthKind::TruncatedCubicTail => {
                let surv = |k: usize| (-self.c * ((k * k * k) as f64 - 1.0)).exp();
                (1..=self.max_depth)
                    .map(|k| if k == self.max_depth { surv(k) } else { surv(k) - surv(k + 1) })
                    .collect()
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let w = self.weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        self.max_depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub depth: usize,
    pub path: SampledPath,
}

/// Draws `L_0`, then initial data of that length, then returns the top line of
/// the depth-`L_0` TASEP. All randomness comes from the one stream in `rng`.
pub fn sample_random_depth_blpp<G>(depth: &DepthLaw, g_gen: G, grid: TimeGrid, rng: &RngSpec) -> Result<DepthSample>
where
    G: Fn(usize, &mut ChaCha8Rng) -> Vec<f64>,
{
    let mut r = rng.rng();
    let l0 = depth.sample(&mut r);
    let g = InitialData::new(g_gen(l0, &mut r))?;
    if g.m() != l0 {
        return invalid(format!("generator returned {} values for depth {l0}", g.m()));
    }
    let sd = (2.0 * grid.delta()).sqrt();
    let mut b = Vec::with_capacity(l0);
    for _ in 0..l0 {
        let mut values = vec![0.0; grid.len()];
        crate::paths::fill_bm(&mut r, sd, 0.0, &mut values);
        b.push(SampledPath { grid, values });
    }
    let h = brownian_tasep(&Ensemble::new(b)?, &g)?;
    Ok(DepthSample { depth: l0, path: h.lines.into_iter().next().unwrap() })
}

/// CSV rows `replicate,t,H1,...,Hm`.
pub fn write_simulation_csv<W: Write>(mut w: W, replicates: &[Ensemble]) -> std::io::Result<()> {
    let m = replicates.first().map_or(0, |e| e.m());
    write!(w, "replicate,t")?;
    for k in 1..=m {
        write!(w, ",H{k}")?;
    }
    writeln!(w)?;
    for (r, e) in replicates.iter().enumerate() {
        for j in 0..e.grid.len() {
            write!(w, "{r},{}", fmt_f64(e.grid.point(j)))?;
            for l in &e.lines {
                write!(w, ",{}", fmt_f64(l.values[j]))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
