//! Checks of the densities against quadrature identities and against
//! simulation, with grid-refinement control of the discretization bias.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{gt_entrance_density, phi_iter, rn_ratio, rn_ratio_forms, warren_density, warren_density_bottom_cdf, warren_density_drop_bottom};
use crate::error::{invalid, Error, Result};
use crate::paths::{RngSpec, TimeGrid};
use crate::quad::integrate_tol;
use crate::reflect::{tasep_terminal_multilevel, InitialData};
use crate::stats::{chi_square_test, ks_statistic, ks_test, ChiSquareReport, KSReport};

const NESTED_TOL: f64 = 1e-10;

fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    integrate_tol(f, a, b, rel, 1e-300).value
}

/// Integration window `[min b - 12 sqrt(2r), max b + 12 sqrt(2r)]`.
pub fn truncation(r: f64, b: &InitialData) -> (f64, f64) {
    let w = 12.0 * (2.0 * r).sqrt();
    (b.get(b.m()) - w, b.get(1) + w)
}

/// `int f(prefix, x_k, ..., x_d)` over `lo <= x_d <= ... <= x_k <= prefix.last()`.
fn nested_ordered(f: &dyn Fn(&[f64]) -> f64, prefix: &[f64], remaining: usize, lo: f64, rel: f64) -> f64 {
    if remaining == 0 {
        return f(prefix);
    }
    let hi = *prefix.last().expect("nonempty prefix");
    quad(
        |t| {
            let mut p = prefix.to_vec();
            p.push(t);
            nested_ordered(f, &p, remaining - 1, lo, rel)
        },
        lo,
        hi,
        rel,
    )
}

/// Density of `H_1(r)`: the bottom coordinate is integrated in closed form,
/// the middle ones by nested adaptive quadrature.
pub fn top_marginal_density(r: f64, b: &InitialData, x1: f64) -> Result<f64> {
    let m = b.m();
    if m == 1 {
        return phi_iter(0, r, x1 - b.get(1));
    }
    let (lo, _) = truncation(r, b);
    let f = |x: &[f64]| warren_density_drop_bottom(r, x, b).unwrap_or(f64::NAN);
    Ok(nested_ordered(&f, &[x1], m - 2, lo, NESTED_TOL))
}

/// `int q_r(x; b) dx` over the ordered region.
pub fn normalization(r: f64, b: &InitialData) -> Result<f64> {
    if !(r > 0.0) {
        return invalid("r must be positive");
    }
    let (lo, hi) = truncation(r, b);
    Ok(quad(|x1| top_marginal_density(r, b, x1).unwrap_or(f64::NAN), lo, hi, NESTED_TOL))
}

/// CDF of `H_1(r)` tabulated on a uniform grid and interpolated by cubic
/// Hermite splines using the density as the derivative.
#[derive(Debug, Clone)]
pub struct TopMarginalCdf {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl TopMarginalCdf {
    pub fn build(r: f64, b: &InitialData, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return invalid("need at least two nodes");
        }
        let (lo, hi) = truncation(r, b);
        let h = (hi - lo) / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|i| lo + h * i as f64).collect();
        let density = crate::exec::map_slice(&nodes, |&x| top_marginal_density(r, b, x));
        let density: Vec<f64> = density.into_iter().collect::<Result<_>>()?;
        let pieces = crate::exec::map_indices(n_nodes - 1, |i| {
            quad(|x| top_marginal_density(r, b, x).unwrap_or(f64::NAN), nodes[i], nodes[i + 1], 1e-11)
        });
        let mut cdf = vec![0.0; n_nodes];
        for i in 1..n_nodes {
            cdf[i] = cdf[i - 1] + pieces[i - 1];
        }
        Ok(TopMarginalCdf { nodes, cdf, density })
    }

    /// Total mass on the window (one up to truncation and quadrature error).
    pub fn total(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn eval(&self, z: f64) -> f64 {
        let n = self.nodes.len();
        if z <= self.nodes[0] {
            return 0.0;
        }
        if z >= self.nodes[n - 1] {
            return self.total();
        }
        let h = self.nodes[1] - self.nodes[0];
        let i = (((z - self.nodes[0]) / h) as usize).min(n - 2);
        let t = (z - self.nodes[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * self.cdf[i]
            + (t3 - 2.0 * t2 + t) * h * self.density[i]
            + (-2.0 * t3 + 3.0 * t2) * self.cdf[i + 1]
            + (t3 - t2) * h * self.density[i + 1];
        v.clamp(0.0, 1.0)
    }

    /// Smallest `z` with `eval(z) >= p`, by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut a, mut b) = (self.nodes[0], *self.nodes.last().unwrap());
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if self.eval(mid) < p {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Equal-probability cells for a two-line density: rows are quantile bins of
/// `x_1`, and within row `i` the columns are conditional quantile bins of `x_2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointBins {
    pub x1_edges: Vec<f64>,
    pub x2_edges: Vec<Vec<f64>>,
    pub cell_mass: Vec<Vec<f64>>,
}

impl JointBins {
    pub fn build(r: f64, b: &InitialData, bins: usize, marginal: &TopMarginalCdf) -> Result<Self> {
        if b.m() != 2 {
            return Err(Error::UnsupportedSize("joint bins implemented for m = 2".into()));
        }
        let (lo, hi) = truncation(r, b);
        let total = marginal.total();
        let mut x1_edges = vec![lo];
        x1_edges.extend((1..bins).map(|i| marginal.quantile(total * i as f64 / bins as f64)));
        x1_edges.push(hi);
        let rows = crate::exec::map_indices(bins, |i| -> Result<(Vec<f64>, Vec<f64>)> {
            let (a, c) = (x1_edges[i], x1_edges[i + 1]);
            let mass_below = |z: f64| {
                quad(|x1| warren_density_bottom_cdf(r, &[x1], z, b).unwrap_or(f64::NAN), a.max(z.min(c)).min(c), c, 1e-10)
                    + quad(|x1| warren_density_drop_bottom(r, &[x1], b).unwrap_or(f64::NAN), a, z.min(c), 1e-10)
            };
            let row_mass = mass_below(c);
            let mut edges = vec![lo];
            let mut prev = 0.0;
            let mut masses = Vec::with_capacity(bins);
            for j in 1..bins {
                let target = row_mass * j as f64 / bins as f64;
                let (mut za, mut zb) = (lo, c);
                for _ in 0..50 {
                    let mid = 0.5 * (za + zb);
                    if mass_below(mid) < target {
                        za = mid;
                    } else {
                        zb = mid;
                    }
                }
                let z = 0.5 * (za + zb);
                let here = mass_below(z);
                masses.push(here - prev);
                prev = here;
                edges.push(z);
            }
            masses.push(row_mass - prev);
            edges.push(c);
            Ok((edges, masses))
        });
        let mut x2_edges = Vec::with_capacity(bins);
        let mut cell_mass = Vec::with_capacity(bins);
        for row in rows {
            let (e, m) = row?;
            x2_edges.push(e);
            cell_mass.push(m);
        }
        Ok(JointBins { x1_edges, x2_edges, cell_mass })
    }

    fn locate(edges: &[f64], x: f64) -> usize {
        let k = edges.partition_point(|&e| e <= x);
        k.clamp(1, edges.len() - 1) - 1
    }

    pub fn cell(&self, x1: f64, x2: f64) -> (usize, usize) {
        let i = Self::locate(&self.x1_edges, x1);
        (i, Self::locate(&self.x2_edges[i], x2))
    }

    /// Pearson test of the samples against the cell masses.
    pub fn chi_square(&self, samples: &[(f64, f64)]) -> Result<ChiSquareReport> {
        let bins = self.x1_edges.len() - 1;
        let mut obs = vec![0.0; bins * bins];
        for &(a, b) in samples {
            let (i, j) = self.cell(a, b);
            obs[i * bins + j] += 1.0;
        }
        let n = samples.len() as f64;
        let exp: Vec<f64> = self.cell_mass.iter().flatten().map(|p| p * n).collect();
        chi_square_test(&obs, &exp, 0)
    }
}

/// Statistics of one check recomputed on a sequence of dyadic grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSeries {
    pub grid_sizes: Vec<usize>,
    pub statistics: Vec<f64>,
}

impl RefinementSeries {
    pub fn new(grid_sizes: Vec<usize>, statistics: Vec<f64>) -> Result<Self> {
        if grid_sizes.len() != statistics.len() {
            return invalid("grid sizes and statistics differ in length");
        }
        if grid_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("grid sizes must be strictly increasing");
        }
        Ok(RefinementSeries { grid_sizes, statistics })
    }

    /// Each step down is at most `tol` upward.
    pub fn is_non_increasing(&self, tol: f64) -> bool {
        self.statistics.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    pub fn is_non_decreasing(&self, tol: f64) -> bool {
        self.statistics.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

/// Evaluates `statistic` on each grid size; at least three dyadic sizes.
pub fn refinement_study<F>(grid_sizes: &[usize], statistic: F) -> Result<RefinementSeries>
where
    F: Fn(usize) -> Result<f64>,
{
    if grid_sizes.len() < 3 {
        return invalid("need at least three grid sizes");
    }
    if grid_sizes.iter().any(|n| !n.is_power_of_two()) {
        return invalid(format!("grid sizes must be powers of two: {grid_sizes:?}"));
    }
    let stats = grid_sizes.iter().map(|&n| statistic(n)).collect::<Result<Vec<_>>>()?;
    RefinementSeries::new(grid_sizes.to_vec(), stats)
}

/// Outcome of comparing simulated TASEP values at time `r` with `q_r`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityReport {
    pub m: usize,
    pub r: f64,
    pub b: Vec<f64>,
    pub n_samples: usize,
    pub grid_steps: usize,
    /// Top-line marginal against the quadrature CDF, finest grid.
    pub ks: KSReport,
    /// 20 x 20 equal-probability cells, `m = 2` only.
    pub chi_square: Option<ChiSquareReport>,
    /// KS statistic on the coarsened grids, coarse to fine.
    pub refinement: RefinementSeries,
    pub refinement_tolerance: f64,
    pub pass: bool,
}

/// p-value threshold for the statistical checks.
pub const P_THRESHOLD: f64 = 1e-3;
/// Bins per axis for the joint test.
pub const JOINT_BINS: usize = 20;
const CDF_NODES: usize = 1201;

/// Terminal TASEP values for `n` replicates on every level of a dyadic
/// coarsening; `out[level][replicate]`.
pub fn simulate_terminal_levels(
    grid: TimeGrid,
    b: &InitialData,
    n: usize,
    rng: &RngSpec,
    factors: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let reps = crate::exec::map_indices(n, |i| {
        let mut g: ChaCha8Rng = rng.with_stream(rng.stream_index.wrapping_add(i as u64)).rng();
        tasep_terminal_multilevel(grid, b, &mut g, factors)
    });
    let mut levels = vec![Vec::with_capacity(n); factors.len()];
    for rep in reps {
        for (l, v) in rep?.into_iter().enumerate() {
            levels[l].push(v);
        }
    }
    Ok(levels)
}

/// Simulates `n_samples` TASEP vectors at time `r = grid.t1` and tests the
/// top line against the quadrature CDF of `q_r` (any `m`) and, for `m = 2`,
/// the joint law on equal-probability cells. The KS statistic is recomputed
/// on up to four dyadic coarsenings of the same paths.
pub fn verify_density(m: usize, r: f64, b: &InitialData, n_samples: usize, grid: TimeGrid, rng: &RngSpec) -> Result<DensityReport> {
    if b.m() != m {
        return invalid("b must have m entries");
    }
    if (grid.t1 - r).abs() > 1e-12 || grid.t0 != 0.0 {
        return invalid("grid must run over [0, r]");
    }
    if !grid.n_steps.is_power_of_two() {
        return invalid("grid step count must be a power of two");
    }
    let mut factors: Vec<usize> = (0..5).map(|e| 1usize << e).filter(|&q| q <= grid.n_steps).collect();
    factors.reverse();
    let levels = simulate_terminal_levels(grid, b, n_samples, rng, &factors)?;
    let cdf = TopMarginalCdf::build(r, b, CDF_NODES)?;
    let finest = levels.last().unwrap();
    let tops: Vec<f64> = finest.iter().map(|v| v[0]).collect();
    let ks = ks_test(&tops, |z| cdf.eval(z))?;
    let chi_square = if m == 2 {
        let bins = JointBins::build(r, b, JOINT_BINS, &cdf)?;
        let pairs: Vec<(f64, f64)> = finest.iter().map(|v| (v[0], v[1])).collect();
        Some(bins.chi_square(&pairs)?)
    } else {
        None
    };
    let sizes: Vec<usize> = factors.iter().map(|q| grid.n_steps / q).collect();
    let stats = levels
        .iter()
        .map(|lv| ks_statistic(&lv.iter().map(|v| v[0]).collect::<Vec<_>>(), |z| cdf.eval(z)))
        .collect::<Result<Vec<_>>>()?;
    let refinement = RefinementSeries::new(sizes, stats)?;
    let refinement_tolerance = 0.5 / (n_samples as f64).sqrt();
    let pass = ks.p_value > P_THRESHOLD
        && chi_square.as_ref().is_none_or(|c| c.p_value > P_THRESHOLD)
        && refinement.is_non_increasing(refinement_tolerance);
    Ok(DensityReport {
        m,
        r,
        b: b.values().to_vec(),
        n_samples,
        grid_steps: grid.n_steps,
        ks,
        chi_square,
        refinement,
        refinement_tolerance,
        pass,
    })
}

/// `max_x |q_{s+t}(x; b) - int q_t(x; y) q_s(y; b) dy| / q_{s+t}(x; b)` over a
/// fixed set of test points.
pub fn chapman_kolmogorov_residual(m: usize, s: f64, t: f64, b: &InitialData) -> Result<f64> {
    if m > 2 || m == 0 {
        return Err(Error::UnsupportedSize(format!("Chapman-Kolmogorov check implemented for m <= 2, got {m}")));
    }
    if b.m() != m {
        return invalid("b must have m entries");
    }
    if !(s > 0.0 && t > 0.0) {
        return invalid("times must be positive");
    }
    let (lo, hi) = truncation(s, b);
    let points: Vec<Vec<f64>> = if m == 1 {
        [-1.5, -0.3, 0.4, 1.7].iter().map(|&x| vec![x + b.get(1)]).collect()
    } else {
        let mut p = Vec::new();
        for &x1 in &[-0.5, 0.5, 1.5] {
            for &gap in &[0.2, 1.0] {
                p.push(vec![x1, x1 - gap]);
            }
        }
        p
    };
    let mut worst = 0.0f64;
    for x in points {
        let direct = warren_density(s + t, &x, b)?.to_f64();
        let step = |y: &[f64]| {
            let start = InitialData::new(y.to_vec()).expect("ordered");
            warren_density(t, &x, &start).map(|v| v.to_f64()).unwrap_or(f64::NAN)
                * warren_density(s, y, b).map(|v| v.to_f64()).unwrap_or(f64::NAN)
        };
        let composed = quad(|y1| nested_ordered(&step, &[y1], m - 1, lo, 1e-11), lo, hi, 1e-11);
        worst = worst.max((direct - composed).abs() / direct);
    }
    Ok(worst)
}

/// Relative gap between `q_r((x_1, x_2); 0)` and the cone integral
/// `int_{-inf}^{x_2} mu^2_r(a, x_1) da`, maximised over diagonal test points.
pub fn diagonal_marginal_residual(r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return invalid("r must be positive");
    }
    let z = InitialData::zeros(2);
    let mut worst = 0.0f64;
    for &x1 in &[-1.0, 0.0, 1.0, 2.0] {
        for &gap in &[0.0, 0.1, 0.5, 1.5] {
            let x2 = x1 - gap;
            let q = warren_density(r, &[x1, x2], &z)?.to_f64();
            let lo = x2 - 12.0 * (2.0 * r).sqrt() - x1.abs();
            let cone = quad(|a| gt_entrance_density(2, r, &[a, x1]).unwrap_or(f64::NAN), lo, x2, 1e-13);
            worst = worst.max((q - cone).abs() / q);
        }
    }
    Ok(worst)
}

/// Exact draw of two-line TASEP from zero at time `r`: the bottom line is
/// `B_2(r)`, the top is `B_1(r) + sup_{s<=r} (B_2 - B_1)(s)`, with the
/// supremum drawn from its conditional law given the endpoint.
pub fn sample_homogeneous_pair<R: Rng>(r: f64, rng: &mut R) -> (f64, f64) {
    let s = (2.0 * r).sqrt();
    let b1 = s * rng.sample::<f64, _>(StandardNormal);
    let b2 = s * rng.sample::<f64, _>(StandardNormal);
    let d = b2 - b1;
    let u: f64 = 1.0 - rng.random::<f64>();
    // D has variance rate 4.
    let sup = 0.5 * (d + (d * d - 8.0 * r * u.ln()).sqrt());
    (b1 + sup, b2)
}

/// Mean and standard error of `rn_ratio(r, X, b)` over `n` exact draws of
/// `X ~ q_r(.; 0)` with two lines.
pub fn change_of_measure_mean(r: f64, b: &InitialData, n: usize, rng: &RngSpec) -> Result<(f64, f64)> {
    if b.m() != 2 {
        return Err(Error::UnsupportedSize("change-of-measure check implemented for m = 2".into()));
    }
    let chunk = 1000;
    let chunks = n.div_ceil(chunk);
    let vals = crate::exec::map_indices(chunks, |c| -> Result<Vec<f64>> {
        let mut g = rng.with_stream(rng.stream_index.wrapping_add(c as u64)).rng();
        let len = chunk.min(n - c * chunk);
        (0..len)
            .map(|_| {
                let (x1, x2) = sample_homogeneous_pair(r, &mut g);
                rn_ratio(r, &[x1, x2], b).map(|v| v.to_f64())
            })
            .collect()
    });
    let mut all = Vec::with_capacity(n);
    for v in vals {
        all.extend(v?);
    }
    Ok(crate::stats::mean_se(&all))
}

/// Agreement of the quotient and F-kernel forms of the RN ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossFormReport {
    pub points: usize,
    pub max_rel_diff: f64,
    /// Points where the homogeneous density was flagged ill-conditioned.
    pub degenerate: usize,
}

/// Draws `n` points with `m` in 2..=4, `r` in [0.5, 2], ordered `x` in
/// [-3, 3]^m and non-increasing `b` in [0, 2]^m, and compares both forms.
pub fn rn_cross_form_check(n: usize, rng: &RngSpec) -> Result<CrossFormReport> {
    let mut g = rng.rng();
    let mut max_rel = 0.0f64;
    let mut degenerate = 0;
    for _ in 0..n {
        let m = g.random_range(2..=4usize);
        let r = g.random_range(0.5..2.0);
        let mut x: Vec<f64> = (0..m).map(|_| g.random_range(-3.0..3.0)).collect();
        x.sort_by(|a, b| b.total_cmp(a));
        let mut v: Vec<f64> = (0..m).map(|_| g.random_range(0.0..2.0)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let b = InitialData::new(v)?;
        match rn_ratio_forms(r, &x, &b) {
            Ok((q, f)) => max_rel = max_rel.max(q.rel_diff(f)),
            Err(Error::NumericalDegeneracy { .. }) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(CrossFormReport { points: n, max_rel_diff: max_rel, degenerate })
}
