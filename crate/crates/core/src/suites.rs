//! Verification suites: each returns a list of named pass/fail checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    check_appendix_inequalities, dyson_rn_bound, erf_tail_bounds, increment_contractivity_check, lp_lower_bound_gamma,
    mehta_integral, standard_appendix_grid, tasep_rn_bound, BoundConstants, BoundReport,
};
use crate::densities::{
    gk_function, gk_hadamard_bound, hermite_translation_residual, phi_iter, warren_density, warren_density_transposed,
    KVector,
};
use crate::error::Result;
use crate::harness::{
    change_of_measure_mean, chapman_kolmogorov_residual, diagonal_marginal_residual, normalization,
    rn_cross_form_check, verify_density, P_THRESHOLD,
};
use crate::lpp::{composition_at_time_residual, lpp_profile, metric_composition_residual, LatticePoint};
use crate::paths::{make_grid, sample_ensemble, Ensemble, RngSpec, TimeGrid};
use crate::reflect::{brownian_tasep, sample_random_depth_blpp, skorokhod_reflect, tasep_terminal, tasep_via_lpp, DepthLaw, InitialData};
use crate::stats::{chi_square_test, ks_two_sample, mean_se};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl Check {
    /// Passes when `value <= tol`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), pass: value <= tol, statistic: value, p_value: None, margin: None }
    }

    pub fn at_least(name: impl Into<String>, value: f64, floor: f64) -> Self {
        Check { name: name.into(), pass: value >= floor, statistic: value, p_value: None, margin: None }
    }

    /// Passes when `p > P_THRESHOLD`.
    pub fn test(name: impl Into<String>, statistic: f64, p: f64) -> Self {
        Check { name: name.into(), pass: p > P_THRESHOLD, statistic, p_value: Some(p), margin: None }
    }

    /// Statistic is `ln lhs`, margin `ln rhs - ln lhs`.
    pub fn bound(name: impl Into<String>, r: &BoundReport) -> Self {
        Check { name: name.into(), pass: r.satisfied, statistic: r.lhs.ln_abs(), p_value: None, margin: Some(r.margin) }
    }

    /// Aggregates reports into the worst margin.
    pub fn worst_bound(name: impl Into<String>, reports: &[BoundReport]) -> Self {
        let worst = reports.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        Check {
            name: name.into(),
            pass: !reports.is_empty() && reports.iter().all(|r| r.satisfied),
            statistic: reports.len() as f64,
            p_value: None,
            margin: Some(worst),
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

fn scale_of(e: &Ensemble) -> f64 {
    1.0 + e.lines.iter().flat_map(|l| l.values.iter()).fold(0.0f64, |a, v| a.max(v.abs()))
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub pitman: f64,
    pub tasep_routes: f64,
    pub composition: f64,
    pub melon: f64,
}

impl IdentityResiduals {
    fn merge(self, o: Self) -> Self {
        IdentityResiduals {
            pitman: self.pitman.max(o.pitman),
            tasep_routes: self.tasep_routes.max(o.tasep_routes),
            composition: self.composition.max(o.composition),
            melon: self.melon.max(o.melon),
        }
    }
}

/// Scale-relative residuals of the pathwise identities on one ensemble of
/// `m` lines: Pitman top line vs LPP, reflection vs LPP-profile TASEP, metric
/// composition, and the zero-data top line vs `lpp((0,m) -> (., 1))`.
pub fn identity_residuals(grid: TimeGrid, m: usize, rng: &RngSpec) -> Result<IdentityResiduals> {
    let mut g = rng.rng();
    let starts: Vec<f64> = (0..m).map(|_| g.random_range(-1.0..1.0)).collect();
    let gvals = sorted_desc((0..m).map(|_| g.random_range(0.0..2.0)).collect());
    let gdata = InitialData::new(gvals)?;
    let free = sample_ensemble(grid, &starts, 2.0, &rng.with_stream(rng.stream_index ^ (1 << 63)))?;
    let n = grid.n_steps;

    let mut pitman = 0.0f64;
    if m >= 2 {
        let pair = Ensemble::new(vec![free.line(1).clone(), free.line(2).clone()])?;
        let w = skorokhod_reflect(pair.line(1), pair.line(2))?;
        let s = scale_of(&pair);
        let p1 = lpp_profile(&pair, 1)?;
        let p2 = lpp_profile(&pair, 2)?;
        for j in 0..=n {
            let v = (pair.line(1).first() + p1.line(1).values[j]).max(pair.line(2).first() + p2.line(1).values[j]);
            pitman = pitman.max((w.w_top.values[j] - v).abs() / s);
        }
    }

    let b = sample_ensemble(grid, &vec![0.0; m], 2.0, rng)?;
    let h = brownian_tasep(&b, &gdata)?;
    let d = tasep_via_lpp(&b, &gdata)?;
    let s = scale_of(&h);
    let tasep_routes = h
        .lines
        .iter()
        .zip(&d.lines)
        .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
        / s;

    let sb = scale_of(&b);
    let (a, e) = (LatticePoint::new(0, m), LatticePoint::new(n, 1));
    let mut composition = 0.0f64;
    for k in 1..=m {
        composition = composition.max(metric_composition_residual(&b, a, e, k)? / sb);
    }
    for z in (0..=n).step_by((n / 16).max(1)) {
        composition = composition.max(composition_at_time_residual(&b, a, e, z)? / sb);
    }

    let zero = brownian_tasep(&b, &InitialData::zeros(m))?;
    let prof = lpp_profile(&b, m)?;
    let melon = zero
        .line(1)
        .values
        .iter()
        .zip(&prof.line(1).values)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
        / scale_of(&zero);

    Ok(IdentityResiduals { pitman, tasep_routes, composition, melon })
}

/// Identities over `ensembles` seeded ensembles with `m = 2..=6` cycling.
pub fn deterministic_suite(seed: u64, ensembles: usize, grid_steps: usize) -> Result<Vec<Check>> {
    let grid = make_grid(0.0, 1.0, grid_steps)?;
    let spec = RngSpec::new(seed, 0);
    let parts = crate::exec::map_indices(ensembles, |i| identity_residuals(grid, 2 + i % 5, &spec.with_stream(i as u64)));
    let mut acc = IdentityResiduals::default();
    for p in parts {
        acc = acc.merge(p?);
    }
    let tol = 1e-12;
    Ok(vec![
        Check::at_most("pitman-top-line-is-lpp", acc.pitman, tol),
        Check::at_most("tasep-reflection-equals-lpp-profile", acc.tasep_routes, tol),
        Check::at_most("metric-composition", acc.composition, tol),
        Check::at_most("zero-data-top-line-preserves-lpp", acc.melon, tol),
    ])
}

/// Worst relative gap of `d/dy Phi^(m) = Phi^(m-1)` by Richardson-extrapolated
/// central differences.
pub fn phi_ladder_residual() -> f64 {
    let h = 1e-3;
    let mut worst = 0.0f64;
    for m in -3..=5i64 {
        for &t in &[0.5, 1.0, 2.0] {
            for i in 0..=24 {
                let y = -6.0 + 0.5 * i as f64;
                let cd = |h: f64| (phi_iter(m, t, y + h).unwrap() - phi_iter(m, t, y - h).unwrap()) / (2.0 * h);
                let fd = (4.0 * cd(h / 2.0) - cd(h)) / 3.0;
                let exact = phi_iter(m - 1, t, y).unwrap();
                worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3));
            }
        }
    }
    worst
}

/// Worst relative gap between the density and its transposed-matrix form.
pub fn transpose_residual(points: usize, rng: &RngSpec) -> Result<f64> {
    let mut g = rng.rng();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let m = g.random_range(1..=5usize);
        let x = sorted_desc((0..m).map(|_| g.random_range(-3.0..3.0)).collect());
        let b = InitialData::new(sorted_desc((0..m).map(|_| g.random_range(0.0..2.0)).collect()))?;
        let r = g.random_range(0.5..2.0);
        let a = warren_density(r, &x, &b)?.value;
        let t = warren_density_transposed(r, &x, &b)?.value;
        worst = worst.max(a.rel_diff(t));
    }
    Ok(worst)
}

/// Normalizations, Chapman-Kolmogorov, diagonal marginal, transpose
/// invariance, derivative ladder and Hermite translation.
pub fn density_identity_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let datas = [vec![0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0, 0.0], vec![2.0, 1.0, 0.0]];
    let cases: Vec<(Vec<f64>, f64)> = datas.iter().flat_map(|b| [0.5, 1.0, 2.0].map(|r| (b.clone(), r))).collect();
    let norms = crate::exec::map_slice(&cases, |(b, r)| normalization(*r, &InitialData::new(b.clone())?));
    for ((b, r), v) in cases.iter().zip(norms) {
        out.push(Check::at_most(format!("normalization m={} r={r} b={b:?}", b.len()), (v? - 1.0).abs(), 1e-6));
    }
    out.push(Check::at_most(
        "chapman-kolmogorov m=1",
        chapman_kolmogorov_residual(1, 0.3, 0.8, &InitialData::new(vec![0.4])?)?,
        1e-8,
    ));
    for b in [vec![0.0, 0.0], vec![1.0, 0.0]] {
        let v = chapman_kolmogorov_residual(2, 0.5, 0.5, &InitialData::new(b.clone())?)?;
        out.push(Check::at_most(format!("chapman-kolmogorov m=2 b={b:?}"), v, 1e-4));
    }
    for r in [0.5, 1.0, 2.0] {
        out.push(Check::at_most(format!("diagonal-marginal r={r}"), diagonal_marginal_residual(r)?, 1e-6));
    }
    out.push(Check::at_most("transpose-invariance", transpose_residual(1000, &RngSpec::new(seed, 1))?, 1e-12));
    out.push(Check::at_most("phi-derivative-ladder", phi_ladder_residual(), 1e-6));
    let mut herm = 0.0f64;
    for n in 0..=10 {
        for &(x, b) in &[(0.3, 1.0), (-2.0, 0.5), (4.0, 2.0), (1.0, 0.0), (-0.7, 1.5)] {
            for &r in &[0.5, 1.0, 2.0] {
                herm = herm.max(hermite_translation_residual(n, x, b, r));
            }
        }
    }
    out.push(Check::at_most("hermite-translation", herm, 1e-10));
    Ok(out)
}

/// Simulated TASEP vectors against `q_r` for the four standard configurations.
pub fn simulation_suite(seed: u64, n_samples: usize, grid_steps: usize) -> Result<Vec<Check>> {
    let grid = make_grid(0.0, 1.0, grid_steps)?;
    let mut out = Vec::new();
    for (i, b) in [vec![0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 1.0, 0.0]].into_iter().enumerate() {
        let data = InitialData::new(b.clone())?;
        let rep = verify_density(b.len(), 1.0, &data, n_samples, grid, &RngSpec::new(seed, (i as u64) << 40))?;
        out.push(Check::test(format!("top-line-ks b={b:?}"), rep.ks.statistic, rep.ks.p_value));
        if let Some(c) = rep.chi_square {
            out.push(Check::test(format!("joint-chi-square b={b:?}"), c.statistic, c.p_value));
        }
        let mut steps = Check::at_most(
            format!("ks-refinement-non-increasing b={b:?} sizes={:?}", rep.refinement.grid_sizes),
            rep.refinement
                .statistics
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max),
            rep.refinement_tolerance,
        );
        steps.margin = Some(rep.refinement_tolerance - steps.statistic);
        out.push(steps);
    }
    Ok(out)
}

/// Mean of the RN ratio under exact homogeneous samples, and the agreement of
/// the two ratio formulas.
pub fn change_of_measure_suite(seed: u64, n: usize, cross_points: usize) -> Result<Vec<Check>> {
    let b = InitialData::new(vec![1.0, 0.0])?;
    let (m, se) = change_of_measure_mean(1.0, &b, n, &RngSpec::new(seed, 0))?;
    let mut c = Check::at_most("rn-ratio-mean-is-one", (m - 1.0).abs(), 3.0 * se);
    c.margin = Some(3.0 * se - (m - 1.0).abs());
    let cross = rn_cross_form_check(cross_points, &RngSpec::new(seed, 1))?;
    let mut x = Check::at_most(format!("rn-ratio-cross-form degenerate={}", cross.degenerate), cross.max_rel_diff, 1e-8);
    x.pass &= cross.degenerate * 100 <= cross.points;
    Ok(vec![c, x])
}

/// Mehta closed form and Monte Carlo at n = 2.
pub fn mehta_checks(seed: u64, n: usize) -> Result<Vec<Check>> {
    let exact = mehta_integral(2, 1.0)?.to_f64();
    let mut g = RngSpec::new(seed, 0).rng();
    let sq: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = g.sample(StandardNormal);
            let y: f64 = g.sample(StandardNormal);
            (x - y).powi(2)
        })
        .collect();
    let (m, se) = mean_se(&sq);
    Ok(vec![
        Check::at_most("mehta n=2 gamma=1 closed form", (exact - 2.0).abs(), 1e-12),
        Check::at_most("mehta n=2 gamma=1 monte carlo", (m - exact).abs(), 3.0 * se),
    ])
}

/// `gk_hadamard_bound` against `gk_function` at random points, `n <= 5`.
pub fn gk_dominance_check(points: usize, rng: &RngSpec) -> Result<Check> {
    let mut g = rng.rng();
    let mut reports = Vec::with_capacity(points);
    for _ in 0..points {
        let n = g.random_range(1..=5usize);
        let r = g.random_range(0.5..2.0);
        let mut x: Vec<f64> = (0..n).map(|_| g.random_range(-4.0..4.0)).collect();
        x.sort_by(f64::total_cmp);
        let mut gv = sorted_desc((0..n).map(|_| g.random_range(0.0..3.0)).collect());
        gv[n - 1] = 0.0;
        let b = InitialData::new(gv)?;
        let ks = KVector::all(n);
        let k = &ks[g.random_range(0..ks.len())];
        let val = gk_function(r, &b, k, &x)?.abs();
        reports.push(BoundReport::new(val, gk_hadamard_bound(r, &b, n, x[0], x[n - 1])));
    }
    Ok(Check::worst_bound("gk-hadamard-dominates", &reports))
}

/// Both tail inequalities on their validity domains for a sweep of `(L, r)`.
pub fn erf_checks() -> Result<Vec<Check>> {
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for l in [0.1f64, 0.5, 1.0, 4.0, 25.0] {
        for i in 0..=80 {
            let r = (6.0 * l).sqrt() * (1.0 + 0.05 * i as f64);
            let (a, b) = erf_tail_bounds(l, r)?;
            first.extend(a);
            second.extend(b);
        }
    }
    Ok(vec![Check::worst_bound("erf-tail-first-order", &first), Check::worst_bound("erf-tail-second-order", &second)])
}

pub fn contractivity_checks(k: &BoundConstants) -> Result<Vec<Check>> {
    let (ell, r) = (0.5, 1.5);
    Ok(vec![
        Check::bound("contractivity f=1 p=3", &increment_contractivity_check(|_, _| 1.0, ell, r, 3.0)?),
        Check::bound(
            "contractivity f=(x+ + 1)(y+ + 1) p=2",
            &increment_contractivity_check(|x, y| (x.max(0.0) + 1.0) * (y.max(0.0) + 1.0), ell, r, 2.0)?,
        ),
        Check::bound(
            "contractivity f=dyson n=2 p=2",
            &increment_contractivity_check(|x, y| dyson_rn_bound(2, ell, r, x, y, k).map_or(f64::NAN, |v| v.to_f64()), ell, r, 2.0)?,
        ),
    ])
}

pub fn appendix_suite(k: &BoundConstants) -> Result<Vec<Check>> {
    let reports = check_appendix_inequalities(&standard_appendix_grid(), k)?;
    let plain: Vec<BoundReport> = reports.iter().filter(|r| r.name.starts_with("appendix-shift")).map(|r| r.report).collect();
    let weighted: Vec<BoundReport> = reports.iter().filter(|r| !r.name.starts_with("appendix-shift")).map(|r| r.report).collect();
    let mut out = vec![Check::worst_bound("appendix-all", &reports.iter().map(|r| r.report).collect::<Vec<_>>())];
    if !plain.is_empty() && !weighted.is_empty() {
        out.push(Check::worst_bound("appendix-shift", &plain));
        out.push(Check::worst_bound("appendix-weighted", &weighted));
    }
    for r in reports.iter().filter(|r| !r.report.satisfied).take(20) {
        out.push(Check::bound(format!("appendix violated {}", r.name), &r.report));
    }
    Ok(out)
}

/// Mehta, `G^k` dominance, erf tails and contractivity; the appendix grid is
/// separate.
pub fn bounds_suite(seed: u64, k: &BoundConstants) -> Result<Vec<Check>> {
    let mut out = mehta_checks(seed, 1_000_000)?;
    out.push(gk_dominance_check(10_000, &RngSpec::new(seed, 1))?);
    out.extend(erf_checks()?);
    out.extend(contractivity_checks(k)?);
    Ok(out)
}

/// Largest `p` grid point used for the monotonicity sweep.
pub const GROWTH_P_MAX: f64 = 12.0;

/// Growth-law witnesses: `log lp_lower_bound_gamma(n, 4) / n^2` over
/// `n = 3..=10`, its monotonicity in `p >= 4`, and the `m^2 log m` envelope
/// of `tasep_rn_bound` with the constant fitted at `m = 2`.
pub fn growth_suite(k: &BoundConstants) -> Result<Vec<Check>> {
    let mut per_n = Vec::new();
    let mut mono = f64::NEG_INFINITY;
    for n in 3..=10usize {
        per_n.push(lp_lower_bound_gamma(n, 4.0)?.log_mag / (n * n) as f64);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=16 {
            let p = 4.0 + (GROWTH_P_MAX - 4.0) * i as f64 / 16.0;
            let v = lp_lower_bound_gamma(n, p)?.log_mag;
            mono = mono.max(prev - v);
            prev = v;
        }
    }
    let min = per_n.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = vec![
        Check { name: "lp-gamma p=4 log/n^2 positive".into(), pass: min > 0.0, statistic: min, p_value: None, margin: None },
        Check::at_most("lp-gamma non-decreasing in p", mono, 1e-12),
    ];
    let mut worst = f64::NEG_INFINITY;
    for pattern in [0.0, 0.1, 0.5] {
        let log_at = |m: usize| -> Result<f64> {
            let b = InitialData::new((0..m).map(|i| pattern * (m - 1 - i) as f64).collect())?;
            Ok(tasep_rn_bound(m, 1.0, 2.0, &b, 1.0, 1.5, k)?.log_mag)
        };
        let c = log_at(2)? / (4.0 * 2f64.ln());
        for m in 2..=12usize {
            let mf = m as f64;
            worst = worst.max(log_at(m)? - c * mf * mf * mf.ln());
        }
    }
    out.push(Check::at_most("tasep-rn-bound within C m^2 log m", worst, 1e-9));
    Ok(out)
}

/// Depth law for the stratified check: all four strata carry appreciable mass.
pub fn stratified_depth_law() -> DepthLaw {
    DepthLaw::cubic_tail(4, 0.01).expect("valid law")
}

/// Non-increasing initial data of length `k`, uniform order statistics on [0, 1].
pub fn uniform_initial_data(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    sorted_desc((0..k).map(|_| rng.random::<f64>()).collect())
}

/// Random-depth top line at time 1, split by the drawn depth, against
/// fixed-depth TASEP with the same initial-data law; plus a chi-square of the
/// depth frequencies against the law.
pub fn random_depth_suite(seed: u64, per_stratum: usize, grid_steps: usize) -> Result<Vec<Check>> {
    let law = stratified_depth_law();
    let d = law.max_depth;
    let grid = make_grid(0.0, 1.0, grid_steps)?;
    let spec = RngSpec::new(seed, 0);
    let mut strata: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut counts = vec![0.0; d];
    let batch = 8192;
    let mut next = 0u64;
    while strata.iter().any(|s| s.len() < per_stratum) {
        let draws = crate::exec::map_indices(batch, |i| {
            sample_random_depth_blpp(&law, uniform_initial_data, grid, &spec.with_stream(next + i as u64))
        });
        for s in draws {
            let s = s?;
            counts[s.depth - 1] += 1.0;
            if strata[s.depth - 1].len() < per_stratum {
                strata[s.depth - 1].push(s.path.last());
            }
        }
        next += batch as u64;
    }
    let w = law.weights();
    let total: f64 = counts.iter().sum();
    let exp: Vec<f64> = w.iter().map(|p| p * total).collect();
    let chi = chi_square_test(&counts, &exp, 0)?;
    let mut out = vec![Check::test("depth-frequencies", chi.statistic, chi.p_value)];
    let reference = RngSpec::new(seed.wrapping_add(1), 0);
    for k in 1..=d {
        let fixed = crate::exec::map_indices(per_stratum, |i| {
            let mut g = reference.with_stream(((k as u64) << 40) + i as u64).rng();
            let data = InitialData::new(uniform_initial_data(k, &mut g)).expect("ordered");
            tasep_terminal(grid, &data, &mut g)[0]
        });
        let ks = ks_two_sample(&strata[k - 1], &fixed)?;
        out.push(Check::test(format!("depth-stratum-{k} vs fixed depth"), ks.statistic, ks.p_value));
    }
    Ok(out)
}
