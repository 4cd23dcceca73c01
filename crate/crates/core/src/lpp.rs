//! Last passage values over discretized ensembles.
//!
//! A path from `(s, l)` to `(e, k)` with `l >= k` sits on a line and moves to
//! the line above only at grid times. Its length is the summed increment of
//! each visited line over the time it spends there.

use crate::error::{invalid, Result};
use crate::paths::{Ensemble, SampledPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticePoint {
    pub time_index: usize,
    /// One-based line index, 1 = top.
    pub line: usize,
}

impl LatticePoint {
    pub fn new(time_index: usize, line: usize) -> Self {
        LatticePoint { time_index, line }
    }
}

fn check_point(ens: &Ensemble, p: LatticePoint) -> Result<()> {
    if p.line < 1 || p.line > ens.m() {
        return invalid(format!("line {} outside [1, {}]", p.line, ens.m()));
    }
    if p.time_index > ens.grid.n_steps {
        return invalid(format!("time index {} outside grid", p.time_index));
    }
    Ok(())
}

fn check_pair(ens: &Ensemble, start: LatticePoint, end: LatticePoint) -> Result<()> {
    check_point(ens, start)?;
    check_point(ens, end)?;
    if start.time_index > end.time_index || start.line < end.line {
        return invalid("start must precede end in time and lie on a line at or below it");
    }
    Ok(())
}

/// Forward table: `v[i - top][j - s] = lpp((s, l) -> (j, i))` for `top <= i <= l`.
fn forward_table(ens: &Ensemble, s: usize, l: usize, top: usize, e: usize) -> Vec<Vec<f64>> {
    let len = e - s + 1;
    let mut rows = vec![vec![0.0; len]; l - top + 1];
    let f = &ens.line(l).values;
    let row = &mut rows[l - top];
    for j in 1..len {
        row[j] = f[s + j] - f[s];
    }
    for i in (top..l).rev() {
        let (upper, lower) = rows.split_at_mut(i + 1 - top);
        let below = &lower[0];
        let cur = &mut upper[i - top];
        let f = &ens.line(i).values;
        for j in 1..len {
            let stay = cur[j - 1] + (f[s + j] - f[s + j - 1]);
            cur[j] = if stay >= below[j] { stay } else { below[j] };
        }
    }
    rows
}

/// Backward table: `w[i - k][z - s] = lpp((z, i) -> (e, k))` for `k <= i <= bottom`.
fn backward_table(ens: &Ensemble, s: usize, e: usize, k: usize, bottom: usize) -> Vec<Vec<f64>> {
    let len = e - s + 1;
    let mut rows = vec![vec![0.0; len]; bottom - k + 1];
    let f = &ens.line(k).values;
    for z in 0..len {
        rows[0][z] = f[e] - f[s + z];
    }
    for i in k + 1..=bottom {
        let (upper, lower) = rows.split_at_mut(i - k);
        let above = &upper[i - k - 1];
        let cur = &mut lower[0];
        let f = &ens.line(i).values;
        for z in (0..len - 1).rev() {
            let stay = cur[z + 1] + (f[s + z + 1] - f[s + z]);
            cur[z] = if stay >= above[z] { stay } else { above[z] };
        }
    }
    rows
}

pub fn lpp_value(ens: &Ensemble, start: LatticePoint, end: LatticePoint) -> Result<f64> {
    check_pair(ens, start, end)?;
    let t = forward_table(ens, start.time_index, start.line, end.line, end.time_index);
    Ok(*t[0].last().unwrap())
}

/// Profiles `y -> lpp((t0, start_line) -> (y, k))` for `k = 1..=start_line`.
pub fn lpp_profile(ens: &Ensemble, start_line: usize) -> Result<Ensemble> {
    if start_line < 1 || start_line > ens.m() {
        return invalid(format!("start line {start_line} outside [1, {}]", ens.m()));
    }
    let rows = forward_table(ens, 0, start_line, 1, ens.grid.n_steps);
    Ensemble::new(rows.into_iter().map(|values| SampledPath { grid: ens.grid, values }).collect())
}

fn max_dev(target: f64, composed: impl Iterator<Item = f64>) -> f64 {
    let best = composed.fold(f64::NEG_INFINITY, f64::max);
    (best - target).abs()
}

/// Deviation between `lpp(start -> end)` and its splittings through line `k`:
/// `sup_z lpp(start -> (z,k)) + lpp((z,k) -> end)` and, when `k > end.line`,
/// `sup_z lpp(start -> (z,k)) + lpp((z,k-1) -> end)`. Returns the larger deviation.
pub fn metric_composition_residual(ens: &Ensemble, start: LatticePoint, end: LatticePoint, k: usize) -> Result<f64> {
    check_pair(ens, start, end)?;
    if k < end.line || k > start.line {
        return invalid(format!("split line {k} outside [{}, {}]", end.line, start.line));
    }
    let (s, e) = (start.time_index, end.time_index);
    let fwd = forward_table(ens, s, start.line, end.line, e);
    let bwd = backward_table(ens, s, e, end.line, start.line);
    let target = fwd[0][e - s];
    let v = &fwd[k - end.line];
    let mut res = max_dev(target, (0..=e - s).map(|z| v[z] + bwd[k - end.line][z]));
    if k > end.line {
        res = res.max(max_dev(target, (0..=e - s).map(|z| v[z] + bwd[k - 1 - end.line][z])));
    }
    Ok(res)
}

/// Deviation between `lpp(start -> end)` and `max_k lpp(start -> (z,k)) + lpp((z,k) -> end)`
/// for a fixed intermediate time index `z`.
pub fn composition_at_time_residual(ens: &Ensemble, start: LatticePoint, end: LatticePoint, z: usize) -> Result<f64> {
    check_pair(ens, start, end)?;
    if z < start.time_index || z > end.time_index {
        return invalid(format!("split time {z} outside [{}, {}]", start.time_index, end.time_index));
    }
    let (s, e) = (start.time_index, end.time_index);
    let fwd = forward_table(ens, s, start.line, end.line, e);
    let bwd = backward_table(ens, s, e, end.line, start.line);
    let target = fwd[0][e - s];
    Ok(max_dev(target, (0..=start.line - end.line).map(|i| fwd[i][z - s] + bwd[i][z - s])))
}

/// Exhaustive enumeration of all jump-time assignments. Exponential cost; meant
/// as an oracle on tiny grids.
pub fn lpp_brute_force(ens: &Ensemble, start: LatticePoint, end: LatticePoint) -> Result<f64> {
    check_pair(ens, start, end)?;
    fn rec(ens: &Ensemble, line: usize, from: usize, end: LatticePoint) -> f64 {
        let f = &ens.line(line).values;
        if line == end.line {
            return f[end.time_index] - f[from];
        }
        (from..=end.time_index)
            .map(|tau| f[tau] - f[from] + rec(ens, line - 1, tau, end))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    Ok(rec(ens, start.line, start.time_index, end))
}

/// Jump times of the maximising path: entry `i` is the time index at which the
/// path leaves line `start.line - i`. Ties prefer staying on the current line.
pub fn geodesic(ens: &Ensemble, start: LatticePoint, end: LatticePoint) -> Result<Vec<usize>> {
    check_pair(ens, start, end)?;
    let (s, e) = (start.time_index, end.time_index);
    let fwd = forward_table(ens, s, start.line, end.line, e);
    let mut jumps = Vec::new();
    let mut j = e;
    // Walk back from the end: on line i, move back in time while staying was optimal.
    for i in end.line..start.line {
        let cur = &fwd[i - end.line];
        let below = &fwd[i + 1 - end.line];
        let f = &ens.line(i).values;
        while j > s {
            let stay = cur[j - 1] + (f[j] - f[j - 1]);
            if stay >= below[j] {
                j -= 1;
            } else {
                break;
            }
        }
        jumps.push(j);
    }
    jumps.reverse();
    Ok(jumps)
}
