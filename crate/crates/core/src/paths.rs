//! Time grids, sampled paths and reproducible Brownian sampling.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn delta(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t1
        } else {
            self.t0 + i as f64 * self.delta()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.delta()).round();
        i.clamp(0.0, self.n_steps as f64) as usize
    }
}

pub fn make_grid(t0: f64, t1: f64, n_steps: usize) -> Result<TimeGrid> {
    if !(t0.is_finite() && t1.is_finite()) || t0 >= t1 {
        return invalid(format!("degenerate interval [{t0}, {t1}]"));
    }
    if n_steps < 1 {
        return invalid("n_steps must be at least 1");
    }
    Ok(TimeGrid { t0, t1, n_steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "path has {} values but grid has {} points",
                values.len(),
                grid.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("path values must be finite");
        }
        Ok(SampledPath { grid, values })
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        SampledPath { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        SampledPath { grid, values: grid.points().into_iter().map(f).collect() }
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Path restricted to every `factor`-th grid point.
    pub fn subsample(&self, factor: usize) -> Result<SampledPath> {
        if factor == 0 || !self.grid.n_steps.is_multiple_of(factor) {
            return invalid("subsampling factor must divide the step count");
        }
        let grid = TimeGrid { n_steps: self.grid.n_steps / factor, ..self.grid };
        let values = self.values.iter().step_by(factor).copied().collect();
        Ok(SampledPath { grid, values })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,v")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(self.grid.point(i)), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Lines indexed from the top: `lines[0]` is line 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub grid: TimeGrid,
    pub lines: Vec<SampledPath>,
}

impl Ensemble {
    pub fn new(lines: Vec<SampledPath>) -> Result<Self> {
        let Some(first) = lines.first() else {
            return invalid("ensemble needs at least one line");
        };
        let grid = first.grid;
        if lines.iter().any(|l| l.grid != grid) {
            return invalid("ensemble lines must share a grid");
        }
        Ok(Ensemble { grid, lines })
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    /// Line `k`, one-based.
    pub fn line(&self, k: usize) -> &SampledPath {
        &self.lines[k - 1]
    }

    pub fn subsample(&self, factor: usize) -> Result<Ensemble> {
        let lines = self.lines.iter().map(|l| l.subsample(factor)).collect::<Result<Vec<_>>>()?;
        Ensemble::new(lines)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        RngSpec { master_seed, stream_index }
    }

    /// ChaCha keyed by the master seed, with the replicate index as stream id.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    pub fn with_stream(&self, stream_index: u64) -> Self {
        RngSpec { stream_index, ..*self }
    }
}

/// Fill `out` with cumulative sums of i.i.d. N(0, sd^2) increments, starting at `start`.
pub fn fill_bm<R: rand::Rng>(rng: &mut R, sd: f64, start: f64, out: &mut [f64]) {
    let mut x = start;
    out[0] = x;
    for v in out.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(rng);
        x += sd * z;
        *v = x;
    }
}

pub fn sample_bm(grid: TimeGrid, rate: f64, start: f64, rng: &RngSpec) -> Result<SampledPath> {
    if !(rate > 0.0) {
        return invalid(format!("rate must be positive, got {rate}"));
    }
    let mut values = vec![0.0; grid.len()];
    fill_bm(&mut rng.rng(), (rate * grid.delta()).sqrt(), start, &mut values);
    Ok(SampledPath { grid, values })
}

/// Independent lines drawn consecutively from one stream.
pub fn sample_ensemble(grid: TimeGrid, starts: &[f64], rate: f64, rng: &RngSpec) -> Result<Ensemble> {
    if starts.is_empty() {
        return invalid("starts must be nonempty");
    }
    if !(rate > 0.0) {
        return invalid(format!("rate must be positive, got {rate}"));
    }
    let sd = (rate * grid.delta()).sqrt();
    let mut r = rng.rng();
    let lines = starts
        .iter()
        .map(|&s| {
            let mut values = vec![0.0; grid.len()];
            fill_bm(&mut r, sd, s, &mut values);
            SampledPath { grid, values }
        })
        .collect();
    Ok(Ensemble { grid, lines })
}

/// 17 significant digits, `.` decimal separator.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}
