//! Step-time scaling of the Ginger update in `d` and `τ`.

use std::path::Path;
use std::time::{Duration, Instant};

use ginger_core::optim::ginger_flops_per_step;
use ginger_core::{Exec, GgnFactors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub dim: usize,
    pub tau: usize,
    pub reps: usize,
    pub median_ns: f64,
    /// `median_ns` over the previous row's; empty on the first row.
    pub ratio: Option<f64>,
    pub flops_per_step: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A warmed-up state with a fixed input stream; one step is an `update`
/// followed by a `direction` query.
struct Workload {
    state: GgnFactors,
    stream: Vec<Vec<f64>>,
    query: Vec<f64>,
    next: usize,
    block: usize,
}

impl Workload {
    fn new(dim: usize, tau: usize, exec: Exec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = GgnFactors::new(dim, tau, 1e-4, 0.99, seed)?;
        state.set_exec(exec);
        state.set_reortho_every(0);
        let stream = (0..4).map(|_| gaussian(&mut rng, dim)).collect();
        let query = gaussian(&mut rng, dim);
        let mut w = Self {
            state,
            stream,
            query,
            next: 0,
            block: 1,
        };
        // fill the spectrum so every timed step takes the generic branch
        for _ in 0..tau + 2 {
            w.step()?;
        }
        Ok(w)
    }

    fn step(&mut self) -> Result<()> {
        let d_t = &self.stream[self.next % self.stream.len()];
        self.next += 1;
        self.state.update(d_t)?;
        std::hint::black_box(self.state.direction(&self.query, 1.0)?);
        Ok(())
    }

    /// Picks a block length so that one timed block lasts at least `target`.
    fn calibrate(&mut self, target: Duration) -> Result<()> {
        let start = Instant::now();
        self.step()?;
        let once = start.elapsed().max(Duration::from_nanos(1));
        self.block = (target.as_nanos() / once.as_nanos()).clamp(1, 10_000) as usize;
        Ok(())
    }

    /// Mean time per step over one block, in nanoseconds.
    fn time_block(&mut self) -> Result<f64> {
        let start = Instant::now();
        for _ in 0..self.block {
            self.step()?;
        }
        Ok(start.elapsed().as_nanos() as f64 / self.block as f64)
    }
}

/// Minimum duration of one timed block.
pub const BLOCK_TARGET: Duration = Duration::from_millis(10);

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

/// Median step time per `(dim, tau)` point, with the ratio to the previous
/// row. Points are sampled round-robin, one block each per repetition, so
/// slow drift of the machine affects all points alike.
pub fn bench_scaling(points: &[(usize, usize)], reps: usize, exec: Exec, seed: u64) -> Result<Vec<BenchRow>> {
    let mut loads = points
        .iter()
        .map(|&(dim, tau)| {
            let mut w = Workload::new(dim, tau, exec, seed)?;
            w.calibrate(BLOCK_TARGET)?;
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = reps.max(1);
    let mut samples = vec![Vec::with_capacity(reps); points.len()];
    for _ in 0..reps {
        for (w, s) in loads.iter_mut().zip(&mut samples) {
            s.push(w.time_block()?);
        }
    }
    let mut rows: Vec<BenchRow> = Vec::with_capacity(points.len());
    for (&(dim, tau), s) in points.iter().zip(&mut samples) {
        let median_ns = median(s);
        let ratio = rows.last().map(|prev| median_ns / prev.median_ns);
        rows.push(BenchRow {
            dim,
            tau,
            reps,
            median_ns,
            ratio,
            flops_per_step: ginger_flops_per_step(dim, tau),
        });
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

/// Fixed-width table with one line per row.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!("{:>10} {:>4} {:>5} {:>14} {:>7} {:>14}\n", "dim", "tau", "reps", "median_ns", "ratio", "flops/step");
    for r in rows {
        let ratio = r.ratio.map_or("-".to_string(), |x| format!("{x:.2}"));
        out.push_str(&format!(
            "{:>10} {:>4} {:>5} {:>14.0} {:>7} {:>14.3e}\n",
            r.dim, r.tau, r.reps, r.median_ns, ratio, r.flops_per_step
        ));
    }
    out
}

/// Parses `1e3`, `20000` or `1_000` as a dimension.
pub fn parse_dim(s: &str) -> std::result::Result<usize, String> {
    let clean = s.trim().replace('_', "");
    if let Ok(v) = clean.parse::<usize>() {
        return Ok(v);
    }
    match clean.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.fract() == 0.0 && v < 1e15 => Ok(v as usize),
        _ => Err(format!("not a dimension: {s}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dimensions() {
        assert_eq!(parse_dim("1e3"), Ok(1000));
        assert_eq!(parse_dim("20_000"), Ok(20000));
        assert!(parse_dim("1.5").is_err());
        assert!(parse_dim("x").is_err());
    }

    #[test]
    fn boundary_dimension_runs() {
        let rows = bench_scaling(&[(9, 8), (18, 8)], 3, Exec::Sequential, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].ratio.is_none());
        assert!(rows[1].ratio.unwrap() > 0.0);
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().contains(" - "));
    }
}
