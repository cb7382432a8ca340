//! Training runs: one metrics file per (optimizer, seed) plus `summary.csv`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ginger_core::optim::ginger_flops_per_step;
use ginger_core::tasks::make_synthetic;
use ginger_core::{Batch, BatchSampler, Model, Optimizer, OptimizerKind, SyntheticConfig, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, RunSpec};
use crate::error::{HarnessError, Result};
use crate::metrics::{derive, MetricRecord, MetricsWriter, SummaryRow};

pub const SUMMARY_FILE: &str = "summary.csv";

/// Result of a whole experiment.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn aborted(&self) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.status != "ok").collect()
    }
}

pub fn build_task(cfg: &ExperimentConfig, seed: u64) -> Result<Task> {
    let t = &cfg.task;
    let data = make_synthetic(&SyntheticConfig {
        n: t.n,
        dim: t.dim,
        classes: t.classes,
        blob_spread: t.blob_spread,
        seed: t.data_seed.unwrap_or(seed),
    })?;
    Ok(Task::new(Model::new(t.model, t.dim, t.classes)?, data)?)
}

/// Runs every grid point and seed, up to `jobs` at a time, then writes the
/// summary. A numerical abort in any run is reported after all runs finish.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    let runs = cfg.runs()?;

    let rows = run_all(cfg, &runs, &dir, jobs)?;
    crate::metrics::write_summary(&dir.join(SUMMARY_FILE), &rows)?;
    let report = ExperimentReport { output_dir: dir, rows };
    if let Some(row) = report.aborted().first() {
        return Err(HarnessError::NumericalAbort {
            run: row.run.clone(),
            reason: row.status.trim_start_matches("abort: ").to_string(),
        });
    }
    Ok(report)
}

#[cfg(feature = "parallel")]
fn run_all(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &Path, jobs: usize) -> Result<Vec<SummaryRow>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| runs.par_iter().map(|spec| run_one(cfg, spec, dir)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_all(cfg: &ExperimentConfig, runs: &[RunSpec], dir: &Path, _jobs: usize) -> Result<Vec<SummaryRow>> {
    runs.iter().map(|spec| run_one(cfg, spec, dir)).collect()
}

/// Trains one run and writes `<dir>/<name>.jsonl`.
///
/// Non-finite losses or gradients and numerical errors from the optimizer do
/// not fail the call: they end the run with a diagnostic record and an
/// `abort: ...` status in the returned row.
pub fn run_one(cfg: &ExperimentConfig, spec: &RunSpec, dir: &Path) -> Result<SummaryRow> {
    let task = build_task(cfg, spec.seed)?;
    let n = task.dataset.len();
    let full = Batch::full(n);
    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= n;
    let mut sampler = BatchSampler::new(n, cfg.batch_size.max(1), spec.seed)?;
    let mut fisher_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    fisher_rng.set_stream(1);

    let mut opt = Optimizer::new(spec.optimizer, task.num_params())?;
    let mut params = task.model.init_params(spec.seed);
    let name = opt.kind().to_string();

    let path = dir.join(format!("{}.jsonl", spec.name));
    let mut writer = MetricsWriter::create(&path)?;
    let mut records = Vec::new();
    let mut status = "ok".to_string();

    for t in 0..cfg.steps {
        let batch = if full_batch { full.clone() } else { sampler.next_batch() };
        let (loss, grad) = task.loss_and_grad(&params, &batch);
        let logged = t % cfg.log_every == 0 || t + 1 == cfg.steps;
        let (train_loss, train_grad) = if logged && !full_batch {
            task.loss_and_grad(&params, &full)
        } else {
            (loss, grad.clone())
        };
        let grad_norm = norm(&train_grad);

        let mut record = MetricRecord {
            step: t,
            train_loss: Some(train_loss),
            grad_norm: Some(grad_norm),
            step_time_ns: None,
            ortho_residual: None,
            max_k_gamma: None,
            optimizer: name.clone(),
            seed: spec.seed,
            abort: None,
        };

        let failure = if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            Some(format!("non-finite loss or gradient at step {t} (loss {loss})"))
        } else {
            let d_t = opt
                .needs_fisher()
                .then(|| task.fisher_direction(&params, &batch, &mut fisher_rng, cfg.fisher_samples));
            let eta = opt.learning_rate(t);
            let start = Instant::now();
            let stepped = opt.step(&mut params, &grad, d_t.as_deref(), eta);
            let elapsed = start.elapsed().as_nanos() as u64;
            if cfg.timing {
                record.step_time_ns = Some(elapsed);
            }
            stepped.err().map(|e| format!("optimizer error at step {t}: {e}"))
        };

        if let Some(f) = opt.ggn_factors() {
            if logged || failure.is_some() {
                let inv = f.invariants();
                record.ortho_residual = Some(inv.ortho_residual);
                record.max_k_gamma = Some(inv.max_k_gamma);
            }
        }

        if let Some(reason) = failure {
            record.train_loss = Some(train_loss).filter(|x| x.is_finite());
            record.grad_norm = Some(grad_norm).filter(|x| x.is_finite());
            record.abort = Some(reason.clone());
            writer.write(&record)?;
            records.push(record);
            status = format!("abort: {reason}");
            break;
        }
        if logged {
            writer.write(&record)?;
            records.push(record);
        }
    }
    writer.finish()?;

    let derived = derive(&records);
    let oc = spec.optimizer;
    Ok(SummaryRow {
        run: spec.name.clone(),
        optimizer: name,
        seed: spec.seed,
        learning_rate: oc.learning_rate,
        alpha: oc.alpha,
        gamma: oc.gamma,
        tau: oc.tau,
        momentum_coef: oc.momentum_coef,
        records: records.len(),
        min_loss: derived.min_loss,
        final_grad_norm: derived.final_grad_norm,
        mean_step_time_ns: derived.mean_step_time_ns,
        flops_per_step: (oc.kind == OptimizerKind::Ginger).then(|| ginger_flops_per_step(task.num_params(), oc.tau)),
        status,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
