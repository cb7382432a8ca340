//! Named numerical checks of the preconditioner, the baselines and the
//! tasks against dense references, each with a tolerance and a time budget.

use std::time::{Duration, Instant};

use ginger_core::optim::QngState;
use ginger_core::oracle::{
    self, analytic_fisher, best_rank_tau, finite_difference_grad, from_row_major, pair_dense, projector_distance,
    DenseGgn, TruncatedRecursion,
};
use ginger_core::tasks::make_synthetic;
use ginger_core::{
    r1u, Architecture, Batch, Dataset, EigenPair, Exec, GgnFactors, Model, Optimizer, OptimizerConfig, OptimizerKind,
    Schedule, SyntheticConfig, Task,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bench::bench_scaling;
use crate::error::Result;

/// What a check measured: the worst observed value against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    pub detail: String,
}

impl Measurement {
    fn at_most(value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            value,
            bound,
            passed: value <= bound,
            detail: detail.into(),
        }
    }
}

pub struct Check {
    pub id: usize,
    pub name: &'static str,
    pub time_limit: Option<Duration>,
    run: fn() -> Result<Measurement>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub elapsed_s: f64,
    pub time_limit_s: Option<f64>,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} [{:>2}] {:<26} value {:.3e} bound {:.3e} in {:.2}s",
            self.id, self.name, self.value, self.bound, self.elapsed_s
        )?;
        if let Some(limit) = self.time_limit_s {
            write!(f, " (limit {limit:.0}s)")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

impl Check {
    /// Runs the check; an error or an exceeded time budget counts as failure.
    pub fn run(&self) -> CheckOutcome {
        let start = Instant::now();
        let result = (self.run)();
        let elapsed = start.elapsed();
        let in_time = self.time_limit.is_none_or(|l| elapsed <= l);
        let m = result.unwrap_or_else(|e| Measurement {
            value: f64::NAN,
            bound: f64::NAN,
            passed: false,
            detail: format!("error: {e}"),
        });
        let mut detail = m.detail;
        if !in_time {
            detail = format!("{detail}; exceeded time limit");
        }
        CheckOutcome {
            id: self.id,
            name: self.name,
            passed: m.passed && in_time,
            value: m.value,
            bound: m.bound,
            elapsed_s: elapsed.as_secs_f64(),
            time_limit_s: self.time_limit.map(|l| l.as_secs_f64()),
            detail,
        }
    }
}

pub fn checks() -> Vec<Check> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Check { id: 1, name: "woodbury_direction", time_limit: secs(5), run: woodbury_direction },
        Check { id: 2, name: "truncated_recursion", time_limit: secs(30), run: truncated_recursion },
        Check { id: 3, name: "low_rank_stream_exact", time_limit: None, run: low_rank_stream_exact },
        Check { id: 4, name: "inverse_spectrum_bounds", time_limit: None, run: inverse_spectrum_bounds },
        Check { id: 5, name: "rank_one_optimality", time_limit: None, run: rank_one_optimality },
        Check { id: 6, name: "qng_rank_deficiency", time_limit: None, run: qng_rank_deficiency },
        Check { id: 7, name: "fisher_estimator", time_limit: secs(60), run: fisher_estimator },
        Check { id: 8, name: "gradient_check", time_limit: None, run: gradient_check },
        Check { id: 9, name: "convergence", time_limit: None, run: convergence },
        Check { id: 10, name: "linear_scaling", time_limit: None, run: linear_scaling },
    ]
}

/// Runs every check whose name contains `filter`, in order.
pub fn run_checks(filter: Option<&str>, mut on_done: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    checks()
        .iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .map(|c| {
            let out = c.run();
            on_done(&out);
            out
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(f64::MIN_POSITIVE)
}

/// Row-major `d × r` matrix with orthonormal columns.
fn orthonormal(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Vec<f64> {
    let q = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let mut out = vec![0.0; d * r];
    for i in 0..d {
        for j in 0..r {
            out[i * r + j] = q[(i, j)];
        }
    }
    out
}

fn dense(s: &GgnFactors) -> Result<DMatrix<f64>> {
    Ok(from_row_major(s.dim(), s.dim(), &s.reconstruct_dense()?))
}

fn woodbury_direction() -> Result<Measurement> {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = r.random_range(2..=64);
        let tau = r.random_range(1..=8usize).min(d - 1);
        let gamma = 10f64.powf(r.random_range(-3.0..1.0));
        let mut sigma: Vec<f64> = (0..tau).map(|_| 10f64.powf(r.random_range(-3.0..2.0))).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        let s = GgnFactors::from_parts(d, gamma, 0.9, orthonormal(&mut r, d, tau), sigma, 0)?;
        let g = gaussian(&mut r, d);
        let x = s.direction(&g, 1.0)?;
        let back = dense(&s)? * DVector::from_column_slice(&x);
        worst = worst.max(rel_err(back.as_slice(), &g));
    }
    Ok(Measurement::at_most(worst, 1e-9, "max ‖G·x − g‖/‖g‖ over 100 states"))
}

fn truncated_recursion() -> Result<Measurement> {
    let (d, tau) = (32, 4);
    let mut worst = 0.0f64;
    for (seed, &(gamma, alpha)) in [(1e-2, 0.95), (1e-1, 0.9), (1e-3, 0.99), (1.0, 0.9)].iter().enumerate() {
        let mut r = rng(20 + seed as u64);
        let mut fast = GgnFactors::new(d, tau, gamma, alpha, seed as u64)?;
        let mut slow = TruncatedRecursion::new(d, tau, gamma, alpha)?;
        for _ in 0..200 {
            let v = gaussian(&mut r, d);
            fast.update(&v)?;
            slow.step(&v)?;
            worst = worst.max((dense(&fast)? - &slow.approx).norm());
        }
    }
    Ok(Measurement::at_most(worst, 1e-8, "max per-step Frobenius error over 4 streams of 200"))
}

fn low_rank_stream_exact() -> Result<Measurement> {
    let (d, rank, gamma, alpha) = (32, 3, 0.1, 0.95);
    let mut r = rng(3);
    let span = from_row_major(d, rank, &orthonormal(&mut r, d, rank));
    let mut fast = GgnFactors::new(d, rank, gamma, alpha, 3)?;
    let mut slow = DenseGgn::new(d, gamma, alpha)?;
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let v = &span * DVector::from_vec(gaussian(&mut r, rank));
        fast.update(v.as_slice())?;
        slow.ema_update(v.as_slice())?;
        worst = worst.max((dense(&fast)? - slow.damped()).norm());
    }
    Ok(Measurement::at_most(worst, 1e-8, "max Frobenius error over 500 steps"))
}

fn inverse_spectrum_bounds() -> Result<Measurement> {
    let d = 12;
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    for (seed, &(gamma, alpha, tau)) in [(1e-2, 0.99, 3), (1e-4, 0.9, 4), (0.3, 0.95, 2), (1.0, 0.5, 5)]
        .iter()
        .enumerate()
    {
        let mut r = rng(40 + seed as u64);
        let mut s = GgnFactors::new(d, tau, gamma, alpha, seed as u64)?;
        for _ in 0..250 {
            let scale = 10f64.powf(r.random_range(-2.0..1.0));
            let v: Vec<f64> = gaussian(&mut r, d).iter().map(|x| scale * x).collect();
            s.update(&v)?;
            let (vals, _) = oracle::eigh_desc(&oracle::inverse_spd(&dense(&s)?)?)?;
            worst = worst.max((vals[0] * gamma - 1.0).abs());
            let k_ok = s.k().iter().all(|&k| (0.0..1.0 / gamma).contains(&k));
            if vals[d - 1] <= 0.0 || !k_ok {
                violations += 1;
            }
        }
    }
    let mut m = Measurement::at_most(worst, 1e-8, format!("relative error of the top inverse eigenvalue over 1000 updates, {violations} bound violations"));
    m.passed &= violations == 0;
    Ok(m)
}

fn random_pair(r: &mut ChaCha8Rng, d: usize, tau: usize) -> Result<EigenPair> {
    let basis = orthonormal(r, d, tau);
    let mut diag: Vec<f64> = (0..tau).map(|_| r.random_range(0.1..10.0)).collect();
    diag.sort_by(|a, b| b.total_cmp(a));
    Ok(EigenPair::new(d, basis, diag)?)
}

fn plus_outer(m: DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let v = DVector::from_column_slice(v);
    m + &v * v.transpose()
}

fn rank_one_optimality() -> Result<Measurement> {
    let mut r = rng(5);
    let (d, tau) = (32, 5);
    let (mut eig_err, mut proj_err, mut degenerate_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut gapped = 0;
    for _ in 0..50 {
        let pair = random_pair(&mut r, d, tau)?;
        let v: Vec<f64> = gaussian(&mut r, d).iter().map(|x| 1.5 * x).collect();
        let out = r1u(Exec::Sequential, &pair, &v, tau)?;
        let m = plus_outer(pair_dense(&pair), &v);
        let (vals, _) = oracle::eigh_desc(&m)?;
        for (a, b) in out.diag.iter().zip(&vals) {
            eig_err = eig_err.max((a - b).abs());
        }
        if vals[tau - 1] - vals[tau] >= 1e-6 {
            gapped += 1;
            let best = best_rank_tau(&m, tau)?;
            proj_err = proj_err.max(projector_distance(d, &out.basis, &best.basis, tau));
        }

        // update inside the current span: no new direction
        let pair = random_pair(&mut r, d, tau)?;
        let inside = from_row_major(d, tau, &pair.basis) * DVector::from_vec(gaussian(&mut r, tau));
        let out = r1u(Exec::Sequential, &pair, inside.as_slice(), tau)?;
        let m = plus_outer(pair_dense(&pair), inside.as_slice());
        let (vals, _) = oracle::eigh_desc(&m)?;
        degenerate_err = degenerate_err.max((pair_dense(&out) - &m).norm());
        for (a, b) in out.diag.iter().zip(&vals) {
            degenerate_err = degenerate_err.max((a - b).abs());
        }
    }
    let passed = eig_err <= 1e-9 && proj_err <= 1e-6 && degenerate_err <= 1e-9 && gapped > 0;
    Ok(Measurement {
        value: eig_err.max(degenerate_err),
        bound: 1e-9,
        passed,
        detail: format!(
            "eigenvalue error {eig_err:.1e}, projector distance {proj_err:.1e} (bound 1e-6, {gapped} gapped cases), in-span error {degenerate_err:.1e}"
        ),
    })
}

/// Dense `Â` of a QNG state, built column by column.
fn dense_qng_factor(s: &QngState) -> DMatrix<f64> {
    let d = s.dim;
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        s.apply_a(&mut e);
        a.set_column(j, &DVector::from_vec(e));
    }
    a
}

fn qng_rank_deficiency() -> Result<Measurement> {
    let (d, tau, alpha, steps) = (32, 4, 0.9f64, 50);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(600 + seed);
        let mut s = QngState::new(d, tau, alpha);
        for _ in 0..steps {
            s.update(&gaussian(&mut r, d))?;
        }
        let a = dense_qng_factor(&s);
        let shift = alpha.powi(tau.min(steps) as i32);
        let mut sv: Vec<f64> = (&a * a.transpose() - DMatrix::identity(d, d) * shift)
            .singular_values()
            .iter()
            .copied()
            .collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        worst = worst.max(sv[2 * tau]);
    }
    Ok(Measurement::at_most(worst, 1e-8, "largest singular value past index 2τ over 20 seeds"))
}

fn blob_task(arch: Architecture, dim: usize, classes: usize, n: usize, spread: f64, seed: u64) -> Result<Task> {
    let data = make_synthetic(&SyntheticConfig {
        n,
        dim,
        classes,
        blob_spread: spread,
        seed,
    })?;
    Ok(Task::new(Model::new(arch, dim, classes)?, data)?)
}

fn fisher_estimator() -> Result<Measurement> {
    // two features, three classes, no bias: six parameters
    let t = blob_task(Architecture::SoftmaxLinear { bias: false }, 2, 3, 5, 1.0, 7)?;
    let mut r = rng(7);
    let params: Vec<f64> = gaussian(&mut r, 6).iter().map(|x| 0.4 * x).collect();
    let batch = Batch::new(vec![0, 1, 2, 3]);
    let want = analytic_fisher(&t, &params, &batch)?;
    let draws = 50_000;
    let mut acc = DMatrix::zeros(6, 6);
    for _ in 0..draws {
        let v = DVector::from_vec(t.fisher_direction(&params, &batch, &mut r, 1));
        acc += &v * v.transpose();
    }
    acc /= draws as f64;
    let err = (&acc - &want).norm() / want.norm();
    Ok(Measurement::at_most(err, 0.02, "relative Frobenius error, 50000 draws"))
}

fn gradient_check() -> Result<Measurement> {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    let archs = [
        Architecture::SoftmaxLinear { bias: true },
        Architecture::SoftmaxLinear { bias: false },
        Architecture::Mlp { hidden: 5 },
    ];
    for arch in archs {
        let t = blob_task(arch, 4, 3, 12, 1.0, 8)?;
        for _ in 0..5 {
            let params: Vec<f64> = gaussian(&mut r, t.num_params()).iter().map(|x| 0.5 * x).collect();
            for batch in [Batch::full(12), Batch::new(vec![r.random_range(0..12)])] {
                let (_, g) = t.loss_and_grad(&params, &batch);
                worst = worst.max(rel_err(&g, &finite_difference_grad(&t, &params, &batch, 1e-5)));
            }
        }
    }
    Ok(Measurement::at_most(worst, 1e-6, "relative error against central differences, 3 architectures"))
}

const BLOB_POINTS: usize = 200;
const BLOB_DIM: usize = 10;
const TARGET_LOSS: f64 = 0.1;

/// Two separable Gaussian blobs. With `decades > 0` the feature axes are
/// rescaled geometrically over that many orders of magnitude, which makes
/// plain gradient steps ill-conditioned; separability is unchanged.
fn logistic_task(seed: u64, decades: f64) -> Result<Task> {
    let raw = make_synthetic(&SyntheticConfig {
        n: BLOB_POINTS,
        dim: BLOB_DIM,
        classes: 2,
        blob_spread: 2.0,
        seed,
    })?;
    let scales: Vec<f64> = (0..BLOB_DIM)
        .map(|j| 10f64.powf(-decades * j as f64 / (BLOB_DIM - 1) as f64))
        .collect();
    let mut features = Vec::with_capacity(BLOB_POINTS * BLOB_DIM);
    let mut labels = Vec::with_capacity(BLOB_POINTS);
    for i in 0..raw.len() {
        features.extend(raw.features(i).iter().zip(&scales).map(|(x, s)| x * s));
        labels.push(raw.label(i) as u32);
    }
    let data = Dataset::new(BLOB_DIM, 2, seed, features, labels)?;
    Ok(Task::new(Model::new(Architecture::SoftmaxLinear { bias: true }, BLOB_DIM, 2)?, data)?)
}

struct Trajectory {
    steps_to_target: Option<u64>,
    min_grad_norm: f64,
}

/// Feature-scale spread of the task used to compare optimizers.
const COMPARISON_DECADES: f64 = 2.0;

fn train(cfg: OptimizerConfig, seed: u64, decades: f64, max_steps: u64, stop_at_target: bool) -> Result<Trajectory> {
    let t = logistic_task(seed, decades)?;
    let batch = Batch::full(BLOB_POINTS);
    let mut opt = Optimizer::new(OptimizerConfig { seed, ..cfg }, t.num_params())?;
    let mut params = t.model.init_params(seed);
    let mut r = rng(seed);
    let mut out = Trajectory {
        steps_to_target: None,
        min_grad_norm: f64::INFINITY,
    };
    for step in 0..max_steps {
        let (loss, grad) = t.loss_and_grad(&params, &batch);
        if !loss.is_finite() {
            break;
        }
        out.min_grad_norm = out.min_grad_norm.min(norm(&grad));
        if loss <= TARGET_LOSS && out.steps_to_target.is_none() {
            out.steps_to_target = Some(step);
            if stop_at_target {
                break;
            }
        }
        let d_t = opt.needs_fisher().then(|| t.fisher_direction(&params, &batch, &mut r, 1));
        if opt.step(&mut params, &grad, d_t.as_deref(), opt.learning_rate(step)).is_err() {
            break;
        }
    }
    Ok(out)
}

/// Both optimizers use first-moment coefficient 0.9; Ginger uses moving
/// average decay 0.99 and rank 8.
fn logistic_config(kind: OptimizerKind, learning_rate: f64, gamma: f64) -> OptimizerConfig {
    let mut cfg = OptimizerConfig::new(kind, learning_rate);
    cfg.schedule = Schedule::InverseSqrt { scale: 100.0 };
    cfg.momentum_coef = 0.9;
    if kind == OptimizerKind::Ginger {
        cfg.gamma = gamma;
        cfg.alpha = 0.99;
        cfg.tau = 8;
    }
    cfg
}

/// Data seeds used only to pick hyperparameters.
const TUNING_SEEDS: std::ops::Range<u64> = 100..120;
const TUNING_BUDGET: u64 = 500;

/// Picks the grid point with the smallest mean `ln(1 + steps to target)`
/// over the tuning seeds; runs that never reach it count as the budget.
fn tune(grid: &[OptimizerConfig]) -> Result<OptimizerConfig> {
    let mut best = (f64::INFINITY, grid[0]);
    for &cfg in grid {
        let mut score = 0.0;
        for seed in TUNING_SEEDS {
            let steps = train(cfg, seed, COMPARISON_DECADES, TUNING_BUDGET, true)?
                .steps_to_target
                .unwrap_or(TUNING_BUDGET);
            score += (1.0 + steps as f64).ln();
        }
        if score < best.0 {
            best = (score, cfg);
        }
    }
    Ok(best.1)
}

fn convergence() -> Result<Measurement> {
    let rates: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .flat_map(|&e| [e, 5.0 * e])
        .collect();
    let momentum_grid: Vec<_> = rates
        .iter()
        .map(|&lr| logistic_config(OptimizerKind::Momentum, lr, 0.0))
        .collect();
    let ginger_grid: Vec<_> = [1e-3, 1e-2, 1e-1, 1.0]
        .iter()
        .flat_map(|&g| rates.iter().map(move |&lr| logistic_config(OptimizerKind::Ginger, lr, g)))
        .collect();
    let momentum = tune(&momentum_grid)?;
    let ginger = tune(&ginger_grid)?;

    let budget = 5000;
    let mut wins = 0;
    let (mut worst_grad, mut worst_grad_scaled) = (0.0f64, 0.0f64);
    let mut pairs = Vec::new();
    for seed in 0..5 {
        worst_grad = worst_grad.max(train(ginger, seed, 0.0, budget, false)?.min_grad_norm);
        let g = train(ginger, seed, COMPARISON_DECADES, budget, false)?;
        let m = train(momentum, seed, COMPARISON_DECADES, budget, true)?;
        worst_grad_scaled = worst_grad_scaled.max(g.min_grad_norm);
        let (gs, ms) = (g.steps_to_target.unwrap_or(u64::MAX), m.steps_to_target.unwrap_or(u64::MAX));
        if gs != u64::MAX && gs <= ms {
            wins += 1;
        }
        pairs.push(format!("{}/{}", fmt_steps(gs), fmt_steps(ms)));
    }
    let passed = worst_grad <= 1e-3 && wins >= 4;
    Ok(Measurement {
        value: worst_grad,
        bound: 1e-3,
        passed,
        detail: format!(
            "max over seeds of min gradient norm in {budget} steps ({worst_grad_scaled:.2e} with rescaled axes); \
             steps to loss {TARGET_LOSS} ginger/momentum {} (ginger lr {} γ {}, momentum lr {}), ginger no slower on {wins}/5",
            pairs.join(" "),
            ginger.learning_rate,
            ginger.gamma,
            momentum.learning_rate
        ),
    })
}

fn fmt_steps(s: u64) -> String {
    if s == u64::MAX {
        "-".into()
    } else {
        s.to_string()
    }
}

fn linear_scaling() -> Result<Measurement> {
    let tau = 8;
    let points = [
        (10_000, tau),
        (20_000, tau),
        (100_000, tau),
        (200_000, tau),
        (1_000_000, tau),
        (2_000_000, tau),
        (100_000, 2 * tau),
    ];
    let rows = bench_scaling(&points, 15, Exec::Sequential, 0)?;
    let t = |i: usize| rows[i].median_ns;
    let dim_ratios = [t(1) / t(0), t(3) / t(2), t(5) / t(4)];
    let rank_ratio = t(6) / t(2);
    let dims_ok = dim_ratios.iter().all(|r| (1.6..=2.6).contains(r));
    let worst = dim_ratios.iter().fold(0.0f64, |a, &r| a.max((r - 2.0).abs()));
    Ok(Measurement {
        value: rank_ratio,
        bound: 5.5,
        passed: dims_ok && rank_ratio <= 5.5,
        detail: format!(
            "d→2d ratios {:.2} {:.2} {:.2} (allowed 1.6–2.6, worst distance from 2 is {worst:.2}); τ→2τ ratio {rank_ratio:.2}",
            dim_ratios[0], dim_ratios[1], dim_ratios[2]
        ),
    })
}
