//! Optimizers sharing one interface: Ginger, heavy-ball momentum, Adam and
//! the quasi-natural-gradient (QNG) baseline.
//!
//! Every optimizer is driven the same way:
//!
//! ```text
//! let eta = opt.learning_rate(t);
//! opt.step(&mut params, &grad, fisher_direction.as_deref(), eta)?;
//! ```
//!
//! Ginger and QNG consume the Fisher-sampled direction `d_t` (sampled labels)
//! to update their curvature estimate and precondition `grad` (true labels).
//! The two vectors are distinct and both must be supplied.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, GingerError, Result};
use crate::lowrank::GgnFactors;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Ginger,
    Momentum,
    Adam,
    Qng,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Ginger => "ginger",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Qng => "qng",
        }
    }

    /// Whether `step` needs a Fisher-sampled direction.
    pub fn needs_fisher(self) -> bool {
        matches!(self, OptimizerKind::Ginger | OptimizerKind::Qng)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Learning-rate schedule `η_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `η / √(1 + t / scale)`.
    InverseSqrt {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Cosine decay from `η` to `η·min_ratio` over `total_steps`.
    Cosine {
        total_steps: u64,
        #[serde(default)]
        min_ratio: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Schedule {
    pub fn at(&self, base: f64, t: u64) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::InverseSqrt { scale } => base / (1.0 + t as f64 / scale).sqrt(),
            Schedule::Cosine {
                total_steps,
                min_ratio,
            } => {
                let frac = (t as f64 / total_steps.max(1) as f64).min(1.0);
                base * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + (PI * frac).cos()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "constant")]
    pub schedule: Schedule,
    /// EMA decay (ginger, qng) or second-moment decay (adam).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Damping (ginger) or ε (adam).
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Rank (ginger, qng).
    #[serde(default = "default_tau")]
    pub tau: usize,
    /// First-moment coefficient; `0` disables momentum for ginger.
    #[serde(default = "default_momentum")]
    pub momentum_coef: f64,
    #[serde(default)]
    pub seed: u64,
}

fn constant() -> Schedule {
    Schedule::Constant
}
fn default_alpha() -> f64 {
    crate::lowrank::DEFAULT_ALPHA
}
fn default_gamma() -> f64 {
    crate::lowrank::DEFAULT_GAMMA
}
fn default_tau() -> usize {
    8
}
fn default_momentum() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        let gamma = if kind == OptimizerKind::Adam { 1e-8 } else { default_gamma() };
        Self {
            kind,
            learning_rate,
            schedule: Schedule::Constant,
            alpha: default_alpha(),
            gamma,
            tau: default_tau(),
            momentum_coef: default_momentum(),
            seed: 0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(GingerError::Parameter(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.momentum_coef >= 0.0 && self.momentum_coef < 1.0) {
            return bad(format!("momentum coefficient must lie in [0, 1), got {}", self.momentum_coef));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.kind.needs_fisher() && (self.tau == 0 || self.tau >= dim) {
            return bad(format!("tau must satisfy 0 < tau < {dim}, got {}", self.tau));
        }
        if let Schedule::InverseSqrt { scale } = self.schedule {
            if !(scale > 0.0) {
                return bad(format!("inverse_sqrt scale must be positive, got {scale}"));
            }
        }
        if let Schedule::Cosine { min_ratio, .. } = self.schedule {
            if !(0.0..=1.0).contains(&min_ratio) {
                return bad(format!("cosine min_ratio must lie in [0, 1], got {min_ratio}"));
            }
        }
        Ok(())
    }
}

/// Quasi-natural-gradient state: the last `τ` factors
/// `K_s = √α I + β_s q_s q_sᵀ` of `Â` with `Ĝ = Â Âᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QngState {
    pub dim: usize,
    pub tau: usize,
    pub alpha: f64,
    /// Oldest factor first.
    pub factors: VecDeque<(Vec<f64>, f64)>,
    pub step: u64,
}

impl QngState {
    pub fn new(dim: usize, tau: usize, alpha: f64) -> Self {
        Self {
            dim,
            tau,
            alpha,
            factors: VecDeque::with_capacity(tau + 1),
            step: 0,
        }
    }

    /// `β = (√(α + (1−α)‖q‖²) − √α) / ‖q‖²`, evaluated as
    /// `(1−α) / (√(α + (1−α)‖q‖²) + √α)`, which has no cancellation and
    /// reaches the limit `(1−α) / (2√α)` at `q = 0`.
    pub fn beta(alpha: f64, q_norm2: f64) -> f64 {
        (1.0 - alpha) / ((alpha + (1.0 - alpha) * q_norm2).sqrt() + alpha.sqrt())
    }

    fn apply_inverse_factor(&self, q: &[f64], beta: f64, x: &mut [f64]) {
        // (√α I + β q qᵀ)⁻¹ = α^{-1/2} (I − β q qᵀ / (√α + β‖q‖²))
        let sa = self.alpha.sqrt();
        let qq: f64 = q.iter().map(|v| v * v).sum();
        let qx: f64 = q.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let c = beta * qx / (sa + beta * qq);
        for (xi, qi) in x.iter_mut().zip(q) {
            *xi = (*xi - c * qi) / sa;
        }
    }

    /// `Â⁻¹ x`: inverse factors applied oldest first.
    pub fn apply_a_inverse(&self, x: &mut [f64]) {
        for (q, b) in &self.factors {
            self.apply_inverse_factor(q, *b, x);
        }
    }

    /// `Â⁻ᵀ x`: inverse factors applied newest first.
    pub fn apply_a_inverse_t(&self, x: &mut [f64]) {
        for (q, b) in self.factors.iter().rev() {
            self.apply_inverse_factor(q, *b, x);
        }
    }

    /// `Â x`.
    pub fn apply_a(&self, x: &mut [f64]) {
        let sa = self.alpha.sqrt();
        for (q, b) in self.factors.iter().rev() {
            let qx: f64 = q.iter().zip(x.iter()).map(|(a, c)| a * c).sum();
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi = sa * *xi + b * qx * qi;
            }
        }
    }

    pub fn update(&mut self, d_t: &[f64]) -> Result<()> {
        check_len("qng direction", self.dim, d_t.len())?;
        check_finite("qng direction", d_t)?;
        let mut q = d_t.to_vec();
        self.apply_a_inverse(&mut q);
        let qq: f64 = q.iter().map(|v| v * v).sum();
        self.step += 1;
        if qq == 0.0 {
            return Ok(());
        }
        let beta = Self::beta(self.alpha, qq);
        self.factors.push_back((q, beta));
        while self.factors.len() > self.tau {
            self.factors.pop_front();
        }
        Ok(())
    }

    /// `(Â Âᵀ)⁻¹ g` in `O(dτ)`.
    pub fn direction(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len("qng query", self.dim, g.len())?;
        let mut x = g.to_vec();
        self.apply_a_inverse(&mut x);
        self.apply_a_inverse_t(&mut x);
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GingerState {
    pub factors: GgnFactors,
    /// Heavy-ball buffer on the preconditioned direction; empty when disabled.
    pub momentum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Ginger(GingerState),
    Momentum { velocity: Vec<f64> },
    Adam(AdamState),
    Qng(QngState),
}

/// An optimizer instance: configuration plus kind-specific state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    dim: usize,
    step: u64,
    state: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    optimizer: Optimizer,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate(dim)?;
        let state = match config.kind {
            OptimizerKind::Ginger => OptimizerState::Ginger(GingerState {
                factors: GgnFactors::new(dim, config.tau, config.gamma, config.alpha, config.seed)?,
                momentum: if config.momentum_coef > 0.0 { vec![0.0; dim] } else { Vec::new() },
            }),
            OptimizerKind::Momentum => OptimizerState::Momentum {
                velocity: vec![0.0; dim],
            },
            OptimizerKind::Adam => OptimizerState::Adam(AdamState {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                step: 0,
            }),
            OptimizerKind::Qng => OptimizerState::Qng(QngState::new(dim, config.tau, config.alpha)),
        };
        Ok(Self {
            config,
            dim,
            step: 0,
            state,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn kind(&self) -> OptimizerKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }

    pub fn needs_fisher(&self) -> bool {
        self.config.kind.needs_fisher()
    }

    /// Ginger factors, if this is a Ginger optimizer.
    pub fn ggn_factors(&self) -> Option<&GgnFactors> {
        match &self.state {
            OptimizerState::Ginger(s) => Some(&s.factors),
            _ => None,
        }
    }

    pub fn learning_rate(&self, t: u64) -> f64 {
        self.config.schedule.at(self.config.learning_rate, t)
    }

    /// One parameter update. `fisher` is required for Ginger and QNG and
    /// ignored otherwise.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], fisher: Option<&[f64]>, eta: f64) -> Result<()> {
        check_len("parameters", self.dim, params.len())?;
        check_len("gradient", self.dim, grad.len())?;
        check_finite("gradient", grad)?;
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(GingerError::Parameter(format!("learning rate must be nonnegative, got {eta}")));
        }
        let need = || {
            fisher.ok_or_else(|| {
                GingerError::Input(format!("{} requires a Fisher-sampled direction", self.config.kind))
            })
        };
        let mu = self.config.momentum_coef;
        match &mut self.state {
            OptimizerState::Ginger(s) => {
                let d_t = need()?;
                s.factors.update(d_t)?;
                let g = s.factors.direction(grad, 1.0)?;
                if s.momentum.is_empty() {
                    for (p, gi) in params.iter_mut().zip(&g) {
                        *p -= eta * gi;
                    }
                } else {
                    for ((p, m), gi) in params.iter_mut().zip(s.momentum.iter_mut()).zip(&g) {
                        *m = mu * *m + gi;
                        *p -= eta * *m;
                    }
                }
            }
            OptimizerState::Momentum { velocity } => {
                for ((p, v), gi) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = mu * *v + gi;
                    *p -= eta * *v;
                }
            }
            OptimizerState::Adam(s) => {
                let (b1, b2, eps) = (mu, self.config.alpha, self.config.gamma);
                s.step += 1;
                let c1 = 1.0 - b1.powi(s.step as i32);
                let c2 = 1.0 - b2.powi(s.step as i32);
                for (((p, m), v), gi) in params.iter_mut().zip(s.m.iter_mut()).zip(s.v.iter_mut()).zip(grad) {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= eta * mh / (vh.sqrt() + eps);
                }
            }
            OptimizerState::Qng(s) => {
                let d_t = need()?;
                s.update(d_t)?;
                let g = s.direction(grad)?;
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= eta * gi;
                }
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Self-describing, versioned JSON checkpoint.
    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            optimizer: self.clone(),
        })?)
    }

    pub fn from_checkpoint(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GingerError::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        let opt = ck.optimizer;
        opt.config.validate(opt.dim)?;
        let kind_matches = matches!(
            (&opt.state, opt.config.kind),
            (OptimizerState::Ginger(_), OptimizerKind::Ginger)
                | (OptimizerState::Momentum { .. }, OptimizerKind::Momentum)
                | (OptimizerState::Adam(_), OptimizerKind::Adam)
                | (OptimizerState::Qng(_), OptimizerKind::Qng)
        );
        if !kind_matches {
            return Err(GingerError::Format("state kind does not match config kind".into()));
        }
        if let OptimizerState::Ginger(s) = &opt.state {
            // re-validate the factors through the checked constructor
            let f = &s.factors;
            GgnFactors::from_parts(f.dim(), f.gamma(), f.alpha(), f.basis().to_vec(), f.eigvals().to_vec(), f.step())?;
        }
        Ok(opt)
    }
}

/// Analytic FLOP estimate for one Ginger update plus direction query:
/// `12 d τ` for the projections and rotation plus `(τ+1)³` for the core
/// eigendecomposition (counted once, constant factor omitted).
pub fn ginger_flops_per_step(dim: usize, tau: usize) -> f64 {
    12.0 * dim as f64 * tau as f64 + ((tau + 1) as f64).powi(3)
}
