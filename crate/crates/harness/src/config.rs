//! Experiment configuration, read from TOML.
//!
//! ```toml
//! steps = 3000            # optimizer steps per run (0 is allowed)
//! batch_size = 64         # 0 or absent means full batch
//! log_every = 10          # record every n-th step and the last one
//! seeds = [0, 1, 2]       # or `seed = 0`
//! output_dir = "runs/blobs"
//! timing = true           # false writes step_time_ns as null
//! fisher_samples = 1      # sampled labels per input for d_t
//!
//! [task]
//! n = 1024
//! dim = 16
//! classes = 4
//! blob_spread = 1.0
//! data_seed = 0           # absent: the run seed also draws the data
//! model = { kind = "mlp", hidden = 32 }
//!
//! [[optimizer]]
//! kind = "ginger"                # ginger | momentum | adam | qng
//! learning_rate = [0.3, 0.1]     # any numeric field may be a list
//! gamma = 1e-3
//! tau = 8
//! schedule = { kind = "inverse_sqrt", scale = 100.0 }
//! ```
//!
//! Every list-valued optimizer field is expanded into a Cartesian grid.
//! The `GINGER_OUT` environment variable overrides `output_dir`.

use std::path::{Path, PathBuf};

use ginger_core::{Architecture, OptimizerConfig, OptimizerKind, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const OUTPUT_ENV: &str = "GINGER_OUT";

/// A scalar or a list of values for a grid axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    #[serde(default = "default_spread")]
    pub blob_spread: f64,
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_model")]
    pub model: Architecture,
}

fn default_spread() -> f64 {
    1.0
}

fn default_model() -> Architecture {
    Architecture::SoftmaxLinear { bias: true }
}

/// One `[[optimizer]]` table; list-valued fields form a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSweep {
    pub kind: OptimizerKind,
    pub learning_rate: OneOrMany<f64>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub alpha: Option<OneOrMany<f64>>,
    #[serde(default)]
    pub gamma: Option<OneOrMany<f64>>,
    #[serde(default)]
    pub tau: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub momentum_coef: Option<OneOrMany<f64>>,
}

impl OptimizerSweep {
    pub fn expand(&self) -> Result<Vec<OptimizerConfig>> {
        let axis = |name: &str, v: Vec<f64>| {
            if v.is_empty() {
                Err(HarnessError::Config(format!("empty grid for {}.{name}", self.kind)))
            } else {
                Ok(v)
            }
        };
        let base = OptimizerConfig::new(self.kind, 1.0);
        let lrs = axis("learning_rate", self.learning_rate.values())?;
        let alphas = axis("alpha", self.alpha.as_ref().map_or(vec![base.alpha], |a| a.values()))?;
        let gammas = axis("gamma", self.gamma.as_ref().map_or(vec![base.gamma], |a| a.values()))?;
        let mus = axis(
            "momentum_coef",
            self.momentum_coef.as_ref().map_or(vec![base.momentum_coef], |a| a.values()),
        )?;
        let taus = self.tau.as_ref().map_or(vec![base.tau], |a| a.values());
        if taus.is_empty() {
            return Err(HarnessError::Config(format!("empty grid for {}.tau", self.kind)));
        }

        let mut out = Vec::new();
        for &learning_rate in &lrs {
            for &alpha in &alphas {
                for &gamma in &gammas {
                    for &tau in &taus {
                        for &momentum_coef in &mus {
                            out.push(OptimizerConfig {
                                learning_rate,
                                schedule: self.schedule.unwrap_or(Schedule::Constant),
                                alpha,
                                gamma,
                                tau,
                                momentum_coef,
                                ..base
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub steps: u64,
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub timing: bool,
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
    pub task: TaskConfig,
    pub optimizer: Vec<OptimizerSweep>,
}

fn default_log_every() -> u64 {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("ginger-out")
}
fn yes() -> bool {
    true
}
fn default_fisher_samples() -> usize {
    1
}

/// A single training run after grid expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// File stem, e.g. `ginger-seed3` or `ginger-g1-seed3`.
    pub name: String,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads and validates a config file, applying the `GINGER_OUT` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.seed) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => vec![0],
        }
    }

    pub fn num_params(&self) -> Result<usize> {
        let model = ginger_core::Model::new(self.task.model, self.task.dim, self.task.classes)?;
        Ok(model.num_params())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        if self.fisher_samples == 0 {
            return bad("fisher_samples must be positive");
        }
        if self.task.n == 0 {
            return bad("task.n must be positive");
        }
        if self.optimizer.is_empty() {
            return bad("at least one [[optimizer]] table is required");
        }
        if self.seeds().is_empty() {
            return bad("seeds must not be empty");
        }
        if self.seed.is_some() && self.seeds.is_some() {
            return bad("give either seed or seeds, not both");
        }
        let dim = self.num_params()?;
        for sweep in &self.optimizer {
            for cfg in sweep.expand()? {
                cfg.validate(dim)?;
            }
        }
        Ok(())
    }

    /// Expands optimizer grids and seeds into individual runs.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        let mut configs: Vec<OptimizerConfig> = Vec::new();
        for sweep in &self.optimizer {
            configs.extend(sweep.expand()?);
        }
        let mut out = Vec::new();
        for (i, opt) in configs.iter().enumerate() {
            let same_kind = configs.iter().filter(|c| c.kind == opt.kind).count();
            let index = configs[..i].iter().filter(|c| c.kind == opt.kind).count();
            let label = if same_kind > 1 {
                format!("{}-g{index}", opt.kind)
            } else {
                opt.kind.to_string()
            };
            for seed in self.seeds() {
                out.push(RunSpec {
                    name: format!("{label}-seed{seed}"),
                    optimizer: OptimizerConfig { seed, ..*opt },
                    seed,
                });
            }
        }
        Ok(out)
    }
}
