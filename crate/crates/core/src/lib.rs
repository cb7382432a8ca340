//! Online low-rank eigendecomposition of the inverse damped generalized
//! Gauss–Newton matrix, used as an optimizer preconditioner.
//!
//! - [`lowrank`] holds the preconditioner state `γI + U diag(σ) Uᵀ`, its
//!   Woodbury direction query and its moving-average update.
//! - [`rank_one`] is the fast symmetric rank-one eigendecomposition update.
//! - [`oracle`] has dense `O(d³)` reference implementations for testing.
//! - [`optim`] exposes Ginger, heavy-ball momentum, Adam and QNG behind one
//!   interface.
//! - [`tasks`] provides softmax classification tasks, exact gradients and
//!   Fisher-sampled directions.
//!
//! All preconditioner state is `f64`. With the `parallel` feature (default)
//! the `O(dτ)` kernels and batched model evaluation run on rayon; results are
//! bit-identical to the sequential path.

pub mod error;
pub mod kernels;
pub mod lowrank;
pub mod optim;
pub mod oracle;
pub mod rank_one;
pub mod tasks;

pub use error::{GingerError, Result};
pub use kernels::Exec;
pub use lowrank::{k_from_sigma, sigma_from_k, GgnFactors, InvariantReport};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, Schedule};
pub use rank_one::{r1u, small_eigh, EigenPair};
pub use tasks::{Architecture, Batch, BatchSampler, Dataset, Model, SyntheticConfig, Task};
