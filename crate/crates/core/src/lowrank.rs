//! Damped low-rank Gauss–Newton approximation `G = γI + U diag(σ) Uᵀ`.
//!
//! The state keeps a semi-orthogonal basis `U` (`d × τ`, row-major) and the
//! eigenvalues `σ` (descending). Direction queries use the Woodbury form
//!
//! ```text
//! G⁻¹g = γ⁻¹g − U K Uᵀ g,     K_i = σ_i / (γ² + γσ_i)
//! ```
//!
//! and updates fold one moving-average term `(1−α) d dᵀ` into the inverse via
//! Sherman–Morrison, then truncate back to rank `τ` with [`crate::rank_one::r1u`].

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, GingerError, Result};
use crate::kernels::{self, Exec};
use crate::rank_one::{self, Residual};

/// Largest dimension [`GgnFactors::reconstruct_dense`] will materialize.
pub const DENSE_LIMIT: usize = 4096;
/// Updates between re-orthonormalizations of the basis.
pub const DEFAULT_REORTHO_EVERY: u64 = 512;
pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// Slack on `K < 1/γ` and `K ≥ 0` before rounding is considered a real violation.
const K_CLAMP: f64 = 1e-12;

const BINARY_MAGIC: &[u8; 4] = b"GGNF";
const BINARY_VERSION: u32 = 1;

/// Woodbury coefficients `K_i = σ_i / (γ² + γσ_i)`.
pub fn k_from_sigma(sigma: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GingerError::Parameter(format!("damping must be positive, got {gamma}")));
    }
    Ok(sigma.iter().map(|&s| s / (gamma * gamma + gamma * s)).collect())
}

/// Inverse of [`k_from_sigma`]: `σ_i = γ² K_i / (1 − γ K_i)`.
///
/// Values within `1e-12` of the admissible window `[0, 1/γ)` are clamped back
/// into it; anything further out is a domain error.
pub fn sigma_from_k(k: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GingerError::Parameter(format!("damping must be positive, got {gamma}")));
    }
    let cap = (1.0 - K_CLAMP) / gamma;
    k.iter()
        .map(|&ki| {
            let ki = if ki < 0.0 {
                if ki < -K_CLAMP {
                    return Err(GingerError::Domain(format!("negative Woodbury coefficient {ki:e}")));
                }
                0.0
            } else if ki >= cap {
                if gamma * ki > 1.0 + K_CLAMP {
                    return Err(GingerError::Domain(format!(
                        "Woodbury coefficient {ki:e} exceeds 1/gamma = {:e}",
                        1.0 / gamma
                    )));
                }
                cap
            } else {
                ki
            };
            Ok(gamma * gamma * ki / (1.0 - gamma * ki))
        })
        .collect()
}

/// Summary of the state invariants, cheap enough to log periodically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `‖UᵀU − I‖_F`.
    pub ortho_residual: f64,
    /// `max_i γ K_i`; must stay below 1.
    pub max_k_gamma: f64,
    pub sorted: bool,
    pub nonnegative: bool,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.ortho_residual <= 1e-8 && self.max_k_gamma < 1.0 && self.sorted && self.nonnegative
    }
}

/// Live preconditioner state. Exclusively owned by one optimizer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GgnFactors {
    dim: usize,
    rank: usize,
    gamma: f64,
    alpha: f64,
    step: u64,
    basis: Vec<f64>,
    eigvals: Vec<f64>,
    #[serde(skip, default = "default_reortho")]
    reortho_every: u64,
    #[serde(skip)]
    exec: Exec,
    /// Scratch for the next basis, swapped in after a successful update.
    #[serde(skip)]
    spare: Vec<f64>,
}

fn default_reortho() -> u64 {
    DEFAULT_REORTHO_EVERY
}

impl PartialEq for GgnFactors {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.rank == other.rank
            && self.gamma.to_bits() == other.gamma.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.step == other.step
            && bits_eq(&self.basis, &other.basis)
            && bits_eq(&self.eigvals, &other.eigvals)
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn validate(dim: usize, rank: usize, gamma: f64, alpha: f64) -> Result<()> {
    if rank == 0 || rank >= dim {
        return Err(GingerError::Parameter(format!(
            "rank must satisfy 0 < rank < dim, got rank {rank} for dim {dim}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GingerError::Parameter(format!("damping must be positive, got {gamma}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GingerError::Parameter(format!("decay must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl GgnFactors {
    /// Fresh state with `σ = 0` and a seeded random semi-orthogonal basis.
    pub fn new(dim: usize, rank: usize, gamma: f64, alpha: f64, seed: u64) -> Result<Self> {
        validate(dim, rank, gamma, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<f64> = (0..dim * rank).map(|_| StandardNormal.sample(&mut rng)).collect();
        let exec = Exec::default();
        orthonormalize(&mut basis, dim, rank)?;
        Ok(Self {
            dim,
            rank,
            gamma,
            alpha,
            step: 0,
            basis,
            eigvals: vec![0.0; rank],
            reortho_every: DEFAULT_REORTHO_EVERY,
            exec,
            spare: Vec::new(),
        })
    }

    /// State from explicit factors. `basis` is row-major `dim × rank`.
    pub fn from_parts(
        dim: usize,
        gamma: f64,
        alpha: f64,
        basis: Vec<f64>,
        eigvals: Vec<f64>,
        step: u64,
    ) -> Result<Self> {
        let rank = eigvals.len();
        validate(dim, rank, gamma, alpha)?;
        check_len("basis", dim * rank, basis.len())?;
        check_finite("basis", &basis)?;
        check_finite("eigenvalues", &eigvals)?;
        let s = Self {
            dim,
            rank,
            gamma,
            alpha,
            step,
            basis,
            eigvals,
            reortho_every: DEFAULT_REORTHO_EVERY,
            exec: Exec::default(),
            spare: Vec::new(),
        };
        let report = s.invariants();
        if !report.holds() {
            return Err(GingerError::Invariant(format!("factors violate invariants: {report:?}")));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }
    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// `0` disables periodic re-orthonormalization.
    pub fn set_reortho_every(&mut self, every: u64) {
        self.reortho_every = every;
    }

    /// Current Woodbury coefficients `K_{t,γ}`.
    pub fn k(&self) -> Vec<f64> {
        self.eigvals
            .iter()
            .map(|&s| s / (self.gamma * self.gamma + self.gamma * s))
            .collect()
    }

    /// `(γI + U diag(scale·σ) Uᵀ)⁻¹ g` in `O(dτ)`.
    ///
    /// `eigval_scale = 1` queries `G⁻¹g`.
    pub fn direction(&self, g: &[f64], eigval_scale: f64) -> Result<Vec<f64>> {
        if !(eigval_scale > 0.0 && eigval_scale.is_finite()) {
            return Err(GingerError::Parameter(format!(
                "eigenvalue scale must be positive, got {eigval_scale}"
            )));
        }
        let scaled: Vec<f64> = self.eigvals.iter().map(|s| s * eigval_scale).collect();
        self.woodbury(self.gamma, &scaled, g)
    }

    fn woodbury(&self, damping: f64, sigma: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        check_len("direction query", self.dim, g.len())?;
        let k = k_from_sigma(sigma, damping)?;
        let mut coeffs = kernels::mat_t_vec(self.exec, &self.basis, self.rank, g);
        for (c, ki) in coeffs.iter_mut().zip(&k) {
            *c *= ki;
        }
        let mut out = vec![0.0; self.dim];
        kernels::scaled_minus_mat_vec(self.exec, &self.basis, self.rank, &coeffs, 1.0 / damping, g, &mut out);
        Ok(out)
    }

    /// Folds one moving-average term `(1−α) d dᵀ` into the approximation.
    ///
    /// The exact inverse after the update is
    /// `γ⁻¹I − (U (α⁻¹K_{γ/α}) Uᵀ + β h hᵀ)` with `h = G_{γ/α}⁻¹ d` and
    /// `β = (α⁻¹ − 1) / (α + (1−α) hᵀd)`, where `G_{γ/α}` is the current
    /// approximation with damping `γ/α`. The bracket is truncated to rank `τ`.
    ///
    /// Writing `d = U c + w` with `w ⟂ span(U)` gives
    /// `h = U (γ'⁻¹ − K') c + γ'⁻¹ w` for `γ' = γ/α`, `K' = K_{γ'}`, so one
    /// projection of `d` supplies both `h` and its residual direction.
    /// On error the state is left untouched.
    pub fn update(&mut self, d_t: &[f64]) -> Result<()> {
        check_len("moving-average direction", self.dim, d_t.len())?;
        check_finite("moving-average direction", d_t)?;
        let alpha = self.alpha;
        let shifted = self.gamma / alpha;
        let inv = 1.0 / shifted;

        let (c, w, rho) = rank_one::project_out(self.exec, &self.basis, self.rank, d_t)?;
        let k_shift = k_from_sigma(&self.eigvals, shifted)?;
        let a: Vec<f64> = c.iter().zip(&k_shift).map(|(ci, ki)| (inv - ki) * ci).collect();
        let hd = a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>() + inv * rho * rho;
        let beta = (1.0 / alpha - 1.0) / (alpha + (1.0 - alpha) * hd);
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(GingerError::Domain(format!("Sherman-Morrison coefficient {beta:e}")));
        }

        // v = √β h in the split form expected by the rank-one update
        let root = beta.sqrt();
        let coeffs: Vec<f64> = a.iter().map(|x| x * root).collect();
        let v_rho = root * inv * rho;
        let v_norm = (coeffs.iter().map(|x| x * x).sum::<f64>() + v_rho * v_rho).sqrt();
        let res = if v_rho > rank_one::RESIDUAL_EPS * v_norm.max(1.0) {
            let scale = 1.0 / rho;
            Residual {
                coeffs,
                direction: Some(w.into_iter().map(|x| x * scale).collect()),
                norm: v_rho,
            }
        } else {
            Residual {
                coeffs,
                direction: None,
                norm: 0.0,
            }
        };

        let k_prev: Vec<f64> = k_shift.iter().map(|k| k / alpha).collect();
        let mut next = std::mem::take(&mut self.spare);
        let diag = match rank_one::update_from_residual(
            self.exec,
            self.dim,
            &self.basis,
            &k_prev,
            &res,
            self.rank,
            &mut next,
        ) {
            Ok(diag) => diag,
            Err(e) => {
                self.spare = next;
                return Err(e);
            }
        };
        let eigvals = match sigma_from_k(&diag, self.gamma) {
            Ok(v) => v,
            Err(e) => {
                self.spare = next;
                return Err(e);
            }
        };

        let next_step = self.step + 1;
        if self.reortho_every > 0 && next_step.is_multiple_of(self.reortho_every) {
            orthonormalize(&mut next, self.dim, self.rank)?;
            rank_one::canonicalize_signs(self.exec, &mut next, self.rank);
        }
        self.spare = std::mem::replace(&mut self.basis, next);
        self.eigvals = eigvals;
        self.step = next_step;
        Ok(())
    }

    /// Dense `γI + U diag(σ) Uᵀ`, row-major. Refuses `dim > 4096`.
    pub fn reconstruct_dense(&self) -> Result<Vec<f64>> {
        if self.dim > DENSE_LIMIT {
            return Err(GingerError::TooLarge {
                dim: self.dim,
                limit: DENSE_LIMIT,
            });
        }
        let (d, r) = (self.dim, self.rank);
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += self.basis[i * r + k] * self.eigvals[k] * self.basis[j * r + k];
                }
                m[i * d + j] = acc;
                m[j * d + i] = acc;
            }
            m[i * d + i] += self.gamma;
        }
        Ok(m)
    }

    pub fn invariants(&self) -> InvariantReport {
        let k = self.k();
        InvariantReport {
            ortho_residual: rank_one::orthogonality_residual(self.exec, &self.basis, self.rank),
            max_k_gamma: k.iter().fold(0.0f64, |m, &x| m.max(x * self.gamma)),
            sorted: self.eigvals.windows(2).all(|w| w[0] >= w[1]),
            nonnegative: self.eigvals.iter().all(|&s| s >= 0.0),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GgnFactors = serde_json::from_str(s)?;
        Self::from_parts(raw.dim, raw.gamma, raw.alpha, raw.basis, raw.eigvals, raw.step)
    }

    /// Little-endian binary checkpoint:
    /// `"GGNF" u32:version u64:dim u64:rank f64:gamma f64:alpha u64:step f64[dim·rank]:basis f64[rank]:eigvals`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.rank as u64).to_le_bytes())?;
        w.write_all(&self.gamma.to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        for x in self.basis.iter().chain(&self.eigvals) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(GingerError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BINARY_VERSION {
            return Err(GingerError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let rank = u64::from_le_bytes(next(&mut r)?) as usize;
        let gamma = f64::from_le_bytes(next(&mut r)?);
        let alpha = f64::from_le_bytes(next(&mut r)?);
        let step = u64::from_le_bytes(next(&mut r)?);
        let count = dim
            .checked_mul(rank)
            .ok_or_else(|| GingerError::Format("size overflow".into()))?;
        let mut basis = Vec::with_capacity(count);
        for _ in 0..count {
            basis.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut eigvals = Vec::with_capacity(rank);
        for _ in 0..rank {
            eigvals.push(f64::from_le_bytes(next(&mut r)?));
        }
        Self::from_parts(dim, gamma, alpha, basis, eigvals, step)
    }
}

/// Two passes of modified Gram–Schmidt on the columns of a row-major matrix.
pub(crate) fn orthonormalize(basis: &mut [f64], dim: usize, cols: usize) -> Result<()> {
    for _pass in 0..2 {
        for j in 0..cols {
            for k in 0..j {
                let mut proj = 0.0;
                for i in 0..dim {
                    proj += basis[i * cols + j] * basis[i * cols + k];
                }
                for i in 0..dim {
                    basis[i * cols + j] -= proj * basis[i * cols + k];
                }
            }
            let n = (0..dim).map(|i| basis[i * cols + j].powi(2)).sum::<f64>().sqrt();
            if !(n > 1e-300) {
                return Err(GingerError::Domain("basis column collapsed during orthonormalization".into()));
            }
            for i in 0..dim {
                basis[i * cols + j] /= n;
            }
        }
    }
    Ok(())
}
