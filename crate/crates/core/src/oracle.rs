//! Brute-force dense references for everything the low-rank path approximates.
//!
//! Nothing here is fast: every operation materializes `d × d` matrices and
//! uses general dense factorizations. The module shares no numerical code with
//! [`crate::lowrank`] or [`crate::rank_one`] beyond plain data layout.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_finite, check_len, GingerError, Result};
use crate::rank_one::EigenPair;
use crate::tasks::{Batch, Task};

pub const DENSE_LIMIT: usize = 4096;

fn guard(dim: usize) -> Result<()> {
    if dim > DENSE_LIMIT {
        return Err(GingerError::TooLarge {
            dim,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Row-major slice to a dense matrix.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Full `d × d` moving average `G_t = α G_{t−1} + (1−α) d dᵀ`, starting from
/// zero, with the damping `γ` carried separately.
#[derive(Clone, Debug)]
pub struct DenseGgn {
    pub gamma: f64,
    pub alpha: f64,
    pub ema: DMatrix<f64>,
    pub step: u64,
}

impl DenseGgn {
    pub fn new(dim: usize, gamma: f64, alpha: f64) -> Result<Self> {
        guard(dim)?;
        Ok(Self {
            gamma,
            alpha,
            ema: DMatrix::zeros(dim, dim),
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.ema.nrows()
    }

    pub fn ema_update(&mut self, d_t: &[f64]) -> Result<()> {
        check_len("oracle direction", self.dim(), d_t.len())?;
        check_finite("oracle direction", d_t)?;
        let v = DVector::from_column_slice(d_t);
        self.ema = &self.ema * self.alpha + (&v * v.transpose()) * (1.0 - self.alpha);
        self.step += 1;
        Ok(())
    }

    /// `γI + G_t`.
    pub fn damped(&self) -> DMatrix<f64> {
        &self.ema + DMatrix::identity(self.dim(), self.dim()) * self.gamma
    }

    /// `(γI + G_t)⁻¹ g` by Cholesky.
    pub fn inverse_direction(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len("oracle query", self.dim(), g.len())?;
        solve_spd(&self.damped(), g)
    }
}

pub fn solve_spd(m: &DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    guard(m.nrows())?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| GingerError::Domain("matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(g)).as_slice().to_vec())
}

pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    guard(m.nrows())?;
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| GingerError::Domain("matrix is not positive definite".into()))
}

/// Eigenvalues (descending) and matching eigenvectors as columns.
pub fn eigh_desc(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    guard(m.nrows())?;
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or(GingerError::NoConvergence(0))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Leading `tau` eigenpairs of a symmetric PSD matrix (Eckart–Young optimal).
pub fn best_rank_tau(m: &DMatrix<f64>, tau: usize) -> Result<EigenPair> {
    let n = m.nrows();
    if tau == 0 || tau > n {
        return Err(GingerError::Parameter(format!("rank {tau} outside 1..={n}")));
    }
    let (vals, vecs) = eigh_desc(m)?;
    let mut basis = vec![0.0; n * tau];
    for i in 0..n {
        for j in 0..tau {
            basis[i * tau + j] = vecs[(i, j)];
        }
    }
    EigenPair::new(n, basis, vals[..tau].to_vec())
}

/// `U diag(w) Uᵀ` for a row-major basis.
pub fn low_rank_dense(dim: usize, basis: &[f64], w: &[f64]) -> DMatrix<f64> {
    let r = w.len();
    let u = from_row_major(dim, r, basis);
    &u * DMatrix::from_diagonal(&DVector::from_column_slice(w)) * u.transpose()
}

pub fn pair_dense(pair: &EigenPair) -> DMatrix<f64> {
    low_rank_dense(pair.dim, &pair.basis, &pair.diag)
}

/// `U (α⁻¹ K) Uᵀ + β h hᵀ`.
pub fn sherman_morrison_target(
    dim: usize,
    basis: &[f64],
    k: &[f64],
    alpha: f64,
    h: &[f64],
    beta: f64,
) -> DMatrix<f64> {
    let scaled: Vec<f64> = k.iter().map(|x| x / alpha).collect();
    let hv = DVector::from_column_slice(h);
    let base = if k.is_empty() {
        DMatrix::zeros(dim, dim)
    } else {
        low_rank_dense(dim, basis, &scaled)
    };
    base + (&hv * hv.transpose()) * beta
}

/// `h = (γ/α·I + U diag(σ) Uᵀ)⁻¹ d` and the coefficient `β` that makes
/// `(α(γ/α·I + UσUᵀ) + (1−α) d dᵀ)⁻¹ = α⁻¹(γ/α·I + UσUᵀ)⁻¹ − β h hᵀ`.
pub fn sherman_morrison_pieces(
    dim: usize,
    basis: &[f64],
    sigma: &[f64],
    gamma: f64,
    alpha: f64,
    d_t: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let shifted = low_rank_dense(dim, basis, sigma) + DMatrix::identity(dim, dim) * (gamma / alpha);
    let h = solve_spd(&shifted, d_t)?;
    let hd: f64 = h.iter().zip(d_t).map(|(a, b)| a * b).sum();
    let beta = (1.0 / alpha - 1.0) / (alpha + (1.0 - alpha) * hd);
    Ok((h, beta))
}

/// Dense replay of the truncated recursion: each step forms the exact
/// moving-average update of the current approximation, inverts it densely,
/// and keeps the best rank-`τ` part of `γ⁻¹I − G̃⁻¹`.
#[derive(Clone, Debug)]
pub struct TruncatedRecursion {
    pub gamma: f64,
    pub alpha: f64,
    pub tau: usize,
    /// Current `γI + low-rank` approximation.
    pub approx: DMatrix<f64>,
    /// Untruncated `γ⁻¹I − G̃⁻¹` from the last step.
    pub last_target: DMatrix<f64>,
}

impl TruncatedRecursion {
    pub fn new(dim: usize, tau: usize, gamma: f64, alpha: f64) -> Result<Self> {
        guard(dim)?;
        Ok(Self {
            gamma,
            alpha,
            tau,
            approx: DMatrix::identity(dim, dim) * gamma,
            last_target: DMatrix::zeros(dim, dim),
        })
    }

    pub fn step(&mut self, d_t: &[f64]) -> Result<()> {
        let n = self.approx.nrows();
        check_len("oracle direction", n, d_t.len())?;
        let eye = DMatrix::<f64>::identity(n, n);
        let v = DVector::from_column_slice(d_t);
        let undamped = &self.approx - &eye * self.gamma;
        let exact = &eye * self.gamma + undamped * self.alpha + (&v * v.transpose()) * (1.0 - self.alpha);
        let target = &eye / self.gamma - inverse_spd(&exact)?;
        let pair = best_rank_tau(&target, self.tau)?;
        let correction = pair_dense(&pair);
        self.approx = inverse_spd(&(&eye / self.gamma - correction))?;
        self.last_target = target;
        Ok(())
    }
}

/// Central finite-difference gradient of the mean loss over `batch`.
pub fn finite_difference_grad(task: &Task, params: &[f64], batch: &Batch, step: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let plus = task.loss(&p, batch);
            p[i] = orig - step;
            let minus = task.loss(&p, batch);
            p[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Output Jacobian `∂f/∂θ` (`c × d`) at one input, by central differences.
pub fn finite_difference_jacobian(task: &Task, params: &[f64], x: &[f64], step: f64) -> DMatrix<f64> {
    let c = task.model.num_classes;
    let d = params.len();
    let mut p = params.to_vec();
    let mut jac = DMatrix::zeros(c, d);
    for j in 0..d {
        let orig = p[j];
        p[j] = orig + step;
        let plus = task.model.logits(&p, x);
        p[j] = orig - step;
        let minus = task.model.logits(&p, x);
        p[j] = orig;
        for k in 0..c {
            jac[(k, j)] = (plus[k] - minus[k]) / (2.0 * step);
        }
    }
    jac
}

/// Softmax output-space Hessian `diag(p) − p pᵀ`.
pub fn softmax_hessian(probs: &[f64]) -> DMatrix<f64> {
    let p = DVector::from_column_slice(probs);
    DMatrix::from_diagonal(&p) - &p * p.transpose()
}

/// Gauss–Newton / Fisher matrix `|B|⁻¹ Σ_x Jᵀ (diag(p) − p pᵀ) J` over a batch.
pub fn analytic_fisher(task: &Task, params: &[f64], batch: &Batch) -> Result<DMatrix<f64>> {
    let d = params.len();
    guard(d)?;
    let mut acc = DMatrix::zeros(d, d);
    for &i in batch.indices() {
        let x = task.dataset.features(i);
        let jac = finite_difference_jacobian(task, params, x, 1e-5);
        let probs = task.model.probabilities(params, x);
        acc += jac.transpose() * softmax_hessian(&probs) * &jac;
    }
    Ok(acc / batch.len() as f64)
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = eigh_desc(m)?;
    Ok(vals.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// `‖P_a − P_b‖_F` between the orthogonal projectors onto two column spans.
pub fn projector_distance(dim: usize, a: &[f64], b: &[f64], rank: usize) -> f64 {
    let ua = from_row_major(dim, rank, a);
    let ub = from_row_major(dim, rank, b);
    (&ua * ua.transpose() - &ub * ub.transpose()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_update_from_zero() {
        let mut o = DenseGgn::new(2, 1.0, 0.9).unwrap();
        o.ema_update(&[1.0, 0.0]).unwrap();
        assert!((o.ema[(0, 0)] - 0.1).abs() < 1e-16);
        assert_eq!(o.ema[(1, 1)], 0.0);
        assert_eq!(o.step, 1);
    }

    #[test]
    fn repeated_direction_converges_to_outer_product() {
        let mut o = DenseGgn::new(2, 1.0, 0.5).unwrap();
        for _ in 0..60 {
            o.ema_update(&[1.0, 2.0]).unwrap();
        }
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!((&o.ema - want).norm() < 1e-15);
    }

    #[test]
    fn inverse_direction_examples() {
        let o = DenseGgn::new(3, 0.25, 0.9).unwrap();
        assert_eq!(o.inverse_direction(&[1.0, 2.0, 3.0]).unwrap(), vec![4.0, 8.0, 12.0]);
        let mut o = DenseGgn::new(2, 1.0, 0.5).unwrap();
        o.ema = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = o.inverse_direction(&[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn best_rank_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 2.0, 1.0]));
        let pair = best_rank_tau(&m, 2).unwrap();
        assert!((pair.diag[0] - 3.0).abs() < 1e-14 && (pair.diag[1] - 2.0).abs() < 1e-14);
        assert!((pair.basis[0].abs() - 1.0).abs() < 1e-14);
        assert!((pair.basis[3].abs() - 1.0).abs() < 1e-14);
        let zero = best_rank_tau(&DMatrix::zeros(3, 3), 2).unwrap();
        assert_eq!(zero.diag, vec![0.0, 0.0]);
    }

    #[test]
    fn sherman_morrison_target_edges() {
        let basis = [1.0, 0.0];
        let m = sherman_morrison_target(2, &basis, &[0.4], 0.5, &[0.0, 1.0], 0.0);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 0.0]));
        let m = sherman_morrison_target(2, &[], &[], 0.5, &[1.0, 2.0], 2.0);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));
    }

    #[test]
    fn guard_refuses_large() {
        assert!(matches!(DenseGgn::new(DENSE_LIMIT + 1, 1.0, 0.9), Err(GingerError::TooLarge { .. })));
    }
}
