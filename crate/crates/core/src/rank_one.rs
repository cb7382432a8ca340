//! Symmetric rank-one eigendecomposition update.
//!
//! Given `U K Uᵀ` in eigen-form (`U` semi-orthogonal `d × r`, `K` diagonal)
//! and a vector `v`, [`r1u`] returns the leading eigenpairs of
//! `U K Uᵀ + v vᵀ` in `O(d r² + r³)` time without forming a `d × d` matrix:
//!
//! ```text
//! [U | h] = [U | p] · [[I, Uᵀv], [0, ρ]]        ρ = ‖v − UUᵀv‖,  p = (v − UUᵀv)/ρ
//! U K Uᵀ + v vᵀ = [U | p] · C · [U | p]ᵀ
//! C = [[K + c cᵀ, ρ c], [ρ cᵀ, ρ²]]             c = Uᵀv
//! C = V W Vᵀ  ⇒  new basis [U | p]·V, new diagonal W, truncated to the target rank
//! ```

use crate::error::{check_finite, check_len, GingerError, Result};
use crate::kernels::{self, Exec};

/// Relative threshold below which the residual `ρ` is treated as zero.
pub const RESIDUAL_EPS: f64 = 1e-12;
/// Eigenvalues of `C` in `[-NEG_DUST·‖C‖, 0)` are rounding noise and clamped to 0.
pub const NEG_DUST: f64 = 1e-10;
/// Relative gap under which two eigenvalues are considered tied at the truncation boundary.
pub const TIE_EPS: f64 = 1e-12;
/// Maximum number of cyclic Jacobi sweeps.
pub const MAX_SWEEPS: usize = 64;

/// A semi-orthogonal basis (row-major `dim × rank`) with a descending,
/// nonnegative diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub dim: usize,
    pub basis: Vec<f64>,
    pub diag: Vec<f64>,
}

impl EigenPair {
    pub fn new(dim: usize, basis: Vec<f64>, diag: Vec<f64>) -> Result<Self> {
        check_len("eigen-pair basis", dim * diag.len(), basis.len())?;
        Ok(Self { dim, basis, diag })
    }

    pub fn rank(&self) -> usize {
        self.diag.len()
    }

    /// Column `j` of the basis.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let r = self.rank();
        (0..self.dim).map(|i| self.basis[i * r + j]).collect()
    }

    /// `‖UᵀU − I‖_F`.
    pub fn orthogonality_residual(&self, exec: Exec) -> f64 {
        orthogonality_residual(exec, &self.basis, self.rank())
    }
}

pub(crate) fn orthogonality_residual(exec: Exec, basis: &[f64], cols: usize) -> f64 {
    let g = kernels::gram(exec, basis, cols);
    let mut acc = 0.0;
    for a in 0..cols {
        for b in 0..cols {
            let target = if a == b { 1.0 } else { 0.0 };
            let e = g[a * cols + b] - target;
            acc += e * e;
        }
    }
    acc.sqrt()
}

/// Decomposition `h = U·coeffs + norm·p` with `p ⟂ span(U)`.
#[derive(Clone, Debug)]
pub struct Residual {
    /// `Uᵀh`.
    pub coeffs: Vec<f64>,
    /// Unit residual direction, absent when `h` lies in `span(U)`.
    pub direction: Option<Vec<f64>>,
    pub norm: f64,
}

/// Splits `h` into its component in `span(U)` and an orthonormal residual
/// direction. Projection is applied twice so `Uᵀp` stays at rounding level.
pub fn orthonormal_residual(exec: Exec, basis: &[f64], cols: usize, h: &[f64]) -> Result<Residual> {
    let (coeffs, mut w, norm) = project_out(exec, basis, cols, h)?;
    let h_norm = kernels::norm(exec, h);
    if norm <= RESIDUAL_EPS * h_norm.max(1.0) {
        return Ok(Residual {
            coeffs,
            direction: None,
            norm: 0.0,
        });
    }
    let inv = 1.0 / norm;
    for x in &mut w {
        *x *= inv;
    }
    Ok(Residual {
        coeffs,
        direction: Some(w),
        norm,
    })
}

/// `(Uᵀh, h − UUᵀh, ‖h − UUᵀh‖)` with two projection passes.
pub(crate) fn project_out(exec: Exec, basis: &[f64], cols: usize, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let d = h.len();
    check_len("basis rows", d * cols, basis.len())?;
    check_finite("residual input", h)?;

    let mut coeffs = kernels::mat_t_vec(exec, basis, cols, h);
    let mut w = vec![0.0; d];
    kernels::scaled_minus_mat_vec(exec, basis, cols, &coeffs, 1.0, h, &mut w);
    let again = kernels::mat_t_vec(exec, basis, cols, &w);
    let mut w2 = vec![0.0; d];
    kernels::scaled_minus_mat_vec(exec, basis, cols, &again, 1.0, &w, &mut w2);
    for (c, a) in coeffs.iter_mut().zip(&again) {
        *c += a;
    }
    let norm = kernels::norm(exec, &w2);
    Ok((coeffs, w2, norm))
}

/// Full eigendecomposition of a small symmetric matrix (row-major `n × n`)
/// by cyclic Jacobi rotations.
///
/// Returns `(V, w)` with `V` row-major orthogonal, `C = V diag(w) Vᵀ` and `w`
/// descending. Each column of `V` has its largest-magnitude entry positive.
pub fn small_eigh(c: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("small symmetric matrix", n * n, c.len())?;
    check_finite("small symmetric matrix", c)?;
    let fro = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            if (c[i * n + j] - c[j * n + i]).abs() > 1e-10 * fro.max(1.0) {
                return Err(GingerError::Input(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut a = c.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if fro == 0.0 || off(&a) <= 1e-17 * fro {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    if !converged && off(&a) > 1e-14 * fro {
        return Err(GingerError::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let w: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        let mut peak = 0.0f64;
        for k in 0..n {
            let x = v[k * n + old];
            if x.abs() > peak.abs() {
                peak = x;
            }
        }
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vs[k * n + new] = sign * v[k * n + old];
        }
    }
    Ok((vs, w))
}

/// Leading `target_rank` eigenpairs of `U K Uᵀ + v vᵀ`.
///
/// When `v` lies in `span(U)` the core matrix is `r × r` and no column is
/// appended. Ties at the truncation boundary drop the eigenvector with the
/// larger component along the appended direction. Output columns are sign
/// canonicalized (largest-magnitude entry positive).
pub fn r1u(exec: Exec, pair: &EigenPair, v: &[f64], target_rank: usize) -> Result<EigenPair> {
    let d = pair.dim;
    check_len("rank-one update vector", d, v.len())?;
    check_finite("rank-one update vector", v)?;
    let res = orthonormal_residual(exec, &pair.basis, pair.rank(), v)?;
    let mut basis = Vec::new();
    let diag = update_from_residual(exec, d, &pair.basis, &pair.diag, &res, target_rank, &mut basis)?;
    Ok(EigenPair { dim: d, basis, diag })
}

/// [`r1u`] for `v = U·res.coeffs + res.norm·res.direction`, writing the new
/// basis into `dst` and returning the new diagonal.
pub(crate) fn update_from_residual(
    exec: Exec,
    d: usize,
    basis: &[f64],
    diag: &[f64],
    res: &Residual,
    target_rank: usize,
    dst: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let r = diag.len();
    if target_rank == 0 {
        return Err(GingerError::Parameter("target rank must be positive".into()));
    }
    let n = if res.direction.is_some() { r + 1 } else { r };
    if target_rank > n {
        return Err(GingerError::Parameter(format!(
            "target rank {target_rank} exceeds available rank {n}"
        )));
    }

    let c = &res.coeffs;
    let mut core = vec![0.0; n * n];
    for i in 0..r {
        for j in 0..r {
            core[i * n + j] = c[i] * c[j];
        }
        core[i * n + i] += diag[i];
    }
    if n > r {
        for i in 0..r {
            core[i * n + r] = res.norm * c[i];
            core[r * n + i] = res.norm * c[i];
        }
        core[r * n + r] = res.norm * res.norm;
    }

    let (vecs, mut w) = small_eigh(&core, n)?;
    let scale = core.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut w {
        if *x < 0.0 {
            if *x < -NEG_DUST * scale {
                return Err(GingerError::Invariant(format!(
                    "rank-one update produced eigenvalue {x:e} on a PSD input"
                )));
            }
            *x = 0.0;
        }
    }

    let keep = choose_kept(&w, &vecs, n, r, target_rank);
    let new_diag: Vec<f64> = keep.iter().map(|&k| w[k]).collect();
    dst.resize(d * target_rank, 0.0);
    let peaks = kernels::rotate_columns(exec, basis, r, res.direction.as_deref(), &vecs, n, &keep, dst);
    flip_negative_peaks(exec, dst, &peaks);
    Ok(new_diag)
}

/// Indices of the eigenpairs retained after truncation, in descending order.
fn choose_kept(w: &[f64], vecs: &[f64], n: usize, r: usize, target: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..n).collect();
    if target == n {
        return keep;
    }
    let tol = TIE_EPS * w[0].abs().max(f64::MIN_POSITIVE);
    let pivot = w[target - 1];
    let lo = (0..n).find(|&i| (w[i] - pivot).abs() <= tol).unwrap_or(target - 1);
    let hi = (lo..n).take_while(|&i| (w[i] - pivot).abs() <= tol).last().unwrap_or(lo);
    if hi >= target && n > r {
        // overlap with the appended direction is the last row of V
        let overlap = |k: usize| vecs[r * n + k].abs();
        keep[lo..=hi].sort_by(|&a, &b| overlap(a).total_cmp(&overlap(b)).then(a.cmp(&b)));
    }
    keep.truncate(target);
    keep.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    keep
}

pub(crate) fn canonicalize_signs(exec: Exec, basis: &mut [f64], cols: usize) {
    let peaks = kernels::column_peaks(exec, basis, cols);
    flip_negative_peaks(exec, basis, &peaks);
}

fn flip_negative_peaks(exec: Exec, basis: &mut [f64], peaks: &[f64]) {
    if peaks.iter().any(|&p| p < 0.0) {
        let signs: Vec<f64> = peaks.iter().map(|&p| if p < 0.0 { -1.0 } else { 1.0 }).collect();
        kernels::scale_columns(exec, basis, &signs);
    }
}
