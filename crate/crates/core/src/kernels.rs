//! Row-chunked kernels over tall row-major `d × k` matrices.
//!
//! Every reduction is computed as a list of per-chunk partial results that are
//! then summed in chunk order, so the sequential and the parallel paths give
//! bit-identical output for the same input.

use serde::{Deserialize, Serialize};

/// Rows processed per work item.
pub const CHUNK_ROWS: usize = 4096;

/// Execution policy for the `O(d·k)` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise identical
    /// to `Sequential`.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

fn n_chunks(rows: usize) -> usize {
    rows.div_ceil(CHUNK_ROWS)
}

/// Maps `f` over chunk indices, preserving order.
pub(crate) fn map_chunks<T, F>(exec: Exec, rows: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let range = |c: usize| c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(rows);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n_chunks(rows)).into_par_iter().map(|c| f(range(c))).collect()
        }
        _ => (0..n_chunks(rows)).map(|c| f(range(c))).collect(),
    }
}

/// Maps `f` over consecutive `chunk`-sized pieces of `items`, preserving order.
pub(crate) fn map_chunks_of<I, T, F>(exec: Exec, items: &[I], chunk: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(chunk).map(f).collect()
        }
        _ => items.chunks(chunk).map(f).collect(),
    }
}

/// Calls `f(first_row, rows_slice)` on disjoint row chunks of `out`
/// (`width` values per row) and collects the results in chunk order.
pub(crate) fn map_rows_mut<T, F>(exec: Exec, out: &mut [f64], width: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync + Send,
{
    if width == 0 || out.is_empty() {
        return Vec::new();
    }
    let step = CHUNK_ROWS * width;
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(step)
                .enumerate()
                .map(|(c, chunk)| f(c * CHUNK_ROWS, chunk))
                .collect()
        }
        _ => out
            .chunks_mut(step)
            .enumerate()
            .map(|(c, chunk)| f(c * CHUNK_ROWS, chunk))
            .collect(),
    }
}

pub(crate) fn for_each_rows_mut<F>(exec: Exec, out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    map_rows_mut(exec, out, width, f);
}

pub fn dot(exec: Exec, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    map_chunks(exec, a.len(), |r| {
        a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum::<f64>()
    })
    .into_iter()
    .sum()
}

pub fn norm(exec: Exec, a: &[f64]) -> f64 {
    dot(exec, a, a).sqrt()
}

/// `Mᵀx` for a row-major `rows × cols` matrix `m`.
pub fn mat_t_vec(exec: Exec, m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    let rows = x.len();
    debug_assert_eq!(m.len(), rows * cols);
    let partials = map_chunks(exec, rows, |r| {
        let mut acc = vec![0.0; cols];
        for (row, &xi) in m[r.start * cols..r.end * cols].chunks_exact(cols).zip(&x[r]) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v * xi;
            }
        }
        acc
    });
    let mut out = vec![0.0; cols];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// `out = scale·x − M·coeffs`.
pub fn scaled_minus_mat_vec(
    exec: Exec,
    m: &[f64],
    cols: usize,
    coeffs: &[f64],
    scale: f64,
    x: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(coeffs.len(), cols);
    debug_assert_eq!(out.len(), x.len());
    for_each_rows_mut(exec, out, 1, |start, chunk| {
        let rows = m[start * cols..(start + chunk.len()) * cols].chunks_exact(cols);
        for ((o, row), &xi) in chunk.iter_mut().zip(rows).zip(&x[start..]) {
            let proj: f64 = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
            *o = scale * xi - proj;
        }
    });
}

/// `dst = [M | extra] · R[:, keep]` where `R` is a row-major
/// `(cols + extra?) × rcols` matrix and `keep` lists the retained columns.
///
/// Returns the [`column_peaks`] of `dst`, gathered in the same pass.
#[allow(clippy::too_many_arguments)]
pub fn rotate_columns(
    exec: Exec,
    m: &[f64],
    cols: usize,
    extra: Option<&[f64]>,
    r: &[f64],
    rcols: usize,
    keep: &[usize],
    dst: &mut [f64],
) -> Vec<f64> {
    let out_cols = keep.len();
    let in_rows = cols + usize::from(extra.is_some());
    // compact copy of the kept columns so the inner loop is a contiguous axpy
    let mut rk = vec![0.0; in_rows * out_cols];
    for j in 0..in_rows {
        for (k, &col) in keep.iter().enumerate() {
            rk[j * out_cols + k] = r[j * rcols + col];
        }
    }
    let partials = map_rows_mut(exec, dst, out_cols, |start, chunk| {
        let mut best = vec![0.0f64; out_cols];
        for (k, out) in chunk.chunks_exact_mut(out_cols).enumerate() {
            let i = start + k;
            out.fill(0.0);
            for (&v, coef) in m[i * cols..(i + 1) * cols].iter().zip(rk.chunks_exact(out_cols)) {
                for (o, c) in out.iter_mut().zip(coef) {
                    *o += v * c;
                }
            }
            if let Some(p) = extra {
                let v = p[i];
                for (o, c) in out.iter_mut().zip(&rk[cols * out_cols..]) {
                    *o += v * c;
                }
            }
            for (b, &o) in best.iter_mut().zip(out.iter()) {
                if o.abs() > b.abs() {
                    *b = o;
                }
            }
        }
        best
    });
    merge_peaks(out_cols, partials)
}

fn merge_peaks(cols: usize, partials: Vec<Vec<f64>>) -> Vec<f64> {
    let mut out = vec![0.0f64; cols];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            if v.abs() > o.abs() {
                *o = v;
            }
        }
    }
    out
}

/// `MᵀM` for a row-major `rows × cols` matrix.
pub fn gram(exec: Exec, m: &[f64], cols: usize) -> Vec<f64> {
    if cols == 0 {
        return Vec::new();
    }
    let rows = m.len() / cols;
    let partials = map_chunks(exec, rows, |r| {
        let mut acc = vec![0.0; cols * cols];
        for row in m[r.start * cols..r.end * cols].chunks_exact(cols) {
            for (&va, acc_row) in row.iter().zip(acc.chunks_exact_mut(cols)) {
                for (a, &vb) in acc_row.iter_mut().zip(row) {
                    *a += va * vb;
                }
            }
        }
        acc
    });
    let mut out = vec![0.0; cols * cols];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// For each column, the entry of largest magnitude (first one on ties).
pub fn column_peaks(exec: Exec, m: &[f64], cols: usize) -> Vec<f64> {
    if cols == 0 {
        return Vec::new();
    }
    let rows = m.len() / cols;
    let partials = map_chunks(exec, rows, |r| {
        let mut best = vec![0.0f64; cols];
        for i in r {
            for (b, &v) in best.iter_mut().zip(&m[i * cols..(i + 1) * cols]) {
                if v.abs() > b.abs() {
                    *b = v;
                }
            }
        }
        best
    });
    merge_peaks(cols, partials)
}

/// Multiplies each column `j` by `factors[j]` in place.
pub fn scale_columns(exec: Exec, m: &mut [f64], factors: &[f64]) {
    let cols = factors.len();
    for_each_rows_mut(exec, m, cols, |_, chunk| {
        for row in chunk.chunks_mut(cols) {
            for (v, f) in row.iter_mut().zip(factors) {
                *v *= f;
            }
        }
    });
}
