#![allow(dead_code)]

use ginger_core::oracle::from_row_major;
use ginger_core::GgnFactors;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Row-major `d × r` matrix with orthonormal columns.
pub fn orthonormal(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Vec<f64> {
    let g = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut out = vec![0.0; d * r];
    for i in 0..d {
        for j in 0..r {
            out[i * r + j] = q[(i, j)];
        }
    }
    out
}

/// Random valid state with eigenvalues spread over several orders of magnitude.
pub fn random_state(rng: &mut ChaCha8Rng, d: usize, r: usize, gamma: f64) -> GgnFactors {
    let basis = orthonormal(rng, d, r);
    let mut sigma: Vec<f64> = (0..r).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    GgnFactors::from_parts(d, gamma, 0.9, basis, sigma, 0).unwrap()
}

pub fn dense(s: &GgnFactors) -> DMatrix<f64> {
    from_row_major(s.dim(), s.dim(), &s.reconstruct_dense().unwrap())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(f64::MIN_POSITIVE)
}
