mod common;

use common::*;
use ginger_core::oracle::{self, best_rank_tau, pair_dense, sherman_morrison_target, DenseGgn};
use ginger_core::{GgnFactors, GingerError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn trace_matches_unrolled_sum() {
    let (d, alpha) = (8, 0.9);
    let mut r = rng(31);
    let mut o = DenseGgn::new(d, 0.1, alpha).unwrap();
    let stream: Vec<Vec<f64>> = (0..40).map(|_| gaussian(&mut r, d)).collect();
    for (t, v) in stream.iter().enumerate() {
        o.ema_update(v).unwrap();
        let want: f64 = stream[..=t]
            .iter()
            .enumerate()
            .map(|(s, v)| alpha.powi((t - s) as i32) * (1.0 - alpha) * norm(v).powi(2))
            .sum();
        assert!((o.ema.trace() - want).abs() <= 1e-12 * want.max(1.0));
    }
    assert_eq!(o.step, 40);
}

#[test]
fn inverse_direction_examples() {
    let o = DenseGgn::new(3, 0.5, 0.9).unwrap();
    let x = o.inverse_direction(&[1.0, -2.0, 4.0]).unwrap();
    assert!(rel_err(&x, &[2.0, -4.0, 8.0]) < 1e-15);

    let mut o = DenseGgn::new(2, 1.0, 0.9).unwrap();
    o.ema = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let x = o.inverse_direction(&[1.0, 1.0]).unwrap();
    assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
}

#[test]
fn inverse_direction_residual_is_small() {
    let mut r = rng(32);
    let d = 20;
    let mut o = DenseGgn::new(d, 0.01, 0.95).unwrap();
    for _ in 0..30 {
        o.ema_update(&gaussian(&mut r, d)).unwrap();
    }
    for _ in 0..10 {
        let g = gaussian(&mut r, d);
        let x = o.inverse_direction(&g).unwrap();
        let res = o.damped() * DVector::from_column_slice(&x) - DVector::from_column_slice(&g);
        assert!(res.norm() <= 1e-10 * norm(&g));
    }
}

#[test]
fn dense_operations_refuse_large_inputs() {
    let o = DenseGgn::new(5000, 1.0, 0.9);
    assert!(matches!(o, Err(GingerError::TooLarge { .. })));
    let s = GgnFactors::new(5000, 2, 1.0, 0.9, 0).unwrap();
    assert!(matches!(s.reconstruct_dense(), Err(GingerError::TooLarge { .. })));
}

#[test]
fn best_rank_of_diagonal() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
    let p = best_rank_tau(&m, 2).unwrap();
    assert_eq!(p.diag, vec![3.0, 2.0]);
    let want = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    for (a, b) in p.basis.iter().zip(&want) {
        assert!((a.abs() - b).abs() < 1e-15);
    }
    let zero = best_rank_tau(&DMatrix::zeros(4, 4), 2).unwrap();
    assert_eq!(zero.diag, vec![0.0, 0.0]);
}

#[test]
fn truncation_error_is_next_eigenvalue() {
    let mut r = rng(33);
    let d = 12;
    for _ in 0..5 {
        let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        let p = best_rank_tau(&m, 3).unwrap();
        let (vals, _) = oracle::eigh_desc(&m).unwrap();
        let gap = oracle::spectral_norm(&(&m - pair_dense(&p))).unwrap();
        assert!((gap - vals[3]).abs() <= 1e-10 * vals[0]);
    }
}

#[test]
fn sherman_morrison_target_edge_cases() {
    let basis = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let k = [2.0, 1.0];
    let h = [0.3, -0.1, 2.0];
    let base = sherman_morrison_target(3, &basis, &k, 0.5, &h, 0.0);
    let want = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 0.0]));
    assert!((base - want).norm() < 1e-15);
    let only = sherman_morrison_target(3, &[], &[], 0.5, &h, 2.0);
    let hv = DVector::from_column_slice(&h);
    assert!((only - (&hv * hv.transpose()) * 2.0).norm() < 1e-15);
}

#[test]
fn sherman_morrison_target_spectrum_is_in_window() {
    let mut r = rng(34);
    for _ in 0..20 {
        let gamma = 10f64.powf(r.random_range(-3.0..0.0));
        let s = random_state(&mut r, 16, 4, gamma);
        let alpha = s.alpha();
        let v: Vec<f64> = gaussian(&mut r, 16).iter().map(|x| 4.0 * x).collect();
        let k = ginger_core::k_from_sigma(s.eigvals(), gamma / alpha).unwrap();
        let (h, beta) =
            oracle::sherman_morrison_pieces(16, s.basis(), s.eigvals(), gamma, alpha, &v).unwrap();
        let m = sherman_morrison_target(16, s.basis(), &k, alpha, &h, beta);
        let (vals, _) = oracle::eigh_desc(&m).unwrap();
        assert!(vals[15] >= -1e-10 * vals[0]);
        assert!(vals[0] < 1.0 / gamma);
        // the target is exactly γ⁻¹I minus the inverse of the moving average
        let exact = (dense(&s) - DMatrix::identity(16, 16) * gamma) * alpha
            + DMatrix::identity(16, 16) * gamma
            + {
                let vv = DVector::from_column_slice(&v);
                &vv * vv.transpose() * (1.0 - alpha)
            };
        let want = DMatrix::identity(16, 16) / gamma - oracle::inverse_spd(&exact).unwrap();
        assert!((&m - &want).norm() <= 1e-9 * want.norm());
    }
}
