mod common;

use common::*;
use ginger_core::oracle::{self, from_row_major, DenseGgn, TruncatedRecursion};
use ginger_core::{k_from_sigma, sigma_from_k, GgnFactors};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn direction_matches_dense_inverse() {
    let mut r = rng(3);
    let s = random_state(&mut r, 6, 2, 0.3);
    let g = gaussian(&mut r, 6);
    let fast = s.direction(&g, 1.0).unwrap();
    let slow = oracle::solve_spd(&dense(&s), &g).unwrap();
    assert!(rel_err(&fast, &slow) < 1e-10);
}

#[test]
fn scaled_direction_matches_dense_inverse() {
    let mut r = rng(4);
    let s = random_state(&mut r, 9, 3, 0.05);
    let g = gaussian(&mut r, 9);
    let scaled: Vec<f64> = s.eigvals().iter().map(|x| 0.9 * x).collect();
    let m = oracle::low_rank_dense(9, s.basis(), &scaled) + DMatrix::identity(9, 9) * 0.05;
    let slow = oracle::solve_spd(&m, &g).unwrap();
    assert!(rel_err(&s.direction(&g, 0.9).unwrap(), &slow) < 1e-10);
}

#[test]
fn reconstruction_spectrum_is_bounded() {
    let mut r = rng(5);
    let s = random_state(&mut r, 12, 4, 0.2);
    let m = dense(&s);
    assert_eq!(m, m.transpose());
    let (vals, _) = oracle::eigh_desc(&m).unwrap();
    assert!(vals[11] >= 0.2 - 1e-12);
    assert!(vals[0] <= 0.2 + s.eigvals()[0] + 1e-12);
}

#[test]
fn subspace_stream_is_reproduced_exactly() {
    let (d, tau, gamma, alpha) = (10, 3, 0.5, 0.9);
    let mut r = rng(11);
    let span = orthonormal(&mut r, d, 3);
    let mut fast = GgnFactors::new(d, tau, gamma, alpha, 1).unwrap();
    let mut slow = DenseGgn::new(d, gamma, alpha).unwrap();
    for _ in 0..50 {
        let c = gaussian(&mut r, 3);
        let v: Vec<f64> = (0..d).map(|i| (0..3).map(|j| span[i * 3 + j] * c[j]).sum()).collect();
        fast.update(&v).unwrap();
        slow.ema_update(&v).unwrap();
        let err = (dense(&fast) - slow.damped()).norm();
        assert!(err < 1e-8, "frobenius error {err:e}");
    }
}

#[test]
fn update_matches_sherman_morrison_target_every_step() {
    let (d, tau, gamma, alpha) = (8, 2, 0.4, 0.9);
    let mut r = rng(12);
    let mut s = GgnFactors::new(d, tau, gamma, alpha, 2).unwrap();
    for _ in 0..100 {
        let v = gaussian(&mut r, d);
        let k_prev = k_from_sigma(s.eigvals(), gamma / alpha).unwrap();
        let (h, beta) =
            oracle::sherman_morrison_pieces(d, s.basis(), s.eigvals(), gamma, alpha, &v).unwrap();
        let target = oracle::sherman_morrison_target(d, s.basis(), &k_prev, alpha, &h, beta);
        let (want, _) = oracle::eigh_desc(&target).unwrap();
        s.update(&v).unwrap();
        for (k, w) in s.k().iter().zip(&want) {
            assert!((k - w).abs() <= 1e-8 * w.abs().max(1.0), "{k} vs {w}");
        }
    }
}

#[test]
fn follows_dense_truncated_recursion() {
    let (d, tau, gamma, alpha) = (32, 4, 1e-2, 0.95);
    let mut r = rng(13);
    let mut fast = GgnFactors::new(d, tau, gamma, alpha, 3).unwrap();
    let mut slow = TruncatedRecursion::new(d, tau, gamma, alpha).unwrap();
    for _ in 0..200 {
        let v = gaussian(&mut r, d);
        fast.update(&v).unwrap();
        slow.step(&v).unwrap();
        assert!((dense(&fast) - &slow.approx).norm() < 1e-8);
    }
}

#[test]
fn binary_checkpoint_is_bit_exact() {
    let mut r = rng(18);
    let mut s = GgnFactors::new(11, 4, 0.07, 0.95, 9).unwrap();
    for _ in 0..7 {
        s.update(&gaussian(&mut r, 11)).unwrap();
    }
    let mut buf = Vec::new();
    s.write_binary(&mut buf).unwrap();
    assert_eq!(buf.len(), 4 + 4 + 8 * 5 + 8 * (11 * 4 + 4));
    assert_eq!(GgnFactors::read_binary(buf.as_slice()).unwrap(), s);
    buf[0] = b'X';
    assert!(GgnFactors::read_binary(buf.as_slice()).is_err());
}

#[test]
fn lemma_one_bounds_hold_along_a_stream() {
    let (d, tau, gamma, alpha) = (12, 3, 0.01, 0.99);
    let mut r = rng(14);
    let mut s = GgnFactors::new(d, tau, gamma, alpha, 4).unwrap();
    for _ in 0..200 {
        let v: Vec<f64> = gaussian(&mut r, d).iter().map(|x| 3.0 * x).collect();
        s.update(&v).unwrap();
        let inv = oracle::inverse_spd(&dense(&s)).unwrap();
        let (vals, _) = oracle::eigh_desc(&inv).unwrap();
        assert!((vals[0] - 1.0 / gamma).abs() <= 1e-8 / gamma);
        assert!(vals[d - 1] > 0.0);
        assert!(s.k().iter().all(|&k| (0.0..1.0 / gamma).contains(&k)));
        assert!(s.invariants().holds());
    }
}

#[test]
fn repeated_direction_converges_to_its_norm() {
    let (d, gamma, alpha) = (6, 0.1, 0.99);
    let v = [0.5, -1.0, 0.25, 0.0, 2.0, -0.5];
    let target: f64 = v.iter().map(|x| x * x).sum();
    let mut s = GgnFactors::new(d, 2, gamma, alpha, 5).unwrap();
    let mut prev = 0.0;
    for _ in 0..2000 {
        s.update(&v).unwrap();
        let lead = s.eigvals()[0];
        assert!(lead >= prev - 1e-12 && lead <= target + 1e-9);
        prev = lead;
    }
    // (1 − α^2000)·‖d‖² is within 2e-9 relative of ‖d‖²
    assert!((prev - target).abs() < 1e-4);
}

#[test]
fn reorthonormalization_keeps_state() {
    let mut r = rng(15);
    let mut a = GgnFactors::new(20, 4, 0.3, 0.9, 6).unwrap();
    let mut b = a.clone();
    b.set_reortho_every(3);
    for _ in 0..9 {
        let v = gaussian(&mut r, 20);
        a.update(&v).unwrap();
        b.update(&v).unwrap();
    }
    assert!((dense(&a) - dense(&b)).norm() < 1e-10);
    assert!(b.invariants().ortho_residual < 1e-13);
}

#[test]
fn sequential_and_parallel_updates_are_identical() {
    let mut r = rng(16);
    let d = 9000;
    let mut a = GgnFactors::new(d, 4, 1e-3, 0.99, 7).unwrap();
    let mut b = a.clone();
    a.set_exec(ginger_core::Exec::Sequential);
    b.set_exec(ginger_core::Exec::Parallel);
    for _ in 0..5 {
        let v = gaussian(&mut r, d);
        a.update(&v).unwrap();
        b.update(&v).unwrap();
    }
    assert_eq!(a, b);
    let g = gaussian(&mut r, d);
    assert_eq!(a.direction(&g, 1.0).unwrap(), b.direction(&g, 1.0).unwrap());
}

fn state_strategy() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 2usize..64, 1usize..9, -3.0f64..1.0).prop_filter_map("rank < dim", |(seed, d, tau, lg)| {
        (tau < d).then_some((seed, d, tau, 10f64.powf(lg)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn woodbury_direction_inverts_reconstruction((seed, d, tau, gamma) in state_strategy()) {
        let mut r = rng(seed);
        let s = random_state(&mut r, d, tau, gamma);
        let g = gaussian(&mut r, d);
        let x = s.direction(&g, 1.0).unwrap();
        let back = dense(&s) * DVector::from_column_slice(&x);
        prop_assert!(rel_err(back.as_slice(), &g) <= 1e-9);
    }

    #[test]
    fn preconditioned_direction_is_descent((seed, d, tau, gamma) in state_strategy()) {
        let mut r = rng(seed);
        let s = random_state(&mut r, d, tau, gamma);
        let g = gaussian(&mut r, d);
        let x = s.direction(&g, 1.0).unwrap();
        prop_assert!(g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    // The map K -> σ has relative condition number 1 + σ/γ, so the ratio is
    // kept below 1e5 for a 1e-10 round trip in f64.
    #[test]
    fn sigma_k_roundtrip(ratios in prop::collection::vec(0.0f64..1e5, 1..10), lg in -4.0f64..1.0) {
        let gamma = 10f64.powf(lg);
        let sigma: Vec<f64> = ratios.iter().map(|x| x * gamma).collect();
        let back = sigma_from_k(&k_from_sigma(&sigma, gamma).unwrap(), gamma).unwrap();
        for (a, b) in back.iter().zip(&sigma) {
            prop_assert!((a - b).abs() <= 1e-10 * b.max(gamma));
        }
    }

    #[test]
    fn json_checkpoint_is_bit_exact(seed in any::<u64>(), steps in 0usize..6) {
        let mut r = rng(seed);
        let mut s = GgnFactors::new(7, 3, 0.123, 0.97, seed).unwrap();
        for _ in 0..steps {
            s.update(&gaussian(&mut r, 7)).unwrap();
        }
        let back = GgnFactors::from_json(&s.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn k_values_stay_in_window_after_each_update() {
    let mut r = rng(17);
    let gamma = 1e-4;
    let mut s = GgnFactors::new(30, 5, gamma, 0.99, 8).unwrap();
    for _ in 0..300 {
        s.update(&gaussian(&mut r, 30)).unwrap();
        for k in s.k() {
            assert!((0.0..(1.0 - 1e-12) / gamma).contains(&k) || k == (1.0 - 1e-12) / gamma);
        }
    }
    let m = from_row_major(30, 30, &s.reconstruct_dense().unwrap());
    assert!(m.iter().all(|x| x.is_finite()));
}
