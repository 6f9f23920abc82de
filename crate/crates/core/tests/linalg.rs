mod oracles;

use gpm_core::linalg::{frobenius_sq, orthonormality_defect, select_rank, svd};
use gpm_core::Matrix;
use oracles::{brute_force_rank, jacobi_singular_values, rng, uniform_matrix};
use proptest::prelude::*;
use rand::Rng;

fn check_invariants(a: &Matrix) {
    let r = svd(a).unwrap();
    let p = a.rows().min(a.cols());
    assert_eq!(r.u.shape(), (a.rows(), p));
    assert_eq!(r.vt.shape(), (p, a.cols()));
    assert!(orthonormality_defect(&r.u) <= 1e-10, "U defect {}", orthonormality_defect(&r.u));
    assert!(orthonormality_defect(&r.vt.transpose()) <= 1e-10);
    assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
    assert!(r.s.iter().all(|&v| v >= 0.0));
    let err = r.reconstruct().sub(a).frobenius();
    assert!(err <= 1e-8 * a.frobenius().max(1.0), "reconstruction error {err}");
}

#[test]
fn svd_matches_jacobi_oracle_on_seeded_5x4() {
    let mut g = rng(5);
    let a = uniform_matrix(&mut g, 5, 4, 0.0, 1.0);
    let ours = svd(&a).unwrap().s;
    let oracle = jacobi_singular_values(&a);
    for (x, y) in ours.iter().zip(&oracle) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
}

#[test]
fn svd_matches_jacobi_oracle_across_shapes() {
    let mut g = rng(11);
    for &(m, n) in &[(1, 1), (7, 3), (3, 7), (20, 20), (40, 13), (13, 40), (64, 48)] {
        let a = uniform_matrix(&mut g, m, n, -1.0, 1.0);
        let ours = svd(&a).unwrap().s;
        let oracle = jacobi_singular_values(&a);
        for (x, y) in ours.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-9 * oracle[0].max(1.0), "{m}x{n}: {x} vs {y}");
        }
    }
}

#[test]
fn svd_handles_rank_deficient_and_repeated_values() {
    let mut g = rng(3);
    let left = uniform_matrix(&mut g, 30, 4, -1.0, 1.0);
    let right = uniform_matrix(&mut g, 4, 25, -1.0, 1.0);
    let low_rank = left.matmul(&right);
    check_invariants(&low_rank);
    let r = svd(&low_rank).unwrap();
    assert_eq!(r.numerical_rank(1e-12), 4);

    let mut repeated = Matrix::zeros(6, 6);
    for i in 0..6 {
        repeated[(i, i)] = if i < 3 { 2.0 } else { 1.0 };
    }
    check_invariants(&repeated);

    // exact zero rows and columns, as produced by disjoint-subspace inputs
    let mut sparse = uniform_matrix(&mut g, 12, 9, -1.0, 1.0);
    for j in 0..9 {
        for i in 6..12 {
            sparse[(i, j)] = 0.0;
        }
    }
    check_invariants(&sparse);
}

#[test]
fn svd_invariants_on_large_matrix() {
    let mut g = rng(1024);
    let a = uniform_matrix(&mut g, 1024, 512, -1.0, 1.0);
    check_invariants(&a);
    let wide = uniform_matrix(&mut g, 300, 784, 0.0, 1.0);
    check_invariants(&wide);
}

#[test]
fn frobenius_sq_cases() {
    assert_eq!(frobenius_sq(&Matrix::zeros(3, 2)), 0.0);
    assert_eq!(frobenius_sq(&Matrix::from_rows(&[&[3.0, 4.0]]).unwrap()), 25.0);
    let mut g = rng(10);
    let a = uniform_matrix(&mut g, 10, 7, -1.0, 1.0);
    let spectral: f64 = svd(&a).unwrap().s.iter().map(|s| s * s).sum();
    assert!((frobenius_sq(&a) - spectral).abs() <= 1e-9 * spectral);
}

#[test]
fn select_rank_matches_exhaustive_search_on_random_spectra() {
    let mut g = rng(100);
    for _ in 0..100 {
        let mut s: Vec<f64> = (0..20).map(|_| g.random_range(0.0..3.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let residual: f64 = s.iter().map(|v| v * v).sum();
        let projected = g.random_range(0.0..2.0) * residual;
        let total = projected + residual;
        let eps = g.random_range(0.01..=1.0);
        assert_eq!(
            select_rank(&s, total, projected, eps).unwrap(),
            brute_force_rank(&s, total, projected, eps)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_invariants_hold_on_random_shapes(m in 1usize..40, n in 1usize..40, seed in any::<u64>()) {
        let mut g = rng(seed);
        let a = uniform_matrix(&mut g, m, n, -5.0, 5.0);
        check_invariants(&a);
        let spectral: f64 = svd(&a).unwrap().s.iter().map(|s| s * s).sum();
        prop_assert!((frobenius_sq(&a) - spectral).abs() <= 1e-9 * spectral.max(1e-300));
    }

    #[test]
    fn select_rank_is_monotone_in_threshold(
        mut s in prop::collection::vec(0.0f64..10.0, 0..20),
        frac in 0.0f64..1.0,
        e1 in 0.001f64..=1.0,
        e2 in 0.001f64..=1.0,
    ) {
        s.sort_by(|a, b| b.total_cmp(a));
        let residual: f64 = s.iter().map(|v| v * v).sum();
        let projected = frac * residual;
        let total = projected + residual;
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let k_lo = select_rank(&s, total, projected, lo).unwrap();
        let k_hi = select_rank(&s, total, projected, hi).unwrap();
        prop_assert!(k_lo <= k_hi);
        prop_assert!(k_hi <= s.len());
        prop_assert_eq!(k_hi, brute_force_rank(&s, total, projected, hi));
    }
}
