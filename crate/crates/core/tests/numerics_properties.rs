use dpsketch::harness::random_orthonormal;
use dpsketch::numerics::{
    frobenius_norm, matmul, minres_solve, orthonormal_range, spectral_norm, svd, sym_eigen, t_matmul, DenseMatrix,
    MINRES_DEFAULT_TOL,
};
use dpsketch::rng::gaussian_matrix;
use proptest::prelude::*;

/// `U·diag(σ)·Vᵀ` with singular values spread log-uniformly over `[1, cond]`.
fn conditioned(rows: usize, cols: usize, cond: f64, seed: u64) -> DenseMatrix {
    let k = rows.min(cols);
    let u = random_orthonormal(rows, k, seed, 1);
    let v = random_orthonormal(cols, k, seed, 2);
    let sig: Vec<f64> = (0..k)
        .map(|j| {
            if k == 1 {
                1.0
            } else {
                cond.powf(j as f64 / (k - 1) as f64)
            }
        })
        .collect();
    let us = DenseMatrix::from_fn(rows, k, |i, j| u[(i, j)] * sig[j]);
    matmul(&us, &v.transpose()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn norm_sandwich(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, scale in -6i32..6) {
        let m = gaussian_matrix(rows, cols, seed, 0).scale(10f64.powi(scale));
        let (s, f) = (spectral_norm(&m).unwrap(), frobenius_norm(&m));
        let bound = (rows.min(cols) as f64).sqrt() * s;
        prop_assert!(s <= f * (1.0 + 1e-12));
        prop_assert!(f <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn range_basis_is_orthonormal_and_captures_input(seed in any::<u64>(), rows in 2usize..20, cols in 1usize..8) {
        let cols = cols.min(rows);
        let y = gaussian_matrix(rows, cols, seed, 0);
        let psi = orthonormal_range(&y).unwrap().basis;
        let mut gram = t_matmul(&psi, &psi).unwrap();
        for i in 0..gram.rows() {
            gram[(i, i)] -= 1.0;
        }
        prop_assert!(frobenius_norm(&gram) <= 1e-10);
        let proj = matmul(&psi, &t_matmul(&psi, &y).unwrap()).unwrap();
        prop_assert!(frobenius_norm(&y.sub(&proj).unwrap()) <= 1e-9 * frobenius_norm(&y));
    }

    #[test]
    fn svd_reconstructs_conditioned_inputs(seed in any::<u64>(), rows in 1usize..16, cols in 1usize..16,
                                           log_cond in 0.0f64..8.0) {
        let m = conditioned(rows, cols, 10f64.powf(log_cond), seed);
        let dec = svd(&m).unwrap();
        let err = frobenius_norm(&m.sub(&dec.reconstruct(None)).unwrap());
        prop_assert!(err <= 1e-8 * frobenius_norm(&m));
        prop_assert!(dec.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn minres_on_consistent_systems(seed in any::<u64>(), k in 1usize..6, extra in 0usize..6, m in 1usize..5) {
        let ell = k + extra;
        let coeff = gaussian_matrix(k, ell, seed, 0);
        let x0 = gaussian_matrix(m, k, seed, 1);
        let rhs = matmul(&x0, &coeff).unwrap();
        let sol = minres_solve(&coeff, &rhs, MINRES_DEFAULT_TOL).unwrap();
        prop_assert!(sol.residual <= 1e-9 * frobenius_norm(&rhs));
        prop_assert!(sol.consistent);
    }

    #[test]
    fn symmetric_eigenpairs(seed in any::<u64>(), n in 1usize..10) {
        let g = gaussian_matrix(n, n, seed, 0);
        let s = g.add(&g.transpose()).unwrap();
        let e = sym_eigen(&s).unwrap();
        let av = matmul(&s, &e.vectors).unwrap();
        let vl = DenseMatrix::from_fn(n, n, |i, j| e.vectors[(i, j)] * e.values[j]);
        prop_assert!(frobenius_norm(&av.sub(&vl).unwrap()) <= 1e-10 * frobenius_norm(&s).max(1.0));
        prop_assert!(e.values.windows(2).all(|w| w[0].abs() >= w[1].abs()));
    }
}

#[test]
fn svd_is_bit_stable_across_calls() {
    let m = gaussian_matrix(30, 12, 4, 0);
    let (a, b) = (svd(&m).unwrap(), svd(&m).unwrap());
    assert_eq!(a.u, b.u);
    assert_eq!(a.vt, b.vt);
    assert_eq!(a.sigma, b.sigma);
}
