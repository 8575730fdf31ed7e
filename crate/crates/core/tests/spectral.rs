mod support;

use nalgebra::DMatrix;
use pairwhiten::spectral::{
    eig_sym_2x2, regularized_matrix, zca_cor_matrix, PairCorrelation, WhiteningMatrix2x2,
    DEFAULT_EIGEN_FLOOR,
};
use proptest::prelude::*;

fn corr(r: f64) -> PairCorrelation {
    PairCorrelation::new(r).unwrap()
}

fn dense(w: WhiteningMatrix2x2) -> DMatrix<f64> {
    let a = w.to_array();
    DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
}

fn r_matrix(r: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0])
}

#[test]
fn closed_form_matches_jacobi_oracle() {
    for k in -99..=99 {
        let r = k as f64 / 100.0;
        let w = dense(zca_cor_matrix(corr(r), DEFAULT_EIGEN_FLOOR).matrix);
        let oracle = support::inverse_sqrt(&r_matrix(r));
        assert!(support::max_abs_diff(&w, &oracle) < 1e-10, "r = {r}");
    }
}

#[test]
fn eigenvalues_match_jacobi_oracle() {
    for &r in &[-0.95, -0.3, 0.0, 0.45, 0.9] {
        let e = eig_sym_2x2(corr(r));
        let (mut vals, _) = support::jacobi_eigen(&r_matrix(r));
        vals.sort_by(|a, b| b.total_cmp(a));
        let mut mine = e.values.to_vec();
        mine.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in mine.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_computed_block_at_r_half() {
    // Eigenvalues 1.5 and 0.5.
    let w = zca_cor_matrix(corr(0.5), DEFAULT_EIGEN_FLOOR).matrix;
    let (s1, s2) = (1.5f64.sqrt().recip(), 0.5f64.sqrt().recip());
    assert!((w.diag() - (s1 + s2) / 2.0).abs() < 1e-15);
    assert!((w.off_diag() - (s1 - s2) / 2.0).abs() < 1e-15);
    // Numerically: 1.115355..., -0.298858...
    assert!((w.diag() - 1.115_355_071_650_410_6).abs() < 1e-12);
    assert!((w.off_diag() + 0.298_858_490_722_684_5).abs() < 1e-12);
}

#[test]
fn full_weight_is_the_unregularized_block() {
    let w = zca_cor_matrix(corr(-0.4), DEFAULT_EIGEN_FLOOR).matrix;
    assert_eq!(regularized_matrix(w, 1.0).unwrap(), w);
    assert_eq!(
        regularized_matrix(w, 0.0).unwrap(),
        WhiteningMatrix2x2::IDENTITY
    );
    assert!(regularized_matrix(w, -0.1).is_err());
    assert!(regularized_matrix(w, 1.0001).is_err());
}

proptest! {
    #[test]
    fn whitening_sandwich_is_identity(r in -0.99f64..0.99) {
        let w = zca_cor_matrix(corr(r), DEFAULT_EIGEN_FLOOR).matrix;
        let m = dense(w);
        let prod = &m * r_matrix(r) * &m;
        prop_assert!(support::max_abs_diff(&prod, &DMatrix::identity(2, 2)) < 1e-10);
        let s = w.sandwich(r);
        prop_assert!((s[0][0] - 1.0).abs() < 1e-10 && s[0][1].abs() < 1e-10);
    }

    #[test]
    fn block_shape_invariants(r in -0.999f64..0.999) {
        let w = zca_cor_matrix(corr(r), DEFAULT_EIGEN_FLOOR).matrix;
        prop_assert!(w.diag() > 0.0);
        prop_assert!(w.diag() > w.off_diag());
        // Positively correlated inputs get a negative cross term.
        if r > 0.0 { prop_assert!(w.off_diag() < 0.0); }
        if r < 0.0 { prop_assert!(w.off_diag() > 0.0); }
    }

    #[test]
    fn eigendecomposition_reconstructs(r in -1.0f64..=1.0) {
        let e = eig_sym_2x2(corr(r));
        let rec = e.reconstruct();
        prop_assert!((rec[0][0] - 1.0).abs() < 1e-14);
        prop_assert!((rec[0][1] - r).abs() < 1e-14);
        prop_assert!(e.values.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn regularization_is_affine_in_alpha(r in -0.99f64..0.99, alpha in 0.0f64..=1.0) {
        let w = zca_cor_matrix(corr(r), DEFAULT_EIGEN_FLOOR).matrix;
        let wa = w.regularized(alpha).unwrap();
        prop_assert!((wa.diag() - (alpha * w.diag() + 1.0 - alpha)).abs() < 1e-15);
        prop_assert!((wa.off_diag() - alpha * w.off_diag()).abs() < 1e-15);
        // Still symmetric positive definite.
        prop_assert!(wa.diag() > wa.off_diag().abs());
    }

    #[test]
    fn order_is_preserved_by_any_block(
        r in -0.99f64..0.99,
        alpha in 0.0f64..=1.0,
        b1 in -10.0f64..10.0,
        b2 in -10.0f64..10.0,
    ) {
        let w = zca_cor_matrix(corr(r), DEFAULT_EIGEN_FLOOR).matrix.regularized(alpha).unwrap();
        let (t1, t2) = w.apply(b1, b2);
        let (db, dt) = (b1 - b2, t1 - t2);
        prop_assert!(db == 0.0 && dt.abs() < 1e-12 || db.signum() == dt.signum());
    }
}
