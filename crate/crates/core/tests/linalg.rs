use goop_core::linalg::{col_space_contains, col_space_residual, null_space_basis, numerical_rank, pinv, pinv_solve, range_basis};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `rows × cols` matrix of rank at most `rank`, as a product of two factors.
fn low_rank() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(r, c, k)| {
        let k = k.min(r).min(c);
        (prop::collection::vec(-1.0f64..1.0, r * k), prop::collection::vec(-1.0f64..1.0, k * c))
            .prop_map(move |(a, b)| (DMatrix::from_vec(r, k, a) * DMatrix::from_vec(k, c, b), k))
    })
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + b.amax())
}

#[test]
fn rank_deficient_example() {
    // duplicated row: rank 1
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
    assert_eq!(numerical_rank(&a, None).unwrap(), 1);
    assert_eq!(null_space_basis(&a, None).unwrap().ncols(), 2);
    let x = pinv_solve(&a, &DVector::from_vec(vec![1.0, 2.0]), None).unwrap();
    assert!((&a * &x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-12);
    // minimum norm: x is a multiple of the row
    assert!((x[1] - 2.0 * x[0]).abs() < 1e-12 && (x[2] - 3.0 * x[0]).abs() < 1e-12);
}

#[test]
fn empty_shapes() {
    let a = DMatrix::<f64>::zeros(0, 3);
    assert_eq!(pinv_solve(&a, &DVector::zeros(0), None).unwrap().len(), 3);
    assert_eq!(null_space_basis(&a, None).unwrap().ncols(), 3);
    assert_eq!(range_basis(&DMatrix::zeros(4, 0), None).unwrap().ncols(), 0);
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(pinv_solve(&DMatrix::identity(2, 2), &DVector::zeros(3), None).is_err());
}

#[test]
fn exact_zero_singular_values_are_handled() {
    // symmetric, two exact zero singular values, a pattern that once broke the factorization
    let mut b = DMatrix::zeros(6, 6);
    b[(0, 0)] = 2.0;
    b[(0, 4)] = 1.0;
    b[(4, 0)] = 1.0;
    b[(1, 1)] = 1.0;
    b[(1, 5)] = 1.0;
    b[(5, 1)] = 1.0;
    b[(2, 2)] = 3.0;
    let u = range_basis(&b, None).unwrap();
    assert_eq!(u.ncols(), 5);
    assert!(col_space_residual(&b, &b).unwrap() < 1e-12);
    let p = pinv(&b, None).unwrap();
    assert!(close(&(&b * &p * &b), &b, 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moore_penrose_identities((a, _) in low_rank()) {
        let p = pinv(&a, None).unwrap();
        prop_assert!(close(&(&a * &p * &a), &a, 1e-9));
        prop_assert!(close(&(&p * &a * &p), &p, 1e-9));
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!(close(&ap.transpose(), &ap, 1e-9));
        prop_assert!(close(&pa.transpose(), &pa, 1e-9));
    }

    #[test]
    fn rank_and_null_space((a, k) in low_rank()) {
        let r = numerical_rank(&a, None).unwrap();
        prop_assert!(r <= k);
        let z = null_space_basis(&a, None).unwrap();
        prop_assert_eq!(z.ncols() + r, a.ncols());
        prop_assert!((&a * &z).amax() <= 1e-10);
        let u = range_basis(&a, None).unwrap();
        prop_assert_eq!(u.ncols(), r);
        prop_assert!(close(&(u.transpose() * &u), &DMatrix::identity(r, r), 1e-10));
    }

    #[test]
    fn products_lie_in_the_column_space((a, _) in low_rank(), w in prop::collection::vec(-1.0f64..1.0, 6 * 3)) {
        let x = DMatrix::from_vec(a.ncols(), 3, w[..a.ncols() * 3].to_vec());
        prop_assert!(col_space_contains(&a, &(&a * x), 1e-8).unwrap());
    }

    #[test]
    fn pinv_solve_matches_pinv((a, _) in low_rank(), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        let b = DVector::from_vec(b[..a.nrows()].to_vec());
        let x = pinv_solve(&a, &b, None).unwrap();
        let y = pinv(&a, None).unwrap() * &b;
        prop_assert!((x - y).amax() <= 1e-9 * (1.0 + b.amax()));
    }
}
