mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

use s2vr::graph::{build_laplacian, laplacian_quadratic, manifold_penalty, Rho};
use s2vr::linalg::min_eigenvalue;

fn pairwise_penalty(f: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
    let n = f.ncols();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += e[(i, j)] * (f.column(i) - f.column(j)).norm_squared();
        }
    }
    0.5 * acc
}

#[test]
fn quadratic_form_identity_on_random_pairs() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let y = randn(&mut r, 4, 9);
        let f = randn(&mut r, 3, 9);
        let graph = build_laplacian(&y, Rho::Auto).unwrap();
        let direct = pairwise_penalty(&f, &graph.similarity);
        let p = manifold_penalty(&f, &graph).unwrap();
        assert!((p - direct).abs() <= 1e-8 * (1.0 + direct), "seed {seed}");
        assert!(p >= 0.0);
    }
}

#[test]
fn laplacian_structure() {
    for seed in 0..20 {
        let mut r = rng(1000 + seed);
        let y = randn(&mut r, 3, 11);
        let graph = build_laplacian(&y, Rho::Fixed(0.8)).unwrap();
        let g = &graph.laplacian;
        assert_eq!(g, &g.transpose());
        for i in 0..11 {
            assert_eq!(graph.similarity[(i, i)], 1.0);
            assert!(g.row(i).sum().abs() < 1e-9);
        }
        assert!(min_eigenvalue(g) >= -1e-8 * g.trace() / 11.0);
    }
}

#[test]
fn laplacian_follows_sample_permutation() {
    let mut r = rng(77);
    let y = randn(&mut r, 2, 7);
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let yp = DMatrix::from_fn(2, 7, |i, j| y[(i, perm[j])]);
    let g = build_laplacian(&y, Rho::Auto).unwrap().laplacian;
    let gp = build_laplacian(&yp, Rho::Auto).unwrap().laplacian;
    for i in 0..7 {
        for j in 0..7 {
            assert!((gp[(i, j)] - g[(perm[i], perm[j])]).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn constant_predictions_carry_no_penalty(vals in proptest::collection::vec(-5.0f64..5.0, 3), seed in 0u64..1000) {
        let mut r = rng(seed);
        let y = randn(&mut r, 2, 6);
        let g = build_laplacian(&y, Rho::Auto).unwrap().laplacian;
        let f = DMatrix::from_fn(3, 6, |i, _| vals[i]);
        let p = laplacian_quadratic(&f, &g).unwrap();
        prop_assert!(p.abs() <= 1e-10 * (1.0 + f.norm_squared()));
    }
}
