#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use s2vr::graph::{build_laplacian, Rho};
use s2vr::kernels::gaussian_kernel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = randn(rng, n, n);
    &a * a.transpose() / n as f64
}

/// A random regression instance: Gaussian kernel on random inputs, labels
/// from a smooth function plus noise, Laplacian over the labels.
pub struct Instance {
    pub x: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

pub fn instance(seed: u64, n: usize, q: usize, d: usize) -> Instance {
    let mut r = rng(seed);
    let x = randn(&mut r, d, n) * 0.5;
    let k = gaussian_kernel(&x, &x, 1.0).unwrap();
    let w = randn(&mut r, q, d);
    let noise = randn(&mut r, q, n) * 0.1;
    let y = (&w * &x).map(|v| v.sin()) + noise;
    let g = build_laplacian(&y, Rho::Auto).unwrap().laplacian;
    Instance { x, k, g, y }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Random centered PSD bank of `m` kernels on `n` samples with varying rank,
/// plus a label matrix whose target kernel is positively aligned with it.
pub fn random_bank(seed: u64, m: usize, n: usize) -> (s2vr::kernels::BaseKernelBank, DMatrix<f64>) {
    let mut r = rng(seed);
    let kernels = (0..m)
        .map(|i| {
            let a = randn(&mut r, n, 2 + 2 * i);
            &a * a.transpose()
        })
        .collect();
    let bank = s2vr::kernels::BaseKernelBank::from_kernels(kernels)
        .unwrap()
        .centered_copy()
        .unwrap();
    let y = randn(&mut r, 3, n);
    (bank, y)
}

/// Alignment of `Σ ω_m K_m` with `kt`.
pub fn combined_alignment(bank: &s2vr::kernels::BaseKernelBank, w: &[f64], kt: &DMatrix<f64>) -> f64 {
    let mut k = DMatrix::zeros(kt.nrows(), kt.ncols());
    for (km, &wm) in bank.kernels.iter().zip(w) {
        k += km * wm;
    }
    s2vr::kernels::alignment(&k, kt).unwrap()
}

/// Best alignment over the nonnegative unit sphere in angular steps of 0.01,
/// for banks of two or three kernels.
pub fn grid_alignment(bank: &s2vr::kernels::BaseKernelBank, kt: &DMatrix<f64>) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let steps = (half_pi / 0.01).floor() as usize;
    let angles: Vec<f64> = (0..=steps).map(|i| i as f64 * 0.01).chain([half_pi]).collect();
    let mut best = f64::NEG_INFINITY;
    match bank.len() {
        2 => {
            for &t in &angles {
                best = best.max(combined_alignment(bank, &[t.cos(), t.sin()], kt));
            }
        }
        3 => {
            for &t in &angles {
                for &p in &angles {
                    let w = [t.cos() * p.cos(), t.cos() * p.sin(), t.sin()];
                    best = best.max(combined_alignment(bank, &w, kt));
                }
            }
        }
        m => panic!("grid oracle supports two or three kernels, got {m}"),
    }
    best
}
