//! Synthetic regression benchmarks with known output structure.
//!
//! Outputs are noisy views of smooth latent functions of the inputs. In the
//! correlated benchmark every output mixes a few shared latents through a
//! planted low-rank `S₀`; in the control benchmark each output has its own
//! latent. The last three outputs play the role of the angles.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub samples: usize,
    pub features: usize,
    pub outputs: usize,
    /// Number of shared latents in the correlated benchmark.
    pub rank: usize,
    /// Noise standard deviation on the leading outputs.
    pub noise: f64,
    /// Noise standard deviation on the trailing three outputs.
    pub angle_noise: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            samples: 120,
            features: 2,
            outputs: 12,
            rank: 2,
            noise: 0.1,
            angle_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `q × r` mixing matrix (identity for the control benchmark).
    pub s0: DMatrix<f64>,
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn latents(rng: &mut ChaCha8Rng, x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let d = x.nrows();
    let freq: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..d).map(|_| randn(rng) / (d as f64).sqrt()).collect())
        .collect();
    let phase: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    DMatrix::from_fn(r, x.ncols(), |k, i| {
        let t: f64 = (0..d).map(|j| freq[k][j] * x[(j, i)]).sum();
        (t + phase[k]).sin()
    })
}

fn check(cfg: &BenchmarkConfig) -> Result<()> {
    if cfg.samples < 2 || cfg.features == 0 || cfg.outputs < 3 || cfg.rank == 0 {
        return Err(Error::Parameter(format!("invalid benchmark config {cfg:?}")));
    }
    if !(cfg.noise >= 0.0 && cfg.angle_noise >= 0.0) {
        return Err(Error::Parameter("noise levels must be nonnegative".into()));
    }
    Ok(())
}

fn finish(rng: &mut ChaCha8Rng, cfg: &BenchmarkConfig, x: DMatrix<f64>, s0: DMatrix<f64>, z: &DMatrix<f64>) -> Benchmark {
    let q = cfg.outputs;
    let mut y = &s0 * z;
    for r in 0..q {
        let sd = if r + 3 >= q { cfg.angle_noise } else { cfg.noise };
        for c in 0..y.ncols() {
            y[(r, c)] += sd * randn(rng);
        }
    }
    Benchmark { x, y, s0 }
}

/// Outputs share `rank` latents through a random `S₀`.
pub fn correlated(seed: u64, cfg: &BenchmarkConfig) -> Result<Benchmark> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(cfg.features, cfg.samples, |_, _| randn(&mut rng));
    let z = latents(&mut rng, &x, cfg.rank);
    let mut s0 = DMatrix::from_fn(cfg.outputs, cfg.rank, |_, _| randn(&mut rng));
    for mut row in s0.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(finish(&mut rng, cfg, x, s0, &z))
}

/// Every output follows its own latent.
pub fn independent(seed: u64, cfg: &BenchmarkConfig) -> Result<Benchmark> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(cfg.features, cfg.samples, |_, _| randn(&mut rng));
    let z = latents(&mut rng, &x, cfg.outputs);
    let s0 = DMatrix::identity(cfg.outputs, cfg.outputs);
    Ok(finish(&mut rng, cfg, x, s0, &z))
}

/// Splits columns into the first `train` samples and the rest.
pub fn split(b: &Benchmark, train: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = b.x.ncols();
    if train == 0 || train >= n {
        return Err(Error::Parameter(format!("train size {train} out of 1..{n}")));
    }
    Ok((
        b.x.columns(0, train).into_owned(),
        b.y.columns(0, train).into_owned(),
        b.x.columns(train, n - train).into_owned(),
        b.y.columns(train, n - train).into_owned(),
    ))
}
