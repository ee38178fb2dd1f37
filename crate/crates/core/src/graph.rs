//! Fully connected output-similarity graph and its unnormalized Laplacian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the Gaussian output similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    /// Median of the pairwise output distances.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct OutputGraph {
    pub similarity: DMatrix<f64>,
    pub degree: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub rho: f64,
}

fn pairwise_sq_distances(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.ncols();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..y.nrows() {
                let t = y[(k, i)] - y[(k, j)];
                acc += t * t;
            }
            d[(i, j)] = acc;
            d[(j, i)] = acc;
        }
    }
    d
}

fn median_distance(sq: &DMatrix<f64>) -> f64 {
    let n = sq.nrows();
    let mut dists: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq[(i, j)].sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

/// Builds `G = D̂ − E` with `E_ij = exp(−‖y_i − y_j‖² / (2ρ²))` over the columns of `y`.
pub fn build_laplacian(y: &DMatrix<f64>, rho: Rho) -> Result<OutputGraph> {
    let n = y.ncols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "output graph needs at least 2 samples, got {n}"
        )));
    }
    let sq = pairwise_sq_distances(y);
    let rho = match rho {
        Rho::Fixed(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Parameter(format!("rho must be positive, got {r}")));
            }
            r
        }
        Rho::Auto => {
            let m = median_distance(&sq);
            // all outputs identical: any width gives the same all-ones graph
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let denom = 2.0 * rho * rho;
    let similarity = sq.map(|d| (-d / denom).exp());
    let degree = DVector::from_fn(n, |i, _| similarity.row(i).sum());
    let mut laplacian = -similarity.clone();
    for i in 0..n {
        // row sums of G are exactly D̂_ii − Σ_j E_ij
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| similarity[(i, j)]).sum();
        laplacian[(i, i)] = off;
    }
    Ok(OutputGraph {
        similarity,
        degree,
        laplacian,
        rho,
    })
}

/// `tr(F G Fᵀ)` for a `q×N` prediction matrix `F`.
pub fn manifold_penalty(f: &DMatrix<f64>, graph: &OutputGraph) -> Result<f64> {
    laplacian_quadratic(f, &graph.laplacian)
}

pub fn laplacian_quadratic(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    if f.ncols() != g.nrows() || g.nrows() != g.ncols() {
        return Err(Error::Shape(format!(
            "prediction matrix has {} columns but Laplacian is {}x{}",
            f.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    let fg = f * g;
    Ok(fg.component_mul(f).sum().max(0.0))
}
