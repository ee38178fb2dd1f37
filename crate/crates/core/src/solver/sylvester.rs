//! The β-subproblem: stationarity of the reweighted quadratic model,
//!
//! `βK + SᵀS β K (γG + D) K = SᵀYDK`.
//!
//! Any solution of the reduced system `β + M β K H = SᵀYD` (with `M = SᵀS`,
//! `H = γG + D`) solves the full one, and the reduced system is always
//! nonsingular because `KH` has a nonnegative real spectrum. It is solved in
//! closed form from three symmetric eigendecompositions:
//!
//! * `M = U Λ Uᵀ` decouples the rows, `β̃_j (I + λ_j K H) = C̃_j`;
//! * `R = H^{1/2}` and `R K R = W Σ Wᵀ` give
//!   `(I + λ K H)⁻¹ = I − λ K R W (I + λΣ)⁻¹ Wᵀ R`.

use nalgebra::{DMatrix, DVector};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg::{psd_eigen, symmetrize};

#[derive(Debug, Clone)]
pub struct BetaStep {
    pub beta: DMatrix<f64>,
    /// Relative residual of the full stationarity system.
    pub relative_residual: f64,
    /// Set when the solve had to regularize (non-finite intermediate values).
    pub regularized: bool,
}

/// `H = γG + diag(D)`.
pub(crate) fn reweighted_laplacian(g: &DMatrix<f64>, d: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let mut h = if gamma != 0.0 {
        g * gamma
    } else {
        DMatrix::zeros(g.nrows(), g.ncols())
    };
    for i in 0..d.len() {
        h[(i, i)] += d[i];
    }
    h
}

struct ReducedOperator {
    u: DMatrix<f64>,
    lambdas: DVector<f64>,
    /// `K R W`
    left: DMatrix<f64>,
    /// `Wᵀ R`
    right: DMatrix<f64>,
    sigmas: DVector<f64>,
}

impl ReducedOperator {
    fn new(m: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Self> {
        let (lambdas, u) = psd_eigen(m)?;
        let (h_vals, h_vecs) = psd_eigen(h)?;
        let mut scaled = h_vecs.clone();
        for (j, v) in h_vals.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v.sqrt());
        }
        let r = &scaled * h_vecs.transpose();
        let rkr = symmetrize(&(&r * k * &r));
        let (sigmas, w) = psd_eigen(&rkr)?;
        Ok(Self {
            u,
            lambdas,
            left: k * &r * &w,
            right: w.transpose() * r,
            sigmas,
        })
    }

    /// Solves `X + M X K H = C`.
    fn solve(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let c_rot = self.u.transpose() * c;
        let mut z = &c_rot * &self.left;
        for j in 0..z.nrows() {
            let lj = self.lambdas[j];
            for kk in 0..z.ncols() {
                z[(j, kk)] *= lj / (1.0 + lj * self.sigmas[kk]);
            }
        }
        let x_rot = c_rot - z * &self.right;
        &self.u * x_rot
    }
}

/// Full-system residual `βK + Mβ K H K − SᵀYDK`, relative to the sum of the
/// term norms.
pub fn stationarity_residual(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: &DVector<f64>,
    cfg: &TrainConfig,
) -> f64 {
    let h = reweighted_laplacian(g, d, cfg.gamma);
    let bk = beta * k;
    let quad = s.transpose() * s * &bk * &h * k;
    let mut yd = y.clone();
    for (i, mut col) in yd.column_iter_mut().enumerate() {
        col.scale_mut(d[i]);
    }
    let rhs = s.transpose() * yd * k;
    let scale = bk.norm() + quad.norm() + rhs.norm();
    let res = (bk + quad - rhs).norm();
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

/// Minimizer of the reweighted quadratic model in `β` for fixed `S` and `D`.
pub fn solve_beta_step(
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: &DVector<f64>,
    cfg: &TrainConfig,
) -> Result<BetaStep> {
    let (q, n) = y.shape();
    if s.shape() != (q, q) || k.shape() != (n, n) || g.shape() != (n, n) || d.len() != n {
        return Err(Error::Shape(format!(
            "beta step shapes: Y {:?}, S {:?}, K {:?}, G {:?}, D {}",
            y.shape(),
            s.shape(),
            k.shape(),
            g.shape(),
            d.len()
        )));
    }
    if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Parameter("IRWLS weights must be finite and nonnegative".into()));
    }
    let h = reweighted_laplacian(g, d, cfg.gamma);
    let m = s.transpose() * s;
    let mut c = s.transpose() * y;
    for (i, mut col) in c.column_iter_mut().enumerate() {
        col.scale_mut(d[i]);
    }

    let op = ReducedOperator::new(&m, k, &h)?;
    let mut beta = op.solve(&c);
    // one round of iterative refinement on the reduced system
    let applied = &beta + &m * &beta * k * &h;
    let correction = op.solve(&(&c - applied));
    beta += correction;

    let mut regularized = false;
    if beta.iter().any(|v| !v.is_finite()) {
        regularized = true;
        let ridge = 1e-10 * k.trace().abs().max(1e-300) / n.max(1) as f64;
        let mut k_reg = k.clone();
        for i in 0..n {
            k_reg[(i, i)] += ridge;
        }
        beta = ReducedOperator::new(&m, &k_reg, &h)?.solve(&c);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("beta step produced non-finite values".into()));
        }
    }
    let relative_residual = stationarity_residual(&beta, s, k, g, y, d, cfg);
    Ok(BetaStep {
        beta,
        relative_residual,
        regularized,
    })
}
