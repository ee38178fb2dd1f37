use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::laplacian_quadratic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub total: f64,
    /// `½ tr(β K βᵀ)`
    pub rkhs_term: f64,
    /// `γ/2 tr(F G Fᵀ)` with `F = S β K`
    pub manifold_term: f64,
    /// `τ Σ ν(u_i)`
    pub loss_term: f64,
    /// `λ Σ_j ‖S_j‖₂` over the columns of `S`
    pub l21_term: f64,
}

pub(crate) fn check_shapes(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<()> {
    let (q, n) = y.shape();
    let ok = beta.shape() == (q, n)
        && s.shape() == (q, q)
        && k.shape() == (n, n)
        && g.shape() == (n, n);
    if !ok {
        return Err(Error::Shape(format!(
            "inconsistent shapes: Y {:?}, beta {:?}, S {:?}, K {:?}, G {:?}",
            y.shape(),
            beta.shape(),
            s.shape(),
            k.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// ε-insensitive quadratic loss `ν(u)`.
pub fn insensitive_loss(u: f64, epsilon: f64) -> f64 {
    if u < epsilon {
        0.0
    } else {
        (u - epsilon) * (u - epsilon)
    }
}

/// Column norms `u_i = ‖e_i‖`.
pub fn residual_norms(e: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(e.ncols(), |i, _| e.column(i).norm())
}

/// `λ Σ_j ‖S_j‖₂`, i.e. `λ ‖Sᵀ‖₂,₁`.
pub fn l21_norm_columns(s: &DMatrix<f64>) -> f64 {
    s.column_iter().map(|c| c.norm()).sum()
}

pub(crate) fn evaluate(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> ObjectiveReport {
    let bk = beta * k;
    let rkhs_term = 0.5 * bk.component_mul(beta).sum();
    let f = s * &bk;
    let manifold_term = if cfg.gamma != 0.0 {
        0.5 * cfg.gamma * laplacian_quadratic(&f, g).unwrap_or(0.0)
    } else {
        0.0
    };
    let e = y - &f;
    let loss_term = cfg.tau
        * residual_norms(&e)
            .iter()
            .map(|&u| insensitive_loss(u, cfg.epsilon))
            .sum::<f64>();
    let l21_term = cfg.lambda * l21_norm_columns(s);
    ObjectiveReport {
        total: rkhs_term + manifold_term + loss_term + l21_term,
        rkhs_term,
        manifold_term,
        loss_term,
        l21_term,
    }
}

/// Evaluates `Q(β, S)`: RKHS norm, manifold penalty over the output Laplacian
/// `G`, ε-insensitive quadratic loss on `E = Y − SβK`, and the ℓ2,1 penalty on
/// the columns of `S`.
pub fn objective(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<ObjectiveReport> {
    check_shapes(beta, s, k, g, y)?;
    Ok(evaluate(beta, s, k, g, y, cfg))
}

/// IRWLS weights `D_ii = 2τ(u_i − ε)/u_i` for `u_i ≥ ε`, zero inside the dead zone.
///
/// With `ε = 0` a zero residual takes the limiting weight `2τ`.
pub fn irwls_weights(e: &DMatrix<f64>, cfg: &TrainConfig) -> DVector<f64> {
    residual_norms(e).map(|u| {
        if u < cfg.epsilon {
            0.0
        } else if u == 0.0 {
            2.0 * cfg.tau
        } else {
            2.0 * cfg.tau * (u - cfg.epsilon) / u
        }
    })
}

/// Gradient of `Q` with respect to `β`: `βK + γSᵀSβKGK − SᵀEDK`, with `D`
/// taken at the current residuals.
pub fn gradient_beta(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<DMatrix<f64>> {
    check_shapes(beta, s, k, g, y)?;
    let bk = beta * k;
    let e = y - s * &bk;
    let d = irwls_weights(&e, cfg);
    let mut ed = e;
    for (i, mut col) in ed.column_iter_mut().enumerate() {
        col.scale_mut(d[i]);
    }
    let mut grad = bk.clone() - s.transpose() * ed * k;
    if cfg.gamma != 0.0 {
        grad += cfg.gamma * (s.transpose() * s) * &bk * g * k;
    }
    Ok(grad)
}

/// Diagonal of the smoothed ℓ2,1 reweighting `P_jj = 1 / (2 max(‖S_j‖, smoothing))`.
pub fn l21_reweighting(s: &DMatrix<f64>, smoothing: f64) -> DVector<f64> {
    DVector::from_fn(s.ncols(), |j, _| 0.5 / s.column(j).norm().max(smoothing))
}

/// Gradient of `Q` with respect to `S` using the smoothed ℓ2,1 reweighting:
/// `2λSP − EDKβᵀ + γSβKGKβᵀ`.
pub fn gradient_s(
    beta: &DMatrix<f64>,
    s: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<DMatrix<f64>> {
    check_shapes(beta, s, k, g, y)?;
    let bk = beta * k;
    let e = y - s * &bk;
    let d = irwls_weights(&e, cfg);
    let p = l21_reweighting(s, cfg.smoothing);
    let mut sp = s.clone();
    for (j, mut col) in sp.column_iter_mut().enumerate() {
        col.scale_mut(2.0 * cfg.lambda * p[j]);
    }
    let mut ed = e;
    for (i, mut col) in ed.column_iter_mut().enumerate() {
        col.scale_mut(d[i]);
    }
    let mut grad = sp - ed * bk.transpose();
    if cfg.gamma != 0.0 {
        grad += cfg.gamma * s * &bk * g * bk.transpose();
    }
    Ok(grad)
}
