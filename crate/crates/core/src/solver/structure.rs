//! Closed-form reweighted update of the structure matrix `S`.

use nalgebra::{DMatrix, DVector};

use super::objective::l21_reweighting;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, symmetrize};

#[derive(Debug, Clone)]
pub struct SUpdate {
    pub s: DMatrix<f64>,
    pub iterations: usize,
    /// A ridge was added to a singular bracket matrix at least once.
    pub ridged: bool,
}

/// Precomputed products that stay fixed while `β` and `D` are fixed.
pub(crate) struct StructureSystem {
    /// `Y D K βᵀ`
    rhs: DMatrix<f64>,
    /// `β K D K βᵀ + γ β K G K βᵀ`
    quad: DMatrix<f64>,
}

impl StructureSystem {
    pub(crate) fn new(
        beta: &DMatrix<f64>,
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        y: &DMatrix<f64>,
        d: &DVector<f64>,
        gamma: f64,
    ) -> Self {
        let bk = beta * k;
        let mut bkd = bk.clone();
        for (i, mut col) in bkd.column_iter_mut().enumerate() {
            col.scale_mut(d[i]);
        }
        let mut yd = y.clone();
        for (i, mut col) in yd.column_iter_mut().enumerate() {
            col.scale_mut(d[i]);
        }
        let rhs = yd * bk.transpose();
        let mut quad = &bkd * bk.transpose();
        if gamma != 0.0 {
            quad += gamma * &bk * g * bk.transpose();
        }
        Self {
            rhs,
            quad: symmetrize(&quad),
        }
    }

    /// One fixed-point step `S ← YDKβᵀ (2λP + βKDKβᵀ + γβKGKβᵀ)⁻¹` with `P`
    /// taken from the current `S`.
    pub(crate) fn step(&self, s: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(DMatrix<f64>, bool)> {
        let p = l21_reweighting(s, cfg.smoothing);
        let mut bracket = self.quad.clone();
        for j in 0..bracket.nrows() {
            bracket[(j, j)] += 2.0 * cfg.lambda * p[j];
        }
        // S·B = R  ⇔  B Sᵀ = Rᵀ for symmetric B
        let (st, ridged) = spd_solve(&bracket, &self.rhs.transpose())?;
        let s_new = st.transpose();
        if s_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("structure update produced non-finite values".into()));
        }
        Ok((s_new, ridged))
    }
}

/// Iterates the reweighted `S` update with `β` and `D` held fixed, starting
/// from `s_init`, until the relative change drops below `cfg.tol` or
/// `cfg.max_s_iters` steps have run.
pub fn update_s(
    beta: &DMatrix<f64>,
    s_init: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: &DVector<f64>,
    cfg: &TrainConfig,
) -> Result<SUpdate> {
    let (q, n) = y.shape();
    if beta.shape() != (q, n)
        || s_init.shape() != (q, q)
        || k.shape() != (n, n)
        || g.shape() != (n, n)
        || d.len() != n
    {
        return Err(Error::Shape("structure update shapes do not conform".into()));
    }
    let system = StructureSystem::new(beta, k, g, y, d, cfg.gamma);
    let mut s = s_init.clone();
    let mut ridged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_s_iters {
        let (s_new, r) = system.step(&s, cfg)?;
        ridged |= r;
        iterations += 1;
        let change = (&s_new - &s).norm() / s.norm().max(1e-300);
        s = s_new;
        if change < cfg.tol {
            break;
        }
    }
    Ok(SUpdate {
        s,
        iterations,
        ridged,
    })
}
