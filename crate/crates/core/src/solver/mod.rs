//! Alternating minimization of the kernelized structured objective
//!
//! `Q(β, S) = ½tr(βKβᵀ) + γ/2 tr(FGFᵀ) + τ Σ ν(‖y_i − f_i‖) + λ Σ_j ‖S_j‖`,
//! `F = SβK`.
//!
//! `β` is optimized by adapted IRWLS: reweight, solve the stationarity system of
//! the reweighted quadratic model, and backtrack along the resulting direction
//! on the true objective. `S` is optimized by the reweighted closed-form ℓ2,1
//! update, also guarded by a backtracking step on the true objective so every
//! recorded objective value is non-increasing.

mod objective;
mod structure;
mod sylvester;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use objective::{
    gradient_beta, gradient_s, insensitive_loss, irwls_weights, l21_norm_columns, l21_reweighting,
    objective, residual_norms, ObjectiveReport,
};
pub use structure::{update_s, SUpdate};
pub use sylvester::{solve_beta_step, stationarity_residual, BetaStep};

use crate::error::{Error, Result};
use crate::linalg::is_symmetric;
use objective::{check_shapes, evaluate};
use structure::StructureSystem;

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MIN_STEP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Loss weight τ.
    pub tau: f64,
    /// Manifold weight γ.
    pub gamma: f64,
    /// ℓ2,1 weight λ.
    pub lambda: f64,
    /// Insensitivity radius ε.
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_irwls: usize,
    pub max_s_iters: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Floor on column norms in the ℓ2,1 reweighting.
    pub smoothing: f64,
    /// When false `S` stays at the identity (plain multi-output SVR).
    pub learn_structure: bool,
    /// After each structure phase, move along `(β/c, cS)` to the exact
    /// minimizing `c`; the fitted values are unchanged.
    pub rebalance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            gamma: 1e-3,
            lambda: 1.0,
            epsilon: 0.0,
            max_outer: 100,
            max_irwls: 30,
            max_s_iters: 30,
            tol: 1e-4,
            smoothing: 1e-8,
            learn_structure: true,
            rebalance: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tau,
            self.gamma,
            self.lambda,
            self.epsilon,
            self.tol,
            self.smoothing,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parameter("training weights must be finite".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if self.gamma < 0.0 || self.lambda < 0.0 || self.epsilon < 0.0 {
            return Err(Error::Parameter(
                "gamma, lambda and epsilon must be nonnegative".into(),
            ));
        }
        if self.tol <= 0.0 || self.smoothing <= 0.0 {
            return Err(Error::Parameter("tol and smoothing must be positive".into()));
        }
        Ok(())
    }

    /// Plain multi-output SVR: `S` frozen at `I`, no manifold or ℓ2,1 term.
    pub fn baseline(&self) -> Self {
        Self {
            gamma: 0.0,
            lambda: 0.0,
            learn_structure: false,
            ..self.clone()
        }
    }
}

/// `0.01 · median_i ‖y_i‖` over the columns of `y`.
pub fn auto_epsilon(y: &DMatrix<f64>) -> f64 {
    let mut norms: Vec<f64> = y.column_iter().map(|c| c.norm()).collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(f64::total_cmp);
    let m = norms.len();
    let median = if m % 2 == 1 {
        norms[m / 2]
    } else {
        0.5 * (norms[m / 2 - 1] + norms[m / 2])
    };
    0.01 * median
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Irwls,
    Structure,
    Rebalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub phase: Phase,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverFlags {
    /// Backtracking on β found no decrease above the minimum step.
    pub beta_line_search_failed: bool,
    /// Backtracking on S found no decrease above the minimum step.
    pub structure_line_search_failed: bool,
    /// A structure bracket matrix needed a ridge.
    pub structure_ridged: bool,
    /// A β-step had to regularize the kernel.
    pub beta_regularized: bool,
    /// The outer loop stopped on the objective tolerance.
    pub converged: bool,
}

impl SolverFlags {
    pub fn warnings(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.beta_line_search_failed {
            out.push("beta line search failed to decrease the objective");
        }
        if self.structure_line_search_failed {
            out.push("structure line search failed to decrease the objective");
        }
        if self.structure_ridged {
            out.push("singular structure bracket matrix was ridged");
        }
        if self.beta_regularized {
            out.push("beta step regularized the kernel matrix");
        }
        if !self.converged {
            out.push("outer loop reached max_outer before the tolerance");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub beta: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Every accepted objective value, in order, across all phases.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    /// Objective at the end of each outer iteration.
    pub outer_objectives: Vec<f64>,
    /// Diagonal of `D` at the current iterate.
    pub irwls_weights: DVector<f64>,
    /// `u_i ≥ ε` at the current iterate.
    pub active_mask: Vec<bool>,
    pub flags: SolverFlags,
    /// Largest relative stationarity residual over all β-steps.
    pub max_beta_residual: f64,
    pub irwls_iterations: usize,
    pub s_iterations: usize,
    pub outer_iterations: usize,
}

impl SolverState {
    /// `β = 0`, `S = I`.
    pub fn initial(
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        y: &DMatrix<f64>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let (q, n) = y.shape();
        let beta = DMatrix::zeros(q, n);
        let s = DMatrix::identity(q, q);
        Self::from_parts(beta, s, k, g, y, cfg)
    }

    pub fn from_parts(
        beta: DMatrix<f64>,
        s: DMatrix<f64>,
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        y: &DMatrix<f64>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        check_shapes(&beta, &s, k, g, y)?;
        let value = evaluate(&beta, &s, k, g, y, cfg).total;
        let e = y - &s * (&beta * k);
        let irwls_weights = irwls_weights(&e, cfg);
        let active_mask = residual_norms(&e).iter().map(|&u| u >= cfg.epsilon).collect();
        Ok(Self {
            beta,
            s,
            objective_trace: vec![value],
            trace: vec![TraceEntry {
                outer: 0,
                phase: Phase::Init,
                value,
            }],
            outer_objectives: Vec::new(),
            irwls_weights,
            active_mask,
            flags: SolverFlags::default(),
            max_beta_residual: 0.0,
            irwls_iterations: 0,
            s_iterations: 0,
            outer_iterations: 0,
        })
    }

    pub fn objective_value(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    fn record(&mut self, phase: Phase, value: f64) {
        self.objective_trace.push(value);
        self.trace.push(TraceEntry {
            outer: self.outer_iterations,
            phase,
            value,
        });
    }

    fn refresh_weights(&mut self, k: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &TrainConfig) {
        let e = y - &self.s * (&self.beta * k);
        self.irwls_weights = irwls_weights(&e, cfg);
        self.active_mask = residual_norms(&e).iter().map(|&u| u >= cfg.epsilon).collect();
    }
}

fn check_problem(k: &DMatrix<f64>, g: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    let n = y.ncols();
    if k.shape() != (n, n) || g.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "Y has {n} samples but K is {:?} and G is {:?}",
            k.shape(),
            g.shape()
        )));
    }
    if !is_symmetric(k, 1e-10) {
        return Err(Error::Shape("kernel matrix is not symmetric".into()));
    }
    if !is_symmetric(g, 1e-10) {
        return Err(Error::Shape("Laplacian is not symmetric".into()));
    }
    if y.iter().chain(k.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite values in labels or kernel".into()));
    }
    Ok(())
}

fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / old.abs().max(1e-300)
}

/// Adapted IRWLS on `β` with `S` fixed.
pub fn irwls_optimize_beta(
    mut state: SolverState,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    check_problem(k, g, y)?;
    check_shapes(&state.beta, &state.s, k, g, y)?;
    let mut current = state.objective_value();

    for _ in 0..cfg.max_irwls {
        let e = y - &state.s * (&state.beta * k);
        let d = irwls_weights(&e, cfg);
        let step = solve_beta_step(&state.s, k, g, y, &d, cfg)?;
        state.max_beta_residual = state.max_beta_residual.max(step.relative_residual);
        state.flags.beta_regularized |= step.regularized;
        state.irwls_iterations += 1;

        let direction = &step.beta - &state.beta;
        if direction.norm() <= 1e-14 * (1.0 + state.beta.norm()) {
            break;
        }
        let grad = gradient_beta(&state.beta, &state.s, k, g, y, cfg)?;
        let slope = grad.dot(&direction);
        if slope >= 0.0 {
            break;
        }

        let mut eta = 1.0;
        let accepted = loop {
            let cand = &state.beta + eta * &direction;
            let value = evaluate(&cand, &state.s, k, g, y, cfg).total;
            if value <= current + ARMIJO_C * eta * slope {
                break Some((cand, value));
            }
            eta *= SHRINK;
            if eta < MIN_STEP {
                break None;
            }
        };
        let Some((beta, value)) = accepted else {
            state.flags.beta_line_search_failed = true;
            break;
        };
        state.beta = beta;
        state.record(Phase::Irwls, value);
        let change = relative_change(current, value);
        current = value;
        if change < cfg.tol {
            break;
        }
    }
    state.refresh_weights(k, y, cfg);
    Ok(state)
}

/// Reweighted ℓ2,1 updates of `S` with `β` fixed, each followed by
/// backtracking on the true objective. `D` is recomputed at every step.
pub fn optimize_structure(
    mut state: SolverState,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    check_problem(k, g, y)?;
    check_shapes(&state.beta, &state.s, k, g, y)?;
    let mut current = state.objective_value();

    for _ in 0..cfg.max_s_iters {
        let e = y - &state.s * (&state.beta * k);
        let d = irwls_weights(&e, cfg);
        let system = StructureSystem::new(&state.beta, k, g, y, &d, cfg.gamma);
        let (target, ridged) = system.step(&state.s, cfg)?;
        state.flags.structure_ridged |= ridged;
        state.s_iterations += 1;

        let direction = &target - &state.s;
        if direction.norm() <= 1e-14 * (1.0 + state.s.norm()) {
            break;
        }
        let mut eta = 1.0;
        let accepted = loop {
            let cand = &state.s + eta * &direction;
            let value = evaluate(&state.beta, &cand, k, g, y, cfg).total;
            if value <= current {
                break Some((cand, value));
            }
            eta *= SHRINK;
            if eta < MIN_STEP {
                break None;
            }
        };
        let Some((s, value)) = accepted else {
            state.flags.structure_line_search_failed = true;
            break;
        };
        state.s = s;
        state.record(Phase::Structure, value);
        let change = relative_change(current, value);
        current = value;
        if change < cfg.tol {
            break;
        }
    }
    state.refresh_weights(k, y, cfg);
    Ok(state)
}

/// Rescales `β → β/c`, `S → cS` with `c³ = tr(βKβᵀ) / (λ Σ_j ‖S_j‖)`, the
/// exact minimizer along the direction that leaves `SβK` unchanged. Plain
/// alternation crawls along this direction because each block update sees
/// the other block's scale as fixed.
pub fn rebalance(
    mut state: SolverState,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<SolverState> {
    check_shapes(&state.beta, &state.s, k, g, y)?;
    let current = state.objective_value();
    let rkhs = (&state.beta * k).dot(&state.beta);
    let l21 = l21_norm_columns(&state.s);
    if cfg.lambda <= 0.0 || rkhs <= 0.0 || l21 <= 0.0 {
        return Ok(state);
    }
    let c = (rkhs / (cfg.lambda * l21)).cbrt();
    if !c.is_finite() || c <= 0.0 || (c - 1.0).abs() < 1e-12 {
        return Ok(state);
    }
    let beta = &state.beta / c;
    let s = &state.s * c;
    let value = evaluate(&beta, &s, k, g, y, cfg).total;
    if value <= current {
        state.beta = beta;
        state.s = s;
        state.record(Phase::Rebalance, value);
    }
    Ok(state)
}

/// Alternates β (IRWLS) and `S` updates from `β = 0`, `S = I`.
///
/// Non-convergence is reported through [`SolverFlags`], never as an error.
pub fn fit(
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    check_problem(k, g, y)?;
    let state = SolverState::initial(k, g, y, cfg)?;
    fit_from(state, k, g, y, cfg)
}

/// Runs the alternating loop from an arbitrary starting state.
pub fn fit_from(
    mut state: SolverState,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    check_problem(k, g, y)?;
    for _ in 0..cfg.max_outer {
        let before = state.objective_value();
        state.outer_iterations += 1;
        state = irwls_optimize_beta(state, k, g, y, cfg)?;
        if cfg.learn_structure {
            state = optimize_structure(state, k, g, y, cfg)?;
            if cfg.rebalance {
                state = rebalance(state, k, g, y, cfg)?;
            }
        }
        let after = state.objective_value();
        state.outer_objectives.push(after);
        if relative_change(before, after) < cfg.tol {
            state.flags.converged = true;
            break;
        }
    }
    if cfg.max_outer == 0 {
        state.flags.converged = true;
    }
    Ok(state)
}
