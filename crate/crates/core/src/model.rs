//! The user-facing estimator: feature scaling, kernel-weight learning,
//! Laplacian construction and the alternating solver, with support-sample
//! prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{build_laplacian, Rho};
use crate::kernels::{
    align_weights, combine, combined_cross_kernel, default_bandwidths, BaseKernelBank,
    KernelWeights, TargetKernel,
};
use crate::solver::{self, auto_epsilon, SolverFlags, TraceEntry, TrainConfig};

/// Number of trailing label rows holding the three Cobb angles.
pub const ANGLE_OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Landmarks and angles predicted together.
    Joint,
    /// The three angles alone.
    AnglesOnly,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::AnglesOnly => "angles_only",
        }
    }

    /// Rows of a full label matrix this mode trains on.
    pub fn select_rows(&self, labels: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Mode::Joint => labels.clone(),
            Mode::AnglesOnly => {
                let q = labels.nrows();
                labels.rows(q.saturating_sub(ANGLE_OUTPUTS), ANGLE_OUTPUTS.min(q)).into_owned()
            }
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "angles_only" | "angles" => Ok(Mode::AnglesOnly),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub train: TrainConfig,
    pub bandwidths: Vec<f64>,
    pub rho: Rho,
    /// Center `K_T` as well as the base kernels before alignment.
    pub center_target: bool,
    /// Replace `train.epsilon` by `0.01·median‖y_i‖` of the centered labels.
    pub auto_epsilon: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            bandwidths: default_bandwidths(),
            rho: Rho::Auto,
            center_target: false,
            auto_epsilon: false,
        }
    }
}

/// Per-dimension standardization followed by a common `1/√d` factor, so
/// squared distances between scaled samples are O(1) whatever the descriptor
/// length. Constant dimensions map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let (d, n) = x.shape();
        if n == 0 {
            return Err(Error::InsufficientData("no training samples".into()));
        }
        let mean: Vec<f64> = (0..d).map(|r| x.row(r).sum() / n as f64).collect();
        let std: Vec<f64> = (0..d)
            .map(|r| {
                let m = mean[r];
                (x.row(r).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
            })
            .collect();
        let spread = std.iter().cloned().fold(0.0, f64::max);
        let varying = std.iter().filter(|&&s| s > 1e-12 * spread.max(1e-300)).count();
        if varying == 0 || spread == 0.0 {
            return Err(Error::Data(
                "every feature is constant across samples (zero-variance kernel)".into(),
            ));
        }
        let root_d = (varying as f64).sqrt();
        let scale = std
            .iter()
            .map(|&s| if s > 1e-12 * spread { s * root_d } else { f64::INFINITY })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.nrows()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[r]) / self.scale[r]
        }))
    }
}

pub fn matrix_digest(m: &DMatrix<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `q × N_s` kernel coefficients over the support samples.
    pub beta: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub omega: KernelWeights,
}

/// Diagnostics from training; not persisted with the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub outer_objectives: Vec<f64>,
    pub base_alignments: Vec<f64>,
    pub combined_alignment: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub flags: SolverFlags,
    pub max_beta_residual: f64,
    pub irwls_iterations: usize,
    pub s_iterations: usize,
    pub outer_iterations: usize,
    pub training_samples: usize,
}

#[derive(Debug, Clone)]
pub struct S2vrModel {
    pub params: ModelParams,
    pub bandwidths: Vec<f64>,
    /// Scaled features of the support samples, `d × N_s`.
    pub support_inputs: DMatrix<f64>,
    /// Training-column index of each support sample.
    pub support_indices: Vec<usize>,
    pub output_mean: DVector<f64>,
    /// Labels are divided by this (RMS of the centered training labels)
    /// before fitting; predictions are multiplied back.
    pub output_scale: f64,
    pub scaler: FeatureScaler,
    pub config: ModelConfig,
    pub mode: Mode,
    /// SHA-256 of the scaled training matrix.
    pub training_digest: [u8; 32],
    /// Provenance hash of the pipeline run that produced the model.
    pub pipeline_hash: [u8; 32],
    pub report: Option<TrainingReport>,
}

impl S2vrModel {
    pub fn outputs(&self) -> usize {
        self.params.s.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.scaler.dim()
    }

    /// `ŷ = scale · S β K(x) + mean`, one column per column of `x_new`.
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let xs = self.scaler.transform(x_new)?;
        let kt = combined_cross_kernel(
            &self.support_inputs,
            &xs,
            &self.bandwidths,
            &self.params.omega,
        )?;
        let mut out = &self.params.s * (&self.params.beta * kt) * self.output_scale;
        for mut col in out.column_iter_mut() {
            col += &self.output_mean;
        }
        Ok(out)
    }
}

pub fn predict(model: &S2vrModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.predict(x_new)
}

fn check_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, mode: Mode) -> Result<()> {
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::Shape(format!(
            "{n} feature columns but {} label columns",
            y.ncols()
        )));
    }
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 training samples, got {n}"
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite values in features or labels".into()));
    }
    if mode == Mode::AnglesOnly && y.nrows() != ANGLE_OUTPUTS {
        return Err(Error::Mode(format!(
            "angles-only mode expects {ANGLE_OUTPUTS} outputs, got {}",
            y.nrows()
        )));
    }
    if y.nrows() == 0 {
        return Err(Error::Shape("labels have no outputs".into()));
    }
    Ok(())
}

/// Trains the structured model on `x` (`d × N`) and `y` (`q × N`).
pub fn fit_model(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<S2vrModel> {
    check_inputs(x, y, mode)?;
    config.train.validate()?;
    let (q, n) = y.shape();

    let scaler = FeatureScaler::fit(x)?;
    let xs = scaler.transform(x)?;
    let output_mean = DVector::from_fn(q, |r, _| y.row(r).sum() / n as f64);
    let mut yc = y.clone();
    for mut col in yc.column_iter_mut() {
        col -= &output_mean;
    }
    if yc.amax() == 0.0 {
        return Err(Error::Data("labels have zero variance".into()));
    }
    // one global factor, so λ and ε mean the same thing whatever the label units
    let output_scale = (yc.norm_squared() / (q * n) as f64).sqrt();
    yc /= output_scale;

    let bank = BaseKernelBank::gaussian(&xs, &config.bandwidths)?;
    let target = TargetKernel::from_labels(&yc, config.center_target)?;
    let alignment = align_weights(&bank.centered_copy()?, &target)?;
    let omega = alignment.weights.clone();
    let k = combine(&bank, &omega)?;
    drop(bank);

    let mut train = config.train.clone();
    if config.auto_epsilon {
        train.epsilon = auto_epsilon(&yc);
    }
    let graph = build_laplacian(&yc, config.rho)?;
    let state = solver::fit(&k, &graph.laplacian, &yc, &train)?;
    for w in state.flags.warnings() {
        log::warn!("{w}");
    }

    let beta_scale = state.beta.norm();
    let support_indices: Vec<usize> = if train.epsilon == 0.0 {
        (0..n).collect()
    } else {
        (0..n)
            .filter(|&i| {
                state.irwls_weights[i] > 0.0
                    || state.beta.column(i).norm() > 1e-12 * beta_scale
            })
            .collect()
    };
    let support_indices = if support_indices.is_empty() {
        // dead zone swallowed every sample; β is zero, keep one column
        vec![0]
    } else {
        support_indices
    };
    let beta = DMatrix::from_fn(q, support_indices.len(), |r, c| {
        state.beta[(r, support_indices[c])]
    });
    let support_inputs = DMatrix::from_fn(xs.nrows(), support_indices.len(), |r, c| {
        xs[(r, support_indices[c])]
    });

    let report = TrainingReport {
        objective_trace: state.objective_trace.clone(),
        trace: state.trace.clone(),
        outer_objectives: state.outer_objectives.clone(),
        base_alignments: alignment.base_alignments.clone(),
        combined_alignment: alignment.combined_alignment,
        epsilon: train.epsilon,
        rho: graph.rho,
        flags: state.flags.clone(),
        max_beta_residual: state.max_beta_residual,
        irwls_iterations: state.irwls_iterations,
        s_iterations: state.s_iterations,
        outer_iterations: state.outer_iterations,
        training_samples: n,
    };

    Ok(S2vrModel {
        params: ModelParams {
            beta,
            s: state.s,
            omega,
        },
        bandwidths: config.bandwidths.clone(),
        support_inputs,
        support_indices,
        output_mean,
        output_scale,
        training_digest: matrix_digest(&xs),
        scaler,
        config: ModelConfig {
            train,
            ..config.clone()
        },
        mode,
        pipeline_hash: [0; 32],
        report: Some(report),
    })
}

/// Multi-output SVR baseline: the same estimator with `S` frozen at the
/// identity and the manifold and ℓ2,1 terms switched off.
pub fn fit_baseline_svr(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<S2vrModel> {
    let baseline = ModelConfig {
        train: config.train.baseline(),
        ..config.clone()
    };
    fit_model(x, y, &baseline, mode)
}
