//! Error measures, per-model evaluation and k-fold cross-validation.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{consistency_gap, LABEL_LEN};
use crate::model::{fit_baseline_svr, fit_model, Mode, ModelConfig, S2vrModel, ANGLE_OUTPUTS};

/// Which form of the relative error to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RrmseVariant {
    /// `100·sqrt(Σ(ŷ−y)² / Σ(ȳ−y)²)`.
    #[default]
    Rooted,
    /// `100·Σ(ŷ−y) / Σ(ȳ−y)`, the signed, unsquared ratio.
    Signed,
}

/// Relative root-mean-square error in percent, against the training mean.
pub fn rrmse(pred: &[f64], truth: &[f64], train_mean: f64) -> Result<f64> {
    rrmse_with(pred, truth, train_mean, RrmseVariant::Rooted)
}

pub fn rrmse_with(
    pred: &[f64],
    truth: &[f64],
    train_mean: f64,
    variant: RrmseVariant,
) -> Result<f64> {
    let means = vec![train_mean; truth.len()];
    rrmse_pooled(pred, truth, &means, variant)
}

/// As [`rrmse`], with a reference mean per sample (pooled out-of-fold
/// predictions, where each sample was scored against its own fold's mean).
pub fn rrmse_pooled(
    pred: &[f64],
    truth: &[f64],
    means: &[f64],
    variant: RrmseVariant,
) -> Result<f64> {
    if pred.len() != truth.len() || means.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} truths, {} means",
            pred.len(),
            truth.len(),
            means.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InsufficientData("RRMSE needs at least two samples".into()));
    }
    let (num, den) = match variant {
        RrmseVariant::Rooted => pred.iter().zip(truth).zip(means).fold(
            (0.0, 0.0),
            |(a, b), ((p, t), m)| (a + (p - t) * (p - t), b + (m - t) * (m - t)),
        ),
        RrmseVariant::Signed => pred
            .iter()
            .zip(truth)
            .zip(means)
            .fold((0.0, 0.0), |(a, b), ((p, t), m)| (a + (p - t), b + (m - t))),
    };
    if den == 0.0 {
        return Err(Error::DegenerateTruth(
            "truth equals the reference mean at every sample".into(),
        ));
    }
    Ok(match variant {
        RrmseVariant::Rooted => 100.0 * (num / den).sqrt(),
        RrmseVariant::Signed => 100.0 * num / den,
    })
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the series is constant".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub median: [f64; 3],
    pub mean: [f64; 3],
    pub max: [f64; 3],
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Disagreement between predicted angles and angles re-measured from the
/// predicted landmarks, over the columns of a full (139-row) prediction.
pub fn consistency_summary(pred: &DMatrix<f64>) -> Result<GapSummary> {
    if pred.nrows() != LABEL_LEN {
        return Err(Error::Mode(format!(
            "consistency needs {LABEL_LEN}-row predictions, got {}",
            pred.nrows()
        )));
    }
    let mut gaps: [Vec<f64>; 3] = Default::default();
    for col in pred.column_iter() {
        let g = consistency_gap(col.as_slice())?;
        for a in 0..3 {
            gaps[a].push(g[a]);
        }
    }
    let mut out = GapSummary {
        median: [0.0; 3],
        mean: [0.0; 3],
        max: [0.0; 3],
    };
    for a in 0..3 {
        out.mean[a] = gaps[a].iter().sum::<f64>() / gaps[a].len().max(1) as f64;
        out.max[a] = gaps[a].iter().cloned().fold(0.0, f64::max);
        out.median[a] = median(&mut gaps[a]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub samples: usize,
    /// RRMSE of each output row.
    pub per_output_rrmse: Vec<f64>,
    /// Mean over all outputs.
    pub rrmse_mean: f64,
    /// Mean over the three angle outputs.
    pub angle_rrmse: f64,
    /// Pearson correlation of each predicted angle with the truth; `None`
    /// when either series is constant (e.g. a collapsed model).
    pub angle_correlation: [Option<f64>; 3],
    pub consistency: Option<GapSummary>,
}

fn row_vec(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

/// Scores predictions. `truth` has the same rows as `pred`; the last three
/// rows are the angles. `train_mean` holds one reference mean per output.
pub fn score(
    mode: Mode,
    pred: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    means: &DMatrix<f64>,
    variant: RrmseVariant,
) -> Result<EvalReport> {
    if pred.shape() != truth.shape() || means.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?}, truth {:?}, means {:?}",
            pred.shape(),
            truth.shape(),
            means.shape()
        )));
    }
    let q = truth.nrows();
    if q < ANGLE_OUTPUTS {
        return Err(Error::Mode(format!("need at least {ANGLE_OUTPUTS} outputs")));
    }
    let per_output_rrmse = (0..q)
        .map(|r| rrmse_pooled(&row_vec(pred, r), &row_vec(truth, r), &row_vec(means, r), variant))
        .collect::<Result<Vec<_>>>()?;
    let rrmse_mean = per_output_rrmse.iter().sum::<f64>() / q as f64;
    let angle_rrmse = per_output_rrmse[q - ANGLE_OUTPUTS..].iter().sum::<f64>() / 3.0;
    let mut angle_correlation = [None; 3];
    for (a, c) in angle_correlation.iter_mut().enumerate() {
        let r = q - ANGLE_OUTPUTS + a;
        *c = match pearson(&row_vec(pred, r), &row_vec(truth, r)) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation(_)) => {
                log::warn!("correlation of angle output {a} is undefined (constant series)");
                None
            }
            Err(e) => return Err(e),
        };
    }
    let consistency = if mode == Mode::Joint && q == LABEL_LEN {
        Some(consistency_summary(pred)?)
    } else {
        None
    };
    Ok(EvalReport {
        mode,
        samples: truth.ncols(),
        per_output_rrmse,
        rrmse_mean,
        angle_rrmse,
        angle_correlation,
        consistency,
    })
}

/// Predicts `x_test` and scores it against `y_test`, using the model's
/// training means as the RRMSE reference.
pub fn evaluate(
    model: &S2vrModel,
    x_test: &DMatrix<f64>,
    y_test: &DMatrix<f64>,
    variant: RrmseVariant,
) -> Result<EvalReport> {
    if y_test.nrows() != model.outputs() {
        return Err(Error::Mode(format!(
            "model predicts {} outputs, truth has {}",
            model.outputs(),
            y_test.nrows()
        )));
    }
    let pred = model.predict(x_test)?;
    let means = DMatrix::from_fn(y_test.nrows(), y_test.ncols(), |r, _| model.output_mean[r]);
    score(model.mode, &pred, y_test, &means, variant)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Svr,
    S2vr,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Svr => "SVR",
            Method::S2vr => "S2VR",
        }
    }

    pub fn fit(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        config: &ModelConfig,
        mode: Mode,
    ) -> Result<S2vrModel> {
        match self {
            Method::Svr => fit_baseline_svr(x, y, config, mode),
            Method::S2vr => fit_model(x, y, config, mode),
        }
    }
}

/// Deterministic fold assignment: a seeded shuffle dealt round-robin.
/// `k == n` is leave-one-out.
pub fn k_fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!("need 2 ≤ k ≤ {n}, got k = {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn take_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: Method,
    pub mode: Mode,
    pub folds: usize,
    /// Per-fold reports; empty for leave-one-out, where folds hold one sample.
    pub fold_reports: Vec<EvalReport>,
    /// All-output RRMSE: per output, then over outputs, then over folds.
    pub rrmse_mean: f64,
    /// Angle RRMSE averaged the same way.
    pub angle_rrmse: f64,
    /// Score of the pooled out-of-fold predictions.
    pub pooled: EvalReport,
    /// Out-of-fold predictions in sample order.
    #[serde(skip)]
    pub predictions: DMatrix<f64>,
}

/// Cross-validates one method in one mode. `labels` is the output matrix the
/// mode trains on.
pub fn cross_validate(
    x: &DMatrix<f64>,
    labels: &DMatrix<f64>,
    config: &ModelConfig,
    method: Method,
    mode: Mode,
    folds: &[Vec<usize>],
    variant: RrmseVariant,
) -> Result<CvReport> {
    let (q, n) = labels.shape();
    if x.ncols() != n {
        return Err(Error::Shape(format!("{} feature columns, {n} label columns", x.ncols())));
    }
    let mut pred = DMatrix::zeros(q, n);
    let mut means = DMatrix::zeros(q, n);
    let mut fold_reports = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let mut is_test = vec![false; n];
        for &i in test {
            is_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let model = method.fit(&take_columns(x, &train), &take_columns(labels, &train), config, mode)?;
        let p = model.predict(&take_columns(x, test))?;
        for (c, &i) in test.iter().enumerate() {
            pred.set_column(i, &p.column(c));
            means.set_column(i, &model.output_mean);
        }
        if test.len() >= 2 {
            let fold_means = DMatrix::from_fn(q, test.len(), |r, _| model.output_mean[r]);
            fold_reports.push(score(mode, &p, &take_columns(labels, test), &fold_means, variant)?);
        }
        log::info!("{} {} fold {}/{} done", method.label(), mode.as_str(), f + 1, folds.len());
    }
    let pooled = score(mode, &pred, labels, &means, variant)?;
    let per_fold = fold_reports.len() == folds.len() && !folds.is_empty();
    let (rrmse_mean, angle_rrmse) = if per_fold {
        let k = fold_reports.len() as f64;
        (
            fold_reports.iter().map(|r| r.rrmse_mean).sum::<f64>() / k,
            fold_reports.iter().map(|r| r.angle_rrmse).sum::<f64>() / k,
        )
    } else {
        (pooled.rrmse_mean, pooled.angle_rrmse)
    };
    Ok(CvReport {
        method,
        mode,
        folds: folds.len(),
        fold_reports,
        rrmse_mean,
        angle_rrmse,
        pooled,
        predictions: pred,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: Method,
    pub mode: Mode,
    pub angle_rrmse: f64,
    pub rrmse_mean: f64,
    pub angle_correlation: [Option<f64>; 3],
    pub consistency: Option<GapSummary>,
}

/// Methods × modes, scored by angle RRMSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub folds: usize,
    pub samples: usize,
    pub variant: RrmseVariant,
    pub cells: Vec<ComparisonCell>,
}

impl ComparisonReport {
    pub fn cell(&self, method: Method, mode: Mode) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.method == method && c.mode == mode)
    }

    /// Tab-separated table, one row per method, one column per mode.
    pub fn to_table(&self) -> String {
        let mut out = String::from("method\tangles\tangles_landmarks\n");
        for method in [Method::Svr, Method::S2vr] {
            let _ = write!(out, "{}", method.label());
            for mode in [Mode::AnglesOnly, Mode::Joint] {
                match self.cell(method, mode) {
                    Some(c) => {
                        let _ = write!(out, "\t{:.4}", c.angle_rrmse);
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Fills the comparison table. `full_labels` are the 139-row labels; the
/// angles-only runs use their last three rows.
pub fn compare(
    x: &DMatrix<f64>,
    full_labels: &DMatrix<f64>,
    config: &ModelConfig,
    folds: &[Vec<usize>],
    variant: RrmseVariant,
) -> Result<ComparisonReport> {
    let mut cells = Vec::new();
    for method in [Method::Svr, Method::S2vr] {
        for mode in [Mode::AnglesOnly, Mode::Joint] {
            let labels = mode.select_rows(full_labels);
            let cv = cross_validate(x, &labels, config, method, mode, folds, variant)?;
            cells.push(ComparisonCell {
                method,
                mode,
                angle_rrmse: cv.angle_rrmse,
                rrmse_mean: cv.rrmse_mean,
                angle_correlation: cv.pooled.angle_correlation,
                consistency: cv.pooled.consistency,
            });
        }
    }
    Ok(ComparisonReport {
        folds: folds.len(),
        samples: x.ncols(),
        variant,
        cells,
    })
}
