//! File-level commands behind the `s2vr` binary.
//!
//! Every artifact carries a pipeline hash: SHA-256 over the stage name, the
//! configuration (paths excluded, so relocating a run does not change its
//! outputs) and the SHA-256 of each input file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{hog, load_png, render, save_png, HogConfig, HogLayout, RenderOptions};
use crate::format::{deserialize, serialize};
use crate::geometry::{generate_spine, SpineDistribution, SpineShapeParams, LABEL_LEN};
use crate::io::{self, annotation_table, image_path, read_annotations, Table};
use crate::kernels::{align_weights, BaseKernelBank, TargetKernel};
use crate::metrics::{compare, k_fold_indices, score, ComparisonReport, Method, RrmseVariant};
use crate::model::{FeatureScaler, Mode, ModelConfig, S2vrModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: PathBuf,
    pub images: PathBuf,
    pub features: PathBuf,
    pub model: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
    pub train_log: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            annotations: "data/annotations.csv".into(),
            images: "data/images".into(),
            features: "data/features.csv".into(),
            model: "out/model.s2vr".into(),
            predictions: "out/predictions.csv".into(),
            reports: "out/reports".into(),
            train_log: "out/train.log".into(),
        }
    }
}

impl Paths {
    /// Resolves relative paths against `base`.
    pub fn rebased(&self, base: &Path) -> Self {
        let j = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            annotations: j(&self.annotations),
            images: j(&self.images),
            features: j(&self.features),
            model: j(&self.model),
            predictions: j(&self.predictions),
            reports: j(&self.reports),
            train_log: j(&self.train_log),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub samples: usize,
    pub spine: SpineDistribution,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            spine: SpineDistribution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// k-fold (or leave-one-out) cross-validation.
    #[default]
    CrossValidation,
    /// Fit and score on the full data set.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub folds: usize,
    pub leave_one_out: bool,
    pub protocol: Protocol,
    pub variant: RrmseVariant,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            leave_one_out: false,
            protocol: Protocol::CrossValidation,
            variant: RrmseVariant::Rooted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mode: Mode,
    pub method: Method,
    pub paths: Paths,
    pub generate: GenerateConfig,
    pub render: RenderOptions,
    pub hog: HogConfig,
    pub model: ModelConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Joint,
            method: Method::S2vr,
            paths: Paths::default(),
            generate: GenerateConfig::default(),
            render: RenderOptions::default(),
            hog: HogConfig::default(),
            model: ModelConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hash of the stage, the path-free configuration and the input files.
    pub fn pipeline_hash(&self, stage: &str, inputs: &[PathBuf]) -> Result<[u8; 32]> {
        let mut stripped = self.clone();
        stripped.paths = Paths::default();
        let canonical = serde_json::to_vec(&stripped)
            .map_err(|e| Error::Config(format!("cannot encode config: {e}")))?;
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update([0]);
        h.update((canonical.len() as u64).to_le_bytes());
        h.update(&canonical);
        for p in inputs {
            h.update(Sha256::digest(io::read_file(p)?));
        }
        Ok(h.finalize().into())
    }
}

/// SplitMix64 step; derives independent per-sample seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHAPE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const FOLD_STREAM: u64 = 3;

/// In-memory synthetic data set: label matrix plus rendered images.
pub struct Dataset {
    pub labels: DMatrix<f64>,
    pub images: Vec<crate::features::GrayImage>,
}

pub fn synthesize(cfg: &PipelineConfig) -> Result<Dataset> {
    let n = cfg.generate.samples;
    let mut labels = DMatrix::zeros(LABEL_LEN, n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let params = SpineShapeParams::sample(
            derive_seed(cfg.seed, SHAPE_STREAM, i as u64),
            &cfg.generate.spine,
        )?;
        let spine = generate_spine(&params)?;
        labels.set_column(i, &nalgebra::DVector::from_vec(spine.to_label_vector()));
        images.push(render(&spine, &cfg.render, derive_seed(cfg.seed, NOISE_STREAM, i as u64))?);
    }
    Ok(Dataset { labels, images })
}

/// HOG descriptors of `images`, one column each.
pub fn describe(images: &[crate::features::GrayImage], cfg: &HogConfig) -> Result<(DMatrix<f64>, Option<HogLayout>)> {
    let mut cols: Vec<f64> = Vec::new();
    let mut layout = None;
    for img in images {
        let d = hog(img, cfg)?;
        if let Some(l) = layout {
            if l != d.layout {
                return Err(Error::Shape("images have different sizes".into()));
            }
        }
        layout = Some(d.layout);
        cols.extend_from_slice(&d.values);
    }
    let len = layout.map_or(0, |l| l.descriptor_len());
    Ok((DMatrix::from_vec(len, images.len(), cols), layout))
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub samples: usize,
    pub annotations: PathBuf,
    pub images: Vec<PathBuf>,
}

pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateSummary> {
    let hash = cfg.pipeline_hash("generate", &[])?;
    let data = synthesize(cfg)?;
    fs::create_dir_all(&cfg.paths.images).map_err(|e| Error::io(&cfg.paths.images, e))?;
    let mut written = Vec::with_capacity(data.images.len());
    for (i, img) in data.images.iter().enumerate() {
        let path = image_path(&cfg.paths.images, i);
        save_png(img, &path)?;
        written.push(path);
    }
    let table = annotation_table(data.labels, &hash)?
        .with_meta("samples", cfg.generate.samples)
        .with_meta("seed", cfg.seed);
    table.write(&cfg.paths.annotations)?;
    log::info!("wrote {} spines to {}", written.len(), cfg.paths.annotations.display());
    Ok(GenerateSummary {
        samples: written.len(),
        annotations: cfg.paths.annotations.clone(),
        images: written,
    })
}

/// PNG files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn cmd_features(cfg: &PipelineConfig) -> Result<Table> {
    let files = list_images(&cfg.paths.images)?;
    let hash = cfg.pipeline_hash("features", &files)?;
    let images = files.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?;
    let (x, layout) = describe(&images, &cfg.hog)?;
    let mut table = Table::new(io::FEATURES, &hash, x).with_meta("samples", images.len());
    if let Some(l) = layout {
        table = table
            .with_meta(
                "layout",
                format!(
                    "cell={} block={} bins={} cells={}x{} blocks={}x{}",
                    l.cell, l.block, l.bins, l.cells_x, l.cells_y, l.blocks_x, l.blocks_y
                ),
            )
            .with_meta("descriptor_len", l.descriptor_len());
    }
    table.write(&cfg.paths.features)?;
    log::info!("wrote {} descriptors to {}", images.len(), cfg.paths.features.display());
    Ok(table)
}

fn load_training(cfg: &PipelineConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = Table::read(&cfg.paths.features, io::FEATURES)?.data;
    let y = read_annotations(&cfg.paths.annotations)?.data;
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "{} feature records but {} annotation records",
            x.ncols(),
            y.ncols()
        )));
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pipeline: String,
    pub mode: Mode,
    pub bandwidths: Vec<f64>,
    pub base_alignments: Vec<f64>,
    pub weights: Vec<f64>,
    pub combined_alignment: f64,
}

pub fn cmd_align(cfg: &PipelineConfig) -> Result<AlignmentReport> {
    let inputs = [cfg.paths.features.clone(), cfg.paths.annotations.clone()];
    let hash = cfg.pipeline_hash("align", &inputs)?;
    let (x, y) = load_training(cfg)?;
    let y = cfg.mode.select_rows(&y);
    let xs = FeatureScaler::fit(&x)?.transform(&x)?;
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        let m = row.sum() / row.len() as f64;
        row.add_scalar_mut(-m);
    }
    let bank = BaseKernelBank::gaussian(&xs, &cfg.model.bandwidths)?.centered_copy()?;
    let fit = align_weights(&bank, &TargetKernel::from_labels(&yc, cfg.model.center_target)?)?;
    let report = AlignmentReport {
        pipeline: hex::encode(hash),
        mode: cfg.mode,
        bandwidths: cfg.model.bandwidths.clone(),
        base_alignments: fit.base_alignments,
        weights: fit.weights.as_slice().to_vec(),
        combined_alignment: fit.combined_alignment,
    };
    write_json(&cfg.paths.reports.join("alignment.json"), &report)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    text.push('\n');
    io::write_file(path, text.as_bytes())
}

/// Training log: learned ω per bandwidth, one objective line per outer
/// iteration, then the full objective trace.
pub fn training_log(model: &S2vrModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# s2vr train-log v1");
    let _ = writeln!(out, "# pipeline {}", hex::encode(model.pipeline_hash));
    let _ = writeln!(out, "mode {}", model.mode.as_str());
    let omega = model.params.omega.as_slice();
    for (s, w) in model.bandwidths.iter().zip(omega) {
        let _ = writeln!(out, "omega sigma={s} weight={w}");
    }
    let _ = writeln!(out, "omega_sum_squares {}", omega.iter().map(|w| w * w).sum::<f64>());
    let _ = writeln!(out, "support {}", model.support_indices.len());
    if let Some(r) = &model.report {
        let _ = writeln!(out, "epsilon {}", r.epsilon);
        let _ = writeln!(out, "rho {}", r.rho);
        for (i, v) in r.outer_objectives.iter().enumerate() {
            let _ = writeln!(out, "outer {} objective={v}", i + 1);
        }
        for (i, t) in r.trace.iter().enumerate() {
            let _ = writeln!(out, "trace {i} outer={} phase={:?} objective={}", t.outer, t.phase, t.value);
        }
        let _ = writeln!(out, "max_beta_residual {}", r.max_beta_residual);
        let _ = writeln!(out, "converged {}", r.flags.converged);
        for w in r.flags.warnings() {
            let _ = writeln!(out, "warning {w}");
        }
    }
    out
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<S2vrModel> {
    let inputs = [cfg.paths.features.clone(), cfg.paths.annotations.clone()];
    let hash = cfg.pipeline_hash("train", &inputs)?;
    let (x, y) = load_training(cfg)?;
    let y = cfg.mode.select_rows(&y);
    let mut model = cfg.method.fit(&x, &y, &cfg.model, cfg.mode)?;
    model.pipeline_hash = hash;
    io::write_file(&cfg.paths.model, &serialize(&model)?)?;
    io::write_file(&cfg.paths.train_log, training_log(&model).as_bytes())?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<S2vrModel> {
    deserialize(&io::read_file(path)?).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn cmd_predict(cfg: &PipelineConfig) -> Result<Table> {
    let inputs = [cfg.paths.model.clone(), cfg.paths.features.clone()];
    let hash = cfg.pipeline_hash("predict", &inputs)?;
    let model = load_model(&cfg.paths.model)?;
    let x = Table::read(&cfg.paths.features, io::FEATURES)?.data;
    if x.nrows() != model.feature_dim() {
        return Err(Error::Shape(format!(
            "model {} was trained on {}-dimensional features, {} has {}",
            cfg.paths.model.display(),
            model.feature_dim(),
            cfg.paths.features.display(),
            x.nrows()
        )));
    }
    let pred = model.predict(&x)?;
    let mut table = Table::new(io::PREDICTIONS, &hash, pred).with_meta("mode", model.mode.as_str());
    if model.mode == Mode::Joint && model.outputs() == LABEL_LEN {
        table = table.with_meta("layout", io::ANNOTATION_LAYOUT);
    }
    table.write(&cfg.paths.predictions)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub pipeline: String,
    pub protocol: Protocol,
    pub comparison: ComparisonReport,
}

impl EvaluationOutput {
    /// Human-readable summary: the comparison table, then correlations and
    /// consistency gaps per cell.
    pub fn summary(&self) -> String {
        let mut out = self.comparison.to_table();
        for c in &self.comparison.cells {
            let corr: Vec<String> = c
                .angle_correlation
                .iter()
                .map(|v| v.map_or("undefined".into(), |v| format!("{v:.4}")))
                .collect();
            let _ = write!(
                out,
                "{} {}: all-output RRMSE {:.4}, angle correlation TA/MA/BA {}",
                c.method.label(),
                c.mode.as_str(),
                c.rrmse_mean,
                corr.join("/")
            );
            if let Some(g) = &c.consistency {
                let _ = write!(
                    out,
                    ", consistency gap median {:.3}/{:.3}/{:.3} deg",
                    g.median[0], g.median[1], g.median[2]
                );
            }
            out.push('\n');
        }
        out
    }
}

/// Both methods in both modes, cross-validated or scored on the training set.
pub fn evaluate_arrays(cfg: &PipelineConfig, x: &DMatrix<f64>, labels: &DMatrix<f64>) -> Result<ComparisonReport> {
    let n = x.ncols();
    let e = &cfg.evaluate;
    match e.protocol {
        Protocol::CrossValidation => {
            let k = if e.leave_one_out { n } else { e.folds };
            let folds = k_fold_indices(n, k, derive_seed(cfg.seed, FOLD_STREAM, 0))?;
            compare(x, labels, &cfg.model, &folds, e.variant)
        }
        Protocol::Training => {
            let mut cells = Vec::new();
            for method in [Method::Svr, Method::S2vr] {
                for mode in [Mode::AnglesOnly, Mode::Joint] {
                    let y = mode.select_rows(labels);
                    let model = method.fit(x, &y, &cfg.model, mode)?;
                    let pred = model.predict(x)?;
                    let means = DMatrix::from_fn(y.nrows(), n, |r, _| model.output_mean[r]);
                    let rep = score(mode, &pred, &y, &means, e.variant)?;
                    cells.push(crate::metrics::ComparisonCell {
                        method,
                        mode,
                        angle_rrmse: rep.angle_rrmse,
                        rrmse_mean: rep.rrmse_mean,
                        angle_correlation: rep.angle_correlation,
                        consistency: rep.consistency,
                    });
                }
            }
            Ok(ComparisonReport {
                folds: 1,
                samples: n,
                variant: e.variant,
                cells,
            })
        }
    }
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluationOutput> {
    let inputs = [cfg.paths.features.clone(), cfg.paths.annotations.clone()];
    let hash = cfg.pipeline_hash("evaluate", &inputs)?;
    let (x, y) = load_training(cfg)?;
    let comparison = evaluate_arrays(cfg, &x, &y)?;
    let output = EvaluationOutput {
        pipeline: hex::encode(hash),
        protocol: cfg.evaluate.protocol,
        comparison,
    };
    let mut table = format!("# s2vr comparison v1\n# pipeline {}\n", output.pipeline);
    table.push_str(&output.comparison.to_table());
    io::write_file(&cfg.paths.reports.join("comparison.tsv"), table.as_bytes())?;
    write_json(&cfg.paths.reports.join("evaluation.json"), &output)?;
    Ok(output)
}
