use std::fs;
use std::path::{Path, PathBuf};

use s2vr::io::{read_annotations, Table, FEATURES, PREDICTIONS};
use s2vr::pipeline::{
    cmd_align, cmd_evaluate, cmd_features, cmd_generate, cmd_predict, cmd_train, load_model, training_log,
    PipelineConfig, Protocol,
};

fn config(root: &Path, samples: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 17;
    cfg.generate.samples = samples;
    cfg.render.width = 32;
    cfg.render.height = 128;
    cfg.hog.cell = 8;
    cfg.model.bandwidths = vec![0.25, 0.5, 1.0];
    cfg.evaluate.folds = 3;
    cfg.paths = cfg.paths.rebased(root);
    cfg
}

fn run_all(cfg: &PipelineConfig) {
    cmd_generate(cfg).unwrap();
    cmd_features(cfg).unwrap();
    cmd_align(cfg).unwrap();
    cmd_train(cfg).unwrap();
    cmd_predict(cfg).unwrap();
    cmd_evaluate(cfg).unwrap();
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_byte_for_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(&config(a.path(), 24));
    run_all(&config(b.path(), 24));
    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));
    for needed in ["data/annotations.csv", "data/features.csv", "out/model.s2vr", "out/predictions.csv", "out/train.log", "out/reports/comparison.tsv", "out/reports/evaluation.json", "out/reports/alignment.json"] {
        assert!(fa.contains(&PathBuf::from(needed)), "missing {needed}");
    }
    for f in &fa {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn empty_generation_writes_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0);
    let summary = cmd_generate(&cfg).unwrap();
    assert_eq!(summary.samples, 0);
    let table = read_annotations(&cfg.paths.annotations).unwrap();
    assert_eq!(table.samples(), 0);
    let text = fs::read_to_string(&cfg.paths.annotations).unwrap();
    assert!(text.lines().all(|l| l.starts_with('#')));
}

#[test]
fn artifacts_carry_layout_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 12);
    cmd_generate(&cfg).unwrap();
    let features = cmd_features(&cfg).unwrap();
    let on_disk = Table::read(&cfg.paths.features, FEATURES).unwrap();
    assert_eq!(on_disk, features);
    let len: usize = features.meta("descriptor_len").unwrap().parse().unwrap();
    // 4×16 cells, 3×15 blocks of 2×2 cells, 9 bins
    assert_eq!(len, 3 * 15 * 4 * 9);
    assert_eq!(features.data.nrows(), len);
    assert_eq!(features.pipeline.len(), 64);

    let model = cmd_train(&cfg).unwrap();
    let log = fs::read_to_string(&cfg.paths.train_log).unwrap();
    assert_eq!(log, training_log(&model));
    let outer = model.report.as_ref().unwrap().outer_iterations;
    assert_eq!(log.lines().filter(|l| l.starts_with("outer ")).count(), outer);
    let ss: f64 = log
        .lines()
        .find_map(|l| l.strip_prefix("omega_sum_squares "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((ss - 1.0).abs() < 1e-10);

    let p1 = cmd_predict(&cfg).unwrap();
    let bytes = fs::read(&cfg.paths.predictions).unwrap();
    let p2 = cmd_predict(&cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(bytes, fs::read(&cfg.paths.predictions).unwrap());
    let loaded = load_model(&cfg.paths.model).unwrap();
    assert_eq!(Table::read(&cfg.paths.predictions, PREDICTIONS).unwrap().data, loaded.predict(&features.data).unwrap());
}

#[test]
fn training_protocol_with_an_interpolating_fit_scores_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 15);
    cfg.evaluate.protocol = Protocol::Training;
    cfg.model.train.tau = 1e6;
    cfg.model.train.gamma = 0.0;
    cfg.model.train.lambda = 1e-6;
    cfg.model.bandwidths = vec![0.1];
    cmd_generate(&cfg).unwrap();
    cmd_features(&cfg).unwrap();
    let out = cmd_evaluate(&cfg).unwrap();
    assert_eq!(out.comparison.cells.len(), 4);
    for cell in &out.comparison.cells {
        assert!(cell.angle_rrmse < 1.0, "{:?} {:?}: {}", cell.method, cell.mode, cell.angle_rrmse);
    }
    let table = fs::read_to_string(cfg.paths.reports.join("comparison.tsv")).unwrap();
    assert!(table.lines().any(|l| l == "method\tangles\tangles_landmarks"));
}

#[test]
fn prediction_rejects_mismatched_features() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 10);
    cmd_generate(&cfg).unwrap();
    cmd_features(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let mut other = cfg.clone();
    other.hog.bins = 6;
    cmd_features(&other).unwrap();
    let err = cmd_predict(&cfg).unwrap_err();
    assert!(err.to_string().contains("features"), "{err}");
}
