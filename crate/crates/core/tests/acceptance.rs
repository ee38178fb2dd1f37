//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use rand::Rng;

use s2vr::format::{deserialize, serialize};
use s2vr::geometry::{cobb_from_landmarks, generate_spine, Point, SpineDistribution, SpineShapeParams};
use s2vr::kernels::{align_weights, TargetKernel};
use s2vr::metrics::{evaluate, Method, RrmseVariant};
use s2vr::model::{fit_baseline_svr, fit_model, ModelConfig};
use s2vr::pipeline::{self, PipelineConfig};
use s2vr::qp::kkt_residuals;
use s2vr::solver::{fit, gradient_beta, gradient_s, objective, SolverState};
use s2vr::synth::{self, BenchmarkConfig};
use s2vr::{Mode, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn kernel_ridge_reduction() -> Outcome {
    let inst = instance(2024, 50, 5, 3);
    let tau = 2.0;
    let cfg = TrainConfig {
        tau,
        gamma: 0.0,
        lambda: 0.0,
        epsilon: 0.0,
        learn_structure: false,
        ..TrainConfig::default()
    };
    let state = fit(&inst.k, &inst.g, &inst.y, &cfg).unwrap();
    let system = DMatrix::identity(50, 50) + &inst.k * (2.0 * tau);
    let closed = system
        .lu()
        .solve(&(inst.y.transpose() * (2.0 * tau)))
        .unwrap()
        .transpose();
    let err = rel_err(&state.beta, &closed);
    let s_fixed = state.s == DMatrix::identity(5, 5);
    outcome(err < 1e-8 && s_fixed, format!("relative error {err:.2e} < 1e-8, S fixed at I: {s_fixed}"))
}

fn fd_gradient(x: &DMatrix<f64>, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let h = 1e-5 * (1.0 + x[(i, j)].abs());
        let mut p = x.clone();
        p[(i, j)] += h;
        let mut m = x.clone();
        m[(i, j)] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

fn gradient_certification() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(7000 + seed);
        let n = r.random_range(4..=15);
        let q = r.random_range(2..=6);
        let inst = instance(7100 + seed, n, q, 3);
        let cfg = TrainConfig {
            tau: r.random_range(0.5..3.0),
            gamma: r.random_range(0.0..0.5),
            lambda: r.random_range(0.05..0.5),
            epsilon: 0.0,
            ..TrainConfig::default()
        };
        let beta = randn(&mut r, q, n) * 0.3;
        let s = DMatrix::identity(q, q) + randn(&mut r, q, q) * 0.3;
        let obj = |b: &DMatrix<f64>, sm: &DMatrix<f64>| objective(b, sm, &inst.k, &inst.g, &inst.y, &cfg).unwrap().total;
        let gb = gradient_beta(&beta, &s, &inst.k, &inst.g, &inst.y, &cfg).unwrap();
        let gs = gradient_s(&beta, &s, &inst.k, &inst.g, &inst.y, &cfg).unwrap();
        worst = worst
            .max(rel_err(&gb, &fd_gradient(&beta, |b| obj(b, &s))))
            .max(rel_err(&gs, &fd_gradient(&s, |sm| obj(&beta, sm))));
    }
    outcome(worst < 1e-5, format!("worst relative error {worst:.2e} < 1e-5 over 10 instances"))
}

/// Random solver instances shared by the descent and stationarity checks.
fn solver_runs() -> Vec<SolverState> {
    (0..20u64)
        .map(|seed| {
            let mut r = rng(8000 + seed);
            let n = r.random_range(8..=40);
            let q = r.random_range(2..=8);
            let inst = instance(8100 + seed, n, q, 3);
            let cfg = TrainConfig {
                tau: r.random_range(0.2..5.0),
                gamma: r.random_range(0.0..0.2),
                lambda: r.random_range(0.0..1.0),
                epsilon: if seed % 3 == 0 { r.random_range(0.0..0.3) } else { 0.0 },
                ..TrainConfig::default()
            };
            fit(&inst.k, &inst.g, &inst.y, &cfg).unwrap()
        })
        .collect()
}

fn monotone_descent(runs: &[SolverState]) -> Outcome {
    let mut violations = 0;
    let mut steps = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for state in runs {
        for w in state.objective_trace.windows(2) {
            steps += 1;
            let excess = w[1] - w[0] - 1e-9 * (1.0 + w[1].abs());
            worst = worst.max(w[1] - w[0]);
            if excess > 0.0 {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} increases beyond 1e-9·(1+|Q|) in {steps} recorded steps on 20 instances (largest change {worst:.2e})"),
    )
}

fn stationarity(runs: &[SolverState]) -> Outcome {
    let worst = runs.iter().map(|s| s.max_beta_residual).fold(0.0, f64::max);
    outcome(worst <= 1e-8, format!("worst inner-solve residual {worst:.2e} <= 1e-8 over every β-step of 20 instances"))
}

fn alignment_qp() -> Outcome {
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for (seed, m) in (0..10u64).map(|s| (9000 + s, 2 + (s as usize % 2))) {
        let (bank, y) = random_bank(seed, m, 12);
        let target = TargetKernel::from_labels(&y, false).unwrap();
        let fit = align_weights(&bank, &target).unwrap();
        let learned = combined_alignment(&bank, fit.weights.as_slice(), &target.matrix);
        let grid = grid_alignment(&bank, &target.matrix);
        worst_gap = worst_gap.max((learned - grid).abs());
        let v = &fit.v / fit.v.diagonal().max();
        let alpha = &fit.alpha / fit.alpha.amax();
        let kkt = kkt_residuals(&v, &alpha, &fit.qp.q);
        worst_kkt = worst_kkt
            .max((-kkt.min_gradient).max(0.0))
            .max(kkt.complementarity / (1.0 + alpha.norm()));
    }
    outcome(
        worst_gap <= 1e-3 && worst_kkt <= 1e-8,
        format!("grid gap {worst_gap:.2e} <= 1e-3, KKT residual {worst_kkt:.2e} <= 1e-8 (M = 2, 3; 10 banks)"),
    )
}

struct BenchmarkMeans {
    s2vr: f64,
    svr: f64,
    joint_angles: f64,
    angles_only: f64,
}

fn benchmark(generate: fn(u64, &BenchmarkConfig) -> s2vr::Result<synth::Benchmark>) -> BenchmarkMeans {
    let bc = BenchmarkConfig::default();
    let mc = ModelConfig::default();
    let mut sums = [0.0; 4];
    for seed in 0..10 {
        let b = generate(seed, &bc).unwrap();
        let (xt, yt, xs, ys) = synth::split(&b, bc.samples * 3 / 4).unwrap();
        let joint = evaluate(&fit_model(&xt, &yt, &mc, Mode::Joint).unwrap(), &xs, &ys, RrmseVariant::Rooted).unwrap();
        let svr = evaluate(&fit_baseline_svr(&xt, &yt, &mc, Mode::Joint).unwrap(), &xs, &ys, RrmseVariant::Rooted).unwrap();
        let (ya, ysa) = (Mode::AnglesOnly.select_rows(&yt), Mode::AnglesOnly.select_rows(&ys));
        let alone = evaluate(&fit_model(&xt, &ya, &mc, Mode::AnglesOnly).unwrap(), &xs, &ysa, RrmseVariant::Rooted).unwrap();
        sums[0] += joint.rrmse_mean;
        sums[1] += svr.rrmse_mean;
        sums[2] += joint.angle_rrmse;
        sums[3] += alone.angle_rrmse;
    }
    BenchmarkMeans {
        s2vr: sums[0] / 10.0,
        svr: sums[1] / 10.0,
        joint_angles: sums[2] / 10.0,
        angles_only: sums[3] / 10.0,
    }
}

fn structure_benefit(corr: &BenchmarkMeans, indep: &BenchmarkMeans) -> Outcome {
    let rel = (indep.s2vr - indep.svr).abs() / indep.svr;
    outcome(
        corr.s2vr < corr.svr && rel <= 0.10,
        format!(
            "correlated: S2VR {:.2} < SVR {:.2}; independent: S2VR {:.2} vs SVR {:.2}, relative gap {:.3} <= 0.10",
            corr.s2vr, corr.svr, indep.s2vr, indep.svr, rel
        ),
    )
}

fn joint_vs_separate(corr: &BenchmarkMeans) -> Outcome {
    outcome(
        corr.joint_angles <= corr.angles_only,
        format!("joint angle RRMSE {:.2} <= angles-only {:.2}, from the criterion 6 runs", corr.joint_angles, corr.angles_only),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths = cfg.paths.rebased(dir.path());
    assert_eq!(cfg.generate.samples, 200);
    assert_eq!(cfg.evaluate.folds, 5);
    pipeline::cmd_generate(&cfg).unwrap();
    pipeline::cmd_features(&cfg).unwrap();
    let out = pipeline::cmd_evaluate(&cfg).unwrap();
    let cell = out.comparison.cell(Method::S2vr, Mode::Joint).unwrap();
    let corr = cell.angle_correlation.map(|c| c.unwrap_or(f64::NAN));
    let gap = cell.consistency.expect("joint cell reports consistency").median;
    let pass = corr.iter().all(|&c| c >= 0.80) && gap.iter().all(|&g| g <= 3.0);
    outcome(
        pass,
        format!(
            "TA/MA/BA correlation {:.3}/{:.3}/{:.3} >= 0.80, consistency gap median {:.2}/{:.2}/{:.2} <= 3 deg",
            corr[0], corr[1], corr[2], gap[0], gap[1], gap[2]
        ),
    )
}

fn rotate(p: Point, deg: f64) -> Point {
    let (s, c) = deg.to_radians().sin_cos();
    Point::new(c * p.h - s * p.v, s * p.h + c * p.v)
}

fn cobb_closure() -> Outcome {
    let dist = SpineDistribution::default();
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    let mut r = rng(10_000);
    for seed in 0..1000 {
        let spine = generate_spine(&SpineShapeParams::sample(seed, &dist).unwrap()).unwrap();
        let angles = spine.angles.as_array();
        let measured = cobb_from_landmarks(&spine.vertebrae).unwrap().as_array();
        if measured.map(f64::to_bits) != angles.map(f64::to_bits) {
            mismatches += 1;
        }
        let deg = r.random_range(-15.0..15.0);
        let (dh, dv, s) = (r.random_range(-300.0..300.0), r.random_range(-300.0..300.0), r.random_range(0.2..5.0));
        for f in [
            Box::new(move |p: Point| rotate(p, deg)) as Box<dyn Fn(Point) -> Point>,
            Box::new(move |p: Point| Point::new(p.h + dh, p.v + dv)),
            Box::new(move |p: Point| Point::new(s * p.h, s * p.v)),
        ] {
            let moved: Vec<_> = spine.vertebrae.iter().map(|v| v.map(&f)).collect();
            let a = cobb_from_landmarks(&moved).unwrap().as_array();
            for (x, y) in a.iter().zip(angles) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(
        mismatches == 0 && worst <= 1e-9,
        format!("{mismatches} bit mismatches in 1000 seeds; worst rotation/translation/scale deviation {worst:.2e} <= 1e-9"),
    )
}

fn all_files(root: &Path) -> Vec<PathBuf> {
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

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 5;
        cfg.generate.samples = 30;
        cfg.evaluate.folds = 3;
        cfg.paths = cfg.paths.rebased(d.path());
        pipeline::cmd_generate(&cfg).unwrap();
        pipeline::cmd_features(&cfg).unwrap();
        pipeline::cmd_align(&cfg).unwrap();
        pipeline::cmd_train(&cfg).unwrap();
        pipeline::cmd_predict(&cfg).unwrap();
        pipeline::cmd_evaluate(&cfg).unwrap();
    }
    let files = all_files(dirs[0].path());
    let mut differing = Vec::new();
    if files != all_files(dirs[1].path()) {
        differing.push("file set".to_string());
    }
    for f in &files {
        if fs::read(dirs[0].path().join(f)).ok() != fs::read(dirs[1].path().join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }

    let root = dirs[0].path();
    let bytes = fs::read(root.join("out/model.s2vr")).unwrap();
    let model = deserialize(&bytes).unwrap();
    let x = s2vr::io::Table::read(&root.join("data/features.csv"), s2vr::io::FEATURES).unwrap().data;
    let reloaded = deserialize(&serialize(&model).unwrap()).unwrap();
    let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_pred = bits(&model.predict(&x).unwrap()) == bits(&reloaded.predict(&x).unwrap());
    let same_bytes = serialize(&reloaded).unwrap() == bytes;
    outcome(
        differing.is_empty() && same_pred && same_bytes,
        format!(
            "{} artifacts compared, differing: {:?}; round-trip predictions bit-identical: {same_pred}, re-serialized bytes identical: {same_bytes}",
            files.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, limit: Option<Duration>, started: Instant, o: Outcome| {
        let took = started.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = o.pass && in_time;
        if !pass {
            failures += 1;
        }
        let budget = limit.map_or(String::new(), |l| format!(" < {}s", l.as_secs()));
        println!(
            "criterion {id:>2} {name}: {} ({}; runtime {:.1}s{budget})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    };

    let t = Instant::now();
    report(1, "kernel-ridge reduction", Some(Duration::from_secs(5)), t, kernel_ridge_reduction());

    let t = Instant::now();
    report(2, "gradient certification", Some(Duration::from_secs(30)), t, gradient_certification());

    let t = Instant::now();
    let runs = solver_runs();
    report(3, "monotone descent", Some(Duration::from_secs(120)), t, monotone_descent(&runs));
    let t = Instant::now();
    report(4, "stationarity residual", None, t, stationarity(&runs));

    let t = Instant::now();
    report(5, "alignment QP", Some(Duration::from_secs(60)), t, alignment_qp());

    let t = Instant::now();
    let corr = benchmark(synth::correlated);
    let indep = benchmark(synth::independent);
    report(6, "structure benefit", Some(Duration::from_secs(600)), t, structure_benefit(&corr, &indep));
    let t = Instant::now();
    report(7, "joint vs separate", Some(Duration::from_secs(600)), t, joint_vs_separate(&corr));

    let t = Instant::now();
    report(8, "end-to-end pipeline", Some(Duration::from_secs(1200)), t, end_to_end());

    let t = Instant::now();
    report(9, "Cobb oracle closure", None, t, cobb_closure());

    let t = Instant::now();
    report(10, "determinism and serialization", None, t, determinism());

    if failures == 0 {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria fail");
        ExitCode::FAILURE
    }
}
