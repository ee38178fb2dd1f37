use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use s2vr::metrics::{Method, RrmseVariant};
use s2vr::pipeline::{self, PipelineConfig, Protocol};
use s2vr::Mode;

/// Structured multi-output kernel regression for spinal Cobb angles and landmarks.
#[derive(Parser, Debug)]
#[command(name = "s2vr", version, about)]
struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(short, long, global = true, env = "S2VR_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// joint | angles_only
    #[arg(long, global = true)]
    mode: Option<Mode>,

    /// s2vr | svr
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    paths: PathArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[arg(long, global = true, env = "S2VR_ANNOTATIONS")]
    annotations: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_IMAGES")]
    images: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_FEATURES")]
    features: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_PREDICTIONS")]
    predictions: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_REPORTS")]
    reports: Option<PathBuf>,
    #[arg(long, global = true, env = "S2VR_TRAIN_LOG")]
    train_log: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample synthetic spines, write annotations and rendered images.
    Generate {
        #[arg(long)]
        samples: Option<usize>,
        /// Pixel noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Extract HOG descriptors from the image directory.
    Features(HogArgs),
    /// Learn kernel weights by target alignment and report them.
    Align(ModelArgs),
    /// Fit a model and write it with its training log.
    Train(ModelArgs),
    /// Predict labels for the feature file with a trained model.
    Predict,
    /// Compare SVR and S2VR in both modes.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        folds: Option<usize>,
        /// Leave-one-out instead of k-fold.
        #[arg(long)]
        loo: bool,
        /// Score on the training data instead of cross-validating.
        #[arg(long)]
        on_training: bool,
        /// Report the signed, unsquared RRMSE variant.
        #[arg(long)]
        signed_rrmse: bool,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct HogArgs {
    #[arg(long)]
    cell: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Comma-separated Gaussian bandwidths.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s.to_ascii_lowercase().as_str() {
        "s2vr" => Ok(Method::S2vr),
        "svr" => Ok(Method::Svr),
        other => Err(format!("unknown method {other:?} (expected s2vr or svr)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        let t = &mut cfg.model.train;
        set(&mut t.tau, self.tau);
        set(&mut t.gamma, self.gamma);
        set(&mut t.lambda, self.lambda);
        set(&mut t.epsilon, self.epsilon);
        set(&mut t.max_outer, self.max_outer);
        set(&mut cfg.model.bandwidths, self.bandwidths);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.mode, cli.mode);
    set(&mut cfg.method, cli.method);
    let p = &cli.paths;
    let paths = &mut cfg.paths;
    set(&mut paths.annotations, p.annotations.clone());
    set(&mut paths.images, p.images.clone());
    set(&mut paths.features, p.features.clone());
    set(&mut paths.model, p.model.clone());
    set(&mut paths.predictions, p.predictions.clone());
    set(&mut paths.reports, p.reports.clone());
    set(&mut paths.train_log, p.train_log.clone());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { samples, noise } => {
            set(&mut cfg.generate.samples, samples);
            set(&mut cfg.render.noise_level, noise);
            let out = pipeline::cmd_generate(&cfg).context("generate failed")?;
            println!(
                "generated {} spines: {} and {}",
                out.samples,
                out.annotations.display(),
                cfg.paths.images.display()
            );
        }
        Command::Features(h) => {
            set(&mut cfg.hog.cell, h.cell);
            set(&mut cfg.hog.block, h.block);
            set(&mut cfg.hog.bins, h.bins);
            let t = pipeline::cmd_features(&cfg).context("feature extraction failed")?;
            println!(
                "wrote {} descriptors of length {} to {}",
                t.samples(),
                t.data.nrows(),
                cfg.paths.features.display()
            );
        }
        Command::Align(m) => {
            m.apply(&mut cfg);
            let r = pipeline::cmd_align(&cfg).context("alignment failed")?;
            println!("sigma\talignment\tweight");
            for ((s, a), w) in r.bandwidths.iter().zip(&r.base_alignments).zip(&r.weights) {
                println!("{s}\t{a:.6}\t{w:.6}");
            }
            println!("combined alignment {:.6}", r.combined_alignment);
        }
        Command::Train(m) => {
            m.apply(&mut cfg);
            let model = pipeline::cmd_train(&cfg).context("training failed")?;
            if let Some(r) = &model.report {
                println!(
                    "trained {} model: {} outer iterations, final objective {}",
                    model.mode.as_str(),
                    r.outer_iterations,
                    r.objective_trace.last().copied().unwrap_or(f64::NAN)
                );
            }
            println!(
                "wrote {} and {}",
                cfg.paths.model.display(),
                cfg.paths.train_log.display()
            );
        }
        Command::Predict => {
            let t = pipeline::cmd_predict(&cfg).context("prediction failed")?;
            println!(
                "wrote {} predictions to {}",
                t.samples(),
                cfg.paths.predictions.display()
            );
        }
        Command::Evaluate {
            model,
            folds,
            loo,
            on_training,
            signed_rrmse,
        } => {
            model.apply(&mut cfg);
            set(&mut cfg.evaluate.folds, folds);
            cfg.evaluate.leave_one_out |= loo;
            if on_training {
                cfg.evaluate.protocol = Protocol::Training;
            }
            if signed_rrmse {
                cfg.evaluate.variant = RrmseVariant::Signed;
            }
            let out = pipeline::cmd_evaluate(&cfg).context("evaluation failed")?;
            print!("{}", out.summary());
            println!("reports in {}", cfg.paths.reports.display());
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
