//! Command-line front end. The `nupix` binary only calls [`main`].

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::decode::{decode_entries, write_scores, ConstraintSpec, Vocabulary, DEFAULT_PROMPT};
use crate::detsim::{generate_dataset, read_dataset, DatasetEntry, DetectorGeometry, GenerationSpec};
use crate::evalx::{
    emit_report, evaluate_model, generalization_eval, MetricsReport, PredictionRecord, ReportFormat, ResolutionMode,
};
use crate::model::ModelConfig;
use crate::pipeline::{describe, resolve_out_root, run_pipeline, train_stage, ExperimentConfig};
use crate::trainer::{load_checkpoint, save_checkpoint, Split, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "nupix", version, about = "Toy neutrino pixel-map classification pipeline")]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate events and write a dataset directory.
    Gen(GenArgs),
    /// Train the classifier on a dataset directory.
    Train(TrainArgs),
    /// Score events with constrained decoding and write a TSV.
    Decode(DecodeArgs),
    /// Compute metrics and write reports.
    Eval(EvalArgs),
    /// Run every stage from an experiment config.
    Run(RunArgs),
    /// Print the resolved experiment plan without running it.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 3600)]
    pub events: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    /// Relative class priors nue_cc,numu_cc,nc.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    pub priors: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model architecture TOML; the desk model when omitted.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for model.ckpt, arch.toml, history.jsonl and split.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, allow_negative_numbers = true, default_value_t = crate::decode::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = crate::decode::DEFAULT_BEAM_WIDTH)]
    pub beam: usize,
    /// Restrict to the test indices of a split.json written by `train`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Rerender,
    Direct,
}

impl From<ModeArg> for ResolutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rerender => ResolutionMode::Rerender,
            ModeArg::Direct => ResolutionMode::Direct,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Rerender)]
    pub mode: ModeArg,
    /// Evaluate these decoded scores instead of classifier probabilities.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment TOML; the desk experiment when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parent of the run directory (default: $NUPIX_OUT_ROOT, then ./runs).
    #[arg(long)]
    pub out_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::config)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

fn load_entries(data: &Path, split: Option<&Path>) -> Result<Vec<DatasetEntry>, CliError> {
    let (_, entries) = read_dataset(data).map_err(CliError::runtime)?;
    let Some(split) = split else { return Ok(entries) };
    let text = std::fs::read_to_string(split).map_err(|e| CliError::runtime(format!("{}: {e}", split.display())))?;
    let split: Split =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", split.display())))?;
    split
        .test
        .iter()
        .map(|&i| {
            entries
                .get(i)
                .cloned()
                .ok_or_else(|| CliError::config(format!("split index {i} outside dataset of {}", entries.len())))
        })
        .collect()
}

fn write_reports(report: &MetricsReport, out: &Path) -> Result<(), CliError> {
    for f in ReportFormat::ALL {
        emit_report(report, out, f).map_err(CliError::runtime)?;
    }
    print!("{}", std::fs::read_to_string(out.join(crate::evalx::REPORT_TXT)).unwrap_or_default());
    Ok(())
}

fn gen(a: &GenArgs) -> Result<(), CliError> {
    let geometry = DetectorGeometry::default()
        .with_image_size(a.image_size)
        .map_err(CliError::config)?;
    let spec = GenerationSpec {
        priors: [a.priors[0], a.priors[1], a.priors[2]],
        geometry,
        ..GenerationSpec::desk(a.seed, a.events)
    };
    let summary = generate_dataset(&spec, &a.out).map_err(CliError::runtime)?;
    println!(
        "wrote {} events to {} (nue_cc {}, numu_cc {}, nc {})",
        summary.events,
        a.out.display(),
        summary.class_counts[0],
        summary.class_counts[1],
        summary.class_counts[2]
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let (_, entries) = read_dataset(&a.data).map_err(CliError::runtime)?;
    let first = entries
        .first()
        .ok_or_else(|| CliError::config(format!("{}: dataset is empty", a.data.display())))?;
    let mut model_cfg = match &a.arch {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            ModelConfig::from_toml(&text).map_err(CliError::config)?
        }
        None => ModelConfig {
            input_size: first.xz.width,
            ..ModelConfig::desk()
        },
    };
    model_cfg.init_seed = a.seed;
    let base = TrainConfig::desk();
    let train_cfg = TrainConfig {
        lr: a.lr.unwrap_or(base.lr),
        batch_size: a.batch.unwrap_or(base.batch_size),
        max_epochs: a.max_epochs.unwrap_or(base.max_epochs),
        patience: a.patience.unwrap_or(base.patience),
        seed: a.seed,
        ..base
    };
    model_cfg.validate().map_err(CliError::config)?;
    train_cfg.validate().map_err(CliError::config)?;
    let out = train_stage(&entries, &model_cfg, &train_cfg, &mut |r| {
        println!(
            "epoch {:3}  train loss {:.4}  val loss {:.4}  val acc {:.3}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.seconds
        )
    })
    .map_err(CliError::runtime)?;
    let io = |p: &Path, e: std::io::Error| CliError::runtime(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    save_checkpoint(&out.model, a.out.join("model.ckpt")).map_err(CliError::runtime)?;
    std::fs::write(a.out.join("arch.toml"), out.model.config().to_toml()).map_err(|e| io(&a.out, e))?;
    out.history
        .write_jsonl(a.out.join("history.jsonl"))
        .map_err(CliError::runtime)?;
    let split = serde_json::to_string(&out.split).expect("split serialises");
    std::fs::write(a.out.join("split.json"), split).map_err(|e| io(&a.out, e))?;
    println!(
        "best epoch {} of {}, val loss {:.4}; wrote {}",
        out.history.best_epoch,
        out.history.stopped_epoch,
        out.history.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn decode(a: &DecodeArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&a.model).map_err(CliError::runtime)?;
    let entries = load_entries(&a.data, a.split.as_deref())?;
    let vocab = Vocabulary::standard();
    let constraint = ConstraintSpec::standard(&vocab).map_err(CliError::config)?;
    let prompt = vocab.encode(DEFAULT_PROMPT).map_err(CliError::config)?;
    let scores = decode_entries(&model, &entries, &vocab, &constraint, &prompt, a.temperature, a.beam)
        .map_err(|e| match e {
            crate::decode::DecodeError::Domain(_) | crate::decode::DecodeError::Config(_) => CliError::config(e),
            other => CliError::runtime(other),
        })?;
    write_scores(&a.out, &scores).map_err(CliError::runtime)?;
    println!("scored {} events into {}", scores.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let entries = load_entries(&a.data, a.split.as_deref())?;
    if let Some(e) = entries.first() {
        crate::evalx::downsample_pixelmap(&e.xz, a.downsample).map_err(CliError::config)?;
    }
    let report = if let Some(scores) = &a.scores {
        let recs: Vec<PredictionRecord> = crate::decode::read_scores(scores)
            .map_err(CliError::runtime)?
            .iter()
            .map(PredictionRecord::from)
            .collect();
        MetricsReport::build("decoded", &recs, 1).map_err(CliError::runtime)?
    } else {
        let model = load_checkpoint(&a.model).map_err(CliError::runtime)?;
        let result = if a.downsample == 1 {
            evaluate_model(&model, &entries, "classifier")
        } else {
            generalization_eval(&model, &entries, a.downsample, a.mode.into(), "classifier")
        };
        result
            .map_err(|e| match e {
                crate::evalx::EvalError::Factor { .. } => CliError::config(e),
                other => CliError::runtime(other),
            })?
            .1
    };
    write_reports(&report, &a.out)
}

fn run(a: &RunArgs) -> Result<(), CliError> {
    let cfg = load_experiment(a.config.as_deref())?;
    let root = resolve_out_root(a.out_root.as_deref());
    let (summary, layout) = run_pipeline(&cfg, &root, &mut |line| println!("{line}")).map_err(CliError::runtime)?;
    let get = |name| summary.test.get(name).unwrap_or(f64::NAN);
    println!(
        "test accuracy {:.4}, macro AUC {:.4}; artifacts in {}",
        get("accuracy"),
        get("macro_auc"),
        layout.root.display()
    );
    Ok(())
}

/// Runs the chosen subcommand.
pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // A second call in the same process fails; the existing pool is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Describe(a) => {
            let cfg = load_experiment(a.config.as_deref())?;
            print!("{}", describe(&cfg).map_err(CliError::config)?);
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
