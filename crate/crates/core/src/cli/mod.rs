//! The `respnet` command line: ingest, prep, train, eval and gradcheck.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, Preset, RunConfig, Settings, ENV_PREFIX, KNOWN_KEYS};

use crate::dataset::{build_manifest, Manifest};
use crate::models::{load_checkpoint, Model, ModelConfig};
use crate::nn::gradcheck;
use crate::pipeline::{self, Conditioning, PipelineError};
use crate::spectrogram::FrontEnd;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File name of the resolved configuration written by every run.
pub const RUN_CONFIG: &str = "run.conf";

#[derive(Debug, Parser)]
#[command(name = "respnet", version, about = "Respiratory sound classification")]
pub struct Cli {
    /// INI-style config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// paper-baseline or paper-final.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Worker threads for preprocessing and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan an ICBHI-layout directory and write a manifest.
    Ingest(IngestArgs),
    /// Condition audio and cache front-end patches.
    Prep(CommonArgs),
    /// Train one model per configured front-end.
    Train(TrainArgs),
    /// Score a split with one checkpoint per front-end, ensembled.
    Eval(EvalArgs),
    /// Finite-difference check of every layer's gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub split_file: PathBuf,
    #[arg(long)]
    pub diagnosis_file: PathBuf,
    /// Manifest path; defaults to `paths.manifest`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// task1 (cycle anomalies) or task2 (disease).
    #[arg(long)]
    pub task: Option<String>,
    /// Front-end; repeat to list several.
    #[arg(long = "frontend")]
    pub frontends: Vec<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip peak normalization of conditioned clips.
    #[arg(long)]
    pub no_peak_normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint per front-end, in the same order; defaults to
    /// `<out>/<frontend>/best.ckpt`.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// train or test.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{command}: {source}")]
    Runtime { command: &'static str, source: PipelineError },
    #[error("gradcheck: {0} layer(s) above tolerance")]
    GradcheckFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Runtime { .. } | CliError::GradcheckFailed(_) => EXIT_RUNTIME,
        }
    }

    /// Short tag printed before the message.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::GradcheckFailed(_) => "gradcheck",
            CliError::Runtime { source, .. } => match source {
                PipelineError::Dataset(_) => "dataset",
                PipelineError::Dsp(_) => "dsp",
                PipelineError::Spectrogram(_) => "spectrogram",
                PipelineError::Model(_) | PipelineError::Nn(_) => "model",
                PipelineError::Io(_) => "io",
                PipelineError::Metrics(_) => "metrics",
                _ => "pipeline",
            },
        }
    }
}

fn runtime<E: Into<PipelineError>>(command: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime { command, source: e.into() }
}

fn flag_settings(common: &CommonArgs, jobs: Option<usize>) -> Settings {
    let mut s = Settings::default();
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            s.set(key, v);
        }
    };
    put("run.task", common.task.clone());
    put("run.seed", common.seed.map(|v| v.to_string()));
    put("run.jobs", jobs.map(|v| v.to_string()));
    put("frontend.kinds", (!common.frontends.is_empty()).then(|| common.frontends.join(",")));
    put("paths.manifest", common.manifest.as_ref().map(|p| p.display().to_string()));
    put("paths.cache", common.cache.as_ref().map(|p| p.display().to_string()));
    put("paths.out", common.out.as_ref().map(|p| p.display().to_string()));
    put("prep.peak_normalize", common.no_peak_normalize.then(|| "false".to_string()));
    s
}

/// Resolves preset, file, flags and environment, in that order.
pub fn resolve_config(cli: &Cli, flags: &Settings, env: &Settings) -> Result<RunConfig, CliError> {
    let preset = match &cli.preset {
        Some(p) => p.parse::<Preset>()?.settings(),
        None => Settings::default(),
    };
    let file = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    Ok(RunConfig::resolve(&[&preset, &file, flags, env])?)
}

fn write_run_config(config: &RunConfig, dir: &Path, command: &'static str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(runtime(command))?;
    config.save(&dir.join(RUN_CONFIG)).map_err(runtime(command))
}

fn with_pool<T>(jobs: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn load_manifest(config: &RunConfig, command: &'static str) -> Result<Manifest, CliError> {
    Manifest::load(&config.manifest).map_err(runtime(command))
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs, env: &Settings) -> Result<(), CliError> {
    let config = resolve_config(cli, &flag_settings(&CommonArgs::default(), cli.jobs), env)?;
    let out = args.out.clone().unwrap_or(config.manifest.clone());
    let (manifest, report) = build_manifest(&args.data_dir, &args.split_file, &args.diagnosis_file).map_err(runtime("ingest"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(runtime("ingest"))?;
    }
    manifest.save(&out).map_err(runtime("ingest"))?;
    println!(
        "{} recordings, {} cycles, {} train / {} test patients, {} skipped without diagnosis, {} unmatched split entries",
        report.recordings,
        report.cycles,
        report.train_patients,
        report.test_patients,
        report.missing_diagnosis.len(),
        report.unmatched_split_entries
    );
    for key in &report.missing_diagnosis {
        log::warn!("skipped {key}: no diagnosis for its patient");
    }
    Ok(())
}

fn cmd_prep(cli: &Cli, args: &CommonArgs, env: &Settings) -> Result<(), CliError> {
    let config = resolve_config(cli, &flag_settings(args, cli.jobs), env)?;
    let manifest = load_manifest(&config, "prep")?;
    let mut cond = Conditioning::for_task(config.task);
    cond.peak_normalize = config.peak_normalize;
    for &kind in &config.frontends {
        let report = with_pool(config.jobs, || pipeline::prep_manifest(&manifest, config.task, &FrontEnd::new(kind), &cond, &config.cache_dir))
            .map_err(runtime("prep"))?;
        println!("{} {}: {} recordings, {} instances, {} patches", config.task, kind, report.recordings, report.instances, report.patches);
        write_run_config(&config, &config.cache_dir.join(config.task.token()).join(kind.token()), "prep")?;
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs, env: &Settings) -> Result<(), CliError> {
    let mut flags = flag_settings(&args.common, cli.jobs);
    for (key, value) in [
        ("model.kind", args.model.clone()),
        ("train.epochs", args.epochs.map(|v| v.to_string())),
        ("train.batch_size", args.batch_size.map(|v| v.to_string())),
        ("train.lr", args.lr.map(|v| v.to_string())),
        ("train.lambda", args.lambda.map(|v| v.to_string())),
        ("train.mixup_alpha", args.mixup_alpha.map(|v| v.to_string())),
    ] {
        if let Some(v) = value {
            flags.set(key, v);
        }
    }
    let config = resolve_config(cli, &flags, env)?;
    let manifest = load_manifest(&config, "train")?;
    for &kind in &config.frontends {
        let data = pipeline::load_training_set(&manifest, config.task, kind, &config.cache_dir).map_err(runtime("train"))?;
        let model = Model::new(ModelConfig::new(config.model, config.task.num_classes()), config.seed).map_err(runtime("train"))?;
        let dir = config.out_dir.join(kind.token());
        write_run_config(&config, &dir, "train")?;
        let outcome = pipeline::train(model, &data, &config.train, &dir).map_err(runtime("train"))?;
        let last = outcome.history.last();
        println!(
            "{} on {}: {} epochs over {} patches, final loss {}, best epoch {} -> {}",
            config.model,
            kind,
            outcome.history.len(),
            data.n,
            last.map_or("n/a".to_string(), |s| format!("{:.4}", s.loss)),
            outcome.best_epoch,
            outcome.best_checkpoint.display()
        );
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, env: &Settings) -> Result<(), CliError> {
    let mut flags = flag_settings(&args.common, cli.jobs);
    if let Some(split) = &args.split {
        flags.set("eval.split", split.clone());
    }
    let config = resolve_config(cli, &flags, env)?;
    let checkpoints: Vec<PathBuf> = if args.checkpoints.is_empty() {
        config.frontends.iter().map(|k| config.out_dir.join(k.token()).join(pipeline::BEST_CHECKPOINT)).collect()
    } else {
        args.checkpoints.clone()
    };
    if checkpoints.len() != config.frontends.len() {
        return Err(CliError::Usage(format!(
            "eval needs one checkpoint per front-end: {} checkpoint(s), {} front-end(s)",
            checkpoints.len(),
            config.frontends.len()
        )));
    }
    let manifest = load_manifest(&config, "eval")?;
    let models = checkpoints.iter().map(|p| load_checkpoint(p).map_err(runtime("eval"))).collect::<Result<Vec<_>, _>>()?;
    let members: Vec<(&Model, _)> = models.iter().zip(config.frontends.iter().copied()).collect();
    let (report, records) =
        with_pool(config.jobs, || pipeline::evaluate(&manifest, config.task, config.split, &members, &config.cache_dir)).map_err(runtime("eval"))?;
    let dir = config.out_dir.join(format!("eval-{}-{}", config.task.token(), config.split.token()));
    write_run_config(&config, &dir, "eval")?;
    std::fs::write(dir.join("report.txt"), report.to_string()).map_err(runtime("eval"))?;
    std::fs::write(dir.join("scores.tsv"), format!("{}\n", report.machine_line())).map_err(runtime("eval"))?;
    pipeline::write_predictions(&dir.join("predictions.tsv"), &records).map_err(runtime("eval"))?;
    print!("{report}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let outcomes =
        gradcheck::run_suite(args.seeds, args.step, args.tolerance).map_err(|e| CliError::Runtime { command: "gradcheck", source: e.into() })?;
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed());
        println!("{verdict}  {:<16} worst relative error {:.3e} over {} seeds (tolerance {:.0e})", o.layer, o.worst_rel_error, o.seeds, o.tolerance);
    }
    match failed {
        0 => Ok(()),
        n => Err(CliError::GradcheckFailed(n)),
    }
}

/// Dispatches a parsed command line with the given environment layer.
pub fn execute(cli: &Cli, env: &Settings) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, a, env),
        Command::Prep(a) => cmd_prep(cli, a, env),
        Command::Train(a) => cmd_train(cli, a, env),
        Command::Eval(a) => cmd_eval(cli, a, env),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli, &Settings::from_env(std::env::vars())) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
