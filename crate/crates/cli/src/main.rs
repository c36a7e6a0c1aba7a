//! `mktcn`: generate telemetry, train, evaluate and sweep the doubtful horizon.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Value};

use mktcn::data_gen::{generate_multiclass, generate_pipeline, MulticlassConfig, PipelineConfig};
use mktcn::frame::{read_csv, write_csv};
use mktcn::metrics::{confusion_csv, pr_csv};
use mktcn::pipeline::{run_eval, run_train, sweep, sweep_csv, DEFAULT_HORIZONS};
use mktcn::{
    load_checkpoint, save_checkpoint, AunpMode, Checkpoint, HeadKind, MetricsReport, PreprocessConfig, TrainConfig,
};

/// Environment variable naming the directory that relative `--out` paths resolve against.
const OUTPUT_ROOT_VAR: &str = "MKTCN_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "mktcn", version, about = "Early leak prediction on pipeline telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    GenData(GenDataArgs),
    /// Preprocess a dataset and train a model.
    Train(TrainArgs),
    /// Score a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Relabel, retrain and evaluate for each doubtful horizon.
    SweepN(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    NgpodLike,
    Multiclass,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value_t = Preset::NgpodLike)]
    preset: Preset,
    /// Total time steps.
    #[arg(long, default_value_t = 40_000)]
    steps: usize,
    #[arg(long, default_value_t = 6)]
    leak_events: usize,
    /// Doubtful steps before each leak onset.
    #[arg(long, default_value_t = 200)]
    horizon_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Match the reference record count instead of the desk-scale step count.
    #[arg(long)]
    full_size: bool,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

/// Preprocessing overrides; unset flags keep the defaults (or, for `eval`,
/// the checkpoint's values).
#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Cumulative explained-variance share kept by PCA.
    #[arg(long)]
    pca_ratio: Option<f64>,
    /// Skip per-channel standardization before PCA.
    #[arg(long)]
    no_standardize: bool,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split_ratios: Option<Vec<f64>>,
    #[arg(long)]
    split_seed: Option<u64>,
}

impl PreprocessArgs {
    fn apply(&self, mut cfg: PreprocessConfig) -> PreprocessConfig {
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = self.pca_ratio {
            cfg.pca_ratio = v;
        }
        if self.no_standardize {
            cfg.standardize = false;
        }
        if let Some(v) = &self.split_ratios {
            cfg.split_ratios = [v[0], v[1], v[2]];
        }
        if let Some(v) = self.split_seed {
            cfg.split_seed = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Channel widths of the residual blocks.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    spline_order: Option<usize>,
    /// `kan` for the spline head, `dense` for a single affine layer.
    #[arg(long)]
    head: Option<HeadKind>,
    /// Feed raw TCN features to the head instead of normalized ones.
    #[arg(long)]
    no_head_norm: bool,
    /// Per-class loss weights.
    #[arg(long, value_delimiter = ',')]
    class_weights: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.grid_size {
            cfg.grid_size = v;
        }
        if let Some(v) = self.spline_order {
            cfg.spline_order = v;
        }
        if let Some(v) = self.head {
            cfg.head = v;
        }
        if self.no_head_norm {
            cfg.normalize_head_input = false;
        }
        if let Some(v) = &self.class_weights {
            cfg.class_weights = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    /// Evaluate even when preprocessing differs from the checkpoint's.
    #[arg(long)]
    force: bool,
    /// `balanced` (one-vs-rest balanced accuracy) or `curve` (NPV-recall area).
    #[arg(long, default_value = "balanced")]
    aunp_mode: AunpMode,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Horizons in steps.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HORIZONS.to_vec())]
    n_values: Vec<usize>,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "balanced")]
    aunp_mode: AunpMode,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mktcn::Error> for Failure {
    fn from(e: mktcn::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, &argv),
        Command::Train(a) => cmd_train(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::SweepN(a) => cmd_sweep_n(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Resolves `out` against the output root when it is relative and creates it.
fn run_dir(out: &Path) -> Result<PathBuf, Failure> {
    let dir = match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    };
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

struct Manifest {
    command: &'static str,
    argv: Vec<String>,
    config: Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl Manifest {
    fn new(command: &'static str, argv: &[String], config: Value, seed: u64) -> Self {
        Manifest {
            command,
            argv: argv.to_vec(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    fn write(&self, dir: &Path) -> CmdResult {
        let value = json!({
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_ms": self.started.elapsed().as_millis() as u64,
        });
        let mut text = serde_json::to_string_pretty(&value).expect("manifest serializes");
        text.push('\n');
        write_file(&dir.join("manifest.json"), text)
    }
}

fn cmd_gen_data(a: &GenDataArgs, argv: &[String]) -> CmdResult {
    let (frame, config) = match a.preset {
        Preset::NgpodLike => {
            let cfg = if a.full_size {
                PipelineConfig::ngpod_full_size(a.horizon_n, a.seed)
            } else {
                PipelineConfig::ngpod_like(a.steps, a.leak_events, a.horizon_n, a.seed)
            };
            cfg.validate().map_err(usage)?;
            (
                generate_pipeline(&cfg)?,
                json!({ "preset": "ngpod-like", "pipeline": cfg }),
            )
        }
        Preset::Multiclass => {
            let cfg = MulticlassConfig::ten_class(a.seed);
            (
                generate_multiclass(&cfg)?,
                json!({ "preset": "multiclass", "multiclass": cfg }),
            )
        }
    };
    let dir = run_dir(&a.out)?;
    let data = dir.join("data.csv");
    write_csv(&frame, &data)?;
    info!(
        "wrote {} rows, class counts {:?}",
        frame.len(),
        frame.class_counts(frame.n_classes())
    );
    let mut manifest = Manifest::new("gen-data", argv, config, a.seed);
    manifest.outputs.push(path_str(&data));
    manifest.write(&dir)
}

/// Validates flag-derived configs before any data is read.
fn check_configs(pre: &PreprocessConfig, train: &TrainConfig) -> CmdResult {
    pre.validate().map_err(usage)?;
    let classes = train.class_weights.as_ref().map_or(2, |w| w.len());
    train.validate(classes).map_err(usage)
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> CmdResult {
    let pre = a.preprocess.apply(PreprocessConfig::default());
    let train = a.model.apply(TrainConfig::default());
    check_configs(&pre, &train)?;
    let frame = read_csv(&a.data)?;
    let dir = run_dir(&a.out)?;

    let mut log_lines = String::new();
    let ckpt = run_train(&frame, &pre, &train, |e| {
        info!(
            "epoch {}: loss {:.5}, validation macro-F1 {:.4}",
            e.epoch, e.train_loss, e.val_macro_f1
        );
        log_lines.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
        log_lines.push('\n');
    })?;

    let ckpt_path = dir.join("checkpoint.bin");
    save_checkpoint(&ckpt, &ckpt_path)?;
    let log_path = dir.join("train_log.jsonl");
    write_file(&log_path, log_lines)?;
    let pca_path = dir.join("pca.json");
    write_file(&pca_path, ckpt.pca.to_json())?;
    info!(
        "best validation macro-F1 {:.4} at epoch {}",
        ckpt.state.best_val_macro_f1, ckpt.state.best_epoch
    );

    let config = json!({ "preprocess": pre, "train": train });
    let mut manifest = Manifest::new("train", argv, config, train.seed);
    manifest.inputs.push(path_str(&a.data));
    manifest.outputs = vec![path_str(&ckpt_path), path_str(&log_path), path_str(&pca_path)];
    manifest.write(&dir)
}

/// Writes `metrics.json`, `confusion.csv` and one PR CSV per class with a curve.
fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<String>, Failure> {
    let metrics = dir.join("metrics.json");
    write_file(&metrics, report.to_json())?;
    let confusion = dir.join("confusion.csv");
    write_file(&confusion, confusion_csv(&report.confusion))?;
    let mut written = vec![path_str(&metrics), path_str(&confusion)];
    for (k, curve) in report.pr_curves.iter().enumerate() {
        if let Some(curve) = curve {
            let path = dir.join(format!("pr_class_{k}.csv"));
            write_file(&path, pr_csv(curve))?;
            written.push(path_str(&path));
        }
    }
    Ok(written)
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> CmdResult {
    let ckpt: Checkpoint = load_checkpoint(&a.checkpoint)?;
    let pre = a.preprocess.apply(ckpt.preprocess.clone());
    pre.validate().map_err(usage)?;
    if pre.hash() != ckpt.config_hash() {
        warn!(
            "preprocessing differs from the checkpoint's (hash {:016x} vs {:016x})",
            pre.hash(),
            ckpt.config_hash()
        );
        if !a.force {
            return Err(Failure::Runtime(
                "preprocessing config does not match the checkpoint; pass --force to evaluate anyway".into(),
            ));
        }
    }
    let frame = read_csv(&a.data)?;
    let dir = run_dir(&a.out)?;
    let report = run_eval(&ckpt, &frame, &pre, a.aunp_mode)?;
    info!(
        "test accuracy {:.4}, macro-F1 {:.4}, MCC {:.4}",
        report.metrics.accuracy, report.metrics.f1_score, report.metrics.mcc
    );
    if !report.degenerate.is_empty() {
        warn!("undefined terms counted as 0: {}", report.degenerate.join(", "));
    }
    let outputs = write_report(&report, &dir)?;

    let config = json!({ "preprocess": pre, "aunp_mode": a.aunp_mode, "force": a.force });
    let mut manifest = Manifest::new("eval", argv, config, ckpt.train_config.seed);
    manifest.inputs = vec![path_str(&a.checkpoint), path_str(&a.data)];
    manifest.outputs = outputs;
    manifest.write(&dir)
}

fn cmd_sweep_n(a: &SweepArgs, argv: &[String]) -> CmdResult {
    if a.n_values.is_empty() || a.n_values.contains(&0) {
        return Err(usage(format!(
            "horizons must be a non-empty list of positive steps, got {:?}",
            a.n_values
        )));
    }
    let pre = a.preprocess.apply(PreprocessConfig::default());
    let train = a.model.apply(TrainConfig::default());
    check_configs(&pre, &train)?;
    let frame = read_csv(&a.data)?;
    let dir = run_dir(&a.out)?;

    let mut outputs = Vec::new();
    let mut failed = None;
    let rows = sweep(&frame, &a.n_values, &pre, &train, a.aunp_mode, |row, ckpt, report| {
        if failed.is_some() {
            return;
        }
        let sub = dir.join(format!("n_{}", row.horizon));
        let written = fs::create_dir_all(&sub)
            .map_err(|e| Failure::Runtime(format!("creating {}: {e}", sub.display())))
            .and_then(|()| save_checkpoint(ckpt, sub.join("checkpoint.bin")).map_err(Failure::from))
            .and_then(|()| write_report(report, &sub));
        match written {
            Ok(paths) => {
                outputs.push(path_str(&sub.join("checkpoint.bin")));
                outputs.extend(paths);
            }
            Err(e) => failed = Some(e),
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    let table = dir.join("sweep.csv");
    write_file(&table, sweep_csv(&rows))?;
    outputs.push(path_str(&table));
    for r in &rows {
        info!(
            "N={} ({} s): macro-F1 {:.4}, radar area {:.4}",
            r.horizon, r.horizon_seconds, r.scores.f1_score, r.radar_area
        );
    }

    let config = json!({
        "n_values": a.n_values,
        "preprocess": pre,
        "train": train,
        "aunp_mode": a.aunp_mode,
    });
    let mut manifest = Manifest::new("sweep-n", argv, config, train.seed);
    manifest.inputs.push(path_str(&a.data));
    manifest.outputs = outputs;
    manifest.write(&dir)
}
