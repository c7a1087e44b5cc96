//! The `ngp` command line: `generate`, `train`, `benchmark`, `report`.
//!
//! Exit codes: 0 on success, 1 on runtime or numeric failure, 2 on usage or
//! configuration errors. [`run`] returns the code instead of exiting so the
//! commands can be driven in-process.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bayesopt::{nn_baseline_fit, CandidatePool, GpBaselineConfig, NnFitConfig, RegressionNet, Strategy};
use crate::bench::{run_benchmark, BenchConfig, BenchStrategy, BenchmarkReport};
use crate::data::{generate_synthetic_with, sha256_hex, split_tasks, Dataset, Split, SplitSpec, SyntheticConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::model::{Ablation, NgpCheckpoint, NgpConfig, NgpModel};
use crate::training::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ngp",
    version,
    about = "Transfer Bayesian optimization with neural GP priors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task collection.
    Generate(GenerateArgs),
    /// Train an NGP variant on source tasks.
    Train(TrainArgs),
    /// Run BO strategies on target tasks and write a report.
    Benchmark(BenchmarkArgs),
    /// Merge benchmark reports and print a summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub tasks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid points per task.
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    /// Condition the generator's mean and embedding networks on the raw
    /// grid value rather than the feature.
    #[arg(long)]
    pub grid_inputs: bool,
}

/// How target, source and validation tasks are carved out of a dataset.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Source, validation and target task counts.
    #[arg(long, value_parser = parse_split, default_value = "40,8,10")]
    pub split: (usize, usize, usize),
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Keep this many observations per task (all if omitted).
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub subsample_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Feed the task descriptor to the networks.
    #[arg(long)]
    pub use_r: bool,
    /// Learn a mean network (zero mean otherwise).
    #[arg(long)]
    pub use_m: bool,
    /// Learn an embedding network (identity embedding otherwise).
    #[arg(long)]
    pub use_k: bool,
    #[arg(long, value_parser = parse_kernel, default_value = "rbf")]
    pub kernel: KernelKind,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated: NGP-RMK, NGP-RM, NGP-RK, NGP-MK, TGP, GP, NN, NN-R, Random.
    #[arg(long, value_delimiter = ',', required = true)]
    pub strategies: Vec<String>,
    /// Model checkpoint for a strategy, as NAME=PATH. Repeatable.
    #[arg(long = "checkpoint", value_parser = parse_named_path)]
    pub checkpoints: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Seed for fitting the NN and NN-R baselines.
    #[arg(long, default_value_t = 0)]
    pub nn_seed: u64,
    /// Keep evaluating after the maximum is found.
    #[arg(long)]
    pub full_runs: bool,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub regret: Option<PathBuf>,
    /// Directory for per-cell results; a rerun resumes from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Merged report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Regret curves CSV.
    #[arg(long)]
    pub regret: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || format!("expected SOURCE,VALIDATION,TARGET task counts, got `{s}`");
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| bad()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((n[0], n[1], n[2]))
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "rbf" => Ok(KernelKind::Rbf),
        "linear" => Ok(KernelKind::Linear),
        _ => Err(format!("unknown kernel `{s}` (rbf or linear)")),
    }
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Usage and configuration problems map to 2, everything else to 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape(_) => 2,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        grid_size: a.points,
        grid_inputs: a.grid_inputs,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic_with(a.tasks, a.seed, &cfg)?;
    write_file(&a.out, &ds.to_json()?)?;
    log::info!("wrote {} tasks to {}", ds.tasks.len(), a.out.display());
    Ok(())
}

/// The dataset after subsampling, its digest and the split.
struct Prepared {
    digest: String,
    split: Split,
    provenance: serde_json::Value,
}

fn prepare(a: &DataArgs) -> Result<Prepared> {
    let text = read_file(&a.data)?;
    let mut ds = Dataset::from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            location: a.data.display().to_string(),
            message: j.to_string(),
        },
        other => other,
    })?;
    if let Some(n) = a.subsample {
        ds = ds.subsample_tasks(n, a.subsample_seed)?;
    }
    let digest = ds.digest()?;
    let spec = SplitSpec {
        source: a.split.0,
        validation: a.split.1,
        target: a.split.2,
        seed: a.split_seed,
    };
    let split = split_tasks(&ds, &spec)?;
    let provenance = json!({
        "dataset_digest": digest,
        "split": spec,
        "subsample": a.subsample,
        "subsample_seed": a.subsample_seed,
    });
    Ok(Prepared {
        digest,
        split,
        provenance,
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let p = prepare(&a.data)?;
    let first = p
        .split
        .source
        .first()
        .ok_or_else(|| Error::Config("split has no source tasks".into()))?;
    let ablation = Ablation::new(a.use_r, a.use_m, a.use_k);
    let mut config = NgpConfig::with_hidden(
        ablation,
        first.feature_dim(),
        first.descriptor_dim(),
        a.hidden,
        Default::default(),
    )?;
    config.kernel = a.kernel;
    let tc = TrainConfig {
        batch_size: a.batch,
        learning_rate: a.lr,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, history) = train(config, &p.split.source, &p.split.validation, &tc)?;
    let best = history.best();
    let meta = json!({
        "data": p.provenance,
        "train": {
            "batch_size": tc.batch_size,
            "learning_rate": tc.learning_rate,
            "max_epochs": tc.max_epochs,
            "patience": tc.patience,
            "seed": tc.seed,
        },
        "epochs_run": history.epochs_run(),
        "best_epoch": history.best_epoch,
        "best_val_lml_per_obs": best.map(|r| r.val_lml_per_obs),
    });
    write_file(&a.out, &model.to_checkpoint(meta).to_json()?)?;
    if let Some(path) = &a.history {
        let mut buf = Vec::new();
        history.write_csv(&mut buf)?;
        write_file(path, &String::from_utf8_lossy(&buf))?;
    }
    log::info!(
        "{ablation}: {} epochs, best epoch {}, checkpoint {}",
        history.epochs_run(),
        history.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn load_checkpoint(name: &str, path: &Path, provenance: &serde_json::Value) -> Result<(NgpModel, String)> {
    let text = read_file(path)?;
    let ckpt = NgpCheckpoint::from_json(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    // a model trained on another split may have seen the target tasks
    if let Some(trained_on) = ckpt.training_meta.get("data") {
        if trained_on != provenance {
            return Err(Error::Config(format!(
                "checkpoint {} for {name} was trained on different data or split: {trained_on}",
                path.display()
            )));
        }
    }
    let digest = sha256_hex(text.as_bytes());
    Ok((ckpt.into_model()?, digest))
}

enum Owned {
    Ngp(NgpModel),
    Nn(RegressionNet),
    Gp,
    Random,
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let p = prepare(&a.data)?;
    let named: BTreeMap<&str, &Path> = a
        .checkpoints
        .iter()
        .map(|(n, path)| (n.as_str(), path.as_path()))
        .collect();
    let mut owned = Vec::new();
    let mut ckpt_digests = BTreeMap::new();
    for name in &a.strategies {
        let name = name.trim();
        let o = match name.to_ascii_uppercase().as_str() {
            "GP" => Owned::Gp,
            "RANDOM" => Owned::Random,
            "NN" | "NN-R" => {
                let use_r = name.eq_ignore_ascii_case("NN-R");
                Owned::Nn(nn_baseline_fit(
                    &p.split.source,
                    &p.split.validation,
                    use_r,
                    a.nn_seed,
                    &NnFitConfig::default(),
                )?)
            }
            _ => {
                let ablation =
                    Ablation::parse(name).ok_or_else(|| Error::Config(format!("unknown strategy `{name}`")))?;
                let path = named
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("strategy {name} needs --checkpoint {name}=PATH")))?;
                let (model, digest) = load_checkpoint(name, path, &p.provenance)?;
                if model.config.ablation != ablation {
                    return Err(Error::Config(format!(
                        "checkpoint {} holds a {} model, not {name}",
                        path.display(),
                        model.config.ablation
                    )));
                }
                ckpt_digests.insert(name.to_string(), digest);
                Owned::Ngp(model)
            }
        };
        owned.push((name.to_string(), o));
    }
    let strategies: Vec<BenchStrategy<'_>> = owned
        .iter()
        .map(|(name, o)| BenchStrategy {
            name: name.clone(),
            strategy: match o {
                Owned::Ngp(m) if m.config.ablation == Ablation::TGP => Strategy::Tgp(m),
                Owned::Ngp(m) => Strategy::Ngp(m),
                Owned::Nn(n) if n.use_descriptor => Strategy::NnR(n),
                Owned::Nn(n) => Strategy::Nn(n),
                Owned::Gp => Strategy::Gp(GpBaselineConfig::default()),
                Owned::Random => Strategy::Random,
            },
        })
        .collect();
    let pools: Vec<CandidatePool> = p.split.target.iter().map(CandidatePool::from_task).collect();
    let cfg = BenchConfig {
        budget: a.budget,
        seeds: a.seeds.clone(),
        stop_at_max: !a.full_runs,
        group: a.data.split_seed.to_string(),
    };
    let extra = json!({
        "data": p.provenance,
        "checkpoints": ckpt_digests,
        "nn_seed": a.nn_seed,
    });
    let report = run_benchmark(&strategies, &pools, &cfg, &p.digest, extra, a.resume.as_deref())?;
    write_file(&a.out, &report.to_json()?)?;
    if let Some(path) = &a.table {
        write_file(path, &report.table_csv())?;
    }
    if let Some(path) = &a.regret {
        write_file(path, &report.regret_csv())?;
    }
    print!("{}", report.text_table());
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(BenchmarkReport::load)
        .collect::<Result<Vec<_>>>()?;
    let merged = BenchmarkReport::merge(&reports)?;
    print!("{}", merged.text_table());
    if let Some(path) = &a.out {
        write_file(path, &merged.to_json()?)?;
    }
    if let Some(path) = &a.table {
        write_file(path, &merged.table_csv())?;
    }
    if let Some(path) = &a.regret {
        write_file(path, &merged.regret_csv())?;
    }
    Ok(())
}
