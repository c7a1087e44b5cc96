//! Benchmark harness: runs every (strategy, target task, seed) cell, then
//! aggregates evaluations-to-maximum and regret curves per strategy.
//!
//! Cells are independent and run in parallel on a rayon pool whose size is
//! read from `NGP_WORKERS` (defaults to all cores). Results are gathered in
//! cell order by one aggregator, so the report does not depend on the worker
//! count. With a resume directory every finished cell is appended to
//! `cells.jsonl` there, and a rerun skips cells already on disk.
//!
//! Aggregation: each target task is one unit. Its evaluations-to-maximum is
//! averaged over seeds first; the report gives the mean over units and the
//! standard error `sd / sqrt(units)`. Runs that never hit the maximum within
//! the budget are counted as `budget + 1`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{run_bo_with, BoOptions, BoTrace, CandidatePool, Strategy};
use crate::data::sha256_hex;
use crate::error::{Error, Result};

/// Environment variable holding the number of benchmark worker threads.
pub const WORKERS_ENV: &str = "NGP_WORKERS";

/// One strategy entry in a benchmark, under the name used in reports.
#[derive(Debug, Clone)]
pub struct BenchStrategy<'a> {
    pub name: String,
    pub strategy: Strategy<'a>,
}

impl<'a> BenchStrategy<'a> {
    pub fn new(strategy: Strategy<'a>) -> Self {
        Self {
            name: strategy.to_string(),
            strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Stop each run once the pool maximum is found. Regret after that point
    /// is zero, so curves and evaluation counts are unchanged.
    pub stop_at_max: bool,
    /// Label attached to every cell, e.g. the split seed. Merged reports keep
    /// target tasks from different groups apart.
    pub group: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            seeds: vec![0],
            stop_at_max: true,
            group: "0".into(),
        }
    }
}

/// Result of a single BO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: String,
    pub group: String,
    pub task_id: String,
    pub seed: u64,
    pub true_max: f64,
    pub evals_to_max: Option<usize>,
    pub queried_indices: Vec<usize>,
    pub observed_values: Vec<f64>,
    pub best_so_far: Vec<f64>,
}

impl CellResult {
    fn from_trace(strategy: &str, group: &str, pool: &CandidatePool, seed: u64, trace: BoTrace) -> Self {
        Self {
            strategy: strategy.to_string(),
            group: group.to_string(),
            task_id: pool.id.clone(),
            seed,
            true_max: pool.true_max(),
            evals_to_max: trace.evals_to_max,
            queried_indices: trace.queried_indices,
            observed_values: trace.observed_values,
            best_so_far: trace.best_so_far,
        }
    }

    fn key(&self) -> (String, String, String, u64) {
        (
            self.strategy.clone(),
            self.group.clone(),
            self.task_id.clone(),
            self.seed,
        )
    }

    /// Evaluations to the maximum, or `budget + 1` if it was not found.
    pub fn censored_evals(&self, budget: usize) -> usize {
        self.evals_to_max.unwrap_or(budget + 1)
    }

    /// Regret per iteration, padded to `budget` entries with the last value.
    pub fn regret_curve(&self, budget: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self.best_so_far.iter().map(|b| self.true_max - b).collect();
        let last = out.last().copied().unwrap_or(f64::NAN);
        out.resize(budget, last);
        out.truncate(budget);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    /// Number of target tasks (units of the standard error).
    pub n_tasks: usize,
    pub n_runs: usize,
    pub n_found: usize,
    pub mean_evals_to_max: f64,
    pub std_error: f64,
    /// Mean regret (true max minus best so far) at each iteration.
    pub mean_regret: Vec<f64>,
    pub regret_std_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_digest: String,
    /// Digest of the benchmark configuration, strategies and checkpoints.
    pub config_digests: Vec<String>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub groups: Vec<String>,
    /// Free-form provenance (split spec, checkpoint digests, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub meta: ReportMeta,
    pub summaries: Vec<StrategySummary>,
    pub cells: Vec<CellResult>,
}

/// Digest of a benchmark configuration together with strategy names and any
/// provenance the caller wants bound into it.
pub fn config_digest(cfg: &BenchConfig, strategies: &[String], extra: &serde_json::Value) -> Result<String> {
    let doc = serde_json::json!({ "config": cfg, "strategies": strategies, "extra": extra });
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}

/// Builds a rayon pool sized from `NGP_WORKERS`.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{WORKERS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

struct ResumeLog {
    path: PathBuf,
    done: HashMap<(String, String, String, u64), CellResult>,
    file: Mutex<File>,
}

impl ResumeLog {
    fn open(dir: &Path, digest: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let stamp = dir.join("config_digest");
        match fs::read_to_string(&stamp) {
            Ok(old) if old.trim() != digest => {
                return Err(Error::Config(format!(
                    "resume directory {} belongs to a different benchmark configuration",
                    dir.display()
                )))
            }
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => fs::write(&stamp, digest)?,
            Err(e) => return Err(e.into()),
        }
        let path = dir.join("cells.jsonl");
        let mut done = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn last line from an interrupted run is simply redone.
                match serde_json::from_str::<CellResult>(&line) {
                    Ok(cell) => {
                        done.insert(cell.key(), cell);
                    }
                    Err(e) => log::warn!("{}:{}: skipping unreadable cell: {e}", path.display(), i + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        // start appends on a fresh line after a torn tail
        if fs::read(&path)?.last().is_some_and(|&b| b != b'\n') {
            writeln!(file)?;
        }
        Ok(Self {
            path,
            done,
            file: Mutex::new(file),
        })
    }

    fn record(&self, cell: &CellResult) -> Result<()> {
        let line = serde_json::to_string(cell)?;
        let mut f = self.file.lock().expect("resume log poisoned");
        writeln!(f, "{line}")
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", self.path.display()))))
    }
}

/// Runs all cells and aggregates them into a report.
///
/// `extra` is stored in the report metadata and bound into its config digest.
pub fn run_benchmark(
    strategies: &[BenchStrategy<'_>],
    pools: &[CandidatePool],
    cfg: &BenchConfig,
    dataset_digest: &str,
    extra: serde_json::Value,
    resume_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    if strategies.is_empty() || pools.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one strategy, target task and seed".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for s in strategies {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("strategy `{}` listed twice", s.name)));
        }
    }
    let names: Vec<String> = strategies.iter().map(|s| s.name.clone()).collect();
    let digest = config_digest(cfg, &names, &extra)?;
    let resume = resume_dir.map(|d| ResumeLog::open(d, &digest)).transpose()?;

    let mut jobs = Vec::new();
    for (si, _) in strategies.iter().enumerate() {
        for (pi, _) in pools.iter().enumerate() {
            for &seed in &cfg.seeds {
                jobs.push((si, pi, seed));
            }
        }
    }
    let opts = BoOptions {
        stop_at_max: cfg.stop_at_max,
    };
    let run_cell = |&(si, pi, seed): &(usize, usize, u64)| -> Result<CellResult> {
        let s = &strategies[si];
        let pool = &pools[pi];
        if let Some(log) = &resume {
            let key = (s.name.clone(), cfg.group.clone(), pool.id.clone(), seed);
            if let Some(cell) = log.done.get(&key) {
                return Ok(cell.clone());
            }
        }
        let trace = run_bo_with(&s.strategy, pool, cfg.budget, cell_seed(seed, pi), &opts)
            .map_err(|e| e.with_context(format!("{} on task {}", s.name, pool.id)))?;
        let cell = CellResult::from_trace(&s.name, &cfg.group, pool, seed, trace);
        if let Some(log) = &resume {
            log.record(&cell)?;
        }
        Ok(cell)
    };
    let workers = worker_pool()?;
    let cells: Vec<CellResult> = workers.install(|| jobs.par_iter().map(run_cell).collect::<Result<_>>())?;

    let meta = ReportMeta {
        dataset_digest: dataset_digest.to_string(),
        config_digests: vec![digest],
        budget: cfg.budget,
        seeds: cfg.seeds.clone(),
        groups: vec![cfg.group.clone()],
        extra,
    };
    BenchmarkReport::from_cells(meta, cells, &names)
}

/// Per-cell BO seed; distinct tasks get distinct streams under the same seed.
fn cell_seed(seed: u64, task_index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(task_index as u64))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl BenchmarkReport {
    /// Aggregates cells; `order` fixes the row order of the summaries.
    pub fn from_cells(meta: ReportMeta, cells: Vec<CellResult>, order: &[String]) -> Result<Self> {
        let budget = meta.budget;
        let mut summaries = Vec::new();
        for name in order {
            // unit = (group, task); BTreeMap keeps the aggregation order fixed
            let mut units: BTreeMap<(&str, &str), Vec<&CellResult>> = BTreeMap::new();
            for c in cells.iter().filter(|c| &c.strategy == name) {
                units.entry((&c.group, &c.task_id)).or_default().push(c);
            }
            if units.is_empty() {
                return Err(Error::Contract(format!("no cells for strategy `{name}`")));
            }
            let mut evals = Vec::with_capacity(units.len());
            let mut curves: Vec<Vec<f64>> = Vec::with_capacity(units.len());
            for runs in units.values() {
                let k = runs.len() as f64;
                evals.push(runs.iter().map(|c| c.censored_evals(budget) as f64).sum::<f64>() / k);
                let mut curve = vec![0.0; budget];
                for c in runs {
                    for (acc, r) in curve.iter_mut().zip(c.regret_curve(budget)) {
                        *acc += r / k;
                    }
                }
                curves.push(curve);
            }
            let (mean, se) = mean_and_se(&evals);
            let (mean_regret, regret_std_error) = (0..budget)
                .map(|i| mean_and_se(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
                .unzip();
            let runs: Vec<&CellResult> = units.values().flatten().copied().collect();
            summaries.push(StrategySummary {
                strategy: name.clone(),
                n_tasks: units.len(),
                n_runs: runs.len(),
                n_found: runs.iter().filter(|c| c.evals_to_max.is_some()).count(),
                mean_evals_to_max: mean,
                std_error: se,
                mean_regret,
                regret_std_error,
            });
        }
        Ok(Self { meta, summaries, cells })
    }

    pub fn summary(&self, strategy: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    /// Merges reports on the same dataset and budget. Cells are pooled and
    /// the statistics recomputed, so the standard error is over all target
    /// tasks of all inputs.
    pub fn merge(reports: &[BenchmarkReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Config("no reports to merge".into()))?;
        let mut meta = first.meta.clone();
        meta.config_digests.clear();
        meta.groups.clear();
        meta.seeds.clear();
        let mut extras = Vec::new();
        let mut order: Vec<String> = Vec::new();
        let mut cells = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for r in reports {
            if r.meta.dataset_digest != first.meta.dataset_digest {
                return Err(Error::Config(format!(
                    "reports use different datasets ({} vs {})",
                    first.meta.dataset_digest, r.meta.dataset_digest
                )));
            }
            if r.meta.budget != first.meta.budget {
                return Err(Error::Config(format!(
                    "reports use different budgets ({} vs {})",
                    first.meta.budget, r.meta.budget
                )));
            }
            for d in &r.meta.config_digests {
                if !meta.config_digests.contains(d) {
                    meta.config_digests.push(d.clone());
                }
            }
            for g in &r.meta.groups {
                if !meta.groups.contains(g) {
                    meta.groups.push(g.clone());
                }
            }
            for s in &r.meta.seeds {
                if !meta.seeds.contains(s) {
                    meta.seeds.push(*s);
                }
            }
            for s in &r.summaries {
                if !order.contains(&s.strategy) {
                    order.push(s.strategy.clone());
                }
            }
            extras.push(r.meta.extra.clone());
            for c in &r.cells {
                if !seen.insert(c.key()) {
                    return Err(Error::Config(format!(
                        "cell ({}, group {}, task {}, seed {}) appears in more than one report",
                        c.strategy, c.group, c.task_id, c.seed
                    )));
                }
                cells.push(c.clone());
            }
        }
        meta.extra = if reports.len() == 1 {
            extras.pop().unwrap_or_default()
        } else {
            serde_json::Value::Array(extras)
        };
        Self::from_cells(meta, cells, &order)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// `strategy,n_tasks,n_runs,n_found,mean_evals_to_max,std_error`
    pub fn table_csv(&self) -> String {
        let mut out = String::from("strategy,n_tasks,n_runs,n_found,mean_evals_to_max,std_error\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.strategy, s.n_tasks, s.n_runs, s.n_found, s.mean_evals_to_max, s.std_error
            ));
        }
        out
    }

    /// Long format, one row per strategy and iteration:
    /// `strategy,iteration,mean_regret,std_error`. Iteration 0 is the first query.
    pub fn regret_csv(&self) -> String {
        let mut out = String::from("strategy,iteration,mean_regret,std_error\n");
        for s in &self.summaries {
            for (i, (m, se)) in s.mean_regret.iter().zip(&s.regret_std_error).enumerate() {
                out.push_str(&format!("{},{i},{m},{se}\n", s.strategy));
            }
        }
        out
    }

    /// Fixed-width table: mean evaluations to the maximum ± standard error.
    pub fn text_table(&self) -> String {
        let width = self
            .summaries
            .iter()
            .map(|s| s.strategy.len())
            .max()
            .unwrap_or(0)
            .max("Strategy".len());
        let mut out = format!(
            "{:<width$}  {:>20}  {:>7}  {:>5}\n",
            "Strategy", "Evals to max", "Tasks", "Found"
        );
        for s in &self.summaries {
            let cell = format!("{:.2} ± {:.2}", s.mean_evals_to_max, s.std_error);
            out.push_str(&format!(
                "{:<width$}  {:>20}  {:>7}  {:>5}\n",
                s.strategy, cell, s.n_tasks, s.n_found
            ));
        }
        out
    }
}

/// Standard error of the difference of two independent means.
pub fn pooled_std_error(a: &StrategySummary, b: &StrategySummary) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}
