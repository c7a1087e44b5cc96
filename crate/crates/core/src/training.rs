//! Fitting the shared model parameters on source tasks.
//!
//! Each epoch shuffles the source tasks, walks them in minibatches and takes
//! one Adam step per batch on the summed log marginal likelihood. After every
//! epoch the mean per-observation likelihood on validation tasks decides early
//! stopping; the returned model is the best validation snapshot.

use std::io::Write;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::{NgpConfig, NgpModel};
use crate::nnet::{AdamConfig, AdamState, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Tasks per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Evaluate the tasks of a batch on the rayon pool.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-2,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed training likelihood over the epoch's batches (each evaluated
    /// just before its update), divided by the number of source observations.
    pub train_lml_per_obs: f64,
    pub val_lml_per_obs: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) with the highest validation score.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// `epoch,train_lml_per_obs,val_lml_per_obs,seconds`, one row per epoch.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_lml_per_obs,val_lml_per_obs,seconds")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{:.6}",
                e.epoch, e.train_lml_per_obs, e.val_lml_per_obs, e.seconds
            )?;
        }
        Ok(())
    }
}

/// Tracks the best score seen and how long ago it was.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_score: f64,
    best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// This epoch is the new best.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }

    /// A NaN score never counts as an improvement.
    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Mean log marginal likelihood per observation across `tasks`.
pub fn validation_score(model: &NgpModel, tasks: &[Task]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Config("validation needs at least one task".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for t in tasks {
        total += model.log_marginal_likelihood(t)?;
        n += t.n_obs();
    }
    Ok(total / n as f64)
}

/// Optimizer state for a model under training.
pub struct Trainer {
    pub model: NgpModel,
    adam: AdamState,
    batch_size: usize,
    parallel: bool,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: NgpModel, n_source: usize, tc: &TrainConfig) -> Result<Self> {
        if tc.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if tc.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let batch_size = if tc.batch_size > n_source {
            warn!(
                "batch size {} exceeds the {} source tasks; clamping",
                tc.batch_size, n_source
            );
            n_source.max(1)
        } else {
            tc.batch_size
        };
        let adam = AdamState::new(model.n_flat(), AdamConfig::with_lr(tc.learning_rate));
        Ok(Self {
            model,
            adam,
            batch_size,
            parallel: tc.parallel,
            rng: ChaCha8Rng::seed_from_u64(tc.seed ^ 0x005e_ed0f_7a5c),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Summed likelihood and gradient over a batch, reduced in task order.
    pub fn batch_gradient(&self, batch: &[&Task]) -> Result<(f64, Vec<f64>)> {
        let eval = |t: &&Task| self.model.lml_gradient(t).map(|(l, g)| (l, g.to_flat()));
        let per_task: Vec<(f64, Vec<f64>)> = if self.parallel {
            batch.par_iter().map(eval).collect::<Result<_>>()?
        } else {
            batch.iter().map(eval).collect::<Result<_>>()?
        };
        let mut grad = vec![0.0; self.model.n_flat()];
        let mut lml = 0.0;
        for (l, g) in per_task {
            lml += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        Ok((lml, grad))
    }

    /// One Adam ascent step on the summed likelihood of `batch`. Returns the
    /// likelihood evaluated before the step.
    pub fn step(&mut self, batch: &[&Task]) -> Result<f64> {
        let (lml, grad) = self.batch_gradient(batch)?;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut flat = self.model.to_flat();
        self.adam.step(&mut flat, &neg, &self.model.param_blocks())?;
        self.model.set_flat(&flat)?;
        Ok(lml)
    }

    /// One pass over `tasks` in a freshly shuffled order. Returns the summed
    /// pre-update batch likelihoods.
    pub fn epoch(&mut self, tasks: &[Task]) -> Result<f64> {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<&Task> = chunk.iter().map(|&i| &tasks[i]).collect();
            total += self.step(&batch)?;
        }
        Ok(total)
    }
}

fn check_tasks(tasks: &[Task], role: &str, min_obs: usize) -> Result<()> {
    for t in tasks {
        t.validate()?;
        if t.n_obs() < min_obs {
            return Err(Error::Config(format!(
                "{role} task `{}` has {} observations, at least {min_obs} required",
                t.id,
                t.n_obs()
            )));
        }
    }
    Ok(())
}

/// Fits a fresh model of the given configuration on `source`, early stopping
/// on `validation`.
pub fn train(
    config: NgpConfig,
    source: &[Task],
    validation: &[Task],
    tc: &TrainConfig,
) -> Result<(NgpModel, TrainHistory)> {
    if source.is_empty() {
        return Err(Error::Config("training needs at least one source task".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("training needs at least one validation task".into()));
    }
    if tc.max_epochs == 0 || tc.patience == 0 {
        return Err(Error::Config("max_epochs and patience must be positive".into()));
    }
    check_tasks(source, "source", 2)?;
    check_tasks(validation, "validation", 1)?;
    let model = NgpModel::init(config, tc.seed)?;
    train_from(model, source, validation, tc)
}

/// Like [`train`] but starting from the given parameters.
pub fn train_from(
    model: NgpModel,
    source: &[Task],
    validation: &[Task],
    tc: &TrainConfig,
) -> Result<(NgpModel, TrainHistory)> {
    let n_obs: usize = source.iter().map(Task::n_obs).sum();
    let mut trainer = Trainer::new(model, source.len(), tc)?;
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best_model = trainer.model.clone();
    let mut records = Vec::new();
    for epoch in 1..=tc.max_epochs {
        let start = Instant::now();
        let train_lml = trainer
            .epoch(source)
            .map_err(|e| e.with_context(format!("epoch {epoch}")))?;
        let val = validation_score(&trainer.model, validation)
            .map_err(|e| e.with_context(format!("epoch {epoch} validation")))?;
        let record = EpochRecord {
            epoch,
            train_lml_per_obs: train_lml / n_obs as f64,
            val_lml_per_obs: val,
            seconds: start.elapsed().as_secs_f64(),
        };
        debug!(
            "epoch {epoch}: train {:.4} val {:.4}",
            record.train_lml_per_obs, record.val_lml_per_obs
        );
        records.push(record);
        match stopper.update(epoch, val) {
            StopDecision::Improved => best_model = trainer.model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if stopper.best_epoch() == 0 {
        return Err(Error::numeric("training", "validation likelihood was never finite"));
    }
    Ok((
        best_model,
        TrainHistory {
            epochs: records,
            best_epoch: stopper.best_epoch(),
        },
    ))
}

/// Wall-clock cost of one training epoch for a given number of source tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub n_tasks: usize,
    pub n_obs: usize,
    pub seconds_per_epoch: f64,
}

/// Times sequential training epochs on random tasks for every combination of
/// observations-per-task and task count. Each entry is the median of `repeats`
/// epochs.
pub fn complexity_probe(
    config: &NgpConfig,
    n_values: &[usize],
    d_values: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if d_values.contains(&0) || n_values.contains(&0) {
        return Err(Error::Config("task counts and sizes must be positive".into()));
    }
    let repeats = repeats.max(1);
    let mut rows = Vec::new();
    for &n in n_values {
        for &d in d_values {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tasks: Vec<Task> = (0..d)
                .map(|i| random_task(config, n, &mut rng, i))
                .collect::<Result<_>>()?;
            let model = NgpModel::init(config.clone(), seed)?;
            let tc = TrainConfig {
                batch_size: 32,
                parallel: false,
                seed,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(model, d, &tc)?;
            trainer.epoch(&tasks)?; // warm-up
            let mut times: Vec<f64> = (0..repeats)
                .map(|_| {
                    let start = Instant::now();
                    trainer.epoch(&tasks).map(|_| start.elapsed().as_secs_f64())
                })
                .collect::<Result<_>>()?;
            times.sort_by(f64::total_cmp);
            rows.push(ProbeRow {
                n_tasks: d,
                n_obs: n,
                seconds_per_epoch: times[times.len() / 2],
            });
        }
    }
    Ok(rows)
}

fn random_task(config: &NgpConfig, n: usize, rng: &mut ChaCha8Rng, i: usize) -> Result<Task> {
    let x = DMatrix::from_fn(n, config.feature_dim, |_, _| rng.random_range(-5.0..5.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let r = (0..config.descriptor_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Task::new(format!("probe-{i}"), x, y, r)
}
