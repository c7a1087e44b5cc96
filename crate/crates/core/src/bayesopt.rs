//! Expected improvement over a finite candidate pool, and the comparison
//! strategies used for benchmarking.
//!
//! Each BO run reveals pool values one index at a time. Surrogate-based
//! strategies pick the unevaluated candidate with the highest expected
//! improvement over the best value observed so far.
//!
//! First query, before any value is known:
//! - NGP variants with a mean network take the argmax of the prior mean;
//! - zero-mean surrogates (GP, TGP, NGP without `M`) take a seeded random index;
//! - NN / NN-R follow their predicted-value ordering for the whole run;
//! - Random follows a seeded permutation.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernels::sq_dist;
use crate::linalg::JitteredCholesky;
use crate::model::{gaussian_condition, EmbeddedInputs, NgpModel, Posterior};
use crate::nnet::{AdamConfig, AdamState, MlpArch, MlpParams, Parameterized};
use crate::training::EarlyStopping;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(f − y_best, 0)]` for `f ~ N(mu, sigma²)`.
pub fn expected_improvement(mu: f64, sigma: f64, y_best: f64) -> Result<f64> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Contract(format!(
            "expected improvement needs sigma >= 0, got {sigma}"
        )));
    }
    let diff = mu - y_best;
    if sigma == 0.0 {
        return Ok(diff.max(0.0));
    }
    let z = diff / sigma;
    Ok((diff * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0))
}

/// Index of the largest acquisition value among unevaluated candidates,
/// lowest index on ties. NaN values never win.
pub fn select_next(acq: &[f64], evaluated: &[bool]) -> Result<usize> {
    if acq.len() != evaluated.len() {
        return Err(Error::Shape(format!(
            "{} acquisition values for {} candidates",
            acq.len(),
            evaluated.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (&a, &done)) in acq.iter().zip(evaluated).enumerate() {
        if done {
            continue;
        }
        let a = if a.is_nan() { f64::NEG_INFINITY } else { a };
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::BudgetExhausted)
}

/// A finite design space whose values are revealed one index at a time.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub id: String,
    pub x: DMatrix<f64>,
    pub r: Vec<f64>,
    y_true: Vec<f64>,
}

impl CandidatePool {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y_true: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if y_true.is_empty() || x.nrows() != y_true.len() {
            return Err(Error::Shape(format!(
                "pool needs matching non-empty x ({} rows) and y ({})",
                x.nrows(),
                y_true.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            x,
            r,
            y_true,
        })
    }

    pub fn from_task(task: &Task) -> Self {
        Self {
            id: task.id.clone(),
            x: task.x.clone(),
            r: task.r.clone(),
            y_true: task.y.iter().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn evaluate(&self, index: usize) -> f64 {
        self.y_true[index]
    }

    pub fn true_max(&self) -> f64 {
        self.y_true.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Ordered record of one BO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub queried_indices: Vec<usize>,
    pub observed_values: Vec<f64>,
    pub best_so_far: Vec<f64>,
    /// 1-based evaluation count at which a pool maximizer was first queried.
    pub evals_to_max: Option<usize>,
}

/// One JSON-lines record of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub index: usize,
    pub y: f64,
    pub best: f64,
}

impl BoTrace {
    fn new() -> Self {
        Self {
            queried_indices: Vec::new(),
            observed_values: Vec::new(),
            best_so_far: Vec::new(),
            evals_to_max: None,
        }
    }

    fn push(&mut self, index: usize, y: f64, true_max: f64) {
        let best = self.best_so_far.last().map_or(y, |b| b.max(y));
        self.queried_indices.push(index);
        self.observed_values.push(y);
        self.best_so_far.push(best);
        if self.evals_to_max.is_none() && y >= true_max {
            self.evals_to_max = Some(self.queried_indices.len());
        }
    }

    pub fn len(&self) -> usize {
        self.queried_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queried_indices.is_empty()
    }

    /// `true_max − best_so_far` after each evaluation.
    pub fn regret(&self, true_max: f64) -> Vec<f64> {
        self.best_so_far.iter().map(|b| true_max - b).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for (i, ((&index, &y), &best)) in self
            .queried_indices
            .iter()
            .zip(&self.observed_values)
            .zip(&self.best_so_far)
            .enumerate()
        {
            let rec = TraceRecord {
                iter: i,
                index,
                y,
                best,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a trace from JSON lines; `true_max` restores `evals_to_max`.
    pub fn read_jsonl(input: impl BufRead, true_max: f64) -> Result<Self> {
        let mut trace = BoTrace::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("trace line {}", lineno + 1),
                message: e.to_string(),
            })?;
            if rec.iter != trace.len() {
                return Err(Error::Parse {
                    location: format!("trace line {}", lineno + 1),
                    message: format!("expected iter {}, found {}", trace.len(), rec.iter),
                });
            }
            trace.push(rec.index, rec.y, true_max);
        }
        Ok(trace)
    }
}

/// Hyperparameters of the Matérn-5/2 baseline GP, log-parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternHyper {
    pub log_amplitude: f64,
    pub log_lengthscale: f64,
    pub log_noise_variance: f64,
}

impl MaternHyper {
    pub fn new(amplitude: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self {
            log_amplitude: amplitude.ln(),
            log_lengthscale: lengthscale.ln(),
            log_noise_variance: noise_variance.ln(),
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.log_amplitude, self.log_lengthscale, self.log_noise_variance]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            log_amplitude: a[0],
            log_lengthscale: a[1],
            log_noise_variance: a[2],
        }
    }
}

/// Matérn-5/2 covariance at distance `dist`.
pub fn matern52(dist: f64, amplitude: f64, lengthscale: f64) -> f64 {
    let s = 5f64.sqrt() * dist / lengthscale;
    amplitude * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Zero-mean GP with an isotropic Matérn-5/2 kernel and fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternGp {
    pub hyper: MaternHyper,
}

impl MaternGp {
    fn cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let amp = self.hyper.log_amplitude.exp();
        let ell = self.hyper.log_lengthscale.exp();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let d2: f64 = (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum();
            matern52(d2.sqrt(), amp, ell)
        })
    }

    pub fn posterior(&self, x_obs: &DMatrix<f64>, y_obs: &DVector<f64>, x_query: &DMatrix<f64>) -> Result<Posterior> {
        if x_obs.nrows() != y_obs.len() || (x_obs.nrows() > 0 && x_obs.ncols() != x_query.ncols()) {
            return Err(Error::Shape("GP baseline inputs disagree in shape".into()));
        }
        let amp = self.hyper.log_amplitude.exp();
        let prior_mean = vec![0.0; x_query.nrows()];
        let prior_var = vec![amp; x_query.nrows()];
        gaussian_condition(
            &self.cov(x_obs, x_obs),
            self.hyper.log_noise_variance.exp(),
            y_obs,
            &self.cov(x_obs, x_query),
            &prior_mean,
            &prior_var,
            "GP baseline",
        )
    }

    /// Log marginal likelihood and its gradient in the log-hyperparameters.
    pub fn lml_gradient(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, [f64; 3])> {
        let n = y.len();
        let amp = self.hyper.log_amplitude.exp();
        let ell = self.hyper.log_lengthscale.exp();
        let noise = self.hyper.log_noise_variance.exp();
        let mut c = DMatrix::zeros(n, n);
        let mut d_ell = DMatrix::zeros(n, n);
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        for i in 0..n {
            for j in i..n {
                let s = 5f64.sqrt() * sq_dist(&rows[i], &rows[j]).sqrt() / ell;
                let e = (-s).exp();
                let k = amp * (1.0 + s + s * s / 3.0) * e;
                let dk = amp * s * s * (1.0 + s) * e / 3.0;
                c[(i, j)] = k;
                c[(j, i)] = k;
                d_ell[(i, j)] = dk;
                d_ell[(j, i)] = dk;
            }
        }
        let k_only = c.clone();
        for i in 0..n {
            c[(i, i)] += noise;
        }
        let chol = JitteredCholesky::new(&c, "GP baseline fit")?;
        let alpha = chol.solve(y);
        let lml = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det() + y.dot(&alpha));
        let mut w = &alpha * alpha.transpose();
        w -= chol.inverse();
        w *= 0.5;
        let g_amp = w.component_mul(&k_only).sum();
        let g_ell = w.component_mul(&d_ell).sum();
        let g_noise = w.trace() * noise;
        Ok((lml, [g_amp, g_ell, g_noise]))
    }
}

/// Settings for the Matérn GP baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpBaselineConfig {
    /// Observations needed before hyperparameters are refit.
    pub refit_min_obs: usize,
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub default_noise_variance: f64,
}

impl Default for GpBaselineConfig {
    fn default() -> Self {
        Self {
            refit_min_obs: 3,
            restarts: 4,
            steps: 100,
            learning_rate: 0.05,
            default_noise_variance: 1e-4,
        }
    }
}

/// Median Euclidean distance over distinct row pairs; 1.0 when undefined.
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Default hyperparameters, refit by multi-restart Adam ascent on the
/// marginal likelihood of standardized values once enough data exist.
pub fn fit_gp_hyper(
    x: &DMatrix<f64>,
    y_std: &DVector<f64>,
    defaults: MaternHyper,
    cfg: &GpBaselineConfig,
    rng: &mut impl Rng,
) -> Result<MaternHyper> {
    if y_std.len() < cfg.refit_min_obs.max(1) {
        return Ok(defaults);
    }
    let base = defaults.as_array();
    let lo = [(1e-2f64).ln(), base[1] - (1e3f64).ln(), (1e-6f64).ln()];
    let hi = [(1e2f64).ln(), base[1] + (1e3f64).ln(), 0.0];
    let mut best: Option<(f64, MaternHyper)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut p = base;
        if restart > 0 {
            for v in p.iter_mut() {
                *v += rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut adam = AdamState::new(3, AdamConfig::with_lr(cfg.learning_rate));
        let mut last = None;
        for _ in 0..cfg.steps {
            for k in 0..3 {
                p[k] = p[k].clamp(lo[k], hi[k]);
            }
            let gp = MaternGp {
                hyper: MaternHyper::from_array(p),
            };
            let Ok((lml, g)) = gp.lml_gradient(x, y_std) else {
                break;
            };
            last = Some((lml, p));
            let neg = [-g[0], -g[1], -g[2]];
            if adam.step(&mut p, &neg, &[]).is_err() {
                break;
            }
        }
        for k in 0..3 {
            p[k] = p[k].clamp(lo[k], hi[k]);
        }
        let final_lml = MaternGp {
            hyper: MaternHyper::from_array(p),
        }
        .lml_gradient(x, y_std)
        .map(|(l, _)| l)
        .ok();
        let candidate = match (final_lml, last) {
            (Some(l), _) => Some((l, p)),
            (None, Some(prev)) => Some(prev),
            _ => None,
        };
        if let Some((l, q)) = candidate {
            if l.is_finite() && best.is_none_or(|(b, _)| l > b) {
                best = Some((l, MaternHyper::from_array(q)));
            }
        }
    }
    Ok(best.map_or(defaults, |(_, h)| h))
}

fn standardize(y: &DVector<f64>) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.mean();
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, scale, y.map(|v| (v - mean) / scale))
}

/// Posterior of the Matérn GP baseline after standardizing `y_obs` and
/// (with three or more observations) refitting hyperparameters. Defaults
/// are amplitude 1, the median pairwise distance of all given inputs as
/// lengthscale, and noise variance 1e-4.
pub fn gp_baseline_posterior(x_obs: &DMatrix<f64>, y_obs: &DVector<f64>, x_query: &DMatrix<f64>) -> Result<Posterior> {
    let cfg = GpBaselineConfig::default();
    let mut all = DMatrix::zeros(x_obs.nrows() + x_query.nrows(), x_query.ncols());
    if x_obs.nrows() > 0 {
        all.rows_mut(0, x_obs.nrows()).copy_from(x_obs);
    }
    all.rows_mut(x_obs.nrows(), x_query.nrows()).copy_from(x_query);
    let defaults = MaternHyper::new(1.0, median_pairwise_distance(&all), cfg.default_noise_variance);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    gp_posterior_with(x_obs, y_obs, x_query, defaults, &cfg, &mut rng).map(|(p, _)| p)
}

fn gp_posterior_with(
    x_obs: &DMatrix<f64>,
    y_obs: &DVector<f64>,
    x_query: &DMatrix<f64>,
    defaults: MaternHyper,
    cfg: &GpBaselineConfig,
    rng: &mut impl Rng,
) -> Result<(Posterior, MaternHyper)> {
    if y_obs.is_empty() {
        let gp = MaternGp { hyper: defaults };
        return Ok((gp.posterior(x_obs, y_obs, x_query)?, defaults));
    }
    let (mean, scale, y_std) = standardize(y_obs);
    let hyper = fit_gp_hyper(x_obs, &y_std, defaults, cfg, rng)?;
    let p = MaternGp { hyper }.posterior(x_obs, &y_std, x_query)?;
    Ok((
        Posterior {
            mean: p.mean.iter().map(|m| mean + scale * m).collect(),
            variance: p.variance.iter().map(|v| v * scale * scale).collect(),
        },
        hyper,
    ))
}

/// Pooled regression network used by the NN / NN-R baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionNet {
    pub net: MlpParams,
    pub use_descriptor: bool,
    pub feature_dim: usize,
    pub descriptor_dim: usize,
}

impl RegressionNet {
    fn input(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "feature vector has length {}, network expects {}",
                x.len(),
                self.feature_dim
            )));
        }
        let mut u = x.to_vec();
        if self.use_descriptor {
            if r.len() != self.descriptor_dim {
                return Err(Error::Config(format!(
                    "descriptor of length {} required, got {}",
                    self.descriptor_dim,
                    r.len()
                )));
            }
            u.extend_from_slice(r);
        }
        Ok(u)
    }

    pub fn predict(&self, x: &[f64], r: &[f64]) -> Result<f64> {
        Ok(self.net.predict(&self.input(x, r)?)?[0])
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>, r: &[f64]) -> Result<Vec<f64>> {
        x.row_iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().copied().collect();
                self.predict(&v, r)
            })
            .collect()
    }

    fn mse(&self, tasks: &[Task]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for t in tasks {
            let pred = self.predict_rows(&t.x, &t.r)?;
            total += pred.iter().zip(t.y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
            n += t.n_obs();
        }
        Ok(total / n.max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnFitConfig {
    pub hidden: usize,
    /// Observations per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for NnFitConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            batch_size: 32,
            learning_rate: 1e-2,
            max_epochs: 100,
            patience: 10,
        }
    }
}

/// Fits `[in, 32, 32, 1]` on all source observations with squared error,
/// early stopping on validation MSE (training MSE when `validation` is empty).
pub fn nn_baseline_fit(
    source: &[Task],
    validation: &[Task],
    use_descriptor: bool,
    seed: u64,
    cfg: &NnFitConfig,
) -> Result<RegressionNet> {
    let first = source
        .first()
        .ok_or_else(|| Error::Config("NN baseline needs at least one source task".into()))?;
    let feature_dim = first.feature_dim();
    let descriptor_dim = first.descriptor_dim();
    let input = feature_dim + if use_descriptor { descriptor_dim } else { 0 };
    let arch = MlpArch::tanh(&[input, cfg.hidden, cfg.hidden, 1])?;
    let mut model = RegressionNet {
        net: MlpParams::init(&arch, seed)?,
        use_descriptor,
        feature_dim,
        descriptor_dim,
    };
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::new();
    for t in source {
        for (i, row) in t.x.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            samples.push((model.input(&x, &t.r)?, t.y[i]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00de_c0de);
    let mut adam = AdamState::new(arch.n_params(), AdamConfig::with_lr(cfg.learning_rate));
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let holdout = if validation.is_empty() { source } else { validation };
    for epoch in 1..=cfg.max_epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = MlpParams::zeros(&arch)?;
            for &i in chunk {
                let (u, y) = &samples[i];
                let (out, cache) = model.net.forward(u)?;
                let g = 2.0 * (out[0] - y) / chunk.len() as f64;
                model.net.backward_accumulate(&cache, &[g], &mut grads)?;
            }
            let mut flat = model.net.to_flat();
            adam.step(&mut flat, &grads.to_flat(), &model.net.param_blocks())?;
            model.net.set_flat(&flat)?;
        }
        let score = -model.mse(holdout)?;
        match stopper.update(epoch, score) {
            crate::training::StopDecision::Improved => best = model.clone(),
            crate::training::StopDecision::Continue => {}
            crate::training::StopDecision::Stop => break,
        }
    }
    Ok(best)
}

/// How the next query is chosen.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Any NGP ablation, conditioned on target observations.
    Ngp(&'a NgpModel),
    /// Zero-mean Matérn-5/2 GP fit only on target observations.
    Gp(GpBaselineConfig),
    /// RBF GP whose kernel was learned on source tasks (an NGP with every
    /// component switched off).
    Tgp(&'a NgpModel),
    Nn(&'a RegressionNet),
    NnR(&'a RegressionNet),
    Random,
}

impl fmt::Display for Strategy<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Ngp(m) => write!(f, "{}", m.config.ablation),
            Strategy::Gp(_) => f.write_str("GP"),
            Strategy::Tgp(_) => f.write_str("TGP"),
            Strategy::Nn(_) => f.write_str("NN"),
            Strategy::NnR(_) => f.write_str("NN-R"),
            Strategy::Random => f.write_str("Random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoOptions {
    /// End the run as soon as a pool maximizer has been evaluated.
    pub stop_at_max: bool,
}

trait Surrogate {
    fn posterior(&mut self, obs: &[usize], y: &[f64], query: &[usize]) -> Result<Posterior>;
}

struct NgpSurrogate<'a> {
    model: &'a NgpModel,
    pool: EmbeddedInputs,
}

impl Surrogate for NgpSurrogate<'_> {
    fn posterior(&mut self, obs: &[usize], y: &[f64], query: &[usize]) -> Result<Posterior> {
        self.model
            .condition(&self.pool.select(obs), y, &self.pool.select(query))
    }
}

struct GpSurrogate<'p> {
    x: &'p DMatrix<f64>,
    defaults: MaternHyper,
    cfg: GpBaselineConfig,
    rng: ChaCha8Rng,
}

impl Surrogate for GpSurrogate<'_> {
    fn posterior(&mut self, obs: &[usize], y: &[f64], query: &[usize]) -> Result<Posterior> {
        let x_obs = self.x.select_rows(obs);
        let x_q = self.x.select_rows(query);
        let y = DVector::from_column_slice(y);
        gp_posterior_with(&x_obs, &y, &x_q, self.defaults, &self.cfg, &mut self.rng).map(|(p, _)| p)
    }
}

/// [`run_bo_with`] with default options.
pub fn run_bo(strategy: &Strategy<'_>, pool: &CandidatePool, budget: usize, seed: u64) -> Result<BoTrace> {
    run_bo_with(strategy, pool, budget, seed, &BoOptions::default())
}

/// Runs up to `budget` evaluations of `pool` with the given strategy.
pub fn run_bo_with(
    strategy: &Strategy<'_>,
    pool: &CandidatePool,
    budget: usize,
    seed: u64,
    opts: &BoOptions,
) -> Result<BoTrace> {
    if budget == 0 || budget > pool.len() {
        return Err(Error::Config(format!(
            "budget must be in 1..={}, got {budget}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let true_max = pool.true_max();
    match strategy {
        Strategy::Random => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            Ok(replay(pool, &order[..budget], true_max, opts))
        }
        Strategy::Nn(net) | Strategy::NnR(net) => {
            let expect_r = matches!(strategy, Strategy::NnR(_));
            if net.use_descriptor != expect_r {
                return Err(Error::Config(format!(
                    "{strategy} strategy given a network with use_descriptor = {}",
                    net.use_descriptor
                )));
            }
            let pred = net.predict_rows(&pool.x, &pool.r)?;
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
            Ok(replay(pool, &order[..budget], true_max, opts))
        }
        Strategy::Ngp(model) | Strategy::Tgp(model) => {
            if matches!(strategy, Strategy::Tgp(_)) && model.config.ablation != crate::model::Ablation::TGP {
                return Err(Error::Config(format!(
                    "TGP strategy given a {} model",
                    model.config.ablation
                )));
            }
            let embedded = model.embed_inputs(&pool.x, &pool.r)?;
            let first = if model.config.ablation.use_mean_net {
                let none = vec![false; pool.len()];
                select_next(&embedded.mean, &none)?
            } else {
                rng.random_range(0..pool.len())
            };
            let mut s = NgpSurrogate { model, pool: embedded };
            ei_loop(&mut s, pool, budget, first, true_max, opts)
        }
        Strategy::Gp(cfg) => {
            let defaults = MaternHyper::new(1.0, median_pairwise_distance(&pool.x), cfg.default_noise_variance);
            let first = rng.random_range(0..pool.len());
            let mut s = GpSurrogate {
                x: &pool.x,
                defaults,
                cfg: *cfg,
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1)),
            };
            ei_loop(&mut s, pool, budget, first, true_max, opts)
        }
    }
}

fn replay(pool: &CandidatePool, order: &[usize], true_max: f64, opts: &BoOptions) -> BoTrace {
    let mut trace = BoTrace::new();
    for &i in order {
        trace.push(i, pool.evaluate(i), true_max);
        if opts.stop_at_max && trace.evals_to_max.is_some() {
            break;
        }
    }
    trace
}

fn ei_loop(
    surrogate: &mut dyn Surrogate,
    pool: &CandidatePool,
    budget: usize,
    first: usize,
    true_max: f64,
    opts: &BoOptions,
) -> Result<BoTrace> {
    let mut trace = BoTrace::new();
    let mut evaluated = vec![false; pool.len()];
    let mut next = first;
    for it in 0..budget {
        if it > 0 {
            let query: Vec<usize> = (0..pool.len()).filter(|&i| !evaluated[i]).collect();
            let post = surrogate
                .posterior(&trace.queried_indices, &trace.observed_values, &query)
                .map_err(|e| e.with_context(format!("BO iteration {it}")))?;
            let y_best = *trace.best_so_far.last().expect("at least one observation");
            let mut acq = vec![f64::NEG_INFINITY; pool.len()];
            for (q, &i) in query.iter().enumerate() {
                acq[i] = expected_improvement(post.mean[q], post.variance[q].sqrt(), y_best)?;
            }
            next = select_next(&acq, &evaluated)?;
        }
        evaluated[next] = true;
        trace.push(next, pool.evaluate(next), true_max);
        if opts.stop_at_max && trace.evals_to_max.is_some() {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, NgpConfig};
    use crate::nnet::Activation;

    #[test]
    fn ei_closed_forms() {
        assert!((expected_improvement(0.0, 1.0, 0.0).unwrap() - 0.398942).abs() < 1e-6);
        assert_eq!(expected_improvement(1.0, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(expected_improvement(0.0, -1.0, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn ei_monotone_and_vanishing() {
        let mut prev = 0.0;
        for k in -40..40 {
            let mu = k as f64 * 0.25;
            let v = expected_improvement(mu, 0.7, 0.0).unwrap();
            assert!(v >= 0.0);
            if k > -40 {
                assert!(v > prev || (v == prev && v == 0.0), "mu {mu}");
            }
            prev = v;
        }
        assert!(expected_improvement(-40.0, 1.0, 0.0).unwrap() < 1e-300);
    }

    #[test]
    fn select_next_rules() {
        assert_eq!(select_next(&[0.1, 0.5, 0.2], &[false; 3]).unwrap(), 1);
        assert_eq!(select_next(&[0.5, 0.5], &[false; 2]).unwrap(), 0);
        assert_eq!(select_next(&[0.9, 0.1], &[true, false]).unwrap(), 1);
        assert!(matches!(select_next(&[0.9], &[true]), Err(Error::BudgetExhausted)));
        let shifted: Vec<f64> = [0.1, 0.5, 0.2].iter().map(|v| v + 100.0).collect();
        assert_eq!(select_next(&shifted, &[false; 3]).unwrap(), 1);
    }

    fn pool(n: usize, seed: u64) -> CandidatePool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64 * 4.0 - 2.0);
        let y: Vec<f64> = (0..n)
            .map(|i| (x[(i, 0)] * 2.0).sin() + 0.1 * rng.random::<f64>())
            .collect();
        CandidatePool::new("p", x, y, vec![0.3]).unwrap()
    }

    #[test]
    fn random_is_seeded_permutation_prefix() {
        let p = pool(5, 1);
        let a = run_bo(&Strategy::Random, &p, 5, 3).unwrap();
        let b = run_bo(&Strategy::Random, &p, 5, 3).unwrap();
        assert_eq!(a, b);
        let mut idx = a.queried_indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert!(a.evals_to_max.is_some());
        let short = run_bo(&Strategy::Random, &p, 3, 3).unwrap();
        assert_eq!(short.queried_indices, a.queried_indices[..3]);
    }

    #[test]
    fn budget_is_checked() {
        let p = pool(5, 1);
        assert!(run_bo(&Strategy::Random, &p, 0, 0).is_err());
        assert!(run_bo(&Strategy::Random, &p, 6, 0).is_err());
    }

    #[test]
    fn exhaustive_budget_finds_maximum() {
        let p = pool(12, 2);
        let model = NgpModel::init(
            NgpConfig::with_hidden(Ablation::RMK, 1, 1, 4, Activation::Tanh).unwrap(),
            1,
        )
        .unwrap();
        let tgp = NgpModel::init(NgpConfig::new(Ablation::TGP, 1, 1).unwrap(), 1).unwrap();
        let strategies = [
            Strategy::Ngp(&model),
            Strategy::Tgp(&tgp),
            Strategy::Gp(GpBaselineConfig::default()),
            Strategy::Random,
        ];
        for s in &strategies {
            let t = run_bo(s, &p, 12, 4).unwrap();
            assert!(t.evals_to_max.is_some(), "{s}");
            assert!(t.best_so_far.windows(2).all(|w| w[0] <= w[1]));
            let mut idx = t.queried_indices.clone();
            idx.sort();
            idx.dedup();
            assert_eq!(idx.len(), 12);
        }
    }

    #[test]
    fn zero_shot_hit_with_prior_mean() {
        let model = NgpModel::init(
            NgpConfig::with_hidden(Ablation::RMK, 1, 1, 4, Activation::Tanh).unwrap(),
            6,
        )
        .unwrap();
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.2 - 2.0);
        let r = vec![0.4];
        let y: Vec<f64> = model.mean_vector(&x, &r).unwrap().iter().copied().collect();
        let p = CandidatePool::new("zs", x, y, r).unwrap();
        let t = run_bo(&Strategy::Ngp(&model), &p, 5, 0).unwrap();
        assert_eq!(t.evals_to_max, Some(1));
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let p = pool(8, 5);
        let t = run_bo(&Strategy::Gp(GpBaselineConfig::default()), &p, 6, 1).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().starts_with("{\"iter\":0,\"index\":"));
        let back = BoTrace::read_jsonl(&buf[..], p.true_max()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn regret_is_non_increasing() {
        let p = pool(15, 8);
        let t = run_bo(&Strategy::Random, &p, 15, 2).unwrap();
        let r = t.regret(p.true_max());
        assert!(r.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*r.last().unwrap(), 0.0);
    }

    #[test]
    fn stop_at_max_truncates() {
        let p = pool(15, 8);
        let opts = BoOptions { stop_at_max: true };
        let t = run_bo_with(&Strategy::Random, &p, 15, 2, &opts).unwrap();
        assert_eq!(Some(t.len()), t.evals_to_max);
    }

    #[test]
    fn matern_basics() {
        assert_eq!(matern52(0.0, 2.5, 0.3), 2.5);
        assert!(matern52(1.0, 1.0, 1.0) < 1.0);
        let empty = DMatrix::zeros(0, 1);
        let q = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = gp_baseline_posterior(&empty, &DVector::zeros(0), &q).unwrap();
        assert_eq!(p.mean, vec![0.0, 0.0]);
        assert_eq!(p.variance, vec![1.0, 1.0]);
    }

    #[test]
    fn matern_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let h0 = MaternHyper::new(0.8, 0.7, 0.05);
        let (_, g) = MaternGp { hyper: h0 }.lml_gradient(&x, &y).unwrap();
        let eps = 1e-6;
        for k in 0..3 {
            let mut a = h0.as_array();
            let mut b = h0.as_array();
            a[k] += eps;
            b[k] -= eps;
            let la = MaternGp {
                hyper: MaternHyper::from_array(a),
            }
            .lml_gradient(&x, &y)
            .unwrap()
            .0;
            let lb = MaternGp {
                hyper: MaternHyper::from_array(b),
            }
            .lml_gradient(&x, &y)
            .unwrap()
            .0;
            let fd = (la - lb) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-5 * fd.abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gp_refit_improves_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 * 0.3);
        let y = DVector::from_fn(10, |i, _| (x[(i, 0)] * 1.5).sin());
        let (_, _, ys) = standardize(&y);
        let defaults = MaternHyper::new(1.0, 5.0, 1e-4);
        let fit = fit_gp_hyper(&x, &ys, defaults, &GpBaselineConfig::default(), &mut rng).unwrap();
        let l0 = MaternGp { hyper: defaults }.lml_gradient(&x, &ys).unwrap().0;
        let l1 = MaternGp { hyper: fit }.lml_gradient(&x, &ys).unwrap().0;
        assert!(l1 >= l0);
    }

    fn regression_tasks() -> Vec<Task> {
        (0..4)
            .map(|d| {
                let r = d as f64 * 0.5 - 1.0;
                let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.2 - 2.0);
                let y = DVector::from_fn(20, |i, _| x[(i, 0)].powi(2) * -0.5 + r);
                Task::new(format!("reg{d}"), x, y, vec![r]).unwrap()
            })
            .collect()
    }

    #[test]
    fn nn_baseline_beats_zero_predictor() {
        let tasks = regression_tasks();
        let cfg = NnFitConfig {
            max_epochs: 60,
            ..NnFitConfig::default()
        };
        let net = nn_baseline_fit(&tasks, &[], true, 1, &cfg).unwrap();
        let zero: f64 = tasks.iter().flat_map(|t| t.y.iter()).map(|y| y * y).sum::<f64>() / 80.0;
        assert!(net.mse(&tasks).unwrap() < zero);
        let again = nn_baseline_fit(&tasks, &[], true, 1, &cfg).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn nn_ignores_descriptor_and_values() {
        let tasks = regression_tasks();
        let cfg = NnFitConfig {
            max_epochs: 5,
            ..NnFitConfig::default()
        };
        let net = nn_baseline_fit(&tasks, &tasks[..1], false, 2, &cfg).unwrap();
        assert_eq!(
            net.predict(&[0.5], &[1.0]).unwrap(),
            net.predict(&[0.5], &[-3.0]).unwrap()
        );
        let p1 = CandidatePool::from_task(&tasks[0]);
        let mut flipped = tasks[0].clone();
        flipped.y = -flipped.y.clone();
        let p2 = CandidatePool::from_task(&flipped);
        let a = run_bo(&Strategy::Nn(&net), &p1, 10, 0).unwrap();
        let b = run_bo(&Strategy::Nn(&net), &p2, 10, 0).unwrap();
        assert_eq!(a.queried_indices, b.queried_indices);
        assert!(run_bo(&Strategy::NnR(&net), &p1, 10, 0).is_err());
    }
}
