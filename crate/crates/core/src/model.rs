//! Gaussian process with task-conditioned neural mean and covariance functions.
//!
//! For task `d` with descriptor `r_d` the prior over its objective is
//!
//! ```text
//! f_d ~ GP( m(x, r_d),  k(g(x, r_d), g(x', r_d)) )
//! ```
//!
//! where `m` is the mean network, `g` the embedding network and `k` a
//! stationary kernel on embeddings. Observations carry Gaussian noise with
//! variance `exp(log_noise_variance)`. All networks and kernel parameters are
//! shared across tasks, so a target task is handled by conditioning on its
//! observations in closed form, with no refitting.
//!
//! Ablations switch off the descriptor input (`R`), the mean network (`M`,
//! zero mean) or the embedding network (`K`, identity embedding).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelParams};
use crate::linalg::JitteredCholesky;
use crate::nnet::{Activation, ForwardCache, MlpArch, MlpParams, ParamBlock, Parameterized};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Tolerance below zero within which a posterior variance is clamped to zero.
pub const VARIANCE_CLAMP: f64 = 1e-10;

/// Which of the three task-conditioning components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub use_descriptor: bool,
    pub use_mean_net: bool,
    pub use_embed_net: bool,
}

impl Ablation {
    pub const RMK: Ablation = Ablation::new(true, true, true);
    pub const RM: Ablation = Ablation::new(true, true, false);
    pub const RK: Ablation = Ablation::new(true, false, true);
    pub const MK: Ablation = Ablation::new(false, true, true);
    /// Zero mean, identity embedding, no descriptor: a GP whose kernel
    /// parameters are learned on source tasks.
    pub const TGP: Ablation = Ablation::new(false, false, false);

    pub const fn new(use_descriptor: bool, use_mean_net: bool, use_embed_net: bool) -> Self {
        Self {
            use_descriptor,
            use_mean_net,
            use_embed_net,
        }
    }

    /// Parses `NGP-RMK`, `RMK`, `NGP-RM`, ..., or `TGP`.
    pub fn parse(name: &str) -> Option<Self> {
        let upper = name.trim().to_ascii_uppercase();
        if upper == "TGP" {
            return Some(Self::TGP);
        }
        let flags = upper.strip_prefix("NGP-").unwrap_or(&upper);
        if flags.is_empty() || !flags.chars().all(|c| "RMK".contains(c)) {
            return None;
        }
        Some(Self::new(flags.contains('R'), flags.contains('M'), flags.contains('K')))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::TGP {
            return f.write_str("TGP");
        }
        f.write_str("NGP-")?;
        for (on, c) in [
            (self.use_descriptor, 'R'),
            (self.use_mean_net, 'M'),
            (self.use_embed_net, 'K'),
        ] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgpConfig {
    pub ablation: Ablation,
    pub feature_dim: usize,
    pub descriptor_dim: usize,
    pub mean_arch: MlpArch,
    pub embed_arch: MlpArch,
    pub kernel: KernelKind,
    /// When false the kernel amplitude stays at its initial value.
    #[serde(default = "default_true")]
    pub learn_amplitude: bool,
    /// Subtract the task's empirical mean of `y` before conditioning.
    #[serde(default)]
    pub center_y: bool,
}

fn default_true() -> bool {
    true
}

impl NgpConfig {
    /// Default architectures: mean network `[in, 32, 32, 1]`, embedding
    /// network `[in, 32, 32]`, tanh hidden units, RBF kernel.
    pub fn new(ablation: Ablation, feature_dim: usize, descriptor_dim: usize) -> Result<Self> {
        Self::with_hidden(ablation, feature_dim, descriptor_dim, 32, Activation::Tanh)
    }

    pub fn with_hidden(
        ablation: Ablation,
        feature_dim: usize,
        descriptor_dim: usize,
        hidden: usize,
        activation: Activation,
    ) -> Result<Self> {
        let input = feature_dim + if ablation.use_descriptor { descriptor_dim } else { 0 };
        let cfg = Self {
            ablation,
            feature_dim,
            descriptor_dim,
            mean_arch: MlpArch::new(vec![input, hidden, hidden, 1], activation)?,
            embed_arch: MlpArch::new(vec![input, hidden, hidden], activation)?,
            kernel: KernelKind::Rbf,
            learn_amplitude: true,
            center_y: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim
            + if self.ablation.use_descriptor {
                self.descriptor_dim
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if self.ablation.use_descriptor && self.descriptor_dim == 0 {
            return Err(Error::Config(
                "descriptor input requested but descriptor dimension is 0".into(),
            ));
        }
        self.mean_arch.validate()?;
        self.embed_arch.validate()?;
        let input = self.input_dim();
        if self.ablation.use_mean_net && (self.mean_arch.input_dim() != input || self.mean_arch.output_dim() != 1) {
            return Err(Error::Config(format!(
                "mean network must map {input} inputs to 1 output, arch is {:?}",
                self.mean_arch.layer_sizes
            )));
        }
        if self.ablation.use_embed_net && self.embed_arch.input_dim() != input {
            return Err(Error::Config(format!(
                "embedding network must take {input} inputs, arch is {:?}",
                self.embed_arch.layer_sizes
            )));
        }
        Ok(())
    }

    /// Network input for one observation: `x ⧺ r` when the descriptor is
    /// used, `x` otherwise.
    pub fn task_input(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.feature_dim
            )));
        }
        if !self.ablation.use_descriptor {
            return Ok(x.to_vec());
        }
        if r.is_empty() || r.len() != self.descriptor_dim {
            return Err(Error::Config(format!(
                "descriptor of length {} required, got {}",
                self.descriptor_dim,
                r.len()
            )));
        }
        let mut u = Vec::with_capacity(x.len() + r.len());
        u.extend_from_slice(x);
        u.extend_from_slice(r);
        Ok(u)
    }
}

/// Predictive mean and latent-function variance per query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// Variance of a new noisy observation rather than of the latent function.
    pub fn predictive_variance(&self, noise_variance: f64) -> Vec<f64> {
        self.variance.iter().map(|v| v + noise_variance).collect()
    }
}

/// Conditions a Gaussian prior on noisy observations.
///
/// `k_obs` is the prior covariance among observed points (noise is added
/// here), `k_cross` is `n_obs × n_query`, `resid` is `y − prior mean` at the
/// observed points.
pub fn gaussian_condition(
    k_obs: &DMatrix<f64>,
    noise_variance: f64,
    resid: &DVector<f64>,
    k_cross: &DMatrix<f64>,
    prior_mean: &[f64],
    prior_var: &[f64],
    context: &str,
) -> Result<Posterior> {
    let n = k_obs.nrows();
    if n == 0 {
        return Ok(Posterior {
            mean: prior_mean.to_vec(),
            variance: prior_var.to_vec(),
        });
    }
    let mut c = k_obs.clone();
    for i in 0..n {
        c[(i, i)] += noise_variance;
    }
    let chol = JitteredCholesky::new(&c, context)?;
    let alpha = chol.solve(resid);
    let mean_shift = k_cross.tr_mul(&alpha);
    let v = chol.solve_lower(k_cross);
    let mut mean = Vec::with_capacity(prior_mean.len());
    let mut variance = Vec::with_capacity(prior_mean.len());
    for (j, (&pm, &pv)) in prior_mean.iter().zip(prior_var).enumerate() {
        mean.push(pm + mean_shift[j]);
        let var = pv - v.column(j).norm_squared();
        if var < -VARIANCE_CLAMP {
            return Err(Error::numeric(
                context,
                format!("posterior variance {var:e} at query {j} is negative"),
            ));
        }
        variance.push(var.max(0.0));
    }
    Ok(Posterior { mean, variance })
}

/// Mean values, embeddings and prior variances for a set of inputs of one task.
#[derive(Debug, Clone)]
pub struct EmbeddedInputs {
    pub mean: Vec<f64>,
    pub embedding: DMatrix<f64>,
    pub prior_var: Vec<f64>,
}

impl EmbeddedInputs {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> EmbeddedInputs {
        EmbeddedInputs {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            embedding: self.embedding.select_rows(idx),
            prior_var: idx.iter().map(|&i| self.prior_var[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgpModel {
    pub config: NgpConfig,
    pub mean_params: Option<MlpParams>,
    pub embed_params: Option<MlpParams>,
    pub kernel_params: KernelParams,
    pub log_noise_variance: f64,
}

/// Gradient of the log marginal likelihood, shaped like [`NgpModel`]'s
/// trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NgpGradient {
    pub mean: Option<MlpParams>,
    pub embed: Option<MlpParams>,
    pub log_amplitude: f64,
    pub log_lengthscale: f64,
    pub log_noise_variance: f64,
}

impl NgpGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(m) = &self.mean {
            v.extend(m.to_flat());
        }
        if let Some(e) = &self.embed {
            v.extend(e.to_flat());
        }
        v.extend([self.log_amplitude, self.log_lengthscale, self.log_noise_variance]);
        v
    }
}

impl NgpModel {
    pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-2;

    /// Fresh parameters: Glorot-initialized networks for the active
    /// components, unit amplitude and lengthscale, noise variance 1e-2.
    pub fn init(config: NgpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mean_params = if config.ablation.use_mean_net {
            Some(MlpParams::init(&config.mean_arch, seed)?)
        } else {
            None
        };
        let embed_params = if config.ablation.use_embed_net {
            Some(MlpParams::init(
                &config.embed_arch,
                seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
            )?)
        } else {
            None
        };
        let kernel_params = match config.kernel {
            KernelKind::Rbf => KernelParams::rbf(1.0, 1.0),
            KernelKind::Linear => KernelParams::linear(1.0),
        };
        Ok(Self {
            config,
            mean_params,
            embed_params,
            kernel_params,
            log_noise_variance: Self::DEFAULT_NOISE_VARIANCE.ln(),
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let a = self.config.ablation;
        match (&self.mean_params, a.use_mean_net) {
            (Some(p), true) if p.arch() == &self.config.mean_arch => {}
            (None, false) => {}
            _ => return Err(Error::Config("mean network does not match the config".into())),
        }
        match (&self.embed_params, a.use_embed_net) {
            (Some(p), true) if p.arch() == &self.config.embed_arch => {}
            (None, false) => {}
            _ => return Err(Error::Config("embedding network does not match the config".into())),
        }
        if self.kernel_params.kind != self.config.kernel {
            return Err(Error::Config("kernel kind does not match the config".into()));
        }
        if !self.log_noise_variance.is_finite()
            || !self.kernel_params.log_amplitude.is_finite()
            || !self.kernel_params.log_lengthscale.is_finite()
        {
            return Err(Error::Config("non-finite kernel or noise parameter".into()));
        }
        Ok(())
    }

    pub fn task_input(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        self.config.task_input(x, r)
    }

    fn inputs(&self, x: &DMatrix<f64>, r: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.task_input(&row, r)
            })
            .collect()
    }

    /// Mean function at every row of `x`; zeros when the mean network is off.
    pub fn mean_vector(&self, x: &DMatrix<f64>, r: &[f64]) -> Result<DVector<f64>> {
        let inputs = self.inputs(x, r)?;
        match &self.mean_params {
            None => Ok(DVector::zeros(inputs.len())),
            Some(net) => {
                let vals = inputs
                    .iter()
                    .map(|u| net.predict(u).map(|o| o[0]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(vals))
            }
        }
    }

    /// Embedding of every row of `x`; the task input itself when the
    /// embedding network is off.
    pub fn embed_matrix(&self, x: &DMatrix<f64>, r: &[f64]) -> Result<DMatrix<f64>> {
        let inputs = self.inputs(x, r)?;
        let rows = match &self.embed_params {
            None => inputs,
            Some(net) => inputs
                .iter()
                .map(|u| net.predict(u).map(|o| o.as_slice().to_vec()))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(rows_to_matrix(&rows, self.embedding_dim()))
    }

    pub fn embedding_dim(&self) -> usize {
        if self.config.ablation.use_embed_net {
            self.config.embed_arch.output_dim()
        } else {
            self.config.input_dim()
        }
    }

    /// Precomputes what conditioning needs for a fixed set of inputs.
    pub fn embed_inputs(&self, x: &DMatrix<f64>, r: &[f64]) -> Result<EmbeddedInputs> {
        let mean = self.mean_vector(x, r)?;
        let embedding = self.embed_matrix(x, r)?;
        let prior_var = self.kernel_params.diag(&embedding);
        Ok(EmbeddedInputs {
            mean: mean.as_slice().to_vec(),
            embedding,
            prior_var,
        })
    }

    /// Log marginal likelihood of one task's observations.
    pub fn log_marginal_likelihood(&self, task: &Task) -> Result<f64> {
        self.check_task(task)?;
        let mean = self.mean_vector(&task.x, &task.r)?;
        let z = self.embed_matrix(&task.x, &task.r)?;
        let (chol, resid) = self.factor(task, &mean, &z)?;
        let alpha = chol.solve(&resid);
        Ok(-0.5 * (task.n_obs() as f64 * LN_2PI + chol.log_det() + resid.dot(&alpha)))
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.n_obs() == 0 {
            return Err(Error::Config(format!("task `{}` has no observations", task.id)));
        }
        if task.x.nrows() != task.n_obs() {
            return Err(Error::Shape(format!("task `{}`: x and y lengths differ", task.id)));
        }
        Ok(())
    }

    fn residual(&self, y: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
        let mut resid = y - mean;
        if self.config.center_y {
            let c = y.mean();
            resid.add_scalar_mut(-c);
        }
        resid
    }

    fn factor(&self, task: &Task, mean: &DVector<f64>, z: &DMatrix<f64>) -> Result<(JitteredCholesky, DVector<f64>)> {
        let mut c = self.kernel_params.gram(z);
        let noise = self.noise_variance();
        for i in 0..c.nrows() {
            c[(i, i)] += noise;
        }
        let chol = JitteredCholesky::new(&c, &format!("task `{}`", task.id))?;
        Ok((chol, self.residual(&task.y, mean)))
    }

    /// Log marginal likelihood and its gradient with respect to every
    /// trainable parameter.
    ///
    /// With `C = K + σ²I`, `α = C⁻¹(y − m)` and `W = ½(ααᵀ − C⁻¹)`:
    /// `∂L/∂m = α`, `∂L/∂K = W`, `∂L/∂σ² = tr W`. The kernel term is pushed
    /// through the kernel's input derivatives into the embedding network.
    pub fn lml_gradient(&self, task: &Task) -> Result<(f64, NgpGradient)> {
        self.check_task(task)?;
        let inputs = self.inputs(&task.x, &task.r)?;
        let n = inputs.len();

        let mut mean_caches: Vec<ForwardCache> = Vec::new();
        let mean = match &self.mean_params {
            None => DVector::zeros(n),
            Some(net) => {
                let mut vals = Vec::with_capacity(n);
                for u in &inputs {
                    let (o, c) = net.forward(u)?;
                    vals.push(o[0]);
                    mean_caches.push(c);
                }
                DVector::from_vec(vals)
            }
        };
        let mut embed_caches: Vec<ForwardCache> = Vec::new();
        let z_rows: Vec<Vec<f64>> = match &self.embed_params {
            None => inputs.clone(),
            Some(net) => {
                let mut rows = Vec::with_capacity(n);
                for u in &inputs {
                    let (o, c) = net.forward(u)?;
                    rows.push(o.as_slice().to_vec());
                    embed_caches.push(c);
                }
                rows
            }
        };
        let z = rows_to_matrix(&z_rows, self.embedding_dim());

        let (chol, resid) = self.factor(task, &mean, &z)?;
        let alpha = chol.solve(&resid);
        let lml = -0.5 * (n as f64 * LN_2PI + chol.log_det() + resid.dot(&alpha));

        let c_inv = chol.inverse();
        // W = ½(ααᵀ − C⁻¹)
        let mut w = &alpha * alpha.transpose();
        w -= &c_inv;
        w *= 0.5;

        let mean_grad = match &self.mean_params {
            None => None,
            Some(net) => {
                let mut g = MlpParams::zeros(net.arch())?;
                for (i, cache) in mean_caches.iter().enumerate() {
                    net.backward_accumulate(cache, &[alpha[i]], &mut g)?;
                }
                Some(g)
            }
        };

        let (dz, d_la, d_ll) = self.kernel_backward(&z, &w);
        let embed_grad = match &self.embed_params {
            None => None,
            Some(net) => {
                let mut g = MlpParams::zeros(net.arch())?;
                for (i, cache) in embed_caches.iter().enumerate() {
                    let d: Vec<f64> = dz.row(i).iter().copied().collect();
                    net.backward_accumulate(cache, &d, &mut g)?;
                }
                Some(g)
            }
        };
        let trace_w = w.trace();
        Ok((
            lml,
            NgpGradient {
                mean: mean_grad,
                embed: embed_grad,
                log_amplitude: if self.config.learn_amplitude { d_la } else { 0.0 },
                log_lengthscale: d_ll,
                log_noise_variance: trace_w * self.noise_variance(),
            },
        ))
    }

    /// Pulls `∂L/∂K = W` back to the embeddings and the kernel's
    /// log-parameters. Returns `(∂L/∂Z, ∂L/∂log amplitude, ∂L/∂log lengthscale)`.
    fn kernel_backward(&self, z: &DMatrix<f64>, w: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
        let kp = &self.kernel_params;
        let k = kp.gram(z);
        let b = w.component_mul(&k);
        let d_la = b.sum();
        match kp.kind {
            KernelKind::Rbf => {
                let ell2 = (2.0 * kp.log_lengthscale).exp();
                // ∂k(z_i, z_j)/∂z_i = −k_ij (z_i − z_j) / ℓ², and W is symmetric
                let row_sums = b.column_sum();
                let mut dz = &b * z;
                for i in 0..z.nrows() {
                    for c in 0..z.ncols() {
                        dz[(i, c)] = 2.0 * (dz[(i, c)] - row_sums[i] * z[(i, c)]) / ell2;
                    }
                }
                let n = z.nrows();
                let mut d_ll = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let d2: f64 = z
                            .row(i)
                            .iter()
                            .zip(z.row(j).iter())
                            .map(|(a, c)| (a - c) * (a - c))
                            .sum();
                        d_ll += b[(i, j)] * d2;
                    }
                }
                (dz, d_la, d_ll / ell2)
            }
            KernelKind::Linear => {
                let dz = (w * z) * (2.0 * kp.amplitude());
                (dz, d_la, 0.0)
            }
        }
    }

    /// Closed-form posterior for a target task with descriptor `r`.
    pub fn posterior(
        &self,
        r: &[f64],
        x_obs: &DMatrix<f64>,
        y_obs: &DVector<f64>,
        x_query: &DMatrix<f64>,
    ) -> Result<Posterior> {
        if x_obs.nrows() != y_obs.len() {
            return Err(Error::Shape(format!(
                "{} observed rows but {} values",
                x_obs.nrows(),
                y_obs.len()
            )));
        }
        let query = self.embed_inputs(x_query, r)?;
        if y_obs.is_empty() {
            return Ok(Posterior {
                mean: query.mean,
                variance: query.prior_var,
            });
        }
        let obs = self.embed_inputs(x_obs, r)?;
        self.condition(&obs, y_obs.as_slice(), &query)
    }

    /// Posterior at `query` given values observed at `obs`, both already embedded.
    pub fn condition(&self, obs: &EmbeddedInputs, y_obs: &[f64], query: &EmbeddedInputs) -> Result<Posterior> {
        if obs.len() != y_obs.len() {
            return Err(Error::Shape("observed inputs and values differ in length".into()));
        }
        if obs.is_empty() {
            return Ok(Posterior {
                mean: query.mean.clone(),
                variance: query.prior_var.clone(),
            });
        }
        let offset = if self.config.center_y {
            y_obs.iter().sum::<f64>() / y_obs.len() as f64
        } else {
            0.0
        };
        let resid = DVector::from_iterator(y_obs.len(), y_obs.iter().zip(&obs.mean).map(|(y, m)| y - m - offset));
        let k_obs = self.kernel_params.gram(&obs.embedding);
        let k_cross = self.kernel_params.matrix(&obs.embedding, &query.embedding)?;
        let shifted: Vec<f64> = query.mean.iter().map(|m| m + offset).collect();
        gaussian_condition(
            &k_obs,
            self.noise_variance(),
            &resid,
            &k_cross,
            &shifted,
            &query.prior_var,
            "posterior",
        )
    }

    pub fn to_checkpoint(&self, training_meta: serde_json::Value) -> NgpCheckpoint {
        NgpCheckpoint {
            config: self.config.clone(),
            mean_params: self.mean_params.clone(),
            embed_params: self.embed_params.clone(),
            kernel_params: self.kernel_params,
            log_noise_variance: self.log_noise_variance,
            training_meta,
        }
    }
}

impl Parameterized for NgpModel {
    fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        for (prefix, net) in [("mean", &self.mean_params), ("embed", &self.embed_params)] {
            if let Some(net) = net {
                blocks.extend(net.param_blocks().into_iter().map(|b| ParamBlock {
                    name: format!("{prefix}.{}", b.name),
                    len: b.len,
                }));
            }
        }
        for name in ["kernel.log_amplitude", "kernel.log_lengthscale", "log_noise_variance"] {
            blocks.push(ParamBlock {
                name: name.into(),
                len: 1,
            });
        }
        blocks
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(m) = &self.mean_params {
            v.extend(m.to_flat());
        }
        if let Some(e) = &self.embed_params {
            v.extend(e.to_flat());
        }
        v.extend([
            self.kernel_params.log_amplitude,
            self.kernel_params.log_lengthscale,
            self.log_noise_variance,
        ]);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_flat() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.n_flat()
            )));
        }
        let mut off = 0;
        for net in [&mut self.mean_params, &mut self.embed_params].into_iter().flatten() {
            let n = net.arch().n_params();
            net.set_flat(&flat[off..off + n])?;
            off += n;
        }
        self.kernel_params.log_amplitude = flat[off];
        self.kernel_params.log_lengthscale = flat[off + 1];
        self.log_noise_variance = flat[off + 2];
        Ok(())
    }
}

/// On-disk model: one JSON document, arrays row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgpCheckpoint {
    pub config: NgpConfig,
    pub mean_params: Option<MlpParams>,
    pub embed_params: Option<MlpParams>,
    pub kernel_params: KernelParams,
    pub log_noise_variance: f64,
    #[serde(default)]
    pub training_meta: serde_json::Value,
}

impl NgpCheckpoint {
    pub fn into_model(self) -> Result<NgpModel> {
        let model = NgpModel {
            config: self.config,
            mean_params: self.mean_params,
            embed_params: self.embed_params,
            kernel_params: self.kernel_params,
            log_noise_variance: self.log_noise_variance,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            location: "checkpoint".into(),
            message: e.to_string(),
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}
