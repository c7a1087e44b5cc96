//! Dense feed-forward networks with hand-written reverse mode, plus Adam.
//!
//! Weights are stored per layer as `out × in` matrices. Hidden layers use the
//! architecture's activation; the output layer is always linear.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the pre-activation and the activation output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Layer widths from input to output, and the hidden-layer activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self {
            layer_sizes,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `[input, hidden.., output]` with tanh hidden units.
    pub fn tanh(layer_sizes: &[usize]) -> Result<Self> {
        Self::new(layer_sizes.to_vec(), Activation::Tanh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated arch")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// A named, contiguous slice of a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
}

/// Anything whose trainable values can be flattened to a single vector.
///
/// `to_flat` and `set_flat` must agree on ordering with `param_blocks`.
pub trait Parameterized {
    fn param_blocks(&self) -> Vec<ParamBlock>;
    fn to_flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]) -> Result<()>;

    fn n_flat(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpParamsRepr", into = "MlpParamsRepr")]
pub struct MlpParams {
    arch: MlpArch,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Per-layer pre- and post-activations recorded by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DVector<f64>,
    pre: Vec<DVector<f64>>,
    post: Vec<DVector<f64>>,
}

impl ForwardCache {
    /// Output of the most recent forward pass.
    pub fn output(&self) -> &DVector<f64> {
        self.post.last().expect("cache has at least one layer")
    }
}

impl MlpParams {
    /// Glorot-style uniform init: weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(arch: &MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(arch.n_layers());
        let mut biases = Vec::with_capacity(arch.n_layers());
        for w in arch.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Ok(Self {
            arch: arch.clone(),
            weights,
            biases,
        })
    }

    /// Every weight and bias drawn from `U(low, high)`.
    pub fn init_uniform(arch: &MlpArch, low: f64, high: f64, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!("empty uniform range [{low}, {high}]")));
        }
        let mut weights = Vec::with_capacity(arch.n_layers());
        let mut biases = Vec::with_capacity(arch.n_layers());
        for w in arch.layer_sizes.windows(2) {
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(low..high)));
            biases.push(DVector::from_fn(w[1], |_, _| rng.random_range(low..high)));
        }
        Ok(Self {
            arch: arch.clone(),
            weights,
            biases,
        })
    }

    pub fn zeros(arch: &MlpArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            weights: arch
                .layer_sizes
                .windows(2)
                .map(|w| DMatrix::zeros(w[1], w[0]))
                .collect(),
            biases: arch.layer_sizes.windows(2).map(|w| DVector::zeros(w[1])).collect(),
        })
    }

    pub fn from_parts(arch: MlpArch, weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.n_layers() || biases.len() != arch.n_layers() {
            return Err(Error::Shape(format!(
                "{} layers expected, got {} weights and {} biases",
                arch.n_layers(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
            if w.shape() != (fan_out, fan_in) || b.len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: expected weight {fan_out}x{fan_in} and bias {fan_out}, got {}x{} and {}",
                    w.nrows(),
                    w.ncols(),
                    b.len()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(Self { arch, weights, biases })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.biases
    }

    /// Output only, without recording a cache.
    pub fn predict(&self, input: &[f64]) -> Result<DVector<f64>> {
        self.check_input(input)?;
        let mut h = DVector::from_column_slice(input);
        let last = self.arch.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = w * &h + b;
            if l < last {
                a.apply(|v| *v = self.arch.activation.apply(*v));
            }
            h = a;
        }
        Ok(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(DVector<f64>, ForwardCache)> {
        self.check_input(input)?;
        let input = DVector::from_column_slice(input);
        let n = self.arch.n_layers();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let h = if l == 0 { &input } else { &post[l - 1] };
            let a = w * h + b;
            let z = if l + 1 < n {
                a.map(|v| self.arch.activation.apply(v))
            } else {
                a.clone()
            };
            pre.push(a);
            post.push(z);
        }
        let out = post[n - 1].clone();
        Ok((out, ForwardCache { input, pre, post }))
    }

    /// Gradients of `grad_output · output` with respect to parameters and input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<(MlpParams, DVector<f64>)> {
        let mut grads = MlpParams::zeros(&self.arch)?;
        let grad_input = self.backward_accumulate(cache, grad_output, &mut grads)?;
        Ok((grads, grad_input))
    }

    /// Like [`backward`](Self::backward) but adds parameter gradients into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut MlpParams,
    ) -> Result<DVector<f64>> {
        self.check_cache(cache)?;
        if grad_output.len() != self.arch.output_dim() {
            return Err(Error::Shape(format!(
                "grad_output has length {}, network output is {}",
                grad_output.len(),
                self.arch.output_dim()
            )));
        }
        if grads.arch.layer_sizes != self.arch.layer_sizes {
            return Err(Error::Shape("gradient accumulator does not match the network".into()));
        }
        let n = self.arch.n_layers();
        let mut delta = DVector::from_column_slice(grad_output);
        for l in (0..n).rev() {
            if l + 1 < n {
                let act = self.arch.activation;
                for ((d, &a), &z) in delta.iter_mut().zip(cache.pre[l].iter()).zip(cache.post[l].iter()) {
                    *d *= act.derivative(a, z);
                }
            }
            let h = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.weights[l].ger(1.0, &delta, h, 1.0);
            grads.biases[l] += &delta;
            delta = self.weights[l].tr_mul(&delta);
        }
        Ok(delta)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let n = self.arch.n_layers();
        let consistent = cache.input.len() == self.arch.input_dim()
            && cache.pre.len() == n
            && cache.post.len() == n
            && cache
                .pre
                .iter()
                .zip(&self.arch.layer_sizes[1..])
                .all(|(p, &s)| p.len() == s);
        if consistent {
            Ok(())
        } else {
            Err(Error::Contract("forward cache was not produced by this network".into()))
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &MlpParams) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            *w += ow * scale;
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            *b += ob * scale;
        }
    }
}

impl Parameterized for MlpParams {
    fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::with_capacity(2 * self.arch.n_layers());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            blocks.push(ParamBlock {
                name: format!("layer{l}.weight"),
                len: w.len(),
            });
            blocks.push(ParamBlock {
                name: format!("layer{l}.bias"),
                len: b.len(),
            });
        }
        blocks
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.arch.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b.as_slice());
        }
        flat
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.arch.n_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network has {}",
                flat.len(),
                self.arch.n_params()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Checkpoint layout: per layer a row-major weight matrix and a bias vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpParamsRepr {
    arch: MlpArch,
    layers: Vec<LayerRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRepr {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<MlpParams> for MlpParamsRepr {
    fn from(p: MlpParams) -> Self {
        let layers = p
            .weights
            .iter()
            .zip(&p.biases)
            .map(|(w, b)| LayerRepr {
                weight: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
                bias: b.iter().copied().collect(),
            })
            .collect();
        Self { arch: p.arch, layers }
    }
}

impl TryFrom<MlpParamsRepr> for MlpParams {
    type Error = Error;

    fn try_from(r: MlpParamsRepr) -> Result<Self> {
        r.arch.validate()?;
        let mut weights = Vec::with_capacity(r.layers.len());
        let mut biases = Vec::with_capacity(r.layers.len());
        for (l, layer) in r.layers.into_iter().enumerate() {
            let rows = layer.weight.len();
            let cols = layer.weight.first().map_or(0, Vec::len);
            if layer.weight.iter().any(|row| row.len() != cols) {
                return Err(Error::Shape(format!("layer {l}: ragged weight matrix")));
            }
            let flat: Vec<f64> = layer.weight.into_iter().flatten().collect();
            weights.push(DMatrix::from_row_slice(rows, cols, &flat));
            biases.push(DVector::from_vec(layer.bias));
        }
        MlpParams::from_parts(r.arch, weights, biases)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment estimates for Adam over a flat parameter vector. Minimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update of `params` along `-grads`.
    ///
    /// `blocks` names consecutive slices of the vectors and is used to report
    /// which block carried a non-finite gradient; pass an empty slice to
    /// treat the whole vector as one block.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], blocks: &[ParamBlock]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "Adam tracks {} parameters, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(
                locate_block(blocks, bad),
                format!("non-finite gradient entry {}", grads[bad]),
            ));
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

fn locate_block(blocks: &[ParamBlock], index: usize) -> String {
    let mut start = 0;
    for b in blocks {
        if index < start + b.len {
            return format!("parameter block `{}` (entry {})", b.name, index - start);
        }
        start += b.len;
    }
    format!("parameter entry {index}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_unit(w: f64, b: f64) -> MlpParams {
        let arch = MlpArch::new(vec![1, 1], Activation::Tanh).unwrap();
        MlpParams::from_parts(
            arch,
            vec![DMatrix::from_element(1, 1, w)],
            vec![DVector::from_element(1, b)],
        )
        .unwrap()
    }

    #[test]
    fn init_zero_biases_and_shapes() {
        let arch = MlpArch::tanh(&[1, 32, 32, 1]).unwrap();
        let p = MlpParams::init(&arch, 7).unwrap();
        assert!(p.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let arch = MlpArch::tanh(&[2, 4, 1]).unwrap();
        let p = MlpParams::init(&arch, 7).unwrap();
        let shapes: Vec<_> = p.weights().iter().map(|w| w.shape()).collect();
        assert_eq!(shapes, vec![(4, 2), (1, 4)]);
        for w in p.weights() {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let arch = MlpArch::tanh(&[3, 8, 2]).unwrap();
        let a = MlpParams::init(&arch, 11).unwrap();
        let b = MlpParams::init(&arch, 11).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let c = MlpParams::init(&arch, 12).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(matches!(MlpArch::tanh(&[3]), Err(Error::Config(_))));
        assert!(matches!(MlpArch::tanh(&[3, 0, 1]), Err(Error::Config(_))));
        let bad = MlpArch {
            layer_sizes: vec![],
            activation: Activation::Tanh,
        };
        assert!(MlpParams::init(&bad, 0).is_err());
    }

    #[test]
    fn single_linear_layer() {
        let p = linear_unit(2.0, 0.5);
        let (out, cache) = p.forward(&[3.0]).unwrap();
        assert_eq!(out.as_slice(), &[6.5]);
        let (g, gin) = p.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.weights()[0][(0, 0)], 3.0);
        assert_eq!(g.biases()[0][0], 1.0);
        assert_eq!(gin.as_slice(), &[2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = MlpArch::tanh(&[3, 5, 5, 2]).unwrap();
        let p = MlpParams::zeros(&arch).unwrap();
        let (out, _) = p.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_grad_output_gives_zero_gradients() {
        let arch = MlpArch::tanh(&[3, 5, 2]).unwrap();
        let p = MlpParams::init(&arch, 3).unwrap();
        let (_, cache) = p.forward(&[0.3, 0.1, -0.7]).unwrap();
        let (g, gin) = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_cache_errors() {
        let arch = MlpArch::tanh(&[3, 5, 2]).unwrap();
        let p = MlpParams::init(&arch, 3).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape(_))));
        let other = MlpParams::init(&MlpArch::tanh(&[3, 4, 2]).unwrap(), 3).unwrap();
        let (_, cache) = other.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(p.backward(&cache, &[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn tanh_hidden_outputs_are_bounded() {
        let arch = MlpArch::tanh(&[2, 16, 16, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init_uniform(&arch, -3.0, 3.0, &mut rng).unwrap();
        let (_, cache) = p.forward(&[4.0, -5.0]).unwrap();
        for h in &cache.post[..2] {
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn flat_round_trip_and_serde() {
        let arch = MlpArch::tanh(&[2, 3, 1]).unwrap();
        let p = MlpParams::init(&arch, 5).unwrap();
        let mut q = MlpParams::zeros(&arch).unwrap();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let json = serde_json::to_string(&p).unwrap();
        let back: MlpParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        assert_eq!(p.n_flat(), arch.n_params());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = [0.0];
        s.step(&mut p, &[1.0], &[]).unwrap();
        assert!((p[0] + 1e-2).abs() < 1e-9);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..5 {
            s.step(&mut p, &[0.0; 3], &[]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.step_count(), 5);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut w = [0.0];
        for _ in 0..1000 {
            let g = 2.0 * (w[0] - 3.0);
            s.step(&mut w, &[g], &[]).unwrap();
            assert!(s.second_moment()[0] >= 0.0);
        }
        assert!((w[0] - 3.0).abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn adam_reports_nonfinite_block() {
        let arch = MlpArch::tanh(&[2, 2, 1]).unwrap();
        let p = MlpParams::init(&arch, 0).unwrap();
        let mut flat = p.to_flat();
        let mut grads = vec![0.0; flat.len()];
        grads[4] = f64::NAN;
        let mut s = AdamState::new(flat.len(), AdamConfig::default());
        let err = s.step(&mut flat, &grads, &p.param_blocks()).unwrap_err();
        assert!(err.to_string().contains("layer0.bias"), "{err}");
        assert_eq!(s.step_count(), 0);
    }
}
