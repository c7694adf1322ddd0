//! Minimal feedforward network engine.
//!
//! Dense layers, per-layer activations, inverted dropout after the first
//! hidden layer, an optional non-affine batch normalization on the output,
//! exact reverse-mode gradients and Adam. Batches are row-major: one sample
//! per row.
//!
//! Conventions:
//! - weights are initialised fan-in uniform, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
//!   for both weights and biases;
//! - the ReLU derivative at exactly zero is 0;
//! - `backward` receives `dL/d(output)` for the scalar loss `L`, so any batch
//!   averaging is already folded into the output gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{sigmoid, softplus, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Linear => z,
            Activation::Relu => {
                if z < F::zero() {
                    F::zero()
                } else {
                    z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Applies the activation to every element in place.
    fn apply_inplace<F: Scalar>(self, z: &mut Array2<F>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| if v < F::zero() { F::zero() } else { v }),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softplus => z.mapv_inplace(softplus),
        }
    }

    /// Multiplies `g` by the derivative at the pre-activations `z`.
    fn scale_by_derivative<F: Scalar>(self, g: &mut Array2<F>, z: &Array2<F>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => Zip::from(g).and(z).for_each(|gv, &zv| {
                if zv <= F::zero() {
                    *gv = F::zero();
                }
            }),
            Activation::Sigmoid => Zip::from(g).and(z).for_each(|gv, &zv| {
                let a = sigmoid(zv);
                *gv = *gv * a * (F::one() - a);
            }),
            Activation::Softplus => Zip::from(g).and(z).for_each(|gv, &zv| {
                *gv = *gv * sigmoid(zv);
            }),
        }
    }
}

/// Layer layout of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Inverted-dropout rate applied after the first hidden layer only.
    pub dropout_rate: f64,
    /// Non-affine batch normalization applied to the output.
    pub output_batchnorm: bool,
}

impl MlpSpec {
    /// Estimator network: `input -> 100 ReLU -> dropout 0.3 -> 100 ReLU -> 1 head`.
    pub fn discriminator(input_dim: usize, head: Activation) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![100, 100],
            output_dim: 1,
            hidden_activation: Activation::Relu,
            output_activation: head,
            dropout_rate: 0.3,
            output_batchnorm: false,
        }
    }

    /// Encoder network: `input -> 3 x (100 ReLU) -> output_dim linear -> batchnorm`.
    pub fn generator(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![100, 100, 100],
            output_dim,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
            dropout_rate: 0.0,
            output_batchnorm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig("hidden_dims must be non-empty".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("all layer dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("Adam epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Gradient (or moment) buffers for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<F> {
    /// Shape `(fan_out, fan_in)`.
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> LayerGrads<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Gradients of a scalar loss with respect to every dense-layer parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<F> {
    pub layers: Vec<LayerGrads<F>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| LayerGrads::zeros(i, o))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    pub fn max_abs(&self) -> F {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }

    /// Flat index access in the same order as [`Mlp::param`].
    pub fn get(&self, mut idx: usize) -> Option<F> {
        for l in &self.layers {
            if idx < l.weights.len() {
                let c = l.weights.ncols();
                return Some(l.weights[[idx / c, idx % c]]);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return Some(l.bias[idx]);
            }
            idx -= l.bias.len();
        }
        None
    }
}

#[derive(Debug, Clone)]
struct Dense<F> {
    weights: Array2<F>,
    bias: Array1<F>,
}

#[derive(Debug, Clone)]
struct BatchNorm<F> {
    running_mean: Array1<F>,
    running_var: Array1<F>,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone)]
struct AdamState<F> {
    m: Vec<LayerGrads<F>>,
    v: Vec<LayerGrads<F>>,
    step: u64,
}

/// Forward-pass mode.
pub enum Mode<'a> {
    /// Dropout active, batchnorm uses (and updates) batch statistics.
    Train(&'a mut dyn RngCore),
    /// Dropout is identity, batchnorm uses running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache<F> {
    normalized: Array2<F>,
    inv_std: Array1<F>,
    batch_stats: bool,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    layer_inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
    dropout_mask: Option<Array2<F>>,
    bn: Option<BnCache<F>>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].nrows()
    }

    /// Hidden pre-activations, one matrix per hidden layer.
    pub fn hidden_pre_activations(&self) -> &[Array2<F>] {
        &self.pre_activations[..self.pre_activations.len() - 1]
    }
}

/// Inverted-dropout mask: 0 with probability `p`, else `1/(1-p)`.
fn dropout_mask_for<F: Scalar>(dim: ndarray::Ix2, p: f64, rng: &mut dyn RngCore) -> Array2<F> {
    let keep = F::of(1.0 / (1.0 - p));
    let threshold = (p * 4_294_967_296.0) as u64;
    let mut bytes = vec![0u8; 4 * dim[0] * dim[1]];
    rng.fill_bytes(&mut bytes);
    let values = bytes
        .chunks_exact(4)
        .map(|c| {
            if (u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as u64) < threshold {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    Array2::from_shape_vec(dim, values).expect("mask length matches shape")
}

/// A multilayer perceptron with its Adam state.
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    spec: MlpSpec,
    layers: Vec<Dense<F>>,
    batchnorm: Option<BatchNorm<F>>,
    adam: AdamState<F>,
    failed: bool,
}

impl<F: Scalar> Mlp<F> {
    /// Seeded fan-in uniform initialisation. Identical seeds give
    /// bit-identical models.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || F::of(rng.gen_range(-bound..bound));
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
                let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
                Dense { weights, bias }
            })
            .collect();
        let batchnorm = spec.output_batchnorm.then(|| BatchNorm {
            running_mean: Array1::zeros(spec.output_dim),
            running_var: Array1::ones(spec.output_dim),
        });
        let adam = AdamState {
            m: ParamGrads::zeros_like(&spec).layers,
            v: ParamGrads::zeros_like(&spec).layers,
            step: 0,
        };
        Ok(Self {
            spec,
            layers,
            batchnorm,
            adam,
            failed: false,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn mark_failed(&mut self) {
        self.failed = true;
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }

    /// `(weights, bias)` of dense layer `i`; weights are `(fan_out, fan_in)`.
    pub fn layer(&self, i: usize) -> (&Array2<F>, &Array1<F>) {
        let l = &self.layers[i];
        (&l.weights, &l.bias)
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut Array2<F>, &mut Array1<F>) {
        let l = &mut self.layers[i];
        (&mut l.weights, &mut l.bias)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Running `(mean, var)` of the output batchnorm, if present.
    pub fn batchnorm_stats(&self) -> Option<(&Array1<F>, &Array1<F>)> {
        self.batchnorm
            .as_ref()
            .map(|bn| (&bn.running_mean, &bn.running_var))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    fn param_slot(&mut self, mut idx: usize) -> Option<&mut F> {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                let c = l.weights.ncols();
                return Some(&mut l.weights[[idx / c, idx % c]]);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return Some(&mut l.bias[idx]);
            }
            idx -= l.bias.len();
        }
        None
    }

    /// Flat parameter access: each layer's weights (row-major) then its bias.
    pub fn param(&self, mut idx: usize) -> Option<F> {
        for l in &self.layers {
            if idx < l.weights.len() {
                let c = l.weights.ncols();
                return Some(l.weights[[idx / c, idx % c]]);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return Some(l.bias[idx]);
            }
            idx -= l.bias.len();
        }
        None
    }

    pub fn set_param(&mut self, idx: usize, value: F) -> Result<()> {
        let slot = self
            .param_slot(idx)
            .ok_or_else(|| Error::InvalidInput(format!("parameter index {idx} out of range")))?;
        *slot = value;
        Ok(())
    }

    /// Forward pass over a batch of row vectors.
    ///
    /// Non-finite outputs are returned as-is; callers feed them into failure
    /// accounting.
    pub fn forward(
        &mut self,
        inputs: ArrayView2<F>,
        mode: Mode<'_>,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match input_dim {}",
                inputs.ncols(),
                self.spec.input_dim
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Shape("empty input batch".into()));
        }
        let (mut rng, train) = match mode {
            Mode::Train(r) => (Some(r), true),
            Mode::Eval => (None, false),
        };
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut dropout_mask = None;

        let mut h = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == n_layers;
            let act = if last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            let mut z = h.dot(&layer.weights.t());
            z += &layer.bias;
            let mut a = z.clone();
            act.apply_inplace(&mut a);
            if i == 0 && !last && train && self.spec.dropout_rate > 0.0 {
                let r = rng.as_mut().expect("train mode carries an rng");
                let mask = dropout_mask_for(a.raw_dim(), self.spec.dropout_rate, &mut **r);
                a *= &mask;
                dropout_mask = Some(mask);
            }
            layer_inputs.push(std::mem::replace(&mut h, a));
            pre_activations.push(z);
        }

        let mut bn_cache = None;
        if let Some(bn) = self.batchnorm.as_mut() {
            let eps = F::of(BN_EPSILON);
            let (mu, var) = if train {
                let n = h.nrows();
                let mu = h.mean_axis(Axis(0)).expect("non-empty batch");
                let var = h.var_axis(Axis(0), F::zero());
                let momentum = F::of(BN_MOMENTUM);
                let unbiased = if n > 1 {
                    &var * F::of(n as f64 / (n as f64 - 1.0))
                } else {
                    var.clone()
                };
                bn.running_mean = &bn.running_mean * (F::one() - momentum) + &mu * momentum;
                bn.running_var = &bn.running_var * (F::one() - momentum) + &unbiased * momentum;
                (mu, var)
            } else {
                (bn.running_mean.clone(), bn.running_var.clone())
            };
            let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
            let normalized = (&h - &mu) * &inv_std;
            h = normalized.clone();
            bn_cache = Some(BnCache {
                normalized,
                inv_std,
                batch_stats: train,
            });
        }

        Ok((
            h,
            ForwardCache {
                layer_inputs,
                pre_activations,
                dropout_mask,
                bn: bn_cache,
            },
        ))
    }

    /// Eval-mode forward without a cache.
    pub fn predict(&self, inputs: ArrayView2<F>) -> Result<Array2<F>> {
        let mut scratch = self.clone();
        scratch.forward(inputs, Mode::Eval).map(|(out, _)| out)
    }

    /// Reverse-mode gradients. Returns parameter gradients and the gradient
    /// with respect to the inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        output_grads: ArrayView2<F>,
    ) -> Result<(ParamGrads<F>, Array2<F>)> {
        let n = cache.batch_size();
        if output_grads.dim() != (n, self.spec.output_dim) {
            return Err(Error::Shape(format!(
                "output gradient shape {:?} does not match ({}, {})",
                output_grads.dim(),
                n,
                self.spec.output_dim
            )));
        }
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::Shape("cache does not belong to this model".into()));
        }

        let mut g = output_grads.to_owned();
        if let Some(bn) = &cache.bn {
            g = if bn.batch_stats {
                // dz = inv_std / n * (n*g - sum(g) - xhat * sum(g*xhat))
                let nf = F::of(n as f64);
                let sum_g = g.sum_axis(Axis(0));
                let sum_gx = (&g * &bn.normalized).sum_axis(Axis(0));
                let inner = &g * nf - &sum_g - &(&bn.normalized * &sum_gx);
                inner * &bn.inv_std / nf
            } else {
                g * &bn.inv_std
            };
        }

        let n_layers = self.layers.len();
        let mut grads = Vec::with_capacity(n_layers);
        for i in (0..n_layers).rev() {
            let act = if i + 1 == n_layers {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            act.scale_by_derivative(&mut g, &cache.pre_activations[i]);
            let weights = g.t().dot(&cache.layer_inputs[i]);
            let bias = g.sum_axis(Axis(0));
            let next = g.dot(&self.layers[i].weights);
            grads.push(LayerGrads { weights, bias });
            g = next;
            // the dropout mask sits between layer 0 and layer 1
            if i == 1 {
                if let Some(mask) = &cache.dropout_mask {
                    g *= mask;
                }
            }
        }
        grads.reverse();
        Ok((ParamGrads { layers: grads }, g))
    }

    /// One bias-corrected Adam update.
    ///
    /// Non-finite gradients mark the model failed and leave the parameters
    /// untouched.
    pub fn adam_step(&mut self, grads: &ParamGrads<F>, cfg: &AdamConfig) -> Result<()> {
        if self.failed {
            return Err(Error::ModelFailed);
        }
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.dim() != l.bias.dim())
        {
            return Err(Error::Shape("gradient shapes do not match the model".into()));
        }
        if !grads.all_finite() {
            self.failed = true;
            return Err(Error::NonFinite("gradient".into()));
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let b1 = F::of(cfg.beta1);
        let b2 = F::of(cfg.beta2);
        let c1 = F::one() - F::of(cfg.beta1.powi(t));
        let c2 = F::one() - F::of(cfg.beta2.powi(t));
        let lr = F::of(cfg.learning_rate);
        let eps = F::of(cfg.epsilon);
        let update = |p: &mut F, m: &mut F, v: &mut F, g: &F| {
            *m = b1 * *m + (F::one() - b1) * *g;
            *v = b2 * *v + (F::one() - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.adam.m)
            .zip(&mut self.adam.v)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        if !self.params_finite() {
            self.failed = true;
            return Err(Error::NonFinite("parameter after update".into()));
        }
        Ok(())
    }

    /// Versioned JSON parameter dump.
    pub fn to_json(&self) -> String {
        let dump = ModelDump {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDump {
                    weights: l
                        .weights
                        .outer_iter()
                        .map(|row| row.iter().map(|v| v.as_f64()).collect())
                        .collect(),
                    bias: l.bias.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
            batchnorm: self.batchnorm.as_ref().map(|bn| BatchNormDump {
                running_mean: bn.running_mean.iter().map(|v| v.as_f64()).collect(),
                running_var: bn.running_var.iter().map(|v| v.as_f64()).collect(),
            }),
        };
        serde_json::to_string_pretty(&dump).expect("model dump serializes")
    }

    /// Restores parameters and batchnorm statistics; optimizer state starts fresh.
    pub fn from_json(text: &str) -> Result<Self> {
        let dump: ModelDump = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("model dump: {e}")))?;
        if dump.format != MODEL_FORMAT || dump.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model dump {} v{}",
                dump.format, dump.version
            )));
        }
        let mut model = Self::new(dump.spec, 0)?;
        if dump.layers.len() != model.layers.len() {
            return Err(Error::Shape("layer count mismatch in model dump".into()));
        }
        for (layer, d) in model.layers.iter_mut().zip(&dump.layers) {
            let (o, i) = layer.weights.dim();
            if d.weights.len() != o || d.weights.iter().any(|r| r.len() != i) || d.bias.len() != o
            {
                return Err(Error::Shape("layer shape mismatch in model dump".into()));
            }
            for (r, row) in d.weights.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    layer.weights[[r, c]] = F::of(v);
                }
            }
            for (b, &v) in d.bias.iter().enumerate() {
                layer.bias[b] = F::of(v);
            }
        }
        match (model.batchnorm.as_mut(), dump.batchnorm) {
            (Some(bn), Some(d)) => {
                if d.running_mean.len() != bn.running_mean.len()
                    || d.running_var.len() != bn.running_var.len()
                {
                    return Err(Error::Shape("batchnorm shape mismatch in model dump".into()));
                }
                bn.running_mean = d.running_mean.iter().map(|&v| F::of(v)).collect();
                bn.running_var = d.running_var.iter().map(|&v| F::of(v)).collect();
            }
            (None, None) => {}
            _ => return Err(Error::Shape("batchnorm presence mismatch".into())),
        }
        Ok(model)
    }
}

/// JSON layout of a dumped model. Weight rows are output units.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDump {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<LayerDump>,
    pub batchnorm: Option<BatchNormDump>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayerDump {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchNormDump {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Gradients below this magnitude are compared in absolute terms.
const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub const MODEL_FORMAT: &str = "mimcap-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation moved a ReLU pre-activation across zero;
    /// central differences are meaningless there.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients with central finite differences on every
/// parameter.
///
/// `loss` maps a batch of outputs to `(L, dL/d outputs)`. With
/// `dropout_seed = Some(s)` the pass runs in train mode with a mask drawn from
/// `s` for every evaluation; `None` runs in eval mode.
pub fn grad_check<F, L>(
    model: &Mlp<F>,
    inputs: ArrayView2<F>,
    loss: L,
    dropout_seed: Option<u64>,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Scalar,
    L: Fn(ArrayView2<F>) -> (F, Array2<F>),
{
    if model.param_count() == 0 {
        return Err(Error::InvalidInput("model has no parameters".into()));
    }
    if inputs.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let run = |m: &mut Mlp<F>| -> Result<(Array2<F>, ForwardCache<F>)> {
        match dropout_seed {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                m.forward(inputs, Mode::Train(&mut rng))
            }
            None => m.forward(inputs, Mode::Eval),
        }
    };
    let relu_signs = |c: &ForwardCache<F>| -> Vec<bool> {
        if model.spec.hidden_activation != Activation::Relu {
            return Vec::new();
        }
        c.hidden_pre_activations()
            .iter()
            .flat_map(|z| z.iter().map(|v| *v > F::zero()))
            .collect()
    };

    let mut base = model.clone();
    let (out, cache) = run(&mut base)?;
    let (_, dout) = loss(out.view());
    let (analytic, _) = model.backward(&cache, dout.view())?;
    let base_signs = relu_signs(&cache);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = model.clone();
    for idx in 0..model.param_count() {
        let p0 = model.param(idx).expect("index in range");
        let h = F::of(step);
        probe.set_param(idx, p0 + h)?;
        let (out_p, cache_p) = run(&mut probe)?;
        probe.set_param(idx, p0 - h)?;
        let (out_m, cache_m) = run(&mut probe)?;
        probe.set_param(idx, p0)?;
        if relu_signs(&cache_p) != base_signs || relu_signs(&cache_m) != base_signs {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (loss(out_p.view()).0 - loss(out_m.view()).0).as_f64() / (2.0 * step);
        let a = analytic.get(idx).expect("index in range").as_f64();
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.5..1.5))
    }

    fn half_sum_squares(out: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let n = out.nrows() as f64;
        (out.iter().map(|v| v * v).sum::<f64>() / (2.0 * n), out.to_owned() / n)
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::discriminator(2, Activation::Linear);
        let a = Mlp::<f64>::new(spec.clone(), 7).unwrap();
        let b = Mlp::<f64>::new(spec, 7).unwrap();
        for i in 0..a.num_layers() {
            assert_eq!(a.layer(i), b.layer(i));
        }
    }

    #[test]
    fn empty_hidden_dims_rejected() {
        let mut spec = MlpSpec::discriminator(2, Activation::Linear);
        spec.hidden_dims.clear();
        assert!(Mlp::<f64>::new(spec, 0).is_err());
        let mut spec = MlpSpec::discriminator(2, Activation::Linear);
        spec.dropout_rate = 1.0;
        assert!(Mlp::<f64>::new(spec, 0).is_err());
    }

    #[test]
    fn weight_shapes_follow_spec() {
        let m = Mlp::<f32>::new(MlpSpec::discriminator(20, Activation::Linear), 1).unwrap();
        let shapes: Vec<_> = (0..3).map(|i| m.layer(i).0.dim()).collect();
        assert_eq!(shapes, vec![(100, 20), (100, 100), (1, 100)]);
        assert_eq!(m.param_count(), 100 * 20 + 100 + 100 * 100 + 100 + 100 + 1);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = Mlp::<f64>::new(MlpSpec::discriminator(3, Activation::Linear), 3).unwrap();
        for i in 0..m.num_layers() {
            let (w, b) = m.layer_mut(i);
            w.fill(0.0);
            b.fill(0.0);
        }
        let out = m.predict(random_inputs(5, 3, 1).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_head_in_unit_interval() {
        let m = Mlp::<f64>::new(MlpSpec::discriminator(4, Activation::Sigmoid), 5).unwrap();
        let out = m.predict((random_inputs(64, 4, 2) * 10.0).view()).unwrap();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_is_deterministic() {
        let m = Mlp::<f32>::new(MlpSpec::discriminator(4, Activation::Softplus), 5).unwrap();
        let x = random_inputs(16, 4, 3).mapv(|v| v as f32);
        assert_eq!(m.predict(x.view()).unwrap(), m.predict(x.view()).unwrap());
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let mut m = Mlp::<f64>::new(MlpSpec::discriminator(4, Activation::Linear), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, cache) = m
            .forward(random_inputs(8, 4, 4).view(), Mode::Train(&mut rng))
            .unwrap();
        let (g, gin) = m.backward(&cache, Array2::zeros(out.raw_dim()).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_shape() {
        let mut m = Mlp::<f64>::new(MlpSpec::discriminator(4, Activation::Linear), 9).unwrap();
        let (_, cache) = m.forward(random_inputs(8, 4, 4).view(), Mode::Eval).unwrap();
        assert!(m.backward(&cache, Array2::zeros((7, 1)).view()).is_err());
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
            dropout_rate: 0.0,
            output_batchnorm: false,
        };
        let mut m = Mlp::<f64>::new(spec, 0).unwrap();
        m.layer_mut(0).0.fill(1.0);
        m.layer_mut(0).1.fill(0.0);
        m.layer_mut(1).0.fill(1.0);
        let x = Array2::zeros((1, 1));
        let (_, cache) = m.forward(x.view(), Mode::Eval).unwrap();
        let (g, _) = m.backward(&cache, Array2::ones((1, 1)).view()).unwrap();
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert_eq!(g.layers[0].weights[[0, 0]], 0.0);
    }

    #[test]
    fn linear_model_squared_loss_gradient() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden_dims: vec![2],
            output_dim: 1,
            hidden_activation: Activation::Linear,
            output_activation: Activation::Linear,
            dropout_rate: 0.0,
            output_batchnorm: false,
        };
        let m = Mlp::<f64>::new(spec, 11).unwrap();
        let x = random_inputs(6, 3, 5);
        let r = grad_check(&m, x.view(), half_sum_squares, None, 1e-5).unwrap();
        assert_eq!(r.checked, m.param_count());
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn gradients_match_finite_differences_for_every_head() {
        for (k, head) in [
            Activation::Linear,
            Activation::Sigmoid,
            Activation::Softplus,
        ]
        .into_iter()
        .enumerate()
        {
            let mut spec = MlpSpec::discriminator(3, head);
            spec.hidden_dims = vec![7, 5];
            let m = Mlp::<f64>::new(spec, 20 + k as u64).unwrap();
            let x = random_inputs(9, 3, 6);
            let r = grad_check(&m, x.view(), half_sum_squares, Some(3), 1e-5).unwrap();
            assert!(r.passes(1e-4), "{head:?}: {r:?}");
        }
    }

    #[test]
    fn gradients_match_for_sigmoid_and_softplus_hidden_layers() {
        for (k, act) in [Activation::Sigmoid, Activation::Softplus].into_iter().enumerate() {
            let spec = MlpSpec {
                input_dim: 2,
                hidden_dims: vec![4, 3],
                output_dim: 2,
                hidden_activation: act,
                output_activation: Activation::Linear,
                dropout_rate: 0.2,
                output_batchnorm: false,
            };
            let m = Mlp::<f64>::new(spec, 40 + k as u64).unwrap();
            let r = grad_check(&m, random_inputs(5, 2, 7).view(), half_sum_squares, Some(1), 1e-5)
                .unwrap();
            assert_eq!(r.skipped_kinks, 0);
            assert!(r.passes(1e-4), "{act:?}: {r:?}");
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut spec = MlpSpec::generator(3, 2);
        spec.hidden_dims = vec![6, 5];
        let m = Mlp::<f64>::new(spec, 4).unwrap();
        let x = random_inputs(12, 3, 8);
        // weighted loss so the batchnorm output gradient is not trivially zero
        let loss = |out: ArrayView2<f64>| {
            let w = Array2::from_shape_fn(out.raw_dim(), |(i, j)| {
                (i as f64 + 1.0) * (j as f64 - 0.3) / 50.0
            });
            let l = (&out * &out * &w).sum() / 2.0 + (&out * &w).sum();
            (l, &out * &w + &w)
        };
        let train = grad_check(&m, x.view(), loss, Some(0), 1e-5).unwrap();
        assert!(train.passes(1e-4), "{train:?}");
        let eval = grad_check(&m, x.view(), loss, None, 1e-5).unwrap();
        assert!(eval.passes(1e-4), "{eval:?}");
    }

    #[test]
    fn batchnorm_standardizes_batch() {
        let mut spec = MlpSpec::generator(4, 3);
        spec.hidden_dims = vec![8];
        let mut m = Mlp::<f64>::new(spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, _) = m
            .forward(random_inputs(50, 4, 9).view(), Mode::Train(&mut rng))
            .unwrap();
        for col in out.columns() {
            let mean = col.mean().unwrap();
            let var = col.var(0.0);
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn dropout_is_unbiased_for_linear_network() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden_dims: vec![6, 4],
            output_dim: 1,
            hidden_activation: Activation::Linear,
            output_activation: Activation::Linear,
            dropout_rate: 0.3,
            output_batchnorm: false,
        };
        let mut m = Mlp::<f64>::new(spec, 12).unwrap();
        let x = random_inputs(1, 3, 10);
        let eval = m.predict(x.view()).unwrap()[[0, 0]];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| m.forward(x.view(), Mode::Train(&mut rng)).unwrap().0[[0, 0]])
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - eval).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {eval}");
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let spec = MlpSpec::discriminator(2, Activation::Linear);
        let mut m = Mlp::<f64>::new(spec.clone(), 1).unwrap();
        let before = m.clone();
        m.adam_step(&ParamGrads::zeros_like(&spec), &AdamConfig::default()).unwrap();
        for i in 0..m.num_layers() {
            assert_eq!(m.layer(i), before.layer(i));
        }
        assert_eq!(m.adam_steps(), 1);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let spec = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            hidden_activation: Activation::Linear,
            output_activation: Activation::Linear,
            dropout_rate: 0.0,
            output_batchnorm: false,
        };
        let mut m = Mlp::<f64>::new(spec.clone(), 1).unwrap();
        let p0 = m.param(0).unwrap();
        let mut g = ParamGrads::zeros_like(&spec);
        g.layers[0].weights[[0, 0]] = 1.0;
        m.adam_step(&g, &AdamConfig::with_learning_rate(0.1)).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert_abs_diff_eq!(m.param(0).unwrap() - p0, -0.1, epsilon = 1e-8);
        assert_eq!(m.param(1).unwrap(), Mlp::<f64>::new(spec, 1).unwrap().param(1).unwrap());
    }

    #[test]
    fn adam_nan_gradient_fails_model_without_write() {
        let spec = MlpSpec::discriminator(2, Activation::Linear);
        let mut m = Mlp::<f32>::new(spec.clone(), 1).unwrap();
        let before = m.clone();
        let mut g = ParamGrads::zeros_like(&spec);
        g.layers[1].bias[3] = f32::NAN;
        assert!(m.adam_step(&g, &AdamConfig::default()).is_err());
        assert!(m.is_failed());
        for i in 0..m.num_layers() {
            assert_eq!(m.layer(i), before.layer(i));
        }
        assert_eq!(
            m.adam_step(&ParamGrads::zeros_like(&spec), &AdamConfig::default()),
            Err(Error::ModelFailed)
        );
    }

    #[test]
    fn adam_config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig::with_learning_rate(0.0).validate().is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grad_check_rejects_empty_batch() {
        let m = Mlp::<f64>::new(MlpSpec::discriminator(2, Activation::Linear), 0).unwrap();
        let x = Array2::<f64>::zeros((0, 2));
        assert!(grad_check(&m, x.view(), half_sum_squares, None, 1e-5).is_err());
    }

    #[test]
    fn json_dump_restores_outputs() {
        let mut m = Mlp::<f64>::new(MlpSpec::generator(3, 2), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.forward(random_inputs(32, 3, 1).view(), Mode::Train(&mut rng)).unwrap();
        let restored = Mlp::<f64>::from_json(&m.to_json()).unwrap();
        let x = random_inputs(4, 3, 2);
        assert_eq!(m.predict(x.view()).unwrap(), restored.predict(x.view()).unwrap());
        assert!(Mlp::<f64>::from_json("{\"format\":\"other\"}").is_err());
    }
}
