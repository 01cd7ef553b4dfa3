//! Dense feed-forward networks in double precision with hand-written
//! backpropagation, SGD/Adam updates and a finite-difference gradient check.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative at pre-activation `z`.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(z).for_each(|g, &z| {
                let t = z.tanh();
                *g *= 1.0 - t * t;
            }),
        }
    }
}

/// Multi-layer perceptron: affine layers with a hidden activation and a
/// linear output. `weights[l]` has shape `(fan_in, fan_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Per-layer inputs and hidden pre-activations saved by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().for_each(|w| *w *= c);
        self.biases.iter_mut().for_each(|b| *b *= c);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Flat view in parameter order: layer by layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::BadSizes(layer_sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    /// Builds a network from explicit parameters (shapes are checked).
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NnError::Shape {
                expected: format!("{} bias vectors", weights.len()),
                got: biases.len().to_string(),
            });
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != b.len() {
                return Err(NnError::Shape {
                    expected: format!("layer {l} bias of length {}", w.ncols()),
                    got: b.len().to_string(),
                });
            }
            if l > 0 && weights[l - 1].ncols() != w.nrows() {
                return Err(NnError::Shape {
                    expected: format!("layer {l} fan-in {}", weights[l - 1].ncols()),
                    got: w.nrows().to_string(),
                });
            }
        }
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.weights[0].nrows()];
        sizes.extend(self.weights.iter().map(|w| w.ncols()));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Mutable reference to the `i`-th parameter in [`Gradients::iter`] order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if i < w.len() {
                let cols = w.ncols();
                return &mut w[[i / cols, i % cols]];
            }
            i -= w.len();
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<(), NnError> {
        if input.ncols() != self.input_width() {
            return Err(NnError::Shape {
                expected: format!("input width {}", self.input_width()),
                got: input.ncols().to_string(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(&input)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut x = input.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = x.dot(w) + b;
            inputs.push(x);
            if l == last {
                return Ok((
                    z,
                    ForwardCache {
                        inputs,
                        pre_activations,
                    },
                ));
            }
            x = self.activation.apply(&z);
            pre_activations.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&input)?;
        let last = self.weights.len() - 1;
        let mut x = input.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = x.dot(w) + b;
            x = if l == last { z } else { self.activation.apply(&z) };
        }
        Ok(x)
    }

    /// Parameter gradients for upstream gradient `grad_output` (dLoss/dOutput).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<Gradients, NnError> {
        let batch = cache.inputs[0].nrows();
        if grad_output.dim() != (batch, self.output_width()) {
            return Err(NnError::Shape {
                expected: format!("({batch}, {})", self.output_width()),
                got: format!("{:?}", grad_output.dim()),
            });
        }
        let layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); layers];
        let mut grad_b = vec![Array1::zeros(0); layers];
        let mut delta = grad_output.to_owned();
        for l in (0..layers).rev() {
            grad_w[l] = cache.inputs[l].t().dot(&delta);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                self.activation
                    .backprop(&cache.pre_activations[l - 1], &mut upstream);
                delta = upstream;
            }
        }
        Ok(Gradients {
            weights: grad_w,
            biases: grad_b,
        })
    }

    /// Versioned JSON snapshot of the parameters.
    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            format_version: Snapshot::VERSION,
            activation: self.activation,
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| LayerSnapshot {
                    shape: [w.nrows(), w.ncols()],
                    weights: w.iter().copied().collect(),
                    bias: b.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self, NnError> {
        if snapshot.format_version != Snapshot::VERSION {
            return Err(NnError::Snapshot(format!(
                "unsupported format version {}",
                snapshot.format_version
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in &snapshot.layers {
            let w = Array2::from_shape_vec((layer.shape[0], layer.shape[1]), layer.weights.clone())
                .map_err(|e| NnError::Snapshot(e.to_string()))?;
            weights.push(w);
            biases.push(Array1::from(layer.bias.clone()));
        }
        Mlp::from_parts(weights, biases, snapshot.activation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub activation: Activation,
    pub layers: Vec<LayerSnapshot>,
}

impl Snapshot {
    pub const VERSION: u32 = 1;
}

/// Row-major weights of shape `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Option<Gradients>,
    second: Option<Gradients>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, mlp: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                for (p, g) in mlp.weights.iter_mut().zip(&grads.weights) {
                    p.scaled_add(-lr, g);
                }
                for (p, g) in mlp.biases.iter_mut().zip(&grads.biases) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam => {
                let m = self.first.get_or_insert_with(|| Gradients::zeros_like(mlp));
                let v = self.second.get_or_insert_with(|| Gradients::zeros_like(mlp));
                let t = self.step as i32;
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let step_size = self.lr / (1.0 - b1.powi(t));
                let v_corr = 1.0 / (1.0 - b2.powi(t));
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step_size * *m / ((*v * v_corr).sqrt() + eps);
                };
                for l in 0..mlp.weights.len() {
                    Zip::from(&mut mlp.weights[l])
                        .and(&grads.weights[l])
                        .and(&mut m.weights[l])
                        .and(&mut v.weights[l])
                        .for_each(update);
                    Zip::from(&mut mlp.biases[l])
                        .and(&grads.biases[l])
                        .and(&mut m.biases[l])
                        .and(&mut v.biases[l])
                        .for_each(update);
                }
            }
        }
    }
}

/// Result of comparing analytic gradients with central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Denominator floor for the relative error, so parameters with vanishing
/// gradients are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Checks `analytic` against `(L(p+h) − L(p−h)) / 2h` for every parameter.
/// Relative error is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`; the check
/// passes when the maximum stays strictly below `tolerance`.
pub fn gradient_check<F>(
    mlp: &Mlp,
    loss: F,
    analytic: &Gradients,
    h: f64,
    tolerance: f64,
) -> GradientCheckReport
where
    F: Fn(&Mlp) -> f64,
{
    let mut probe = mlp.clone();
    let mut worst = (0.0f64, 0usize);
    let mut checked = 0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + h;
        let plus = loss(&probe);
        *probe.param_mut(i) = original - h;
        let minus = loss(&probe);
        *probe.param_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > worst.0 || rel.is_nan() {
            worst = (if rel.is_nan() { f64::INFINITY } else { rel }, i);
        }
        checked += 1;
    }
    GradientCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        checked,
        passed: worst.0 < tolerance,
    }
}
