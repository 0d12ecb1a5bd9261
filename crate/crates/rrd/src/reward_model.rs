//! Parameterized proxy reward functions over discrete state-action pairs,
//! with exact analytic parameter gradients: a lookup table, a linear model
//! over a fixed feature map, and a small fully connected network with
//! hand-rolled backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ActionId, RngStream, StateId};

/// Default learning rate for the Adam update rule.
pub const DEFAULT_ADAM_LR: f64 = 3e-4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(
        "state {state} or action {action} out of range for a {state_count}x{action_count} model"
    )]
    OutOfRange {
        state: usize,
        action: usize,
        state_count: usize,
        action_count: usize,
    },
    #[error("gradient has {found} components, model has {expected} parameters")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid model shape: {0}")]
    BadShape(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

/// Hidden-layer activation for the network model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Architecture {
    Tabular {
        state_count: usize,
        action_count: usize,
    },
    Linear {
        state_count: usize,
        action_count: usize,
        /// `features[s * A + a]` is the feature vector of that pair.
        features: Vec<Vec<f64>>,
    },
    Mlp {
        state_count: usize,
        action_count: usize,
        /// Full width list including the input and the single output unit.
        layer_sizes: Vec<usize>,
        activation: Activation,
    },
}

impl Architecture {
    fn param_count(&self) -> usize {
        match self {
            Architecture::Tabular {
                state_count,
                action_count,
            } => state_count * action_count,
            Architecture::Linear { features, .. } => features.first().map_or(0, |f| f.len()),
            Architecture::Mlp { layer_sizes, .. } => {
                layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
            }
        }
    }

    fn space(&self) -> (usize, usize) {
        match *self {
            Architecture::Tabular {
                state_count,
                action_count,
            }
            | Architecture::Linear {
                state_count,
                action_count,
                ..
            }
            | Architecture::Mlp {
                state_count,
                action_count,
                ..
            } => (state_count, action_count),
        }
    }
}

/// Flat parameter gradient, same length and ordering as the model's
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// `self += scale * other`; panics on length mismatch.
    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        assert_eq!(self.0.len(), other.0.len(), "gradient length mismatch");
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += scale * y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.0 {
            *x *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A proxy reward function `(s, a) -> f64` with exact parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    arch: Architecture,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointWire {
    arch: Architecture,
    params: Vec<f64>,
}

impl RewardModel {
    /// Lookup table over all pairs, initialized to zero.
    pub fn tabular(state_count: usize, action_count: usize) -> Self {
        let arch = Architecture::Tabular {
            state_count,
            action_count,
        };
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    /// Linear model over a fixed per-pair feature table, initialized to zero.
    pub fn linear(
        state_count: usize,
        action_count: usize,
        features: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        if features.len() != state_count * action_count {
            return Err(ModelError::BadShape(format!(
                "feature table has {} rows, expected {}",
                features.len(),
                state_count * action_count
            )));
        }
        let dim = features.first().map_or(0, |f| f.len());
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(ModelError::BadShape(
                "feature rows must be non-empty and of equal length".into(),
            ));
        }
        let arch = Architecture::Linear {
            state_count,
            action_count,
            features,
        };
        let params = vec![0.0; dim];
        Ok(Self { arch, params })
    }

    /// Linear model whose features one-hot encode the pair index; its
    /// parameter vector therefore coincides with a tabular model's table.
    pub fn linear_one_hot(state_count: usize, action_count: usize) -> Self {
        let pairs = state_count * action_count;
        let features = (0..pairs)
            .map(|i| {
                let mut f = vec![0.0; pairs];
                f[i] = 1.0;
                f
            })
            .collect();
        Self::linear(state_count, action_count, features)
            .expect("one-hot features are always well-formed")
    }

    /// Fully connected network on the concatenated one-hot encoding of
    /// `(s, a)`. Hidden widths come from `hidden_sizes`; the output layer
    /// is a single linear unit. Weights start uniform on
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases at zero.
    pub fn mlp(
        state_count: usize,
        action_count: usize,
        hidden_sizes: &[usize],
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        if hidden_sizes.contains(&0) {
            return Err(ModelError::BadShape(
                "hidden layer sizes must be positive".into(),
            ));
        }
        let mut layer_sizes = vec![state_count + action_count];
        layer_sizes.extend_from_slice(hidden_sizes);
        layer_sizes.push(1);
        let mut params = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..=bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            arch: Architecture::Mlp {
                state_count,
                action_count,
                layer_sizes,
                activation,
            },
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Same architecture with a replaced parameter vector.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        Ok(Self {
            arch: self.arch.clone(),
            params,
        })
    }

    pub fn state_count(&self) -> usize {
        self.arch.space().0
    }

    pub fn action_count(&self) -> usize {
        self.arch.space().1
    }

    fn check_pair(&self, s: StateId, a: ActionId) -> Result<(), ModelError> {
        let (state_count, action_count) = self.arch.space();
        if s.0 >= state_count || a.0 >= action_count {
            return Err(ModelError::OutOfRange {
                state: s.0,
                action: a.0,
                state_count,
                action_count,
            });
        }
        Ok(())
    }

    /// Evaluates the proxy reward for one pair.
    pub fn eval(&self, s: StateId, a: ActionId) -> Result<f64, ModelError> {
        self.check_pair(s, a)?;
        let (_, action_count) = self.arch.space();
        let pair = s.0 * action_count + a.0;
        match &self.arch {
            Architecture::Tabular { .. } => Ok(self.params[pair]),
            Architecture::Linear { features, .. } => Ok(features[pair]
                .iter()
                .zip(&self.params)
                .map(|(f, p)| f * p)
                .sum()),
            Architecture::Mlp {
                layer_sizes,
                activation,
                ..
            } => Ok(self.mlp_forward(s, a, layer_sizes, *activation).0),
        }
    }

    /// Exact analytic gradient of the proxy reward with respect to the
    /// parameter vector.
    pub fn grad(&self, s: StateId, a: ActionId) -> Result<GradientVector, ModelError> {
        self.check_pair(s, a)?;
        let (_, action_count) = self.arch.space();
        let pair = s.0 * action_count + a.0;
        match &self.arch {
            Architecture::Tabular { .. } => {
                let mut g = vec![0.0; self.params.len()];
                g[pair] = 1.0;
                Ok(GradientVector(g))
            }
            Architecture::Linear { features, .. } => Ok(GradientVector(features[pair].clone())),
            Architecture::Mlp {
                layer_sizes,
                activation,
                ..
            } => {
                let (_, activations) = self.mlp_forward(s, a, layer_sizes, *activation);
                Ok(self.mlp_backward(layer_sizes, *activation, &activations))
            }
        }
    }

    /// Returns the output and the list of layer activations
    /// (`activations[0]` is the one-hot input, the last entry the output).
    fn mlp_forward(
        &self,
        s: StateId,
        a: ActionId,
        layer_sizes: &[usize],
        activation: Activation,
    ) -> (f64, Vec<Vec<f64>>) {
        let (state_count, _) = self.arch.space();
        let mut x = vec![0.0; layer_sizes[0]];
        x[s.0] = 1.0;
        x[state_count + a.0] = 1.0;
        let mut activations = vec![x];
        let n_layers = layer_sizes.len() - 1;
        let mut offset = 0;
        for (l, w) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let input = activations.last().expect("at least the input layer");
            let mut out = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut z = biases[o];
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if l + 1 == n_layers {
                    z
                } else {
                    activation.apply(z)
                });
            }
            activations.push(out);
            offset += (fan_in + 1) * fan_out;
        }
        let y = activations.last().expect("output layer")[0];
        (y, activations)
    }

    fn mlp_backward(
        &self,
        layer_sizes: &[usize],
        activation: Activation,
        activations: &[Vec<f64>],
    ) -> GradientVector {
        let n_layers = layer_sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let layer_offsets: Vec<usize> = layer_sizes
            .windows(2)
            .scan(0, |off, w| {
                let here = *off;
                *off += (w[0] + 1) * w[1];
                Some(here)
            })
            .collect();
        // dy/dz of the single linear output unit.
        let mut delta = vec![1.0];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let offset = layer_offsets[l];
            let input = &activations[l];
            for o in 0..fan_out {
                let d = delta[o];
                let wrow = offset + o * fan_in;
                for i in 0..fan_in {
                    grad[wrow + i] = d * input[i];
                }
                grad[offset + fan_in * fan_out + o] = d;
            }
            if l > 0 {
                let weights = &self.params[offset..offset + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (i, p) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (o, d) in delta.iter().enumerate() {
                        acc += d * weights[o * fan_in + i];
                    }
                    *p = acc * activation.derivative_from_output(input[i]);
                }
                delta = prev;
            }
        }
        GradientVector(grad)
    }

    /// One descent step: `params' = params - alpha * grad`.
    pub fn apply_gradient_step(
        &self,
        grad: &GradientVector,
        alpha: f64,
    ) -> Result<RewardModel, ModelError> {
        if grad.len() != self.params.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.params.len(),
                found: grad.len(),
            });
        }
        let params = self
            .params
            .iter()
            .zip(grad.values())
            .map(|(p, g)| p - alpha * g)
            .collect();
        Ok(Self {
            arch: self.arch.clone(),
            params,
        })
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&CheckpointWire {
            arch: self.arch.clone(),
            params: self.params.clone(),
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let wire: CheckpointWire =
            serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if wire.params.len() != wire.arch.param_count() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters stored, architecture needs {}",
                wire.params.len(),
                wire.arch.param_count()
            )));
        }
        Ok(Self {
            arch: wire.arch,
            params: wire.params,
        })
    }
}

/// Adam moment estimates for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        model: &RewardModel,
        grad: &GradientVector,
    ) -> Result<RewardModel, ModelError> {
        if grad.len() != model.param_count() || grad.len() != self.m.len() {
            return Err(ModelError::LengthMismatch {
                expected: model.param_count(),
                found: grad.len(),
            });
        }
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut params = model.params().to_vec();
        for (i, g) in grad.values().iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        model.with_params(params)
    }
}

/// Update rule for reward-model training: plain gradient descent by
/// default, Adam as the optional alternative.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(param_count: usize, lr: f64) -> Self {
        Optimizer::Adam(AdamState::new(param_count, lr))
    }

    /// Adam at the standard [`DEFAULT_ADAM_LR`] rate.
    pub fn adam_default(param_count: usize) -> Self {
        Self::adam(param_count, DEFAULT_ADAM_LR)
    }

    pub fn update(
        &mut self,
        model: &RewardModel,
        grad: &GradientVector,
    ) -> Result<RewardModel, ModelError> {
        match self {
            Optimizer::Sgd { lr } => model.apply_gradient_step(grad, *lr),
            Optimizer::Adam(state) => state.step(model, grad),
        }
    }
}
