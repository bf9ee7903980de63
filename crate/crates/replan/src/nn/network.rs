//! Dense-skip ReLU transition model.
//!
//! Layer k consumes the concatenation of the raw inputs and every earlier
//! hidden activation, so its input width is |S| + |A| + sum of earlier
//! widths. The final layer is linear and outputs |S| values.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::NnError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// out_width x in_width, row-major.
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_width(&self) -> usize {
        self.weights.rows
    }

    pub fn in_width(&self) -> usize {
        self.weights.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Standardization {
    Stats { mu: Vec<f64>, sigma: Vec<f64> },
    Folded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Inverted dropout with the given mask seed: kept units are scaled by
    /// 1/(1-p) so evaluation needs no rescaling.
    Train { mask_seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Hidden layers (ReLU) followed by the linear output layer.
    pub layers: Vec<Layer>,
    pub dropout_p: f64,
    pub standardization: Standardization,
    /// Elementwise loss weights, length |S|.
    pub loss_weights: Vec<f64>,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::out_width)
            .collect()
    }

    /// Checks the dense-skip shape law and output width.
    pub fn validate(&self) -> Result<(), NnError> {
        let mut width = self.input_dim();
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.in_width() != width {
                return Err(NnError::BadLayerShape {
                    layer: k,
                    expected: width,
                    got: layer.in_width(),
                });
            }
            if layer.bias.len() != layer.out_width() {
                return Err(NnError::BadLayerShape {
                    layer: k,
                    expected: layer.out_width(),
                    got: layer.bias.len(),
                });
            }
            width += layer.out_width();
        }
        let out = self.layers.last().expect("at least one layer").out_width();
        if out != self.state_dim {
            return Err(NnError::BadLayerShape {
                layer: self.layers.len() - 1,
                expected: self.state_dim,
                got: out,
            });
        }
        if let Standardization::Stats { mu, sigma } = &self.standardization {
            if mu.len() != self.input_dim() || sigma.len() != self.input_dim() {
                return Err(NnError::DimensionMismatch {
                    expected: self.input_dim(),
                    got: mu.len().min(sigma.len()),
                });
            }
            if sigma.iter().any(|&s| s <= 0.0) {
                return Err(NnError::Serde("sigma components must be positive".into()));
            }
        }
        Ok(())
    }

    /// Random network with the given hidden widths. Weights uniform in
    /// +/- sqrt(6/(fan_in+fan_out)), biases zero.
    pub fn random(
        state_dim: usize,
        action_dim: usize,
        hidden_widths: &[usize],
        dropout_p: f64,
        seed: u64,
    ) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_width = state_dim + action_dim;
        let widths: Vec<usize> = hidden_widths.iter().copied().chain([state_dim]).collect();
        for &w in &widths {
            let bound = (6.0 / (in_width + w) as f64).sqrt();
            let data: Vec<f64> = (0..w * in_width).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Layer {
                weights: Tensor::from_vec(w, in_width, data),
                bias: vec![0.0; w],
            });
            in_width += w;
        }
        let net = Network {
            state_dim,
            action_dim,
            layers,
            dropout_p,
            standardization: Standardization::Folded,
            loss_weights: vec![1.0; state_dim],
        };
        net.validate().expect("constructed network is well-formed");
        net
    }

    /// Predicted next state for a single (state, action) pair, plus the
    /// hidden activations of every hidden layer.
    pub fn forward(
        &self,
        state: &[f64],
        action: &[f64],
        mode: ForwardMode,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>), NnError> {
        if state.len() != self.state_dim {
            return Err(NnError::DimensionMismatch { expected: self.state_dim, got: state.len() });
        }
        if action.len() != self.action_dim {
            return Err(NnError::DimensionMismatch { expected: self.action_dim, got: action.len() });
        }
        let mut input: Vec<f64> = state.iter().chain(action.iter()).copied().collect();
        if let Some(i) = input.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput(i));
        }
        if let Standardization::Stats { mu, sigma } = &self.standardization {
            for i in 0..input.len() {
                input[i] = (input[i] - mu[i]) / sigma[i];
            }
        }
        let mut rng = match mode {
            ForwardMode::Train { mask_seed } => Some(ChaCha8Rng::seed_from_u64(mask_seed)),
            ForwardMode::Eval => None,
        };
        let mut acts = input;
        let mut hidden = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let last = k + 1 == self.layers.len();
            let mut z = vec![0.0; layer.out_width()];
            for j in 0..layer.out_width() {
                let row = layer.weights.row(j);
                let mut s = layer.bias[j];
                for (i, &a) in acts.iter().enumerate() {
                    s += row[i] * a;
                }
                z[j] = if last { s } else { s.max(0.0) };
            }
            if last {
                return Ok((z, hidden));
            }
            if let Some(rng) = rng.as_mut() {
                let keep = 1.0 - self.dropout_p;
                for v in z.iter_mut() {
                    if rng.gen::<f64>() < self.dropout_p {
                        *v = 0.0;
                    } else {
                        *v /= keep;
                    }
                }
            }
            hidden.push(z.clone());
            acts.extend_from_slice(&z);
        }
        unreachable!("output layer returns")
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(state, action, ForwardMode::Eval)?.0)
    }

    /// Rewrites weights so the network accepts raw (unstandardized) inputs.
    ///
    /// Because the dense skips carry the raw inputs into every layer, the
    /// input-connected weight columns of *every* layer are rescaled, and
    /// every layer's bias is corrected.
    pub fn fold_standardization(&self) -> Result<Network, NnError> {
        let (mu, sigma) = match &self.standardization {
            Standardization::Stats { mu, sigma } => (mu.clone(), sigma.clone()),
            Standardization::Folded => return Err(NnError::AlreadyFolded),
        };
        let d = self.input_dim();
        let mut out = self.clone();
        for layer in out.layers.iter_mut() {
            for j in 0..layer.out_width() {
                let mut bias_shift = 0.0;
                for i in 0..d {
                    let w = layer.weights.get(j, i);
                    let w_hat = w / sigma[i];
                    layer.weights.set(j, i, w_hat);
                    bias_shift += mu[i] * w_hat;
                }
                layer.bias[j] -= bias_shift;
            }
        }
        out.standardization = Standardization::Folded;
        Ok(out)
    }

    pub fn is_folded(&self) -> bool {
        matches!(self.standardization, Standardization::Folded)
    }

    /// Records an eval-mode batched forward pass on a tape.
    ///
    /// `state` and `action` are node ids of m x |S| and m x |A| tensors;
    /// returns the m x |S| prediction node. Standardization must be folded
    /// or is applied via constant nodes.
    pub fn forward_on_tape(&self, tape: &mut Tape, state: NodeId, action: NodeId) -> NodeId {
        let raw = tape.concat_cols(&[state, action]);
        let input = match &self.standardization {
            Standardization::Folded => raw,
            Standardization::Stats { mu, sigma } => {
                let rows = tape.value(raw).rows;
                let mu_n = tape.constant(Tensor::broadcast_rows(mu, rows));
                let inv_sigma: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
                let is_n = tape.constant(Tensor::broadcast_rows(&inv_sigma, rows));
                let centered = tape.sub(raw, mu_n);
                tape.mul_elem(centered, is_n)
            }
        };
        let mut acts = input;
        for (k, layer) in self.layers.iter().enumerate() {
            let last = k + 1 == self.layers.len();
            let wt = tape.constant(layer.weights.transpose());
            let b = tape.constant(Tensor::row_vector(layer.bias.clone()));
            let lin = tape.matmul(acts, wt);
            let pre = tape.add(lin, b);
            if last {
                return pre;
            }
            let z = tape.relu(pre);
            acts = tape.concat_cols(&[acts, z]);
        }
        unreachable!()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        let file = VersionedNetwork { version: 1, network: self.clone() };
        let json = serde_json::to_string_pretty(&file).map_err(|e| NnError::Serde(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Network, NnError> {
        let text = std::fs::read_to_string(path)?;
        let file: VersionedNetwork =
            serde_json::from_str(&text).map_err(|e| NnError::Serde(e.to_string()))?;
        if file.version != 1 {
            return Err(NnError::Serde(format!("unsupported network file version {}", file.version)));
        }
        file.network.validate()?;
        Ok(file.network)
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedNetwork {
    version: u32,
    network: Network,
}
