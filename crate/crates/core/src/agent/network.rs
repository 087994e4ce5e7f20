//! Fully-connected network: ReLU hidden layers, identity output, inverted
//! dropout after each hidden layer while training.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub dropout: f64,
}

/// Per-parameter gradients laid out like [`Network::layers`].
pub type Gradients = Vec<Layer>;

struct Trace {
    /// Input of each layer (post-activation, post-dropout of the previous).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or 1/(1-p)); empty when inactive.
    masks: Vec<Vec<f64>>,
    output: f64,
}

impl Network {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// from the input to the single output.
    pub fn new(sizes: &[usize], dropout: f64, rng: &mut Rng) -> Result<Self, AgentError> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(AgentError::Config(format!(
                "layer sizes must be positive and end in 1, got {sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(AgentError::Config(format!("dropout {dropout} not in [0, 1)")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                layer
                    .weights
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-limit..=limit));
                layer
            })
            .collect();
        Ok(Network { layers, dropout })
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Network {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            dropout: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect()
    }

    /// All parameter slices in a fixed order: weights then biases per layer.
    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.biases])
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }

    /// Sum of squared weights (biases are not regularized).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| &l.weights)
            .map(|w| w * w)
            .sum()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input_dim() {
            return Err(AgentError::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], training: bool, rng: &mut Rng) -> Trace {
        let hidden = self.layers.len() - 1;
        let dropout = training && self.dropout > 0.0;
        let keep_scale = 1.0 / (1.0 - self.dropout);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let mut current = x.to_vec();
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut z);
            inputs.push(std::mem::take(&mut current));
            if i == hidden {
                break;
            }
            let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if dropout {
                let mask: Vec<f64> = (0..a.len())
                    .map(|_| {
                        if rng.random_bool(self.dropout) {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                masks.push(mask);
            } else {
                masks.push(Vec::new());
            }
            pre.push(z.clone());
            current = a;
        }
        Trace {
            inputs,
            pre,
            masks,
            output: z[0],
        }
    }

    /// Score of one input. Dropout masks are drawn from `rng` only when
    /// `training` is set.
    pub fn forward(&self, x: &[f64], training: bool, rng: &mut Rng) -> Result<f64, AgentError> {
        self.check_dim(x)?;
        Ok(self.trace(x, training, rng).output)
    }

    /// Inference path without dropout; needs no generator.
    pub fn predict(&self, x: &[f64]) -> Result<f64, AgentError> {
        self.check_dim(x)?;
        let mut current = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut z);
            if i < last {
                current.clear();
                current.extend(z.iter().map(|v| v.max(0.0)));
            }
        }
        Ok(z[0])
    }

    /// Loss `mean((f(x) − y)²) + l2·Σ‖W‖²` over the batch and its gradient.
    pub fn loss_and_gradients(
        &self,
        batch: &[(&[f64], f64)],
        l2: f64,
        rng: &mut Rng,
    ) -> Result<(f64, Gradients), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grads = self.zero_gradients();
        let mut sq_err = 0.0;
        for &(x, target) in batch {
            self.check_dim(x)?;
            let trace = self.trace(x, true, rng);
            let residual = trace.output - target;
            sq_err += residual * residual;
            // dL/d(output) for this sample.
            let mut delta = vec![2.0 * residual / n];
            for (i, layer) in self.layers.iter().enumerate().rev() {
                let input = &trace.inputs[i];
                let g = &mut grads[i];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, xi)| *gw += d * xi);
                }
                if i == 0 {
                    break;
                }
                // Back through the previous hidden layer's dropout and ReLU.
                let prev = i - 1;
                let mut next = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    next.iter_mut().zip(row).for_each(|(nx, w)| *nx += d * w);
                }
                let mask = &trace.masks[prev];
                for (j, v) in next.iter_mut().enumerate() {
                    let active = trace.pre[prev][j] > 0.0;
                    let scale = if mask.is_empty() { 1.0 } else { mask[j] };
                    *v = if active { *v * scale } else { 0.0 };
                }
                delta = next;
            }
        }
        if l2 > 0.0 {
            for (g, layer) in grads.iter_mut().zip(&self.layers) {
                g.weights
                    .iter_mut()
                    .zip(&layer.weights)
                    .for_each(|(gw, w)| *gw += 2.0 * l2 * w);
            }
        }
        Ok((sq_err / n + l2 * self.weight_norm_sq(), grads))
    }
}
