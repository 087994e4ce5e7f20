//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    /// First and second moments, one vector per parameter slice in
    /// [`Network::param_slices_mut`] order.
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(network: &Network, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = network
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
            .collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: shapes.clone(),
            second_moment: shapes,
        }
    }

    pub fn apply(&mut self, network: &mut Network, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let grad_slices = grads.iter().flat_map(|l| [&l.weights, &l.biases]);
        for (((params, g), m), v) in network
            .param_slices_mut()
            .zip(grad_slices)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
