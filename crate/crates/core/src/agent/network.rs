use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;

/// Fully connected ReLU network with a linear output layer.
///
/// Weights are stored row-major per layer (`out x in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl QNetwork {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for (l, (w, b)) in net.weights.iter_mut().zip(&mut net.biases).enumerate() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
            b.iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// Builds a network from explicit per-layer weights (row-major) and biases.
    pub fn from_layers(
        sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, AgentError> {
        let net = Self::zeros(sizes);
        let shapes_ok = weights.len() == net.weights.len()
            && biases.len() == net.biases.len()
            && weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(AgentError::Shape("layer parameters do not match sizes".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.weights, &self.biases)
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flattened parameters: each layer's weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), AgentError> {
        if p.len() != self.param_count() {
            return Err(AgentError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|x| x.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input_len() {
            return Err(AgentError::Shape(format!(
                "input length {} does not match network input {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Layer outputs after activation, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = &acts[l];
            let n_in = input.len();
            let out: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(j, &bj)| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let z = bj + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Mean squared error between `labels` and the outputs at `actions`, and
    /// its gradient in [`QNetwork::params`] order. Labels are constants.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        actions: &[usize],
        labels: &[f64],
    ) -> Result<(f64, Vec<f64>), AgentError> {
        if inputs.is_empty() || inputs.len() != actions.len() || inputs.len() != labels.len() {
            return Err(AgentError::Shape("batch components differ in length".into()));
        }
        let n = inputs.len() as f64;
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        for ((x, &a), &label) in inputs.iter().zip(actions).zip(labels) {
            self.check_input(x)?;
            if a >= self.output_len() {
                return Err(AgentError::Shape(format!("action {a} out of range")));
            }
            let acts = self.activations(x);
            let err = acts.last().unwrap()[a] - label;
            loss += err * err;

            // Only the taken action's output carries error.
            let mut delta = vec![0.0; self.output_len()];
            delta[a] = 2.0 * err / n;
            for l in (0..self.weights.len()).rev() {
                let input = &acts[l];
                let n_in = input.len();
                let w = &self.weights[l];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad_b[l][j] += d;
                    let row = &mut grad_w[l][j * n_in..(j + 1) * n_in];
                    row.iter_mut().zip(input).for_each(|(g, &xi)| *g += d * xi);
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; n_in];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[j * n_in..(j + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(p, &wij)| *p += d * wij);
                }
                // ReLU derivative on the hidden layer feeding this one.
                for (p, &h) in prev.iter_mut().zip(input) {
                    if h <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        let mut grad = Vec::with_capacity(self.param_count());
        for (w, b) in grad_w.into_iter().zip(grad_b) {
            grad.extend(w);
            grad.extend(b);
        }
        Ok((loss / n, grad))
    }

    /// Plain gradient descent: `theta -= eta * grad`.
    pub fn descend(&mut self, grad: &[f64], eta: f64) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for x in w.iter_mut().chain(b.iter_mut()) {
                *x -= eta * grad[at];
                at += 1;
            }
        }
    }
}
