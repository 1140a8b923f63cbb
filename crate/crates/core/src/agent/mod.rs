//! Per-agent deep Q-learning.

mod checkpoint;
mod network;
mod replay;
mod schedule;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Observation;

pub use checkpoint::{AgentCheckpoint, CHECKPOINT_VERSION};
pub use network::QNetwork;
pub use replay::{Experience, ReplayBuffer};
pub use schedule::EpsilonSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every action is masked")]
    AllMasked,
    #[error("replay buffer holds {available} tuples, {requested} requested")]
    Underfilled { requested: usize, available: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Discount factor.
    pub gamma: f64,
    /// Blend rate between the current prediction and the bootstrapped target.
    pub alpha: f64,
    /// Gradient step size.
    pub eta: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub hidden: Vec<usize>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            alpha: 0.5,
            eta: 5e-3,
            batch_size: 32,
            capacity: 10_000,
            hidden: vec![64, 64],
        }
    }
}

impl Hyperparameters {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated forms also reject NaN
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.eta > 0.0) {
            return Err(format!("eta {} must be positive", self.eta));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return Err("need 0 < batch_size <= capacity".into());
        }
        if self.hidden.contains(&0) {
            return Err("hidden layers must be non-empty".into());
        }
        Ok(())
    }

    pub fn layer_sizes(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let mut s = vec![inputs];
        s.extend(&self.hidden);
        s.push(outputs);
        s
    }
}

/// Index of the largest value outside `masked`; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], masked: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in q.iter().enumerate() {
        if masked.get(i).copied().unwrap_or(false) {
            continue;
        }
        if best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Main network plus its delayed target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPair {
    pub main: QNetwork,
    pub target: QNetwork,
}

impl AgentPair {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let main = QNetwork::new(sizes, rng);
        Self {
            target: main.clone(),
            main,
        }
    }

    pub fn from_network(main: QNetwork) -> Self {
        Self {
            target: main.clone(),
            main,
        }
    }

    pub fn q_values(&self, o: &Observation) -> Result<Vec<f64>, AgentError> {
        self.main.forward(&o.to_input())
    }

    /// Epsilon-greedy choice among actions whose `masked` flag is false.
    pub fn act<R: Rng + ?Sized>(
        &self,
        o: &Observation,
        eps: f64,
        masked: &[bool],
        rng: &mut R,
    ) -> Result<usize, AgentError> {
        let n = self.main.output_len();
        let allowed: Vec<usize> = (0..n).filter(|&i| !masked.get(i).copied().unwrap_or(false)).collect();
        if allowed.is_empty() {
            return Err(AgentError::AllMasked);
        }
        if rng.gen::<f64>() < eps {
            return Ok(allowed[rng.gen_range(0..allowed.len())]);
        }
        let q = self.q_values(o)?;
        Ok(masked_argmax(&q, masked).expect("non-empty allowed set"))
    }

    /// Blended labels for a batch: `(1 - alpha) q + alpha (r + gamma max q_target(o'))`.
    pub fn labels(&self, batch: &[&Experience], h: &Hyperparameters) -> Result<Vec<f64>, AgentError> {
        batch
            .iter()
            .map(|e| {
                let predicted = self.main.forward(&e.o.to_input())?[e.a];
                let y = if h.gamma == 0.0 {
                    e.r
                } else {
                    let next = self.target.forward(&e.o_next.to_input())?;
                    e.r + h.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                Ok((1.0 - h.alpha) * predicted + h.alpha * y)
            })
            .collect()
    }

    /// One gradient step on the main network. Returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[&Experience], h: &Hyperparameters) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Shape("empty batch".into()));
        }
        let labels = self.labels(batch, h)?;
        let inputs: Vec<Vec<f64>> = batch.iter().map(|e| e.o.to_input()).collect();
        let actions: Vec<usize> = batch.iter().map(|e| e.a).collect();
        let (loss, grad) = self.main.loss_and_gradient(&inputs, &actions, &labels)?;
        self.main.descend(&grad, h.eta);
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.main);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(bits: &[bool]) -> Observation {
        Observation { bits: bits.to_vec() }
    }

    fn exp(o: &[bool], a: usize, r: f64, next: &[bool]) -> Experience {
        Experience {
            o: obs(o),
            a,
            r,
            o_next: obs(next),
        }
    }

    /// One-input network whose single output layer returns `q` for any input.
    fn constant(q: &[f64]) -> AgentPair {
        let net = QNetwork::from_layers(
            &[1, 1, q.len()],
            vec![vec![0.0], vec![0.0; q.len()]],
            vec![vec![0.0], q.to_vec()],
        )
        .unwrap();
        AgentPair::from_network(net)
    }

    #[test]
    fn greedy_and_masked_choice() {
        let p = constant(&[0.1, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = obs(&[false]);
        assert_eq!(p.act(&o, 0.0, &[], &mut rng).unwrap(), 1);
        assert_eq!(p.act(&o, 0.0, &[false, true], &mut rng).unwrap(), 0);
        assert_eq!(p.act(&o, 0.0, &[true, true], &mut rng), Err(AgentError::AllMasked));
        assert_eq!(masked_argmax(&[2.0, 2.0, 1.0], &[]), Some(0));
        let shifted = constant(&[100.1, 100.9]);
        assert_eq!(shifted.act(&o, 0.0, &[], &mut rng).unwrap(), 1);
    }

    #[test]
    fn random_choice_is_seeded() {
        let p = constant(&[0.0; 8]);
        let o = obs(&[true]);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..20).map(|_| p.act(&o, 1.0, &[], &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        assert!(run().iter().any(|&a| a != run()[0]));
    }

    #[test]
    fn label_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AgentPair::new(&[2, 8, 4], &mut rng);
        let e = exp(&[true, false], 2, 0.3, &[true, true]);
        let next_max = p
            .target
            .forward(&[1.0, 1.0])
            .unwrap()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);

        let h = Hyperparameters { alpha: 1.0, ..Default::default() };
        let y = 0.3 + 0.95 * next_max;
        assert_eq!(p.labels(&[&e], &h).unwrap(), vec![y]);

        let h = Hyperparameters { alpha: 1.0, gamma: 0.0, ..Default::default() };
        assert_eq!(p.labels(&[&e], &h).unwrap(), vec![0.3]);
    }

    #[test]
    fn fixed_point_has_zero_loss() {
        // Target outputs zero, gamma = 0, so y = r; choose r equal to the prediction.
        let mut p = constant(&[0.7, -0.2]);
        let h = Hyperparameters { gamma: 0.0, ..Default::default() };
        let e = exp(&[false], 0, 0.7, &[true]);
        let before = p.main.clone();
        assert_eq!(p.train_step(&[&e], &h).unwrap(), 0.0);
        assert_eq!(p.main, before);
    }

    #[test]
    fn training_moves_toward_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = AgentPair::new(&[2, 16, 16, 4], &mut rng);
        let h = Hyperparameters { gamma: 0.0, alpha: 1.0, eta: 0.05, ..Default::default() };
        let e = exp(&[true, false], 1, 2.0, &[true, true]);
        let first = p.train_step(&[&e], &h).unwrap();
        for _ in 0..200 {
            p.train_step(&[&e], &h).unwrap();
        }
        let last = p.train_step(&[&e], &h).unwrap();
        assert!(last < first * 1e-3, "{first} -> {last}");
        assert!(p.main.all_finite());
    }

    #[test]
    fn sync_copies_main() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = AgentPair::new(&[3, 8, 6], &mut rng);
        let init = p.target.clone();
        let h = Hyperparameters { eta: 0.1, ..Default::default() };
        let e = exp(&[true, false, true], 4, 1.0, &[true, true, true]);
        p.train_step(&[&e], &h).unwrap();
        assert_eq!(p.target, init);
        assert_ne!(p.main, init);
        p.sync_target();
        let x = [0.0, 1.0, 1.0];
        assert_eq!(p.main.forward(&x).unwrap(), p.target.forward(&x).unwrap());
        let once = p.clone();
        p.sync_target();
        assert_eq!(p, once);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().validate().is_ok());
        assert!(Hyperparameters { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparameters { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparameters { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
