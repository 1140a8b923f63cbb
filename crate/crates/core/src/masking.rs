//! Joint action selection with invalid-action masking.
//!
//! Exploration resamples the whole random joint action until it validates.
//! Exploitation starts from every agent's greedy choice and, while the joint
//! action is invalid, pins the current maximum of one randomly chosen agent
//! to negative infinity and lets all agents choose again.

use rand::Rng;
use thiserror::Error;

use crate::agent::masked_argmax;
use crate::env::{AgentAction, JointAction, JointValidator, Observation};

/// Resampling cap for exploration.
pub const EXPLORE_CAP: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("no valid random joint action after {0} samples")]
    ExploreCap(usize),
    #[error("no valid joint action even with every agent at a no-op")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub joint: JointAction,
    /// Validity queries issued.
    pub validations: usize,
    pub demotions: usize,
    /// Agents forced to a no-op after demoting every action.
    pub forced: Vec<usize>,
}

fn random_joint<R: Rng + ?Sized>(action_counts: &[usize], rng: &mut R) -> JointAction {
    JointAction::from_indices(action_counts.iter().map(|&n| rng.gen_range(0..n)))
}

/// Uniform random joint action without validation (unmasked exploration).
pub fn random_joint_action<R: Rng + ?Sized>(action_counts: &[usize], rng: &mut R) -> JointAction {
    random_joint(action_counts, rng)
}

/// Greedy joint action without validation (unmasked exploitation).
pub fn greedy_joint(q_values: &[Vec<f64>]) -> JointAction {
    JointAction::from_indices(
        q_values
            .iter()
            .map(|q| masked_argmax(q, &[]).expect("agents have at least one action")),
    )
}

pub fn explore_joint<V: JointValidator + ?Sized, R: Rng + ?Sized>(
    validator: &V,
    action_counts: &[usize],
    rng: &mut R,
) -> Result<Selection, MaskError> {
    for tries in 1..=EXPLORE_CAP {
        let joint = random_joint(action_counts, rng);
        if validator.validate_joint(&joint) {
            return Ok(Selection {
                joint,
                validations: tries,
                demotions: 0,
                forced: Vec::new(),
            });
        }
    }
    Err(MaskError::ExploreCap(EXPLORE_CAP))
}

/// Highest-Q action that leaves the agent's breakers untouched, preferring
/// an open toggle on an open breaker.
fn best_noop(q: &[f64], obs: &Observation) -> usize {
    let pick = |open: bool| {
        (0..q.len())
            .filter(|&i| {
                let a = AgentAction { index: i };
                a.is_noop(obs) && a.decode().1 != open
            })
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if q[b] >= q[i] => Some(b),
                _ => Some(i),
            })
    };
    pick(true).or_else(|| pick(false)).expect("every breaker has a no-op toggle")
}

pub fn exploit_joint<V: JointValidator + ?Sized, R: Rng + ?Sized>(
    validator: &V,
    q_values: &[Vec<f64>],
    observations: &[Observation],
    rng: &mut R,
) -> Result<Selection, MaskError> {
    let n = q_values.len();
    let mut demoted: Vec<Vec<bool>> = q_values.iter().map(|q| vec![false; q.len()]).collect();
    let mut locked: Vec<Option<usize>> = vec![None; n];
    let mut validations = 0;
    let mut demotions = 0;
    loop {
        let choice: Vec<usize> = (0..n)
            .map(|i| {
                locked[i].unwrap_or_else(|| {
                    masked_argmax(&q_values[i], &demoted[i]).expect("unlocked agents keep an action")
                })
            })
            .collect();
        let joint = JointAction::from_indices(choice.iter().copied());
        validations += 1;
        if validator.validate_joint(&joint) {
            let forced = (0..n).filter(|&i| locked[i].is_some()).collect();
            return Ok(Selection {
                joint,
                validations,
                demotions,
                forced,
            });
        }
        let free: Vec<usize> = (0..n).filter(|&i| locked[i].is_none()).collect();
        if free.is_empty() {
            return Err(MaskError::Exhausted);
        }
        let j = free[rng.gen_range(0..free.len())];
        demoted[j][choice[j]] = true;
        demotions += 1;
        if demoted[j].iter().all(|&d| d) {
            locked[j] = Some(best_noop(&q_values[j], &observations[j]));
        }
    }
}
