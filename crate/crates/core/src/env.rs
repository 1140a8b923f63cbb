//! The restoration MDP.
//!
//! Each agent observes the breakers of its own microgrid and toggles one of
//! them per step. Joint actions are applied simultaneously, the network is
//! re-solved and every agent receives the same normalized reward: weighted
//! restored power over total rated load.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Feeder;
use crate::powerflow::{evaluate, restored_power};

/// Default episode length in steps.
pub const DEFAULT_U_MAX: usize = 16;
/// Default penalty reward for constraint-violating steps.
pub const DEFAULT_PENALTY: f64 = -1.0;

const CACHE_LIMIT: usize = 1 << 18;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode exhausted after {0} steps")]
    EpisodeExhausted(usize),
    #[error("joint action has {got} entries, expected {expected}")]
    WrongAgentCount { expected: usize, got: usize },
    #[error("agent {agent}: action {index} out of range for {actions} actions")]
    ActionOutOfRange {
        agent: usize,
        index: usize,
        actions: usize,
    },
    #[error("breaker ordinal {ordinal} out of range for {breakers} breakers")]
    OrdinalOutOfRange { ordinal: usize, breakers: usize },
    #[error("masked step received a constraint-violating joint action")]
    InvalidAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardMode {
    /// Normalized reward; invalid joint actions are a caller error.
    Masked,
    /// Invalid joint actions are applied and earn `m` instead.
    Penalty { m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    /// One agent per microgrid.
    Multi,
    /// A single agent over every breaker.
    Single,
}

/// Local breaker states of one agent, in partition order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub bits: Vec<bool>,
}

impl Observation {
    /// Network input: 1.0 for closed, 0.0 for open.
    pub fn to_input(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// `2k` closes local breaker `k`, `2k + 1` opens it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentAction {
    pub index: usize,
}

impl AgentAction {
    pub fn encode(ordinal: usize, close: bool) -> Self {
        Self {
            index: 2 * ordinal + usize::from(!close),
        }
    }

    /// Checked variant of [`AgentAction::encode`].
    pub fn try_encode(ordinal: usize, close: bool, breakers: usize) -> Result<Self, EnvError> {
        if ordinal >= breakers {
            return Err(EnvError::OrdinalOutOfRange { ordinal, breakers });
        }
        Ok(Self::encode(ordinal, close))
    }

    /// `(breaker ordinal, close)`.
    pub fn decode(self) -> (usize, bool) {
        (self.index / 2, self.index.is_multiple_of(2))
    }

    /// True when applying the action to `obs` changes nothing.
    pub fn is_noop(self, obs: &Observation) -> bool {
        let (k, close) = self.decode();
        obs.bits[k] == close
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub actions: Vec<AgentAction>,
}

impl JointAction {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            actions: indices.into_iter().map(|index| AgentAction { index }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub served_kw: f64,
    pub weighted_kw: f64,
    /// The new state violates at least one operating constraint.
    pub violation: bool,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    feasible: bool,
    served_kw: f64,
    weighted_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub u_max: usize,
    pub reward_mode: RewardMode,
    pub agent_mode: AgentMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            u_max: DEFAULT_U_MAX,
            reward_mode: RewardMode::Masked,
            agent_mode: AgentMode::Multi,
        }
    }
}

/// Breaker lists per agent for the given mode.
pub fn agent_layout(feeder: &Feeder, mode: AgentMode) -> Vec<Vec<usize>> {
    match mode {
        AgentMode::Multi => feeder.agent_breaker_lists().to_vec(),
        AgentMode::Single => vec![feeder.agent_breaker_lists().concat()],
    }
}

/// Validity of candidate joint actions from the current state.
///
/// This is the mask capability handed to the selection procedures.
pub trait JointValidator {
    fn validate_joint(&self, joint: &JointAction) -> bool;
}

#[derive(Debug, Clone)]
pub struct Environment {
    feeder: Feeder,
    agents: Vec<Vec<usize>>,
    states: Vec<bool>,
    step_count: usize,
    config: EnvConfig,
    total_load_kw: f64,
    cache: RefCell<HashMap<Vec<bool>, Outcome>>,
}

impl Environment {
    pub fn new(feeder: Feeder, config: EnvConfig) -> Self {
        let agents = agent_layout(&feeder, config.agent_mode);
        Self::with_agents(feeder, agents, config)
    }

    /// Environment over an explicit agent layout (global breaker indices).
    ///
    /// `config.agent_mode` is ignored.
    pub fn with_agents(feeder: Feeder, agents: Vec<Vec<usize>>, config: EnvConfig) -> Self {
        let states = vec![false; feeder.breaker_count()];
        let total_load_kw = feeder.total_load_kw();
        Self {
            feeder,
            agents,
            states,
            step_count: 0,
            config,
            total_load_kw,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn feeder(&self) -> &Feeder {
        &self.feeder
    }

    pub fn config(&self) -> EnvConfig {
        self.config
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Global breaker indices owned by each agent.
    pub fn agent_breakers(&self) -> &[Vec<usize>] {
        &self.agents
    }

    /// Action count per agent (twice its breaker count).
    pub fn action_counts(&self) -> Vec<usize> {
        self.agents.iter().map(|b| 2 * b.len()).collect()
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Opens every breaker and returns the all-zero observations.
    pub fn reset(&mut self) -> Vec<Observation> {
        self.states.iter_mut().for_each(|s| *s = false);
        self.step_count = 0;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.agents
            .iter()
            .map(|bs| Observation {
                bits: bs.iter().map(|&b| self.states[b]).collect(),
            })
            .collect()
    }

    /// Normalized reward of the current state.
    pub fn state_reward(&self) -> f64 {
        self.outcome(&self.states).weighted_kw / self.total_load_kw
    }

    fn check(&self, joint: &JointAction) -> Result<(), EnvError> {
        if joint.actions.len() != self.agents.len() {
            return Err(EnvError::WrongAgentCount {
                expected: self.agents.len(),
                got: joint.actions.len(),
            });
        }
        for (agent, (a, bs)) in joint.actions.iter().zip(&self.agents).enumerate() {
            if a.index >= 2 * bs.len() {
                return Err(EnvError::ActionOutOfRange {
                    agent,
                    index: a.index,
                    actions: 2 * bs.len(),
                });
            }
        }
        Ok(())
    }

    fn applied(&self, joint: &JointAction) -> Vec<bool> {
        let mut next = self.states.clone();
        for (a, bs) in joint.actions.iter().zip(&self.agents) {
            let (k, close) = a.decode();
            next[bs[k]] = close;
        }
        next
    }

    fn outcome(&self, states: &[bool]) -> Outcome {
        if let Some(o) = self.cache.borrow().get(states) {
            return *o;
        }
        let rp = restored_power(&self.feeder, states);
        let o = Outcome {
            feasible: evaluate(&self.feeder, states).all_ok,
            served_kw: rp.served_kw,
            weighted_kw: rp.weighted_kw,
        };
        let mut cache = self.cache.borrow_mut();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(states.to_vec(), o);
        o
    }

    /// Value the penalty reward would take after applying `joint`.
    pub fn reward_penalty(&self, joint: &JointAction, m: f64) -> f64 {
        if self.check(joint).is_err() {
            return m;
        }
        let o = self.outcome(&self.applied(joint));
        if o.feasible {
            o.weighted_kw / self.total_load_kw
        } else {
            m
        }
    }

    pub fn step(&mut self, joint: &JointAction) -> Result<StepResult, EnvError> {
        if self.step_count >= self.config.u_max {
            return Err(EnvError::EpisodeExhausted(self.config.u_max));
        }
        self.check(joint)?;
        let next = self.applied(joint);
        let o = self.outcome(&next);
        let reward = match self.config.reward_mode {
            RewardMode::Masked if !o.feasible => return Err(EnvError::InvalidAction),
            RewardMode::Penalty { m } if !o.feasible => m,
            _ => o.weighted_kw / self.total_load_kw,
        };
        self.states = next;
        self.step_count += 1;
        Ok(StepResult {
            observations: self.observations(),
            reward,
            served_kw: o.served_kw,
            weighted_kw: o.weighted_kw,
            violation: !o.feasible,
        })
    }
}

impl JointValidator for Environment {
    /// Shadow solve on a copy of the state; the live state is untouched.
    fn validate_joint(&self, joint: &JointAction) -> bool {
        self.check(joint).is_ok() && self.outcome(&self.applied(joint)).feasible
    }
}
