//! Centralized training, decentralized execution and variant comparison.

use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    masked_argmax, AgentCheckpoint, AgentError, AgentPair, EpsilonSchedule, Experience,
    Hyperparameters, ReplayBuffer,
};
use crate::env::{
    agent_layout, AgentMode, EnvConfig, EnvError, Environment, RewardMode, DEFAULT_PENALTY,
    DEFAULT_U_MAX,
};
use crate::grid::Feeder;
use crate::masking::{explore_joint, exploit_joint, greedy_joint, random_joint_action, MaskError};

/// Window for the start/end reward statistics.
pub const REPORT_WINDOW: usize = 50;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Global environment steps between target network syncs.
    pub sync_every: usize,
    pub hyper: Hyperparameters,
    pub epsilon: EpsilonSchedule,
    /// Invalid-action masking; when off the penalty reward is used.
    pub masking: bool,
    pub agent_mode: AgentMode,
    /// Reward for constraint-violating steps in unmasked runs.
    pub penalty: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            steps_per_episode: DEFAULT_U_MAX,
            sync_every: 50,
            hyper: Hyperparameters::default(),
            epsilon: EpsilonSchedule::default(),
            masking: true,
            agent_mode: AgentMode::Multi,
            penalty: DEFAULT_PENALTY,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps_per_episode == 0 || self.sync_every == 0 {
            return Err(TrainError::Config("step counts must be positive".into()));
        }
        if !self.epsilon.is_valid() {
            return Err(TrainError::Config(format!("bad epsilon schedule {:?}", self.epsilon)));
        }
        if !self.penalty.is_finite() {
            return Err(TrainError::Config("penalty must be finite".into()));
        }
        self.hyper.validate().map_err(TrainError::Config)
    }

    pub fn reward_mode(&self) -> RewardMode {
        if self.masking {
            RewardMode::Masked
        } else {
            RewardMode::Penalty { m: self.penalty }
        }
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig {
            u_max: self.steps_per_episode,
            reward_mode: self.reward_mode(),
            agent_mode: self.agent_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Cumulative reward.
    pub reward: f64,
    pub restored_kw: f64,
    pub violations: usize,
    pub epsilon: f64,
}

/// Trained agents bound to their breakers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub agents: Vec<AgentPair>,
    /// Global breaker indices per agent, in observation order.
    pub breakers: Vec<Vec<usize>>,
}

impl TrainedModels {
    pub fn checkpoints(&self, feeder: &Feeder) -> Vec<AgentCheckpoint> {
        self.agents
            .iter()
            .zip(&self.breakers)
            .enumerate()
            .map(|(i, (a, b))| AgentCheckpoint::new(feeder, i, b, &a.main))
            .collect()
    }

    pub fn from_checkpoints(feeder: &Feeder, cps: &[AgentCheckpoint]) -> Result<Self, AgentError> {
        let mut sorted: Vec<&AgentCheckpoint> = cps.iter().collect();
        sorted.sort_by_key(|c| c.agent);
        let breakers = sorted.iter().map(|c| c.bind(feeder)).collect::<Result<Vec<_>, _>>()?;
        let mut seen = vec![false; feeder.breaker_count()];
        for &b in breakers.iter().flatten() {
            if std::mem::replace(&mut seen[b], true) {
                return Err(AgentError::Checkpoint(format!(
                    "breaker {} bound to several agents",
                    feeder.breakers()[b].id
                )));
            }
        }
        Ok(Self {
            agents: sorted.iter().map(|c| AgentPair::from_network(c.network.clone())).collect(),
            breakers,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub models: TrainedModels,
    pub logs: Vec<EpisodeLog>,
    /// Mean training loss per episode (NaN before training starts).
    pub losses: Vec<f64>,
}

pub fn train(feeder: &Feeder, cfg: &TrainingConfig) -> Result<TrainingOutcome, TrainError> {
    train_with(feeder, cfg, |_| {})
}

/// [`train`] with a callback after every episode.
pub fn train_with(
    feeder: &Feeder,
    cfg: &TrainingConfig,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<TrainingOutcome, TrainError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env = Environment::new(feeder.clone(), cfg.env_config());
    let breakers = env.agent_breakers().to_vec();
    let counts = env.action_counts();
    let h = &cfg.hyper;
    let mut agents: Vec<AgentPair> = breakers
        .iter()
        .map(|b| AgentPair::new(&h.layer_sizes(b.len(), 2 * b.len()), &mut rng))
        .collect();
    let mut buffers: Vec<ReplayBuffer> = breakers.iter().map(|_| ReplayBuffer::new(h.capacity)).collect();

    let mut logs = Vec::with_capacity(cfg.episodes);
    let mut losses = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0usize;
    for episode in 0..cfg.episodes {
        let eps = cfg.epsilon.epsilon(episode);
        let mut obs = env.reset();
        let (mut total, mut violations, mut served) = (0.0, 0, 0.0);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for _ in 0..cfg.steps_per_episode {
            let explore = rng.gen::<f64>() < eps;
            let joint = match (cfg.masking, explore) {
                (true, true) => explore_joint(&env, &counts, &mut rng)?.joint,
                (false, true) => random_joint_action(&counts, &mut rng),
                (masked, false) => {
                    let q = agents
                        .iter()
                        .zip(&obs)
                        .map(|(a, o)| a.q_values(o))
                        .collect::<Result<Vec<_>, _>>()?;
                    if masked {
                        exploit_joint(&env, &q, &obs, &mut rng)?.joint
                    } else {
                        greedy_joint(&q)
                    }
                }
            };
            let step = env.step(&joint)?;
            total += step.reward;
            violations += usize::from(step.violation);
            served = step.served_kw;
            for (i, buf) in buffers.iter_mut().enumerate() {
                buf.push(Experience {
                    o: obs[i].clone(),
                    a: joint.actions[i].index,
                    r: step.reward,
                    o_next: step.observations[i].clone(),
                });
            }
            if buffers.iter().all(|b| b.len() >= h.batch_size) {
                for (agent, buf) in agents.iter_mut().zip(&buffers) {
                    let batch = buf.sample(h.batch_size, &mut rng)?;
                    loss_sum += agent.train_step(&batch, h)?;
                    loss_n += 1;
                }
            }
            global_step += 1;
            if global_step.is_multiple_of(cfg.sync_every) {
                agents.iter_mut().for_each(AgentPair::sync_target);
            }
            obs = step.observations;
        }
        let log = EpisodeLog {
            episode,
            reward: total,
            restored_kw: served,
            violations,
            epsilon: eps,
        };
        on_episode(&log);
        logs.push(log);
        losses.push(if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN });
    }
    Ok(TrainingOutcome {
        models: TrainedModels { agents, breakers },
        logs,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Toggle {
    pub agent: usize,
    pub breaker: String,
    pub close: bool,
    /// The breaker was already in the requested position.
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    /// 1-based step number.
    pub step: usize,
    pub toggles: Vec<Toggle>,
    pub states: Vec<bool>,
    pub served_kw: f64,
    pub weighted_kw: f64,
    pub reward: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestorationTrace {
    pub steps: Vec<TraceStep>,
}

impl RestorationTrace {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| s.violation).count()
    }

    pub fn final_served_kw(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.served_kw)
    }

    pub fn final_states(&self) -> Option<&[bool]> {
        self.steps.last().map(|s| s.states.as_slice())
    }

    /// Step number at which `states` is first reached.
    pub fn first_reaching(&self, states: &[bool]) -> Option<usize> {
        self.steps.iter().find(|s| s.states == states).map(|s| s.step)
    }

    /// Largest served power over the trace among violation-free steps.
    pub fn best_served_kw(&self) -> f64 {
        self.steps
            .iter()
            .filter(|s| !s.violation)
            .map(|s| s.served_kw)
            .fold(0.0, f64::max)
    }

    /// CSV with one row per agent per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,agent,breaker,toggle,served_kw,reward")?;
        for s in &self.steps {
            for t in &s.toggles {
                let toggle = if t.close { "close" } else { "open" };
                writeln!(w, "{},{},{},{},{},{}", s.step, t.agent, t.breaker, toggle, s.served_kw, s.reward)?;
            }
        }
        Ok(())
    }
}

/// Greedy rollout from the all-open state using local observations only.
///
/// No validity checks are made; violating steps earn `penalty` and are
/// flagged in the trace.
pub fn execute(models: &TrainedModels, feeder: &Feeder, max_steps: usize, penalty: f64) -> RestorationTrace {
    let mut env = Environment::with_agents(
        feeder.clone(),
        models.breakers.clone(),
        EnvConfig {
            u_max: max_steps,
            reward_mode: RewardMode::Penalty { m: penalty },
            agent_mode: AgentMode::Multi,
        },
    );
    let mut obs = env.reset();
    let mut steps = Vec::with_capacity(max_steps);
    for step in 1..=max_steps {
        let choice: Vec<usize> = models
            .agents
            .iter()
            .zip(&obs)
            .map(|(a, o)| {
                let q = a.q_values(o).expect("models match the feeder layout");
                masked_argmax(&q, &[]).expect("at least one action")
            })
            .collect();
        let joint = crate::env::JointAction::from_indices(choice);
        let toggles = joint
            .actions
            .iter()
            .enumerate()
            .map(|(agent, a)| {
                let (k, close) = a.decode();
                Toggle {
                    agent,
                    breaker: feeder.breakers()[models.breakers[agent][k]].id.clone(),
                    close,
                    noop: a.is_noop(&obs[agent]),
                }
            })
            .collect();
        let r = env.step(&joint).expect("well-formed greedy joint action");
        steps.push(TraceStep {
            step,
            toggles,
            states: env.states().to_vec(),
            served_kw: r.served_kw,
            weighted_kw: r.weighted_kw,
            reward: r.reward,
            violation: r.violation,
        });
        obs = r.observations;
    }
    RestorationTrace { steps }
}

/// Untrained models for `feeder` with all parameters zero.
pub fn zero_models(feeder: &Feeder, mode: AgentMode, hidden: &[usize]) -> TrainedModels {
    let breakers = agent_layout(feeder, mode);
    let agents = breakers
        .iter()
        .map(|b| {
            let mut sizes = vec![b.len()];
            sizes.extend(hidden);
            sizes.push(2 * b.len());
            AgentPair::from_network(crate::agent::QNetwork::zeros(&sizes))
        })
        .collect();
    TrainedModels { agents, breakers }
}

pub fn write_episodes_csv<W: Write>(logs: &[EpisodeLog], mut w: W) -> io::Result<()> {
    writeln!(w, "episode,R,restored_kw,violations,epsilon")?;
    for l in logs {
        writeln!(w, "{},{},{},{},{}", l.episode, l.reward, l.restored_kw, l.violations, l.epsilon)?;
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn rewards(logs: &[EpisodeLog]) -> Vec<f64> {
    logs.iter().map(|l| l.reward).collect()
}

/// Mean episode reward over the last `window` episodes.
pub fn final_mean(logs: &[EpisodeLog], window: usize) -> f64 {
    let r = rewards(logs);
    mean(&r[r.len().saturating_sub(window)..])
}

/// Population standard deviation of the last `window` episode rewards.
pub fn final_std(logs: &[EpisodeLog], window: usize) -> f64 {
    let r = rewards(logs);
    let tail = &r[r.len().saturating_sub(window)..];
    let m = mean(tail);
    (tail.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / tail.len() as f64).sqrt()
}

pub fn first_mean(logs: &[EpisodeLog], window: usize) -> f64 {
    let r = rewards(logs);
    mean(&r[..window.min(r.len())])
}

pub fn max_reward(logs: &[EpisodeLog]) -> f64 {
    logs.iter().map(|l| l.reward).fold(f64::NEG_INFINITY, f64::max)
}

/// First episode whose trailing-window mean reaches 95% of the final mean.
pub fn convergence_episode(logs: &[EpisodeLog], window: usize) -> Option<usize> {
    let r = rewards(logs);
    if r.is_empty() {
        return None;
    }
    let w = window.clamp(1, r.len());
    let target = final_mean(logs, w);
    let threshold = if target >= 0.0 { 0.95 * target } else { 1.05 * target };
    (0..=r.len() - w).find(|&e| mean(&r[e..e + w]) >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub episodes: usize,
    pub convergence_episode: Option<usize>,
    pub first_mean: f64,
    pub final_mean: f64,
    pub final_std: f64,
    pub max_reward: f64,
    pub violations: usize,
    /// Served power after a greedy rollout of the trained models.
    pub executed_kw: f64,
    pub wall_clock_s: f64,
}

impl ComparisonRow {
    pub fn from_outcome(name: &str, feeder: &Feeder, cfg: &TrainingConfig, out: &TrainingOutcome, secs: f64) -> Self {
        let trace = execute(&out.models, feeder, cfg.steps_per_episode, cfg.penalty);
        Self {
            name: name.to_string(),
            episodes: out.logs.len(),
            convergence_episode: convergence_episode(&out.logs, REPORT_WINDOW),
            first_mean: first_mean(&out.logs, REPORT_WINDOW),
            final_mean: final_mean(&out.logs, REPORT_WINDOW),
            final_std: final_std(&out.logs, REPORT_WINDOW),
            max_reward: max_reward(&out.logs),
            violations: out.logs.iter().map(|l| l.violations).sum(),
            executed_kw: trace.final_served_kw(),
            wall_clock_s: secs,
        }
    }
}

/// Trains every variant (in parallel) and summarizes each run.
pub fn compare(
    feeder: &Feeder,
    variants: &[(String, TrainingConfig)],
) -> Result<Vec<(ComparisonRow, TrainingOutcome)>, TrainError> {
    variants
        .par_iter()
        .map(|(name, cfg)| {
            let start = Instant::now();
            let out = train(feeder, cfg)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((ComparisonRow::from_outcome(name, feeder, cfg, &out, secs), out))
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "variant,episodes,convergence_episode,first50_mean,final50_mean,final50_std,max_reward,violations,executed_kw,wall_clock_s"
    )?;
    for r in rows {
        let conv = r.convergence_episode.map_or(String::new(), |e| e.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            r.name, r.episodes, conv, r.first_mean, r.final_mean, r.final_std, r.max_reward, r.violations,
            r.executed_kw, r.wall_clock_s
        )?;
    }
    Ok(())
}
