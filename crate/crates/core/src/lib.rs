//! Multi-agent deep Q-learning for load restoration in networked microgrids.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: feeder model, document format and built-in feeders.
//! * [`powerflow`]: backward/forward sweep and constraint evaluation.
//! * [`env`]: the restoration MDP with joint actions and validity queries.
//! * [`agent`]: Q-networks, replay buffers, epsilon schedules, updates.
//! * [`masking`]: invalid-action-masked joint action selection.
//! * [`trainer`]: centralized training, decentralized execution, comparisons.
//! * [`oracle`]: exhaustive ground truth for the restoration optimum.

pub mod agent;
pub mod env;
pub mod grid;
pub mod masking;
pub mod oracle;
pub mod powerflow;
pub mod trainer;

pub use grid::{builtin_feeder, load_feeder, validate_feeder, Feeder, GridError};
pub use powerflow::{
    check_constraints, restored_power, solve, ConstraintReport, PowerFlowError, PowerFlowSolution,
};
pub use agent::{EpsilonSchedule, Hyperparameters};
pub use env::{AgentMode, EnvConfig, Environment, RewardMode};
pub use oracle::{OracleCache, OracleResult};
pub use trainer::{execute, train, RestorationTrace, TrainedModels, TrainingConfig, TrainingOutcome};
