use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentError, QNetwork};
use crate::grid::Feeder;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run one agent without the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format_version: u32,
    pub feeder_hash: String,
    pub agent: usize,
    /// Breaker ids in observation order.
    pub breakers: Vec<String>,
    pub network: QNetwork,
}

impl AgentCheckpoint {
    pub fn new(feeder: &Feeder, agent: usize, breakers: &[usize], network: &QNetwork) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            feeder_hash: feeder.content_hash(),
            agent,
            breakers: breakers.iter().map(|&b| feeder.breakers()[b].id.clone()).collect(),
            network: network.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string(self).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let bytes =
            std::fs::read(path).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        let cp: Self = serde_json::from_slice(&bytes).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                cp.format_version
            )));
        }
        if cp.network.input_len() != cp.breakers.len() || cp.network.output_len() != 2 * cp.breakers.len() {
            return Err(AgentError::Checkpoint("network shape does not match breaker list".into()));
        }
        Ok(cp)
    }

    /// Global breaker indices on `feeder`, checking every id resolves.
    pub fn bind(&self, feeder: &Feeder) -> Result<Vec<usize>, AgentError> {
        self.breakers
            .iter()
            .map(|id| {
                feeder
                    .breaker_index(id)
                    .ok_or_else(|| AgentError::Checkpoint(format!("breaker {id} not on feeder")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::builtin_feeder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let f = builtin_feeder("ieee13").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::new(&[4, 8, 8], &mut rng);
        let cp = AgentCheckpoint::new(&f, 0, f.agent_breakers(0), &net);
        let dir = std::env::temp_dir().join(format!("gridmask-cp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("agent_0.json");
        cp.save(&path).unwrap();
        let back = AgentCheckpoint::load(&path).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.bind(&f).unwrap(), f.agent_breakers(0));
        assert!(back.bind(&builtin_feeder("ieee123").unwrap()).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
