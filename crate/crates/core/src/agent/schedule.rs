use serde::{Deserialize, Serialize};

/// Exponentially decaying exploration rate, indexed by episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_min: f64,
    pub eps_max: f64,
    pub lambda: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            eps_min: 0.01,
            eps_max: 1.0,
            lambda: 0.01,
        }
    }
}

impl EpsilonSchedule {
    pub fn epsilon(&self, episode: usize) -> f64 {
        self.eps_min + (self.eps_max - self.eps_min) * (-self.lambda * episode as f64).exp()
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.eps_min)
            && self.eps_min < self.eps_max
            && self.eps_max <= 1.0
            && self.lambda > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.epsilon(0), 1.0);
        assert!((s.epsilon(100) - (0.01 + 0.99 * (-1.0f64).exp())).abs() < 1e-12);
        assert!((s.epsilon(100) - 0.37420).abs() < 1e-5);
        assert!(s.epsilon(1_000_000) - s.eps_min < 1e-9);
        for e in 0..2000 {
            assert!(s.epsilon(e + 1) < s.epsilon(e));
        }
    }
}
