use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-wise learning-rate decay at fixed epoch milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        if let Some(&last) = self.milestones.last() {
            if epochs > 0 && last >= epochs {
                return Err(Error::Config(format!(
                    "milestone {last} is not below the epoch count {epochs}"
                )));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("decay factor {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }

    /// `base_lr · gamma^(#milestones ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        let mut lr = self.base_lr;
        for _ in 0..passed {
            lr *= self.gamma;
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recipe() -> MultiStepSchedule {
        MultiStepSchedule {
            base_lr: 1e-2,
            milestones: vec![40, 60, 70],
            gamma: 0.1,
        }
    }

    #[test]
    fn recipe_boundaries() {
        let s = recipe();
        assert_eq!(s.lr_at(0), 1e-2);
        assert_eq!(s.lr_at(39), 1e-2);
        assert_eq!(s.lr_at(40), 1e-2 * 0.1);
        assert_eq!(s.lr_at(70), 1e-2 * 0.1 * 0.1 * 0.1);
        assert!((s.lr_at(70) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        assert!(recipe().validate(80).is_ok());
        assert!(recipe().validate(70).is_err());
        let mut bad = recipe();
        bad.milestones = vec![40, 40];
        assert!(bad.validate(80).is_err());
        bad = recipe();
        bad.gamma = 1.0;
        assert!(bad.validate(80).is_err());
    }
}
