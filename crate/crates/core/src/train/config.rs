use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};

/// Optimization and data settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_n: usize,
    pub patch: usize,
    pub total_iters: u64,
    pub decay_every: u64,
    pub seed: u64,
    /// Distinct parameter levels per minibatch.
    pub levels_per_batch: usize,
    /// Validation interval in iterations (0 disables periodic validation).
    pub val_every: u64,
    /// Checkpoint interval in iterations (0 writes only the final checkpoint).
    pub checkpoint_every: u64,
    /// Seed for validation degradations.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk(Task::Denoise)
    }
}

impl TrainConfig {
    /// Desk-scale defaults for `task`.
    pub fn desk(task: Task) -> Self {
        TrainConfig {
            task,
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_n: 16,
            patch: 32,
            total_iters: 20_000,
            decay_every: 8_000,
            seed: 0,
            levels_per_batch: 4,
            val_every: 2_000,
            checkpoint_every: 2_000,
            eval_seed: 12_345,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return bad(format!(
                "need 0 < beta1 < beta2 < 1, got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_n == 0
            || self.levels_per_batch == 0
            || self.batch_n % self.levels_per_batch != 0
        {
            return bad(format!(
                "batch_n ({}) must be a positive multiple of levels_per_batch ({})",
                self.batch_n, self.levels_per_batch
            ));
        }
        if self.patch == 0 || (self.task.align8() && self.patch % 8 != 0) {
            return bad(format!(
                "patch size {} must be positive and a multiple of 8 for deblocking",
                self.patch
            ));
        }
        if self.decay_every == 0 {
            return bad("decay_every must be at least 1".into());
        }
        Ok(())
    }

    /// `lr0 · 0.5^floor(iter / decay_every)`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let halvings = (iter / self.decay_every).min(i32::MAX as u64) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let c = TrainConfig::desk(Task::Denoise);
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(7_999), 1e-4);
        assert_eq!(c.lr_at(8_000), 5e-5);
        assert_eq!(c.lr_at(16_000), 2.5e-5);
    }

    #[test]
    fn validation_rules() {
        let ok = TrainConfig::desk(Task::Deblock);
        assert!(ok.validate().is_ok());
        for broken in [
            TrainConfig {
                lr0: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                beta1: 0.9995,
                ..ok.clone()
            },
            TrainConfig {
                batch_n: 10,
                ..ok.clone()
            },
            TrainConfig {
                patch: 36,
                ..ok.clone()
            },
            TrainConfig {
                decay_every: 0,
                ..ok.clone()
            },
        ] {
            assert!(broken.validate().is_err(), "{broken:?}");
        }
    }
}
