use serde::{Deserialize, Serialize};

use super::loss::{check_lambda, GramLoss};
use super::schedule::default_hypers;
use crate::baseline::BiasProjection;
use crate::error::{Error, Result};
use crate::grad::OptimizerKind;

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_SEED: u64 = 7;

/// Settings shared by both trainers. `blocks`, `batch_size`, `neutral_sample`,
/// `loss` are ignored by the linear baseline; `projection` by the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub blocks: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Neutral rows drawn per step; `None` means `min(batch_size, |N|)`.
    pub neutral_sample: Option<usize>,
    pub loss: GramLoss,
    pub projection: BiasProjection,
}

impl TrainConfig {
    /// Defaults from the hyperparameter schedule for dimension `d`.
    pub fn for_dim(d: usize) -> Self {
        let h = default_hypers(d);
        Self {
            lambda: DEFAULT_LAMBDA,
            lr: h.lr,
            batch_size: h.batch_size,
            epochs: h.epochs,
            blocks: h.blocks,
            optimizer: OptimizerKind::Adam,
            seed: DEFAULT_SEED,
            neutral_sample: None,
            loss: GramLoss::default(),
            projection: BiasProjection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("block count must be positive".into()));
        }
        if self.neutral_sample == Some(0) {
            return Err(Error::InvalidConfig("neutral sample must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_schedule() {
        let c = TrainConfig::for_dim(768);
        assert_eq!((c.blocks, c.lr, c.batch_size, c.epochs), (1, 5e-5, 2048, 100));
        assert_eq!(c.lambda, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainConfig::for_dim(8);
        let mut c = base.clone();
        c.lambda = 1.2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.lr = f64::INFINITY;
        assert!(c.validate().is_err());
        let mut c = base;
        c.neutral_sample = Some(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = TrainConfig::for_dim(64);
        let back: TrainConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
