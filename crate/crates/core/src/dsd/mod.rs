//! Residual-network debiasing.

mod config;
pub mod loss;
mod net;
mod schedule;
mod train;

pub use config::{TrainConfig, DEFAULT_LAMBDA, DEFAULT_SEED};
pub use loss::{dsd_loss, dsd_loss_backward, gram_drift, GramLoss, LossParts};
pub use net::{BlockView, DebiasNet};
pub use schedule::{default_hypers, HyperSchedule, SMALL_DIM_CUTOFF, SMALL_DIM_LR};
pub use train::{train_dsd, DsdOutcome, FORWARD_CHUNK};
