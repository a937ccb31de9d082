use serde::{Deserialize, Serialize};

/// Default `(blocks, lr, batch, epochs)` for an embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSchedule {
    pub blocks: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl HyperSchedule {
    pub const fn new(blocks: usize, lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            blocks,
            lr,
            batch_size,
            epochs,
        }
    }
}

/// Learning rate used below the smallest tabulated dimension. At these sizes
/// 5e-5 barely moves the network within 100 epochs.
pub const SMALL_DIM_LR: f64 = 1e-2;

/// Smallest dimension in the published hyperparameter table.
pub const SMALL_DIM_CUTOFF: usize = 768;

/// Total over `d >= 1`; block count is non-decreasing in `d`.
pub fn default_hypers(d: usize) -> HyperSchedule {
    match d {
        0..SMALL_DIM_CUTOFF => HyperSchedule::new(1, SMALL_DIM_LR, 2048, 100),
        ..=1024 => HyperSchedule::new(1, 5e-5, 2048, 100),
        ..=1600 => HyperSchedule::new(1, 5e-5, 2048, 150),
        ..=2304 => HyperSchedule::new(2, 5e-5, 1024, 200),
        ..=3072 => HyperSchedule::new(2, 5e-5, 1024, 250),
        ..=3584 => HyperSchedule::new(3, 1e-5, 1024, 250),
        _ => HyperSchedule::new(3, 1e-5, 1024, 300),
    }
}
