use std::time::Instant;

use nalgebra::DMatrix;

use super::config::TrainConfig;
use super::loss::dsd_loss_backward;
use super::net::DebiasNet;
use crate::bias_space::{BiasSubspace, NeutralSet};
use crate::checkpoint::{Checkpoint, Model};
use crate::embedding::{normalize_matrix_rows, EmbeddingSet};
use crate::error::{Error, Result};
use crate::grad::{zero_grads, OptimizerState, SeededRng};
use crate::manifest::RunManifest;
use crate::parallel;

/// Rows per chunk in the final pass over the vocabulary.
pub const FORWARD_CHUNK: usize = 4096;

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_NEUTRAL: u64 = 3;

#[derive(Debug, Clone)]
pub struct DsdOutcome {
    pub net: DebiasNet,
    pub embeddings: EmbeddingSet,
    pub optimizer: OptimizerState,
    pub manifest: RunManifest,
}

impl DsdOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.manifest.seed,
            config_json: self.manifest.config.to_string(),
            model: Model::Residual(self.net.clone()),
            optimizer: Some(self.optimizer.clone()),
            loss_history: self.manifest.epoch_losses.clone(),
        }
    }
}

/// Minibatch training of a residual network. Inputs are row-normalized;
/// returns the normalized network outputs for the whole vocabulary.
///
/// Per-epoch loss is the mean of the step losses in that epoch.
pub fn train_dsd(set: &EmbeddingSet, subspace: &BiasSubspace, neutral: &NeutralSet, cfg: &TrainConfig) -> Result<DsdOutcome> {
    cfg.validate()?;
    if subspace.dim() != set.dim() {
        return Err(Error::DimMismatch {
            expected: set.dim(),
            got: subspace.dim(),
        });
    }
    if neutral.is_empty() {
        return Err(Error::EmptyData("neutral set is empty".into()));
    }
    if let Some(&bad) = neutral.indices.iter().find(|&&i| i >= set.len()) {
        return Err(Error::InvalidConfig(format!("neutral index {bad} out of range")));
    }
    let started = Instant::now();
    let input = set.normalize_rows()?;
    let x = input.matrix();

    let root = SeededRng::new(cfg.seed);
    let mut net = DebiasNet::identity_init(set.dim(), cfg.blocks, &mut root.fork(STREAM_INIT))?;
    let mut order_rng = root.fork(STREAM_ORDER);
    let mut neutral_rng = root.fork(STREAM_NEUTRAL);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, net.params())?;
    let sample = cfg.neutral_sample.unwrap_or(cfg.batch_size).min(neutral.len());

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let snapshot = (net.clone(), opt.clone());
        let diverged = |step: usize, reason: String, history: &[f64]| Error::Diverged {
            epoch,
            step,
            reason,
            last_good: Some(Box::new(Checkpoint {
                seed: cfg.seed,
                config_json: cfg.to_json(),
                model: Model::Residual(snapshot.0.clone()),
                optimizer: Some(snapshot.1.clone()),
                loss_history: history.to_vec(),
            })),
        };

        order_rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch = gather(x, batch_idx);
            let picks: Vec<usize> = neutral_rng
                .sample_indices(neutral.len(), sample)
                .into_iter()
                .map(|i| neutral.indices[i])
                .collect();
            let neutral_batch = gather(x, &picks);

            zero_grads(net.params_mut());
            let parts = dsd_loss_backward(&mut net, &batch, &neutral_batch, subspace, cfg.lambda, cfg.loss)?;
            if !parts.total.is_finite() {
                return Err(diverged(step, format!("loss is {}", parts.total), &epoch_losses));
            }
            if let Err(e) = opt.step(net.params_mut()) {
                return Err(diverged(step, e.to_string(), &epoch_losses));
            }
            sum += parts.total;
            steps += 1;
            step += 1;
        }
        if net.params().iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
            return Err(diverged(step, "parameters became non-finite".into(), &epoch_losses));
        }
        let mean = sum / steps.max(1) as f64;
        log::debug!("dsd epoch {epoch}: loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    zero_grads(net.params_mut());

    let out = forward_all(&net, x)?;
    let out = normalize_matrix_rows(&out).map_err(|row| Error::ZeroNorm {
        row,
        token: set.vocab()[row].clone(),
    })?;
    let embeddings = set.with_matrix(out)?;
    let manifest = RunManifest::for_training("dsd", cfg, epoch_losses, started.elapsed().as_secs_f64());
    Ok(DsdOutcome {
        net,
        embeddings,
        optimizer: opt,
        manifest,
    })
}

fn gather(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

/// Chunked forward pass; chunks may run on several threads.
fn forward_all(net: &DebiasNet, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let starts: Vec<usize> = (0..x.nrows()).step_by(FORWARD_CHUNK).collect();
    let parts = parallel::ordered_map(&starts, parallel::thread_count(), |&s| {
        let n = FORWARD_CHUNK.min(x.nrows() - s);
        net.forward(&x.rows(s, n).into_owned())
    });
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (&s, part) in starts.iter().zip(parts) {
        let part = part?;
        out.rows_mut(s, part.nrows()).copy_from(&part);
    }
    Ok(out)
}
