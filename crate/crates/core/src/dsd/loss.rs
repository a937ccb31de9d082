use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::net::DebiasNet;
use crate::bias_space::BiasSubspace;
use crate::error::{Error, Result};

/// First loss term of the residual-network objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramLoss {
    /// `||O Oᵀ - X Xᵀ||_F / b` over the batch.
    #[default]
    GramPreserving,
    /// `||Oᵀ O - I||_F`, read literally off the algorithm listing.
    LiteralOrthonormal,
}

impl std::str::FromStr for GramLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram" | "gram-preserving" => Ok(Self::GramPreserving),
            "literal-orthonormal" => Ok(Self::LiteralOrthonormal),
            other => Err(Error::InvalidConfig(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub norm1: f64,
    pub norm2: f64,
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// Value and gradient (w.r.t. outputs) of the Gram term.
fn gram_term(out: &DMatrix<f64>, input: &DMatrix<f64>, kind: GramLoss) -> (f64, DMatrix<f64>) {
    match kind {
        GramLoss::GramPreserving => {
            let b = out.nrows();
            if b == 0 {
                return (0.0, out.clone());
            }
            let diff = out * out.transpose() - input * input.transpose();
            let norm = diff.norm();
            let value = norm / b as f64;
            let grad = if norm > 0.0 {
                (diff * out) * (2.0 / (norm * b as f64))
            } else {
                DMatrix::zeros(out.nrows(), out.ncols())
            };
            (value, grad)
        }
        GramLoss::LiteralOrthonormal => {
            let d = out.ncols();
            let diff = out.transpose() * out - DMatrix::identity(d, d);
            let norm = diff.norm();
            let grad = if norm > 0.0 {
                (out * diff) * (2.0 / norm)
            } else {
                DMatrix::zeros(out.nrows(), out.ncols())
            };
            (norm, grad)
        }
    }
}

/// `||O_n Bᵀ||_F / sqrt(m k)` and its gradient w.r.t. `O_n`.
pub(crate) fn projection_term(out: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let m = out.nrows();
    let k = basis.nrows();
    if m == 0 || k == 0 {
        return (0.0, DMatrix::zeros(out.nrows(), out.ncols()));
    }
    let scale = ((m * k) as f64).sqrt();
    let proj = out * basis.transpose();
    let norm = proj.norm();
    let grad = if norm > 0.0 {
        (proj * basis) / (norm * scale)
    } else {
        DMatrix::zeros(out.nrows(), out.ncols())
    };
    (norm / scale, grad)
}

fn check_shapes(net: &DebiasNet, batch: &DMatrix<f64>, neutral: &DMatrix<f64>, subspace: &BiasSubspace) -> Result<()> {
    for got in [batch.ncols(), neutral.ncols(), subspace.dim()] {
        if got != net.dim() {
            return Err(Error::DimMismatch {
                expected: net.dim(),
                got,
            });
        }
    }
    Ok(())
}

/// `(1 - λ)·norm1 + λ·norm2` for a batch of (row-normalized) inputs and a
/// batch of neutral rows.
pub fn dsd_loss(
    net: &DebiasNet,
    batch: &DMatrix<f64>,
    neutral_batch: &DMatrix<f64>,
    subspace: &BiasSubspace,
    lambda: f64,
    kind: GramLoss,
) -> Result<LossParts> {
    check_lambda(lambda)?;
    check_shapes(net, batch, neutral_batch, subspace)?;
    let out = net.forward(batch)?;
    let out_n = net.forward(neutral_batch)?;
    let (norm1, _) = gram_term(&out, batch, kind);
    let (norm2, _) = projection_term(&out_n, subspace.basis());
    Ok(LossParts {
        total: (1.0 - lambda) * norm1 + lambda * norm2,
        norm1,
        norm2,
    })
}

/// Same as [`dsd_loss`], additionally accumulating parameter gradients into
/// `net`. Gradients are not zeroed first.
pub fn dsd_loss_backward(
    net: &mut DebiasNet,
    batch: &DMatrix<f64>,
    neutral_batch: &DMatrix<f64>,
    subspace: &BiasSubspace,
    lambda: f64,
    kind: GramLoss,
) -> Result<LossParts> {
    check_lambda(lambda)?;
    check_shapes(net, batch, neutral_batch, subspace)?;
    let (out, cache) = net.forward_cached(batch)?;
    let (out_n, cache_n) = net.forward_cached(neutral_batch)?;
    let (norm1, d_out) = gram_term(&out, batch, kind);
    let (norm2, d_out_n) = projection_term(&out_n, subspace.basis());
    if lambda < 1.0 {
        net.backward(&cache, d_out * (1.0 - lambda));
    }
    if lambda > 0.0 {
        net.backward(&cache_n, d_out_n * lambda);
    }
    Ok(LossParts {
        total: (1.0 - lambda) * norm1 + lambda * norm2,
        norm1,
        norm2,
    })
}

/// `||O Oᵀ - X Xᵀ||_F / ||X Xᵀ||_F`.
pub fn gram_drift(outputs: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Result<f64> {
    if outputs.shape() != inputs.shape() {
        return Err(Error::DimMismatch {
            expected: inputs.nrows(),
            got: outputs.nrows(),
        });
    }
    let g = inputs * inputs.transpose();
    let denom = g.norm();
    if denom == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((outputs * outputs.transpose() - g).norm() / denom)
}
