use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grad::{ParamTensor, SeededRng};

const PARAMS_PER_BLOCK: usize = 4;

/// Stack of residual blocks `x + relu(x W1ᵀ + b1) W2ᵀ + b2` acting on
/// row vectors. Hidden width equals the embedding dimension.
///
/// Parameters are stored flat, four per block in the order
/// `w1 (d x d)`, `b1 (1 x d)`, `w2 (d x d)`, `b2 (1 x d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasNet {
    dim: usize,
    params: Vec<ParamTensor>,
}

pub struct BlockView<'a> {
    pub w1: &'a DMatrix<f64>,
    pub b1: &'a DMatrix<f64>,
    pub w2: &'a DMatrix<f64>,
    pub b2: &'a DMatrix<f64>,
}

/// Intermediate values of one forward pass, needed for backprop.
pub(crate) struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    activations: Vec<DMatrix<f64>>,
}

impl DebiasNet {
    /// `w1 ~ U(-1/sqrt(d), 1/sqrt(d))`, everything else zero, so every
    /// block starts as the identity map.
    pub fn identity_init(dim: usize, blocks: usize, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 || blocks == 0 {
            return Err(Error::InvalidConfig(format!(
                "network needs dim >= 1 and blocks >= 1 (got {dim}, {blocks})"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut params = Vec::with_capacity(blocks * PARAMS_PER_BLOCK);
        for b in 0..blocks {
            let w1 = DMatrix::from_fn(dim, dim, |_, _| rng.uniform(-bound, bound));
            params.push(ParamTensor::new(format!("block{b}.w1"), w1));
            params.push(ParamTensor::new(format!("block{b}.b1"), DMatrix::zeros(1, dim)));
            params.push(ParamTensor::new(format!("block{b}.w2"), DMatrix::zeros(dim, dim)));
            params.push(ParamTensor::new(format!("block{b}.b2"), DMatrix::zeros(1, dim)));
        }
        Ok(Self { dim, params })
    }

    pub fn from_params(dim: usize, params: Vec<ParamTensor>) -> Result<Self> {
        if dim == 0 || params.is_empty() || params.len() % PARAMS_PER_BLOCK != 0 {
            return Err(Error::InvalidConfig(format!(
                "expected a positive multiple of {PARAMS_PER_BLOCK} parameters for dim {dim}, got {}",
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let expected = if i % 2 == 0 { (dim, dim) } else { (1, dim) };
            if p.values.shape() != expected || p.grad.shape() != expected {
                return Err(Error::InvalidConfig(format!(
                    "parameter {} has shape {:?}, expected {expected:?}",
                    p.name,
                    p.values.shape()
                )));
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("parameter {} is not finite", p.name)));
            }
        }
        Ok(Self { dim, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> usize {
        self.params.len() / PARAMS_PER_BLOCK
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    pub fn block(&self, i: usize) -> BlockView<'_> {
        let p = &self.params[i * PARAMS_PER_BLOCK..(i + 1) * PARAMS_PER_BLOCK];
        BlockView {
            w1: &p[0].values,
            b1: &p[1].values,
            w2: &p[2].values,
            b2: &p[3].values,
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in 0..self.blocks() {
            let blk = self.block(b);
            let act = relu(add_row(&(&h * blk.w1.transpose()), blk.b1));
            h += add_row(&(act * blk.w2.transpose()), blk.b2);
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        self.check_input(x)?;
        let n = self.blocks();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            activations: Vec::with_capacity(n),
        };
        let mut h = x.clone();
        for b in 0..n {
            let blk = self.block(b);
            let pre = add_row(&(&h * blk.w1.transpose()), blk.b1);
            let act = relu(pre.clone());
            let out = &h + add_row(&(&act * blk.w2.transpose()), blk.b2);
            cache.inputs.push(h);
            cache.pre_activations.push(pre);
            cache.activations.push(act);
            h = out;
        }
        Ok((h, cache))
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    pub(crate) fn backward(&mut self, cache: &ForwardCache, d_out: DMatrix<f64>) {
        let mut dy = d_out;
        for b in (0..self.blocks()).rev() {
            let base = b * PARAMS_PER_BLOCK;
            let x_in = &cache.inputs[b];
            let pre = &cache.pre_activations[b];
            let act = &cache.activations[b];

            self.params[base + 2].grad += dy.transpose() * act;
            self.params[base + 3].grad += dy.row_sum();

            let mut dh = &dy * &self.params[base + 2].values;
            dh.zip_apply(pre, |g, p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
            self.params[base].grad += dh.transpose() * x_in;
            self.params[base + 1].grad += dh.row_sum();

            dy += dh * &self.params[base].values;
        }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }
}

fn add_row(m: &DMatrix<f64>, row: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut r in out.row_iter_mut() {
        r += row.row(0);
    }
    out
}

fn relu(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.apply(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    m
}
