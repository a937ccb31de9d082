//! Parameters, optimizers, seeded randomness and finite-difference checks
//! for the two hand-differentiated losses in this crate.

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// A named parameter and its gradient accumulator (same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub values: DMatrix<f64>,
    pub grad: DMatrix<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, values: DMatrix<f64>) -> Self {
        let grad = DMatrix::zeros(values.nrows(), values.ncols());
        Self {
            name: name.into(),
            values,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn zero_grads(params: &mut [ParamTensor]) {
    params.iter_mut().for_each(ParamTensor::zero_grad);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
///
/// The moment buffers are empty for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub first_moment: Vec<DMatrix<f64>>,
    pub second_moment: Vec<DMatrix<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[ParamTensor]) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        let buffers = || match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => params
                .iter()
                .map(|p| DMatrix::zeros(p.values.nrows(), p.values.ncols()))
                .collect(),
        };
        Ok(Self {
            kind,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPSILON,
            step_count: 0,
            first_moment: buffers(),
            second_moment: buffers(),
        })
    }

    /// Applies one update in place. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [ParamTensor]) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient {
                param: bad.name.clone(),
            });
        }
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, self.lr),
            OptimizerKind::Adam => self.adam_step(params)?,
        }
        self.step_count += 1;
        Ok(())
    }

    fn adam_step(&mut self, params: &mut [ParamTensor]) -> Result<()> {
        if self.first_moment.len() != params.len()
            || params
                .iter()
                .zip(&self.first_moment)
                .any(|(p, m)| p.values.shape() != m.shape())
        {
            return Err(Error::InvalidConfig("optimizer state does not match parameters".into()));
        }
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

fn sgd_step(params: &mut [ParamTensor], lr: f64) {
    for p in params {
        p.values.zip_apply(&p.grad, |v, g| *v -= lr * g);
    }
}

/// Deterministic generator: ChaCha8 seeded from a 64-bit integer.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this seed and a label.
    pub fn fork(&self, stream: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        Self {
            seed: self.seed,
            inner: r,
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, `k <= n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-4;

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares the gradients already stored in `params` with central finite
/// differences of `loss`.
pub fn grad_check<F>(mut loss: F, params: &mut [ParamTensor], tol: f64) -> GradCheckReport
where
    F: FnMut(&[ParamTensor]) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tol,
        passed: true,
    };
    for p in 0..params.len() {
        for i in 0..params[p].values.len() {
            let orig = params[p].values[i];
            params[p].values[i] = orig + FD_STEP;
            let up = loss(params);
            params[p].values[i] = orig - FD_STEP;
            let down = loss(params);
            params[p].values[i] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = params[p].grad[i];
            let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (analytic - numeric).abs() / scale;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = params[p].name.clone();
                report.worst_index = i;
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    report
}
