//! Linear soft-debias baseline: a d x d transform learned on an
//! SVD-factored loss.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bias_space::{BiasSubspace, NeutralSet};
use crate::checkpoint::{Checkpoint, Model};
use crate::dsd::loss::check_lambda;
use crate::dsd::TrainConfig;
use crate::embedding::{normalize_matrix_rows, EmbeddingSet};
use crate::error::{Error, Result};
use crate::grad::{OptimizerState, ParamTensor};
use crate::manifest::RunManifest;

/// How the bias rows enter the projection term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasProjection {
    /// `||N Tᵀ Bᵀ||`: transformed neutrals against the fixed subspace.
    #[default]
    Fixed,
    /// `||N Tᵀ T Bᵀ||`: the subspace is transformed as well.
    Transformed,
}

impl std::str::FromStr for BiasProjection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "transformed" => Ok(Self::Transformed),
            other => Err(Error::InvalidConfig(format!("unknown bias projection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    t: DMatrix<f64>,
}

impl TransformMatrix {
    pub fn new(t: DMatrix<f64>) -> Result<Self> {
        if !t.is_square() || t.nrows() == 0 {
            return Err(Error::InvalidConfig(format!("transform must be square, got {:?}", t.shape())));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("transform has non-finite entries".into()));
        }
        Ok(Self { t })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            t: DMatrix::identity(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Transforms row vectors: `X Tᵀ`.
    pub fn apply(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: rows.ncols(),
            });
        }
        Ok(rows * self.t.transpose())
    }
}

/// SVD of the column-word matrix `Wᵀ = U diag(s) Vᵀ` with the products the
/// loss needs precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    /// `diag(s) Uᵀ`
    pub t1: DMatrix<f64>,
    /// `U diag(s)`
    pub t2: DMatrix<f64>,
}

impl SvdFactors {
    /// `||Wᵀ - U diag(s) Vᵀ||_F / ||W||_F` for the matrix these factors came
    /// from. `V` is recovered from `W` since it is not stored.
    pub fn reconstruction_error(&self, rows: &DMatrix<f64>) -> f64 {
        let wc = rows.transpose();
        // Wᵀ = U S Vᵀ  =>  U Uᵀ Wᵀ = Wᵀ whenever U spans the column space.
        // Rebuild S Vᵀ = Uᵀ Wᵀ and drop directions with zero singular value.
        let mut svt = self.u.transpose() * &wc;
        for (i, &s) in self.s.iter().enumerate() {
            if s == 0.0 {
                svt.row_mut(i).fill(0.0);
            }
        }
        let denom = wc.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (&wc - &self.u * svt).norm() / denom
    }

    /// `||s||² = ||W||_F²`.
    pub fn scale(&self) -> f64 {
        self.s.norm_squared()
    }
}

/// Factors the embedding matrix (rows are words). With fewer words than
/// dimensions the matrix is padded with zero words, so `s` gets zeros.
pub fn factor(rows: &DMatrix<f64>) -> Result<SvdFactors> {
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("embedding matrix has non-finite entries".into()));
    }
    let d = rows.ncols();
    if d == 0 {
        return Err(Error::Empty);
    }
    let mut wc = rows.transpose();
    if wc.ncols() < d {
        wc = wc.resize_horizontally(d, 0.0);
    }
    let svd = wc.svd(true, false);
    let u_raw = svd.u.expect("requested u");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s = DVector::from_iterator(d, order.iter().map(|&i| svd.singular_values[i].max(0.0)));
    let u = DMatrix::from_fn(d, d, |r, c| u_raw[(r, order[c])]);
    let t1 = DMatrix::from_diagonal(&s) * u.transpose();
    let t2 = &u * DMatrix::from_diagonal(&s);
    Ok(SvdFactors { u, s, t1, t2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineLoss {
    pub total: f64,
    /// `||t1 (TᵀT - I) t2||_F`
    pub norm1: f64,
    /// `||N Tᵀ Bᵀ||_F` (or `||N Tᵀ T Bᵀ||_F`)
    pub norm2: f64,
}

fn check_baseline_shapes(t: &TransformMatrix, f: &SvdFactors, neutral: &DMatrix<f64>, b: &BiasSubspace) -> Result<()> {
    let d = t.dim();
    for got in [f.u.nrows(), neutral.ncols(), b.dim()] {
        if got != d {
            return Err(Error::DimMismatch { expected: d, got });
        }
    }
    Ok(())
}

fn projection(t: &DMatrix<f64>, neutral: &DMatrix<f64>, basis: &DMatrix<f64>, mode: BiasProjection) -> DMatrix<f64> {
    match mode {
        BiasProjection::Fixed => neutral * t.transpose() * basis.transpose(),
        BiasProjection::Transformed => neutral * t.transpose() * t * basis.transpose(),
    }
}

fn normalizers(f: &SvdFactors, neutral: &DMatrix<f64>, b: &BiasSubspace) -> (f64, f64) {
    let mk = (neutral.nrows() * b.rank()) as f64;
    let s_scale = f.scale();
    (
        if s_scale > 0.0 { s_scale } else { 1.0 },
        if mk > 0.0 { mk.sqrt() } else { 1.0 },
    )
}

/// `total = (1 - λ) norm1 / ||s||² + λ norm2 / sqrt(m k)`.
pub fn baseline_loss(
    t: &TransformMatrix,
    f: &SvdFactors,
    neutral: &DMatrix<f64>,
    b: &BiasSubspace,
    lambda: f64,
    mode: BiasProjection,
) -> Result<BaselineLoss> {
    check_lambda(lambda)?;
    check_baseline_shapes(t, f, neutral, b)?;
    let d = t.dim();
    let m = t.matrix().transpose() * t.matrix() - DMatrix::identity(d, d);
    let norm1 = (&f.t1 * m * &f.t2).norm();
    let norm2 = projection(t.matrix(), neutral, b.basis(), mode).norm();
    let (s1, s2) = normalizers(f, neutral, b);
    Ok(BaselineLoss {
        total: (1.0 - lambda) * norm1 / s1 + lambda * norm2 / s2,
        norm1,
        norm2,
    })
}

/// Loss and its gradient with respect to `T`.
pub fn baseline_loss_grad(
    t: &TransformMatrix,
    f: &SvdFactors,
    neutral: &DMatrix<f64>,
    b: &BiasSubspace,
    lambda: f64,
    mode: BiasProjection,
) -> Result<(BaselineLoss, DMatrix<f64>)> {
    check_lambda(lambda)?;
    check_baseline_shapes(t, f, neutral, b)?;
    let tm = t.matrix();
    let d = t.dim();
    let k = &f.t1 * (tm.transpose() * tm - DMatrix::identity(d, d)) * &f.t2;
    let norm1 = k.norm();
    let p = projection(tm, neutral, b.basis(), mode);
    let norm2 = p.norm();
    let (s1, s2) = normalizers(f, neutral, b);

    let mut grad = DMatrix::zeros(d, d);
    if norm1 > 0.0 {
        grad += (tm * &f.t2 * &k * &f.t1) * (2.0 * (1.0 - lambda) / (norm1 * s1));
    }
    if norm2 > 0.0 {
        let basis = b.basis();
        let g = match mode {
            BiasProjection::Fixed => basis.transpose() * p.transpose() * neutral,
            BiasProjection::Transformed => {
                tm * (basis.transpose() * p.transpose() * neutral + neutral.transpose() * &p * basis)
            }
        };
        grad += g * (lambda / (norm2 * s2));
    }
    Ok((
        BaselineLoss {
            total: (1.0 - lambda) * norm1 / s1 + lambda * norm2 / s2,
            norm1,
            norm2,
        },
        grad,
    ))
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub transform: TransformMatrix,
    pub embeddings: EmbeddingSet,
    pub optimizer: OptimizerState,
    /// Loss before each step.
    pub loss_history: Vec<f64>,
    pub manifest: RunManifest,
}

impl BaselineOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.manifest.seed,
            config_json: self.manifest.config.to_string(),
            model: Model::Linear(self.transform.clone()),
            optimizer: Some(self.optimizer.clone()),
            loss_history: self.loss_history.clone(),
        }
    }
}

/// Full-batch training of `T` from the identity. Inputs are row-normalized
/// first; outputs are the normalized rows of `X Tᵀ`.
pub fn train_baseline(
    set: &EmbeddingSet,
    subspace: &BiasSubspace,
    neutral: &NeutralSet,
    cfg: &TrainConfig,
) -> Result<BaselineOutcome> {
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
    let started = Instant::now();
    let input = set.normalize_rows()?;
    let x = input.matrix();
    let factors = factor(x)?;
    let neutral_rows = input.select_rows(&neutral.indices);

    let d = set.dim();
    let mut params = vec![ParamTensor::new("t", DMatrix::identity(d, d))];
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, &params)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let t = TransformMatrix { t: params[0].values.clone() };
        let (loss, grad) = baseline_loss_grad(&t, &factors, &neutral_rows, subspace, cfg.lambda, cfg.projection)?;
        if !loss.total.is_finite() {
            return Err(divergence(epoch, format!("loss is {}", loss.total), cfg, &t, &opt, &history));
        }
        history.push(loss.total);
        best = best.min(loss.total);
        log::debug!("baseline epoch {epoch}: loss {:.6e} (best {best:.6e})", loss.total);
        params[0].grad = grad;
        if let Err(e) = opt.step(&mut params) {
            return Err(divergence(epoch, e.to_string(), cfg, &t, &opt, &history));
        }
        if params[0].values.iter().any(|v| !v.is_finite()) {
            return Err(divergence(epoch, "transform became non-finite".into(), cfg, &t, &opt, &history));
        }
    }
    params[0].zero_grad();

    let transform = TransformMatrix::new(params.pop().expect("one param").values)?;
    let out = normalize_matrix_rows(&transform.apply(x)?).map_err(|row| Error::ZeroNorm {
        row,
        token: set.vocab()[row].clone(),
    })?;
    let embeddings = set.with_matrix(out)?;
    let manifest = RunManifest::for_training("baseline", cfg, history.clone(), started.elapsed().as_secs_f64());
    Ok(BaselineOutcome {
        transform,
        embeddings,
        optimizer: opt,
        loss_history: history,
        manifest,
    })
}

fn divergence(
    epoch: usize,
    reason: String,
    cfg: &TrainConfig,
    last: &TransformMatrix,
    opt: &OptimizerState,
    history: &[f64],
) -> Error {
    Error::Diverged {
        epoch,
        step: epoch,
        reason,
        last_good: Some(Box::new(Checkpoint {
            seed: cfg.seed,
            config_json: cfg.to_json(),
            model: Model::Linear(last.clone()),
            optimizer: Some(opt.clone()),
            loss_history: history.to_vec(),
        })),
    }
}
