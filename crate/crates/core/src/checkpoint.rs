//! Versioned little-endian binary checkpoint.
//!
//! ```text
//! magic      8 bytes  "DSDCKPT\0"
//! version    u32
//! kind       u8       1 = linear transform, 2 = residual network
//! dim        u64
//! blocks     u64      0 for the linear transform
//! seed       u64
//! config     u64 length + UTF-8 JSON
//! params     u64 count, then per tensor: u64 name length, name,
//!            u64 rows, u64 cols, rows*cols f64 (column-major)
//! optimizer  u8 present flag; if 1: u8 kind (0 sgd, 1 adam), f64 lr,
//!            f64 beta1, f64 beta2, f64 eps, u64 step, then two
//!            u64-counted lists of matrices (rows, cols, data)
//! history    u64 count + f64 values
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use crate::baseline::TransformMatrix;
use crate::dsd::DebiasNet;
use crate::error::{Error, Result};
use crate::grad::{OptimizerKind, OptimizerState, ParamTensor};

pub const MAGIC: &[u8; 8] = b"DSDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_LINEAR: u8 = 1;
const KIND_RESIDUAL: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(TransformMatrix),
    Residual(DebiasNet),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Linear(t) => t.dim(),
            Model::Residual(n) => n.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config_json: String,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        let (kind, blocks, params): (u8, usize, Vec<(&str, &DMatrix<f64>)>) = match &self.model {
            Model::Linear(t) => (KIND_LINEAR, 0, vec![("t", t.matrix())]),
            Model::Residual(n) => (
                KIND_RESIDUAL,
                n.blocks(),
                n.params().iter().map(|p| (p.name.as_str(), &p.values)).collect(),
            ),
        };
        w.u8(kind);
        w.u64(self.model.dim() as u64);
        w.u64(blocks as u64);
        w.u64(self.seed);
        w.string(&self.config_json);
        w.u64(params.len() as u64);
        for (name, m) in params {
            w.string(name);
            w.matrix(m);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.u8(match o.kind {
                    OptimizerKind::Sgd => 0,
                    OptimizerKind::Adam => 1,
                });
                for v in [o.lr, o.beta1, o.beta2, o.eps] {
                    w.f64(v);
                }
                w.u64(o.step_count);
                for buffers in [&o.first_moment, &o.second_moment] {
                    w.u64(buffers.len() as u64);
                    for m in buffers {
                        w.matrix(m);
                    }
                }
            }
        }
        w.u64(self.loss_history.len() as u64);
        for &v in &self.loss_history {
            w.f64(v);
        }
        w.buf
    }

    /// Strict decoder: every length is bounds-checked against the remaining
    /// input and trailing bytes are rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        let dim = r.usize()?;
        let blocks = r.usize()?;
        let seed = r.u64()?;
        let config_json = r.string()?;
        let count = r.count(8)?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let values = r.matrix()?;
            params.push(ParamTensor::new(name, values));
        }
        let model = match kind {
            KIND_LINEAR => {
                if blocks != 0 || params.len() != 1 {
                    return Err(Error::Checkpoint("linear checkpoint must hold one matrix".into()));
                }
                let t = params.pop().expect("one param").values;
                if t.shape() != (dim, dim) {
                    return Err(Error::Checkpoint(format!("transform shape {:?} != {dim}x{dim}", t.shape())));
                }
                Model::Linear(TransformMatrix::new(t).map_err(|e| Error::Checkpoint(e.to_string()))?)
            }
            KIND_RESIDUAL => {
                let net = DebiasNet::from_params(dim, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
                if net.blocks() != blocks {
                    return Err(Error::Checkpoint(format!(
                        "header says {blocks} blocks, found {}",
                        net.blocks()
                    )));
                }
                Model::Residual(net)
            }
            other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        };
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let kind = match r.u8()? {
                    0 => OptimizerKind::Sgd,
                    1 => OptimizerKind::Adam,
                    other => return Err(Error::Checkpoint(format!("unknown optimizer kind {other}"))),
                };
                let lr = r.f64()?;
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let eps = r.f64()?;
                let step_count = r.u64()?;
                let mut lists = [Vec::new(), Vec::new()];
                for list in &mut lists {
                    let n = r.count(16)?;
                    for _ in 0..n {
                        list.push(r.matrix()?);
                    }
                }
                let [first_moment, second_moment] = lists;
                if first_moment.len() != second_moment.len()
                    || first_moment.iter().zip(&second_moment).any(|(a, b)| a.shape() != b.shape())
                {
                    return Err(Error::Checkpoint("moment buffers disagree".into()));
                }
                Some(OptimizerState {
                    kind,
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step_count,
                    first_moment,
                    second_moment,
                })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        let n = r.count(8)?;
        let mut loss_history = Vec::with_capacity(n);
        for _ in 0..n {
            loss_history.push(r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            seed,
            config_json,
            model,
            optimizer,
            loss_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    /// A count of items that each occupy at least `min_item` bytes.
    fn count(&mut self, min_item: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(min_item).map_or(true, |b| b > self.remaining()) {
            return Err(Error::Checkpoint(format!("count {n} exceeds remaining input")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("matrix size overflows".into()))?;
        if n.checked_mul(8).map_or(true, |b| b > self.remaining()) {
            return Err(Error::Checkpoint(format!("{rows}x{cols} matrix exceeds remaining input")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_vec(rows, cols, data))
    }
}
