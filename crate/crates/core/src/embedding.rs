//! Word-embedding sets and the word2vec text format.
//!
//! Words are rows: a set with `V` tokens of dimension `d` stores a `V x d`
//! matrix. Every formula elsewhere in the crate that is usually written
//! with words as columns is transposed to this convention.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::tokenize::TokenizerConfig;

/// Rows whose norm is within this distance of 1 are left untouched by
/// [`EmbeddingSet::normalize_rows`], which keeps normalization idempotent
/// bit for bit.
const UNIT_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    name: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: DMatrix<f64>,
}

/// Mean of the in-vocabulary rows of a piece of text.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub vector: DVector<f64>,
    pub used_tokens: usize,
    pub skipped_tokens: usize,
}

impl EmbeddingSet {
    /// Builds a set, checking that tokens are unique and whitespace-free,
    /// that every entry is finite and that no row is all zeros.
    pub fn new(name: impl Into<String>, vocab: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if vocab.len() != matrix.nrows() {
            return Err(Error::DimMismatch {
                expected: vocab.len(),
                got: matrix.nrows(),
            });
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (row, token) in vocab.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::InvalidToken(token.clone()));
            }
            if index.insert(token.clone(), row).is_some() {
                return Err(Error::DuplicateToken(token.clone()));
            }
            let r = matrix.row(row);
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    token: token.clone(),
                });
            }
            if r.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroNorm {
                    row,
                    token: token.clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            vocab,
            index,
            matrix,
        })
    }

    pub fn from_rows<S: Into<String>>(
        name: impl Into<String>,
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut vocab = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (token, values) in rows {
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: values.len(),
                });
            }
            vocab.push(token.into());
            data.extend(values);
        }
        let dim = dim.unwrap_or(0);
        let matrix = DMatrix::from_row_slice(vocab.len(), dim, &data);
        Self::new(name, vocab, matrix)
    }

    /// Same vocabulary, new coordinates.
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != self.dim() && !self.is_empty() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: matrix.ncols(),
            });
        }
        Self::new(self.name.clone(), self.vocab.clone(), matrix)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.matrix.row(i).into_owned()
    }

    /// Column vector for `token`, if present.
    pub fn vector(&self, token: &str) -> Option<DVector<f64>> {
        self.index_of(token)
            .map(|i| self.matrix.row(i).transpose().into_owned())
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> DMatrix<f64> {
        self.matrix.select_rows(indices)
    }

    pub fn same_vocab(&self, other: &Self) -> bool {
        self.vocab == other.vocab
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let matrix = normalize_matrix_rows(&self.matrix).map_err(|row| Error::ZeroNorm {
            row,
            token: self.vocab[row].clone(),
        })?;
        Ok(Self {
            name: self.name.clone(),
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            matrix,
        })
    }

    /// Averages the rows of the in-vocabulary tokens of `text`.
    pub fn sentence_vector(&self, text: &str, tokenizer: &TokenizerConfig) -> Option<SentenceVector> {
        self.mean_of_tokens(&tokenizer.tokenize(text))
    }

    /// Averages the rows of the in-vocabulary `tokens`; `None` when none are
    /// in the vocabulary.
    pub fn mean_of_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Option<SentenceVector> {
        let mut sum = DVector::zeros(self.dim());
        let mut used = 0;
        let mut skipped = 0;
        for token in tokens {
            match self.index_of(token.as_ref()) {
                Some(i) => {
                    sum += self.matrix.row(i).transpose();
                    used += 1;
                }
                None => skipped += 1,
            }
        }
        if used == 0 {
            return None;
        }
        Some(SentenceVector {
            vector: sum / used as f64,
            used_tokens: used,
            skipped_tokens: skipped,
        })
    }

    /// Parses word2vec text: a `V d` header followed by `V` lines of
    /// `token v1 .. vd`.
    pub fn read_word2vec<R: BufRead>(reader: R, name: impl Into<String>) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((n, line)) => (n + 1, line.map_err(|e| Error::parse(n + 1, e.to_string()))?),
            None => return Err(Error::parse(1, "missing header")),
        };
        let (count, dim) = parse_header(&header.1).ok_or_else(|| {
            Error::parse(header.0, format!("malformed header {:?}, expected \"V d\"", header.1))
        })?;
        if count == 0 {
            return Err(Error::Empty);
        }
        if dim == 0 {
            return Err(Error::parse(header.0, "dimension must be positive"));
        }

        let mut vocab = Vec::with_capacity(count.min(1 << 20));
        let mut data = Vec::with_capacity(count.saturating_mul(dim).min(1 << 24));
        let mut seen = HashMap::with_capacity(count.min(1 << 20));
        for (n, line) in lines {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if vocab.len() == count {
                return Err(Error::parse(lineno, format!("more than {count} rows")));
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-blank line has a field");
            let start = data.len();
            for field in fields {
                let value: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad number {field:?}")))?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        row: vocab.len(),
                        token: token.to_string(),
                    });
                }
                data.push(value);
            }
            let arity = data.len() - start;
            if arity != dim {
                return Err(Error::parse(
                    lineno,
                    format!("row {token:?} has {arity} values, expected {dim}"),
                ));
            }
            if seen.insert(token.to_string(), vocab.len()).is_some() {
                return Err(Error::DuplicateToken(token.to_string()));
            }
            vocab.push(token.to_string());
        }
        if vocab.len() != count {
            return Err(Error::parse(
                header.0,
                format!("header declares {count} rows, found {}", vocab.len()),
            ));
        }
        let matrix = DMatrix::from_row_slice(count, dim, &data);
        Self::new(name, vocab, matrix)
    }

    pub fn parse_word2vec(text: &str, name: impl Into<String>) -> Result<Self> {
        Self::read_word2vec(text.as_bytes(), name)
    }

    pub fn load_word2vec_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_word2vec(BufReader::new(file), name)
    }

    /// Writes word2vec text with nine significant digits per value.
    pub fn write_word2vec<W: Write>(&self, mut out: W) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty);
        }
        let io = |e| Error::io("<writer>", e);
        writeln!(out, "{} {}", self.len(), self.dim()).map_err(io)?;
        let mut line = String::new();
        for (i, token) in self.vocab.iter().enumerate() {
            line.clear();
            line.push_str(token);
            for v in self.matrix.row(i).iter() {
                line.push(' ');
                line.push_str(&format_value(*v));
            }
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn save_word2vec_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.is_empty() {
            return Err(Error::Empty);
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_word2vec(BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn to_word2vec_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_word2vec(&mut buf)?;
        Ok(String::from_utf8(buf).expect("tokens and numbers are utf-8"))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let v = it.next()?.parse().ok()?;
    let d = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((v, d))
}

fn format_value(v: f64) -> String {
    // 9 significant digits, scientific notation; `0.0` prints as "0.00000000e0".
    format!("{v:.8e}")
}

/// Row-normalizes a matrix, returning the index of the first zero row on
/// failure.
pub fn normalize_matrix_rows(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(i);
        }
        if (norm - 1.0).abs() > UNIT_SLACK {
            row /= norm;
        }
    }
    Ok(out)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}
