//! Sentence classification with averaged word vectors, used to check that
//! debiasing keeps embeddings useful.

use std::io::BufRead;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::grad::SeededRng;
use crate::tokenize::TokenizerConfig;

pub const LEARNING_RATE: f64 = 0.1;
pub const EPOCHS: usize = 300;
pub const L2: f64 = 1e-4;
pub const TEST_FRACTION: f64 = 0.2;
pub const MIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub name: String,
    pub records: Vec<(String, u8)>,
}

impl LabeledCorpus {
    pub fn new(name: impl Into<String>, records: Vec<(String, u8)>) -> Result<Self> {
        let c = Self {
            name: name.into(),
            records,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((i, _)) = self.records.iter().enumerate().find(|(_, (t, _))| t.trim().is_empty()) {
            return Err(Error::Format(format!("record {i} has empty text")));
        }
        if let Some((i, (_, l))) = self.records.iter().enumerate().find(|(_, (_, l))| *l > 1) {
            return Err(Error::Format(format!("record {i} has label {l}, expected 0 or 1")));
        }
        for label in [0, 1] {
            if !self.records.iter().any(|(_, l)| *l == label) {
                return Err(Error::EmptyData(format!("no record with label {label}")));
            }
        }
        Ok(())
    }

    /// Tab-separated `text<TAB>label` with a header line. Columns named
    /// `sentence` or `text` and `label` are used when present, otherwise the
    /// first two columns.
    pub fn read_tsv<R: BufRead>(reader: R, name: impl Into<String>) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(h) => h.map_err(|e| Error::parse(1, e.to_string()))?,
            None => return Err(Error::parse(1, "missing header")),
        };
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let text_col = cols.iter().position(|c| *c == "sentence" || *c == "text").unwrap_or(0);
        let label_col = cols.iter().position(|c| *c == "label").unwrap_or(1);
        if text_col == label_col || cols.len() < 2 {
            return Err(Error::parse(1, "header needs a text and a label column"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::parse(n, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let get = |c: usize| fields.get(c).ok_or_else(|| Error::parse(n, format!("missing column {c}")));
            let text = get(text_col)?.trim();
            if text.is_empty() {
                return Err(Error::parse(n, "empty text"));
            }
            let label = match get(label_col)?.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(n, format!("label must be 0 or 1, got {other:?}"))),
            };
            records.push((text.to_string(), label));
        }
        Self::new(name, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_tsv(std::io::BufReader::new(file), name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sentence\tlabel\n");
        for (t, l) in &self.records {
            out.push_str(&format!("{t}\t{l}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRun {
    pub accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Records with no in-vocabulary token.
    pub excluded: usize,
}

/// Stratified split of record indices: `(train, test)`, each sorted.
pub fn stratified_split(labels: &[u8], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        rng.shuffle(&mut idx);
        let n_test = ((idx.len() as f64 * TEST_FRACTION).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn features(set: &EmbeddingSet, corpus: &LabeledCorpus) -> Vec<Option<DVector<f64>>> {
    let tok = TokenizerConfig::default();
    corpus
        .records
        .iter()
        .map(|(text, _)| {
            let v = set.sentence_vector(text, &tok)?.vector;
            let n = v.norm();
            (n > 0.0 && n.is_finite()).then(|| v / n)
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression on unit-normalized mean vectors; returns the
/// accuracy on the held-out 20%.
pub fn train_eval(set: &EmbeddingSet, corpus: &LabeledCorpus, split_seed: u64) -> Result<ClassifierRun> {
    corpus.validate()?;
    let labels: Vec<u8> = corpus.records.iter().map(|(_, l)| *l).collect();
    for label in [0u8, 1] {
        let n = labels.iter().filter(|&&l| l == label).count();
        if n < MIN_PER_CLASS {
            return Err(Error::EmptyData(format!(
                "label {label} has {n} records, need at least {MIN_PER_CLASS}"
            )));
        }
    }
    let feats = features(set, corpus);
    let excluded = feats.iter().filter(|f| f.is_none()).count();
    let (train, test) = stratified_split(&labels, split_seed);
    let keep = |idx: Vec<usize>| -> Vec<usize> { idx.into_iter().filter(|&i| feats[i].is_some()).collect() };
    let (train, test) = (keep(train), keep(test));
    for (part, name) in [(&train, "train"), (&test, "test")] {
        for label in [0u8, 1] {
            if !part.iter().any(|&i| labels[i] == label) {
                return Err(Error::EmptyData(format!("{name} split has no usable record with label {label}")));
            }
        }
    }

    let d = set.dim();
    let mut w = DVector::<f64>::zeros(d);
    let mut b = 0.0;
    let n = train.len() as f64;
    for _ in 0..EPOCHS {
        let mut gw = DVector::<f64>::zeros(d);
        let mut gb = 0.0;
        for &i in &train {
            let x = feats[i].as_ref().expect("kept");
            let err = sigmoid(w.dot(x) + b) - labels[i] as f64;
            gw.axpy(err, x, 1.0);
            gb += err;
        }
        gw /= n;
        gw.axpy(L2, &w, 1.0);
        w.axpy(-LEARNING_RATE, &gw, 1.0);
        b -= LEARNING_RATE * gb / n;
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let p = sigmoid(w.dot(feats[i].as_ref().expect("kept")) + b);
            (p >= 0.5) == (labels[i] == 1)
        })
        .count();
    Ok(ClassifierRun {
        accuracy: correct as f64 / test.len() as f64,
        train_size: train.len(),
        test_size: test.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub acc_biased: f64,
    pub acc_debiased: f64,
    pub delta: f64,
    pub seed: u64,
    pub excluded: usize,
}

/// Same split and regime on both sets; `delta = debiased - biased`.
pub fn delta(biased: &EmbeddingSet, debiased: &EmbeddingSet, corpus: &LabeledCorpus, seed: u64) -> Result<DeltaReport> {
    if !biased.same_vocab(debiased) {
        return Err(Error::VocabMismatch);
    }
    let a = train_eval(biased, corpus, seed)?;
    let b = train_eval(debiased, corpus, seed)?;
    Ok(DeltaReport {
        acc_biased: a.accuracy,
        acc_debiased: b.accuracy,
        delta: b.accuracy - a.accuracy,
        seed,
        excluded: a.excluded.max(b.excluded),
    })
}
