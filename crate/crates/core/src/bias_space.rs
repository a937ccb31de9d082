//! Bias specifications, the fixed bias subspace and neutral-word selection.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingSet};
use crate::error::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

const GENDER_SPEC: &str = include_str!("../data/gender.toml");
const RACE_SPEC: &str = include_str!("../data/race.toml");
const RELIGION_SPEC: &str = include_str!("../data/religion.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Gender,
    Race,
    Religion,
    Custom,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Gender => "gender",
            Category::Race => "race",
            Category::Religion => "religion",
            Category::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedTokens {
    pub name: String,
    pub tokens: Vec<String>,
}

impl NamedTokens {
    pub fn new<S: Into<String>>(name: impl Into<String>, tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

/// A bias category with its definitional groups, stereotype attribute
/// sets, evaluation targets and optional explicit neutral words.
///
/// Serialized as TOML:
///
/// ```toml
/// version = 1
/// category = "gender"
/// targets = ["he", "she"]
/// neutral_words = ["table"]      # optional
///
/// [[groups]]
/// name = "male"
/// tokens = ["he"]
///
/// [[attribute_sets]]
/// name = "male"
/// tokens = ["doctor"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub category: Category,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_words: Option<Vec<String>>,
    pub groups: Vec<NamedTokens>,
    pub attribute_sets: Vec<NamedTokens>,
}

fn default_version() -> u32 {
    SPEC_VERSION
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.version != SPEC_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.groups.len() < 2 {
            return bad(format!("need at least 2 groups, found {}", self.groups.len()));
        }
        if self.targets.is_empty() {
            return bad("targets is empty".into());
        }
        if self.attribute_sets.is_empty() {
            return bad("attribute_sets is empty".into());
        }
        for list in self.groups.iter().chain(&self.attribute_sets) {
            if list.tokens.is_empty() {
                return bad(format!("list {:?} is empty", list.name));
            }
        }
        if let Some(n) = &self.neutral_words {
            if n.is_empty() {
                return bad("neutral_words is empty".into());
            }
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for g in &self.groups {
            for t in &g.tokens {
                if !seen.insert(t) {
                    return bad(format!("token {t:?} appears in more than one group"));
                }
            }
        }
        if let Some(neutral) = &self.neutral_words {
            let bias = self.bias_words();
            if let Some(t) = neutral.iter().find(|t| bias.contains(t.as_str())) {
                return bad(format!("neutral word {t:?} is also a group or attribute token"));
            }
        }
        Ok(())
    }

    /// Group anchor tokens in group order.
    pub fn anchors(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().flat_map(|g| g.tokens.iter().map(String::as_str))
    }

    /// Group and attribute tokens.
    pub fn bias_words(&self) -> HashSet<&str> {
        self.groups
            .iter()
            .chain(&self.attribute_sets)
            .flat_map(|l| l.tokens.iter().map(String::as_str))
            .collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: BiasSpec = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("bias spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// The shipped word lists for a category. `Custom` has none.
    pub fn builtin(category: Category) -> Option<Self> {
        let text = match category {
            Category::Gender => GENDER_SPEC,
            Category::Race => RACE_SPEC,
            Category::Religion => RELIGION_SPEC,
            Category::Custom => return None,
        };
        Some(Self::from_toml_str(text).expect("shipped specs are valid"))
    }
}

/// Unit-norm bias directions, one row per group anchor, plus the mean of
/// the anchors they were measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSubspace {
    basis: DMatrix<f64>,
    neutral_ref: DVector<f64>,
    source_tokens: Vec<String>,
    component_norms: Vec<f64>,
}

impl BiasSubspace {
    /// Builds a subspace from explicit unit rows; used for synthetic setups.
    pub fn from_basis(basis: DMatrix<f64>, neutral_ref: DVector<f64>, source_tokens: Vec<String>) -> Result<Self> {
        if basis.ncols() != neutral_ref.len() {
            return Err(Error::DimMismatch {
                expected: basis.ncols(),
                got: neutral_ref.len(),
            });
        }
        if source_tokens.len() != basis.nrows() {
            return Err(Error::DimMismatch {
                expected: basis.nrows(),
                got: source_tokens.len(),
            });
        }
        for (i, row) in basis.row_iter().enumerate() {
            let n = row.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("basis row {i} is not unit norm ({n})")));
            }
        }
        let k = basis.nrows();
        Ok(Self {
            basis,
            neutral_ref,
            source_tokens,
            component_norms: vec![1.0; k],
        })
    }

    /// `k x d`, one unit row per anchor.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn neutral_ref(&self) -> &DVector<f64> {
        &self.neutral_ref
    }

    pub fn source_tokens(&self) -> &[String] {
        &self.source_tokens
    }

    /// Norm of each `anchor - neutral_ref` before it was normalized.
    pub fn component_norms(&self) -> &[f64] {
        &self.component_norms
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Mean-subtracts every group anchor against the mean of all anchors and
/// stacks the unit-normalized differences.
pub fn build_subspace(set: &EmbeddingSet, spec: &BiasSpec) -> Result<BiasSubspace> {
    let anchors: Vec<&str> = spec.anchors().collect();
    let missing: Vec<String> = anchors
        .iter()
        .filter(|t| !set.contains(t))
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTokens(missing));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidSpec("no anchor tokens".into()));
    }
    let indices: Vec<usize> = anchors.iter().map(|t| set.index_of(t).unwrap()).collect();
    let rows = set.select_rows(&indices);
    let neutral_ref: DVector<f64> = rows.row_mean().transpose();

    let mut basis = DMatrix::zeros(rows.nrows(), rows.ncols());
    let mut norms = Vec::with_capacity(rows.nrows());
    for (i, row) in rows.row_iter().enumerate() {
        let component = row - neutral_ref.transpose();
        let norm = component.norm();
        if norm <= 1e-12 {
            return Err(Error::DegenerateComponent(anchors[i].to_string()));
        }
        basis.set_row(i, &(component / norm));
        norms.push(norm);
    }
    Ok(BiasSubspace {
        basis,
        neutral_ref,
        source_tokens: anchors.iter().map(|t| t.to_string()).collect(),
        component_norms: norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeutralPolicy {
    ExplicitList,
    VocabMinusBiasWords,
}

/// Rows of an embedding set treated as bias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralSet {
    pub indices: Vec<usize>,
    pub policy: NeutralPolicy,
    /// Explicit neutral words that were not in the vocabulary.
    pub missing: Vec<String>,
}

impl NeutralSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn neutral_set(set: &EmbeddingSet, spec: &BiasSpec) -> Result<NeutralSet> {
    spec.validate()?;
    let (indices, policy, missing) = match &spec.neutral_words {
        Some(words) => {
            let mut indices = Vec::new();
            let mut missing = Vec::new();
            let mut seen = HashSet::new();
            for w in words {
                match set.index_of(w) {
                    Some(i) if seen.insert(i) => indices.push(i),
                    Some(_) => {}
                    None => missing.push(w.clone()),
                }
            }
            if !missing.is_empty() {
                log::warn!("{} neutral words not in vocabulary: {}", missing.len(), missing.join(", "));
            }
            (indices, NeutralPolicy::ExplicitList, missing)
        }
        None => {
            let mut excluded = spec.bias_words();
            excluded.extend(spec.targets.iter().map(String::as_str));
            let indices = set
                .vocab()
                .iter()
                .enumerate()
                .filter(|(_, t)| !excluded.contains(t.as_str()))
                .map(|(i, _)| i)
                .collect();
            (indices, NeutralPolicy::VocabMinusBiasWords, Vec::new())
        }
    };
    if indices.is_empty() {
        return Err(Error::EmptyData("neutral set is empty".into()));
    }
    Ok(NeutralSet {
        indices,
        policy,
        missing,
    })
}

/// Absolute cosine between `word` and the axis `a - b`.
pub fn direct_bias(set: &EmbeddingSet, word: &str, axis: (&str, &str)) -> Result<f64> {
    let lookup = |t: &str| set.vector(t).ok_or_else(|| Error::MissingTokens(vec![t.to_string()]));
    let w = lookup(word)?;
    let a = lookup(axis.0)?;
    let b = lookup(axis.1)?;
    let dir = a - b;
    if dir.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(cosine(w.as_slice(), dir.as_slice())?.abs())
}

/// Absolute cosine between `word` and every row of the subspace; the
/// multi-class analogue of [`direct_bias`].
pub fn subspace_bias(set: &EmbeddingSet, word: &str, subspace: &BiasSubspace) -> Result<Vec<f64>> {
    let w = set
        .vector(word)
        .ok_or_else(|| Error::MissingTokens(vec![word.to_string()]))?;
    if w.len() != subspace.dim() {
        return Err(Error::DimMismatch {
            expected: subspace.dim(),
            got: w.len(),
        });
    }
    subspace
        .basis()
        .row_iter()
        .map(|r| Ok(cosine(w.as_slice(), r.transpose().as_slice())?.abs()))
        .collect()
}

/// `||X B^T||_F^2 / m`: mean squared projection of the rows of `vectors`
/// onto the bias rows.
pub fn projection_energy(vectors: &DMatrix<f64>, subspace: &BiasSubspace) -> Result<f64> {
    if vectors.ncols() != subspace.dim() {
        return Err(Error::DimMismatch {
            expected: subspace.dim(),
            got: vectors.ncols(),
        });
    }
    if vectors.nrows() == 0 {
        return Err(Error::EmptyData("no rows to project".into()));
    }
    let proj = vectors * subspace.basis().transpose();
    Ok(proj.norm_squared() / vectors.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(groups: &[(&str, &[&str])], attrs: &[(&str, &[&str])], targets: &[&str]) -> BiasSpec {
        BiasSpec {
            version: 1,
            category: Category::Custom,
            targets: targets.iter().map(|s| s.to_string()).collect(),
            neutral_words: None,
            groups: groups.iter().map(|(n, t)| NamedTokens::new(*n, t.iter().copied())).collect(),
            attribute_sets: attrs.iter().map(|(n, t)| NamedTokens::new(*n, t.iter().copied())).collect(),
        }
    }

    fn he_she() -> BiasSpec {
        spec(&[("m", &["he"]), ("f", &["she"])], &[("job", &["doctor"])], &["he"])
    }

    #[test]
    fn binary_pair_is_symmetric() {
        let set = EmbeddingSet::from_rows("t", [("he", vec![1.0, 0.0]), ("she", vec![0.0, 1.0])]).unwrap();
        let sub = build_subspace(&set, &he_she()).unwrap();
        assert_eq!(sub.neutral_ref().as_slice(), &[0.5, 0.5]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(sub.basis()[(0, 0)], h, epsilon = 1e-15);
        assert_abs_diff_eq!(sub.basis()[(0, 1)], -h, epsilon = 1e-15);
        assert_abs_diff_eq!(sub.basis()[(1, 0)], -h, epsilon = 1e-15);
        assert_abs_diff_eq!(sub.basis()[(1, 1)], h, epsilon = 1e-15);
        assert_eq!(sub.source_tokens(), &["he", "she"]);
    }

    #[test]
    fn three_class_simplex() {
        let set = EmbeddingSet::from_rows(
            "t",
            [("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0]), ("c", vec![0.0, 0.0, 1.0])],
        )
        .unwrap();
        let s = spec(&[("a", &["a"]), ("b", &["b"]), ("c", &["c"])], &[("x", &["a"])], &["a"]);
        let sub = build_subspace(&set, &s).unwrap();
        for v in sub.neutral_ref().iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        for r in sub.basis().row_iter() {
            assert_abs_diff_eq!(r.norm(), 1.0, epsilon = 1e-12);
        }
        let sum = sub.basis().row_sum();
        assert!(sum.amax() < 1e-12);
    }

    #[test]
    fn identical_anchors_are_degenerate() {
        let set = EmbeddingSet::from_rows(
            "t",
            [("a", vec![1.0, 2.0]), ("b", vec![1.0, 2.0]), ("c", vec![1.0, 2.0])],
        )
        .unwrap();
        let s = spec(&[("a", &["a"]), ("b", &["b"]), ("c", &["c"])], &[("x", &["a"])], &["a"]);
        assert!(matches!(build_subspace(&set, &s), Err(Error::DegenerateComponent(_))));
    }

    #[test]
    fn missing_anchors_are_listed() {
        let set = EmbeddingSet::from_rows("t", [("he", vec![1.0, 0.0])]).unwrap();
        match build_subspace(&set, &he_she()) {
            Err(Error::MissingTokens(m)) => assert_eq!(m, vec!["she"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn neutral_is_set_difference() {
        let set = EmbeddingSet::from_rows(
            "t",
            [
                ("he", vec![1.0, 0.0]),
                ("she", vec![0.0, 1.0]),
                ("doctor", vec![1.0, 1.0]),
                ("table", vec![1.0, -1.0]),
            ],
        )
        .unwrap();
        let s = spec(&[("m", &["he"]), ("f", &["she"])], &[("job", &["doctor"])], &["he", "she"]);
        let n = neutral_set(&set, &s).unwrap();
        assert_eq!(n.indices, vec![3]);
        assert_eq!(n.policy, NeutralPolicy::VocabMinusBiasWords);
    }

    #[test]
    fn explicit_neutral_skips_oov() {
        let set = EmbeddingSet::from_rows(
            "t",
            [("he", vec![1.0, 0.0]), ("she", vec![0.0, 1.0]), ("table", vec![1.0, -1.0])],
        )
        .unwrap();
        let mut s = he_she();
        s.neutral_words = Some(vec!["table".into(), "chair".into()]);
        let n = neutral_set(&set, &s).unwrap();
        assert_eq!(n.indices, vec![2]);
        assert_eq!(n.missing, vec!["chair"]);
        assert_eq!(n.policy, NeutralPolicy::ExplicitList);
    }

    #[test]
    fn all_anchor_vocab_has_no_neutral() {
        let set = EmbeddingSet::from_rows("t", [("he", vec![1.0, 0.0]), ("she", vec![0.0, 1.0])]).unwrap();
        assert!(matches!(neutral_set(&set, &he_she()), Err(Error::EmptyData(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = he_she();
        assert!(s.validate().is_ok());
        s.groups.pop();
        assert!(s.validate().is_err());

        let overlap = spec(&[("m", &["he"]), ("f", &["he"])], &[("j", &["x"])], &["he"]);
        assert!(overlap.validate().is_err());

        let empty = spec(&[("m", &["he"]), ("f", &[])], &[("j", &["x"])], &["he"]);
        assert!(empty.validate().is_err());

        let mut neutral_clash = he_she();
        neutral_clash.neutral_words = Some(vec!["doctor".into()]);
        assert!(neutral_clash.validate().is_err());
    }

    #[test]
    fn builtin_specs_load() {
        for c in [Category::Gender, Category::Race, Category::Religion] {
            let s = BiasSpec::builtin(c).unwrap();
            assert_eq!(s.category, c);
            let back = BiasSpec::from_toml_str(&s.to_toml_string()).unwrap();
            assert_eq!(back, s);
        }
        let race = BiasSpec::builtin(Category::Race).unwrap();
        let anchors: Vec<_> = race.anchors().collect();
        assert_eq!(anchors, ["black", "caucasian", "asian"]);
        assert!(BiasSpec::builtin(Category::Custom).is_none());
    }

    #[test]
    fn toml_rejects_unknown_fields() {
        let text = "category = \"gender\"\ntargets=[\"a\"]\nbogus = 1\n";
        assert!(BiasSpec::from_toml_str(text).is_err());
    }

    #[test]
    fn direct_bias_examples() {
        let set = EmbeddingSet::from_rows(
            "t",
            [
                ("he", vec![1.0, 0.0]),
                ("she", vec![0.0, 1.0]),
                ("on_axis", vec![1.0, -1.0]),
                ("ortho", vec![1.0, 1.0]),
                ("x", vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        assert_abs_diff_eq!(direct_bias(&set, "on_axis", ("he", "she")).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(direct_bias(&set, "ortho", ("he", "she")).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            direct_bias(&set, "x", ("he", "she")).unwrap(),
            0.7071067811865475,
            epsilon = 1e-12
        );
        assert!(direct_bias(&set, "nope", ("he", "she")).is_err());
        assert!(matches!(direct_bias(&set, "x", ("he", "he")), Err(Error::ZeroVector)));
    }

    #[test]
    fn projection_energy_examples() {
        let b = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let sub = BiasSubspace::from_basis(b, DVector::zeros(3), vec!["b".into()]).unwrap();
        let ortho = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.3, 0.4]);
        assert_eq!(projection_energy(&ortho, &sub).unwrap(), 0.0);
        let on = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(projection_energy(&on, &sub).unwrap(), 1.0);
        assert!(projection_energy(&DMatrix::zeros(1, 2), &sub).is_err());
    }

    #[test]
    fn projection_energy_brute_force() {
        let x = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let raw = DMatrix::from_row_slice(2, 3, &[0.6, 0.8, 0.0, 0.0, 0.6, -0.8]);
        let sub = BiasSubspace::from_basis(raw.clone(), DVector::zeros(3), vec!["a".into(), "b".into()]).unwrap();
        let mut brute = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = (0..3).map(|c| x[(i, c)] * raw[(j, c)]).sum();
                brute += dot * dot;
            }
        }
        assert_abs_diff_eq!(projection_energy(&x, &sub).unwrap(), brute / 2.0, epsilon = 1e-14);
    }
}
