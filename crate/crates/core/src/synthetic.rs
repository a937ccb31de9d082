//! Seeded synthetic data with a planted gender direction.

use nalgebra::{DMatrix, DVector};

use crate::bias_space::{BiasSpec, Category, NamedTokens, SPEC_VERSION};
use crate::downstream::LabeledCorpus;
use crate::embedding::EmbeddingSet;
use crate::grad::SeededRng;
use crate::metrics::{CrowsPair, PairLabel, StereoExample};

pub const FIXTURE_VOCAB: usize = 400;
pub const FIXTURE_DIM: usize = 64;
/// Size of the component added along the bias axis before renormalizing.
pub const BIAS_STRENGTH: f64 = 0.6;

pub const MALE_TERMS: [&str; 8] = ["man", "boy", "father", "brother", "son", "husband", "uncle", "gentleman"];
pub const MALE_ROLES: [&str; 12] = [
    "engineer", "carpenter", "mechanic", "pilot", "plumber", "surgeon", "architect", "programmer", "firefighter",
    "farmer", "soldier", "banker",
];
pub const FEMALE_ROLES: [&str; 13] = [
    "nurse", "secretary", "receptionist", "librarian", "hairdresser", "nanny", "dancer", "housekeeper", "stylist",
    "homemaker", "florist", "maid", "typist",
];

const CLASS_VOCAB: usize = 40;
const CORPUS_SIZE: usize = 200;
const SENTENCE_LEN: usize = 4;
/// Neutral words added to each stereotype context.
const CONTEXT_FILLERS: usize = 2;

#[derive(Debug, Clone)]
pub struct GenderFixture {
    pub embeddings: EmbeddingSet,
    pub spec: BiasSpec,
    /// The planted unit bias axis.
    pub axis: DVector<f64>,
    /// Filler words (not gendered).
    pub fillers: Vec<String>,
    /// Sentences separable along a direction orthogonal to the bias axis.
    pub corpus: LabeledCorpus,
    pub stereo: Vec<StereoExample>,
    pub crows: Vec<CrowsPair>,
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

fn random_unit(rng: &mut SeededRng, d: usize) -> DVector<f64> {
    unit(DVector::from_fn(d, |_, _| rng.normal()))
}

/// `V = 400`, `d = 64` embeddings. `he`/`she` are `unit(c ± 0.6 b)` with
/// `c ⊥ b`; male terms and roles get `+0.6 b`, female roles `-0.6 b`; the
/// rest are plain random unit vectors. The spec's targets are the male
/// terms and its single attribute set the male roles; neutral words are
/// everything else, female roles included.
pub fn gender_fixture(seed: u64) -> GenderFixture {
    let d = FIXTURE_DIM;
    let mut rng = SeededRng::new(seed);
    let axis = random_unit(&mut rng, d);
    let c = random_unit(&mut rng, d);
    let c = unit(&c - &axis * c.dot(&axis));

    let mut tokens: Vec<String> = vec!["he".into(), "she".into()];
    let mut rows: Vec<DVector<f64>> = vec![unit(&c + &axis * BIAS_STRENGTH), unit(&c - &axis * BIAS_STRENGTH)];
    for (words, sign) in [(&MALE_TERMS[..], 1.0), (&MALE_ROLES[..], 1.0), (&FEMALE_ROLES[..], -1.0)] {
        for w in words {
            tokens.push(w.to_string());
            rows.push(unit(random_unit(&mut rng, d) + &axis * (sign * BIAS_STRENGTH)));
        }
    }
    let first_filler = tokens.len();
    for i in first_filler..FIXTURE_VOCAB {
        tokens.push(format!("word{i:03}"));
        rows.push(random_unit(&mut rng, d));
    }
    let matrix = DMatrix::from_fn(FIXTURE_VOCAB, d, |r, col| rows[r][col]);
    let embeddings = EmbeddingSet::new("fixture", tokens.clone(), matrix).expect("fixture is valid");
    let fillers = tokens[first_filler..].to_vec();

    let spec = BiasSpec {
        version: SPEC_VERSION,
        category: Category::Gender,
        targets: MALE_TERMS.iter().map(|s| s.to_string()).collect(),
        neutral_words: None,
        groups: vec![NamedTokens::new("male", ["he"]), NamedTokens::new("female", ["she"])],
        attribute_sets: vec![NamedTokens::new("male_roles", MALE_ROLES)],
    };

    // Classes: fillers with the largest and smallest projection on a
    // direction orthogonal to the bias axis.
    let a = random_unit(&mut rng, d);
    let a = unit(&a - &axis * a.dot(&axis));
    let mut ranked: Vec<(f64, usize)> = (first_filler..FIXTURE_VOCAB)
        .map(|i| (rows[i].dot(&a), i))
        .collect();
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let negative: Vec<&str> = ranked[..CLASS_VOCAB].iter().map(|&(_, i)| tokens[i].as_str()).collect();
    let positive: Vec<&str> = ranked[ranked.len() - CLASS_VOCAB..].iter().map(|&(_, i)| tokens[i].as_str()).collect();
    let records = (0..CORPUS_SIZE)
        .map(|n| {
            let label = (n % 2) as u8;
            let pool = if label == 1 { &positive } else { &negative };
            let words: Vec<&str> = (0..SENTENCE_LEN)
                .map(|_| pool[rng.sample_indices(pool.len(), 1)[0]])
                .collect();
            (words.join(" "), label)
        })
        .collect();
    let corpus = LabeledCorpus::new("fixture", records).expect("both classes present");

    let mut stereo = Vec::new();
    let mut crows = Vec::new();
    for (roles, stereo_word, anti_word) in [(&MALE_ROLES[..], "he", "she"), (&FEMALE_ROLES[..], "she", "he")] {
        for role in roles {
            let extra: Vec<&str> = rng
                .sample_indices(fillers.len(), CONTEXT_FILLERS)
                .into_iter()
                .map(|i| fillers[i].as_str())
                .collect();
            let extra = extra.join(" ");
            stereo.push(StereoExample {
                context: format!("the {role} {extra}"),
                stereo_sentence: format!("{stereo_word} works"),
                anti_sentence: format!("{anti_word} works"),
                category: "gender".into(),
            });
            crows.push(CrowsPair {
                sent_more: format!("{stereo_word} was the {role} {extra}"),
                sent_less: format!("{anti_word} was the {role} {extra}"),
                stereo_antistereo: PairLabel::Stereo,
                bias_type: "gender".into(),
            });
        }
    }

    GenderFixture {
        embeddings,
        spec,
        axis,
        fillers,
        corpus,
        stereo,
        crows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias_space::build_subspace;

    #[test]
    fn shape_and_determinism() {
        let f = gender_fixture(7);
        assert_eq!(f.embeddings.len(), FIXTURE_VOCAB);
        assert_eq!(f.embeddings.dim(), FIXTURE_DIM);
        f.spec.validate().unwrap();
        let g = gender_fixture(7);
        assert_eq!(f.embeddings.matrix(), g.embeddings.matrix());
        assert_eq!(f.corpus, g.corpus);
        assert_ne!(gender_fixture(8).embeddings.matrix(), f.embeddings.matrix());
    }

    #[test]
    fn subspace_recovers_axis() {
        let f = gender_fixture(3);
        let sub = build_subspace(&f.embeddings, &f.spec).unwrap();
        for row in sub.basis().row_iter() {
            assert!((row.transpose().dot(&f.axis).abs() - 1.0).abs() < 1e-12);
        }
    }
}
