use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingSet};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tokenize::TokenizerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereoExample {
    pub context: String,
    pub stereo_sentence: String,
    pub anti_sentence: String,
    pub category: String,
}

impl StereoExample {
    pub fn validate(&self) -> Result<()> {
        for (field, text) in [
            ("context", &self.context),
            ("stereo_sentence", &self.stereo_sentence),
            ("anti_sentence", &self.anti_sentence),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Format(format!("{field} is empty")));
            }
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self {
            stereo_sentence: self.anti_sentence.clone(),
            anti_sentence: self.stereo_sentence.clone(),
            ..self.clone()
        }
    }
}

/// Score in `[0, 100]` with exclusion accounting. Shared by the StereoSet
/// and CrowS metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    pub counted: usize,
    pub excluded: usize,
    pub ties: usize,
}

pub type SsReport = ScoreReport;

/// 1 if `a > b`, 0.5 on an exact tie, else 0.
pub(crate) fn agreement(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

/// Reduces per-item agreements (`None` = excluded) in input order.
pub(crate) fn summarize(items: Vec<Option<f64>>, what: &str) -> Result<ScoreReport> {
    let mut sum = 0.0;
    let mut counted = 0;
    let mut excluded = 0;
    let mut ties = 0;
    for a in items {
        match a {
            Some(a) => {
                sum += a;
                counted += 1;
                if a == 0.5 {
                    ties += 1;
                }
            }
            None => excluded += 1,
        }
    }
    if counted == 0 {
        return Err(Error::EmptyData(format!("every {what} was excluded")));
    }
    Ok(ScoreReport {
        score: 100.0 * sum / counted as f64,
        counted,
        excluded,
        ties,
    })
}

/// Percentage of examples whose context vector is closer to the
/// stereotypical sentence than to the anti-stereotypical one.
pub fn stereotype_score(set: &EmbeddingSet, examples: &[StereoExample], tokenizer: &TokenizerConfig) -> Result<SsReport> {
    let items = parallel::ordered_map(examples, parallel::thread_count(), |ex| {
        let c = set.sentence_vector(&ex.context, tokenizer)?;
        let s = set.sentence_vector(&ex.stereo_sentence, tokenizer)?;
        let a = set.sentence_vector(&ex.anti_sentence, tokenizer)?;
        let cs = cosine(c.vector.as_slice(), s.vector.as_slice()).ok()?;
        let ca = cosine(c.vector.as_slice(), a.vector.as_slice()).ok()?;
        Some(agreement(cs, ca))
    });
    summarize(items, "example")
}
