//! Bias measurements: MAC, StereoSet-style stereotype score, CrowS-Pairs.

mod crows;
pub mod import;
mod mac;
mod stereo;

pub use crows::{crows_score, token_diff, CrowsPair, CrowsReport, PairLabel, TokenDiff};
pub use mac::{mac, mac_significance, sign_flip_p_value, MacReport, PairDistance, DEFAULT_PERMUTATIONS};
pub use stereo::{stereotype_score, ScoreReport, SsReport, StereoExample};
