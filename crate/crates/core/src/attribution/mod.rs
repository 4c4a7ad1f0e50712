//! Token attribution methods.
//!
//! Every method produces an [`AttributionVector`]: one score per sequence
//! position, aligned to the padded sequence, with pad positions carrying
//! exactly zero. Scores explain the positive-class probability; with a
//! binary sigmoid head the negative-class attribution is its mirror.

mod ig;
mod lime;
mod shapley;
pub(crate) mod solve;

pub use ig::{completeness_gap, integrated_gradients, IgConfig};
pub use lime::{lime_explain, LimeConfig};
pub use shapley::{exact_shapley, sampled_shap, ShapConfig, EXACT_SHAPLEY_MAX};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ig,
    Shap,
    Lime,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ig => "ig",
            Method::Shap => "shap",
            Method::Lime => "lime",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Method, String> {
        match s {
            "ig" => Ok(Method::Ig),
            "shap" => Ok(Method::Shap),
            "lime" => Ok(Method::Lime),
            other => Err(format!("unknown method '{other}' (expected ig, shap or lime)")),
        }
    }
}

/// Per-position importance scores for one explained sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionVector {
    pub method: Method,
    /// One score per sequence position; pad positions are exactly zero.
    pub scores: Vec<f64>,
    /// Class whose probability the scores explain (always the positive
    /// class here).
    pub explained_class: u8,
    /// Wall-clock seconds spent producing this explanation, including
    /// every model query it issued.
    pub wall_time_s: f64,
}

impl AttributionVector {
    pub(crate) fn new(method: Method, scores: Vec<f64>, wall_time_s: f64) -> AttributionVector {
        AttributionVector {
            method,
            scores,
            explained_class: 1,
            wall_time_s: wall_time_s.max(1e-9),
        }
    }
}

/// Spreads per-word scores (one per non-pad position, in order) onto the
/// padded sequence. Pad positions get exactly zero. Word counts must
/// match the number of non-pad positions.
pub fn align_to_sequence(word_scores: &[f64], seq: &TokenSequence) -> Result<Vec<f64>> {
    let positions = seq.non_pad_positions();
    if word_scores.len() != positions.len() {
        return Err(Error::AlignmentMismatch {
            scores: word_scores.len(),
            positions: positions.len(),
        });
    }
    let mut scores = vec![0.0; seq.len()];
    for (s, p) in word_scores.iter().zip(positions) {
        scores[p] = *s;
    }
    Ok(scores)
}

/// A configured attribution method, ready to run against a classifier.
#[derive(Debug, Clone)]
pub enum Explainer {
    Ig(IgConfig),
    Shap(ShapConfig),
    Lime(LimeConfig),
}

impl Explainer {
    pub fn method(&self) -> Method {
        match self {
            Explainer::Ig(_) => Method::Ig,
            Explainer::Shap(_) => Method::Shap,
            Explainer::Lime(_) => Method::Lime,
        }
    }

    /// Runs the method. `seed` drives any sampling the method performs;
    /// deterministic methods ignore it.
    pub fn explain(
        &self,
        model: &Classifier,
        seq: &TokenSequence,
        seed: u64,
    ) -> Result<AttributionVector> {
        match self {
            Explainer::Ig(cfg) => Ok(integrated_gradients(model, seq, cfg)),
            Explainer::Shap(cfg) => sampled_shap(model, seq, cfg, seed),
            Explainer::Lime(cfg) => lime_explain(model, seq, cfg, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_places_scores_at_non_pad_positions() {
        let seq = TokenSequence::new(vec![7, 7, 0, 9, 0]);
        let aligned = align_to_sequence(&[0.5, -0.2, 0.1], &seq).unwrap();
        assert_eq!(aligned, vec![0.5, -0.2, 0.0, 0.1, 0.0]);
    }

    #[test]
    fn align_keeps_duplicate_tokens_distinct() {
        // Same token id at two positions still gets two different scores.
        let seq = TokenSequence::new(vec![7, 7, 0, 0]);
        let aligned = align_to_sequence(&[0.5, -0.2], &seq).unwrap();
        assert_eq!(aligned, vec![0.5, -0.2, 0.0, 0.0]);
    }

    #[test]
    fn align_rejects_count_mismatch() {
        let seq = TokenSequence::new(vec![7, 0, 9]);
        let err = align_to_sequence(&[1.0], &seq).unwrap_err();
        assert!(matches!(
            err,
            Error::AlignmentMismatch {
                scores: 1,
                positions: 2
            }
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Ig, Method::Shap, Method::Lime] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("gradcam".parse::<Method>().is_err());
    }
}
