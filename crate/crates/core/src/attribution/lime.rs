//! Local surrogate attribution over token presence.
//!
//! Perturbed samples keep each non-pad token independently with
//! probability one half and pad out the rest. A ridge regression from
//! presence indicators to the model's positive-class probability,
//! weighted by an exponential kernel on the cosine distance from the
//! unperturbed sample, yields one coefficient per token; only the
//! `top_k` largest-magnitude coefficients are kept as scores.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attribution::solve::weighted_ridge;
use crate::attribution::{align_to_sequence, AttributionVector, Method};
use crate::error::{Error, Result};
use crate::model::PredictModel;
use crate::text::TokenSequence;

#[derive(Debug, Clone)]
pub struct LimeConfig {
    /// Number of perturbed samples, counting the unperturbed one.
    pub samples: usize,
    /// Kernel width on the cosine-distance scale; distances live in
    /// [0, 1], so widths well below 1 localize the fit.
    pub kernel_width: f64,
    /// Ridge penalty on the presence coefficients (never the intercept).
    pub ridge: f64,
    /// How many largest-magnitude coefficients survive as scores.
    pub top_k: usize,
}

impl Default for LimeConfig {
    fn default() -> LimeConfig {
        LimeConfig {
            samples: 1000,
            kernel_width: 0.25,
            ridge: 1e-3,
            top_k: 20,
        }
    }
}

impl LimeConfig {
    fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::BadEvalConfig(format!(
                "{} perturbation samples cannot support a fit (need at least 2)",
                self.samples
            )));
        }
        if !(self.kernel_width > 0.0) || !self.kernel_width.is_finite() {
            return Err(Error::BadEvalConfig(format!(
                "kernel width must be a positive finite number, got {}",
                self.kernel_width
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::BadEvalConfig(format!(
                "ridge penalty must be a finite non-negative number, got {}",
                self.ridge
            )));
        }
        if self.top_k == 0 {
            return Err(Error::BadEvalConfig(
                "top_k must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Cosine distance between a mask keeping `s` of `n` tokens and the
/// all-ones mask. Falls out to 1 for the empty mask.
fn mask_distance(s: usize, n: usize) -> f64 {
    1.0 - (s as f64 / n as f64).sqrt()
}

pub fn lime_explain<M: PredictModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<AttributionVector> {
    cfg.validate()?;
    let start = Instant::now();
    let active = seq.non_pad_positions();
    let n = active.len();
    if n == 0 {
        return Ok(AttributionVector::new(
            Method::Lime,
            vec![0.0; seq.len()],
            start.elapsed().as_secs_f64(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = cfg.samples;
    let mut x = Array2::zeros((rows, n + 1));
    let mut y = Array1::zeros(rows);
    let mut w = Array1::zeros(rows);
    for r in 0..rows {
        let mask: Vec<bool> = if r == 0 {
            vec![true; n]
        } else {
            (0..n).map(|_| rng.gen::<bool>()).collect()
        };
        let kept: Vec<usize> = (0..n).filter(|&k| mask[k]).map(|k| active[k]).collect();
        let s = kept.len();
        x[[r, 0]] = 1.0;
        for k in 0..n {
            if mask[k] {
                x[[r, k + 1]] = 1.0;
            }
        }
        y[r] = model.positive_probability(&seq.keep_only(&kept));
        let d = mask_distance(s, n);
        w[r] = (-(d * d) / (cfg.kernel_width * cfg.kernel_width)).exp();
    }

    let mut penalize = vec![true; n + 1];
    penalize[0] = false;
    let beta = weighted_ridge(&x, &y, &w, cfg.ridge, &penalize).ok_or_else(|| {
        Error::BadEvalConfig(format!(
            "surrogate fit is singular with {} samples over {} tokens; raise samples or ridge",
            cfg.samples, n
        ))
    })?;
    let coefs = &beta.as_slice().unwrap()[1..];
    if coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            context: "surrogate coefficients".to_string(),
        });
    }

    // Keep the top_k coefficients by magnitude, ties to the earlier
    // position, and zero out the rest.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        coefs[b]
            .abs()
            .partial_cmp(&coefs[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut word_scores = vec![0.0; n];
    for &k in order.iter().take(cfg.top_k) {
        word_scores[k] = coefs[k];
    }

    let scores = align_to_sequence(&word_scores, seq)?;
    Ok(AttributionVector::new(
        Method::Lime,
        scores,
        start.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Classifier, CnnClassifier, CnnConfig};
    use approx::assert_abs_diff_eq;

    /// Value additive in token presence, so the surrogate is exactly
    /// linear and the fit must recover each contribution.
    struct AdditiveValue {
        base: f64,
        per_id: Vec<f64>,
    }

    impl PredictModel for AdditiveValue {
        fn positive_probability(&self, seq: &TokenSequence) -> f64 {
            let mut v = self.base;
            for &id in seq.ids() {
                if id != crate::text::PAD_ID {
                    v += self.per_id[id as usize];
                }
            }
            v
        }
    }

    #[test]
    fn linear_value_is_recovered() {
        let mut per_id = vec![0.0; 6];
        per_id[2] = 0.1;
        per_id[3] = 0.05;
        let model = AdditiveValue { base: 0.2, per_id };
        let seq = TokenSequence::new(vec![2, 3, 0, 0]);
        let cfg = LimeConfig {
            samples: 2000,
            ridge: 1e-6,
            top_k: 2,
            ..LimeConfig::default()
        };
        let attr = lime_explain(&model, &seq, &cfg, 17).unwrap();
        assert_abs_diff_eq!(attr.scores[0], 0.1, epsilon = 1e-4);
        assert_abs_diff_eq!(attr.scores[1], 0.05, epsilon = 1e-4);
        assert_eq!(attr.scores[2], 0.0);
        assert_eq!(attr.scores[3], 0.0);
    }

    #[test]
    fn top_k_keeps_only_largest_magnitudes() {
        let mut per_id = vec![0.0; 8];
        per_id[2] = 0.3;
        per_id[3] = 0.12;
        per_id[4] = -0.25;
        per_id[5] = 0.04;
        let model = AdditiveValue { base: 0.3, per_id };
        let seq = TokenSequence::new(vec![2, 3, 4, 5, 0, 0]);
        let cfg = LimeConfig {
            samples: 1500,
            ridge: 1e-6,
            top_k: 2,
            ..LimeConfig::default()
        };
        let attr = lime_explain(&model, &seq, &cfg, 4).unwrap();
        assert!(attr.scores[0] > 0.25, "score {}", attr.scores[0]);
        assert!(attr.scores[2] < -0.2, "score {}", attr.scores[2]);
        assert_eq!(attr.scores[1], 0.0);
        assert_eq!(attr.scores[3], 0.0);
        assert_eq!(attr.scores[4], 0.0);
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 16,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 13).unwrap());
        let seq = TokenSequence::new(vec![4, 9, 2, 17, 3, 22, 8, 11, 5, 6, 0, 0, 0, 0, 0, 0]);
        let lime_cfg = LimeConfig {
            samples: 200,
            ..LimeConfig::default()
        };
        let a = lime_explain(&model, &seq, &lime_cfg, 42).unwrap();
        let b = lime_explain(&model, &seq, &lime_cfg, 42).unwrap();
        let c = lime_explain(&model, &seq, &lime_cfg, 43).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_ne!(a.scores, c.scores);
    }

    #[test]
    fn all_pad_sequence_gets_zero_vector() {
        let model = AdditiveValue {
            base: 0.4,
            per_id: vec![0.0; 4],
        };
        let seq = TokenSequence::new(vec![0, 0, 0]);
        let attr = lime_explain(&model, &seq, &LimeConfig::default(), 8).unwrap();
        assert_eq!(attr.scores, vec![0.0; 3]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let model = AdditiveValue {
            base: 0.4,
            per_id: vec![0.0; 4],
        };
        let seq = TokenSequence::new(vec![2, 3, 0]);
        for cfg in [
            LimeConfig {
                samples: 1,
                ..LimeConfig::default()
            },
            LimeConfig {
                kernel_width: 0.0,
                ..LimeConfig::default()
            },
            LimeConfig {
                ridge: -1.0,
                ..LimeConfig::default()
            },
            LimeConfig {
                top_k: 0,
                ..LimeConfig::default()
            },
        ] {
            assert!(matches!(
                lime_explain(&model, &seq, &cfg, 1).unwrap_err(),
                Error::BadEvalConfig(_)
            ));
        }
    }
}
