//! Shapley-value attribution over token presence.
//!
//! A coalition is a subset of the non-pad positions; its value is the
//! positive-class probability of the sequence with every other non-pad
//! position replaced by padding. [`exact_shapley`] enumerates all 2^n
//! coalitions. [`sampled_shap`] fits the same values from a budget of
//! coalition evaluations by kernel-weighted least squares, pinning the
//! intercept to the empty-coalition value and enforcing that scores sum
//! to the full-minus-empty probability gap. Handing it a budget that
//! covers every coalition makes the fit exhaustive, and its solution then
//! coincides with the exact enumeration.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attribution::solve::weighted_ridge;
use crate::attribution::{align_to_sequence, AttributionVector, Method};
use crate::error::{Error, Result};
use crate::model::PredictModel;
use crate::text::TokenSequence;

/// Largest active-token count the exact enumeration accepts.
pub const EXACT_SHAPLEY_MAX: usize = 14;

#[derive(Debug, Clone)]
pub struct ShapConfig {
    /// Total coalition evaluation budget, counting the empty and full
    /// coalitions.
    pub coalitions: usize,
}

impl Default for ShapConfig {
    fn default() -> ShapConfig {
        ShapConfig { coalitions: 100 }
    }
}

fn coalition_value<M: PredictModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    active: &[usize],
    member: impl Fn(usize) -> bool,
) -> f64 {
    let kept: Vec<usize> = (0..active.len()).filter(|&k| member(k)).map(|k| active[k]).collect();
    model.positive_probability(&seq.keep_only(&kept))
}

/// Exact Shapley values by full coalition enumeration. Fails when more
/// than [`EXACT_SHAPLEY_MAX`] non-pad positions are present. An all-pad
/// sequence gets the zero vector.
pub fn exact_shapley<M: PredictModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
) -> Result<AttributionVector> {
    let start = Instant::now();
    let active = seq.non_pad_positions();
    let n = active.len();
    if n > EXACT_SHAPLEY_MAX {
        return Err(Error::TooManyActivePositions {
            limit: EXACT_SHAPLEY_MAX,
            got: n,
        });
    }
    if n == 0 {
        return Ok(AttributionVector::new(
            Method::Shap,
            vec![0.0; seq.len()],
            start.elapsed().as_secs_f64(),
        ));
    }

    let mut value = vec![0.0f64; 1 << n];
    for (mask, v) in value.iter_mut().enumerate() {
        *v = coalition_value(model, seq, &active, |k| mask >> k & 1 == 1);
    }

    let mut factorial = [1.0f64; EXACT_SHAPLEY_MAX + 1];
    for i in 1..=n {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight = |s: usize| factorial[s] * factorial[n - 1 - s] / factorial[n];

    let mut phi = vec![0.0f64; n];
    for mask in 0..1usize << n {
        let s = mask.count_ones() as usize;
        for (k, p) in phi.iter_mut().enumerate() {
            if mask >> k & 1 == 0 {
                *p += weight(s) * (value[mask | 1 << k] - value[mask]);
            }
        }
    }

    let scores = align_to_sequence(&phi, seq)?;
    Ok(AttributionVector::new(
        Method::Shap,
        scores,
        start.elapsed().as_secs_f64(),
    ))
}

/// Draws a coalition membership vector with 1 <= size <= n-1.
fn draw_proper(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    loop {
        let z: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let s = z.iter().filter(|&&b| b).count();
        if s > 0 && s < n {
            return z;
        }
    }
}

fn binomial(n: usize, s: usize) -> f64 {
    let s = s.min(n - s);
    let mut c = 1.0f64;
    for i in 0..s {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Kernel weight for a proper coalition of size `s` out of `n`.
fn kernel_weight(n: usize, s: usize) -> f64 {
    (n - 1) as f64 / (binomial(n, s) * (s * (n - s)) as f64)
}

/// Shapley values estimated from sampled coalitions.
///
/// The empty and full coalitions are always evaluated and enter as hard
/// constraints. The rest of the budget goes to uniformly drawn proper
/// coalitions, added together with their complements; the surrogate fit
/// weights each by the Shapley kernel. When the budget covers all 2^n
/// coalitions the proper ones are enumerated instead of drawn.
pub fn sampled_shap<M: PredictModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    cfg: &ShapConfig,
    seed: u64,
) -> Result<AttributionVector> {
    if cfg.coalitions < 4 {
        return Err(Error::BadEvalConfig(format!(
            "coalition budget {} is too small (need at least 4)",
            cfg.coalitions
        )));
    }
    let start = Instant::now();
    let active = seq.non_pad_positions();
    let n = active.len();
    if n == 0 {
        return Ok(AttributionVector::new(
            Method::Shap,
            vec![0.0; seq.len()],
            start.elapsed().as_secs_f64(),
        ));
    }

    let v_empty = coalition_value(model, seq, &active, |_| false);
    let v_full = coalition_value(model, seq, &active, |_| true);
    let total = v_full - v_empty;

    if n == 1 {
        let scores = align_to_sequence(&[total], seq)?;
        return Ok(AttributionVector::new(
            Method::Shap,
            scores,
            start.elapsed().as_secs_f64(),
        ));
    }

    let exhaustive = n <= EXACT_SHAPLEY_MAX && cfg.coalitions >= 1usize << n;
    let masks: Vec<Vec<bool>> = if exhaustive {
        (1..(1usize << n) - 1)
            .map(|mask| (0..n).map(|k| mask >> k & 1 == 1).collect())
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = cfg.coalitions - 2;
        let mut out = Vec::with_capacity(budget);
        while out.len() + 1 < budget {
            let z = draw_proper(&mut rng, n);
            let complement = z.iter().map(|&b| !b).collect();
            out.push(z);
            out.push(complement);
        }
        if out.len() < budget {
            out.push(draw_proper(&mut rng, n));
        }
        out
    };

    // Last active position is eliminated against the efficiency
    // constraint, leaving n-1 free coefficients.
    let rows = masks.len();
    let cols = n - 1;
    let mut x = Array2::zeros((rows, cols));
    let mut y = Array1::zeros(rows);
    let mut w = Array1::zeros(rows);
    for (r, z) in masks.iter().enumerate() {
        let s = z.iter().filter(|&&b| b).count();
        let v = coalition_value(model, seq, &active, |k| z[k]);
        let last = if z[n - 1] { 1.0 } else { 0.0 };
        for k in 0..cols {
            let zk = if z[k] { 1.0 } else { 0.0 };
            x[[r, k]] = zk - last;
        }
        y[r] = v - v_empty - last * total;
        w[r] = kernel_weight(n, s);
    }
    // The least squares minimizer is invariant to a common weight scale,
    // and for long inputs the raw kernel weights underflow toward zero,
    // so normalize them to keep the normal equations well scaled.
    let wsum = w.sum();
    w.mapv_inplace(|v| v / wsum);

    let beta = match weighted_ridge(&x, &y, &w, 0.0, &vec![false; cols]) {
        Some(beta) => beta,
        None => {
            log::warn!(
                "singular coalition design ({} rows, {} coefficients); refitting with a tiny ridge",
                rows,
                cols
            );
            weighted_ridge(&x, &y, &w, 1e-10, &vec![true; cols]).ok_or_else(|| {
                Error::BadEvalConfig(format!(
                    "coalition budget {} cannot identify {} scores even with a ridge",
                    cfg.coalitions, n
                ))
            })?
        }
    };

    let mut phi: Vec<f64> = beta.to_vec();
    let rest: f64 = phi.iter().sum();
    phi.push(total - rest);

    let scores = align_to_sequence(&phi, seq)?;
    Ok(AttributionVector::new(
        Method::Shap,
        scores,
        start.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Classifier, CnnClassifier, CnnConfig};
    use approx::assert_abs_diff_eq;

    /// Value function that is additive in token presence: the Shapley
    /// value of each token is then exactly its own contribution.
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

    fn additive_model() -> AdditiveValue {
        let mut per_id = vec![0.0; 10];
        per_id[2] = 0.3;
        per_id[3] = 0.2;
        per_id[4] = -0.15;
        per_id[5] = 0.05;
        AdditiveValue { base: 0.1, per_id }
    }

    #[test]
    fn additive_value_recovers_per_token_contributions() {
        let model = additive_model();
        let seq = TokenSequence::new(vec![2, 3, 0, 4, 5, 0]);
        let attr = exact_shapley(&model, &seq).unwrap();
        assert_abs_diff_eq!(attr.scores[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.scores[1], 0.2, epsilon = 1e-12);
        assert_eq!(attr.scores[2], 0.0);
        assert_abs_diff_eq!(attr.scores[3], -0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.scores[4], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn interchangeable_tokens_get_equal_scores() {
        // Same token id twice under a width-1 kernel: swapping the two
        // positions never changes any coalition value, so symmetry forces
        // equal scores.
        let cfg = CnnConfig {
            vocab_size: 12,
            seq_len: 8,
            kernel_width: 1,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 9).unwrap());
        let seq = TokenSequence::new(vec![5, 3, 5, 7, 0, 0, 0, 0]);
        let attr = exact_shapley(&model, &seq).unwrap();
        assert_abs_diff_eq!(attr.scores[0], attr.scores[2], epsilon = 1e-12);
    }

    #[test]
    fn scores_sum_to_full_minus_empty_gap() {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 16,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 21).unwrap());
        let seq = TokenSequence::new(vec![4, 9, 2, 17, 3, 22, 8, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let attr = exact_shapley(&model, &seq).unwrap();
        let gap = model.positive_probability(&seq)
            - model.positive_probability(&seq.keep_only(&[]));
        let sum: f64 = attr.scores.iter().sum();
        assert_abs_diff_eq!(sum, gap, epsilon = 1e-10);
    }

    #[test]
    fn exhaustive_budget_matches_exact_enumeration() {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 12,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 33).unwrap());
        let seq = TokenSequence::new(vec![4, 9, 2, 17, 3, 22, 8, 11, 0, 0, 0, 0]);
        let exact = exact_shapley(&model, &seq).unwrap();
        let shap_cfg = ShapConfig { coalitions: 1 << 8 };
        let sampled = sampled_shap(&model, &seq, &shap_cfg, 77).unwrap();
        for (a, b) in exact.scores.iter().zip(&sampled.scores) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn sampled_fit_keeps_the_efficiency_constraint() {
        let cfg = CnnConfig {
            vocab_size: 40,
            seq_len: 24,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 2).unwrap());
        let mut ids = vec![0; 24];
        for (j, id) in ids.iter_mut().enumerate().take(20) {
            *id = 2 + (j * 7 % 37) as u32;
        }
        let seq = TokenSequence::new(ids);
        let attr = sampled_shap(&model, &seq, &ShapConfig::default(), 123).unwrap();
        let gap = model.positive_probability(&seq)
            - model.positive_probability(&seq.keep_only(&[]));
        let sum: f64 = attr.scores.iter().sum();
        assert_abs_diff_eq!(sum, gap, epsilon = 1e-10);
    }

    #[test]
    fn constant_model_gets_zero_scores() {
        struct Constant;
        impl PredictModel for Constant {
            fn positive_probability(&self, _seq: &TokenSequence) -> f64 {
                0.73
            }
        }
        let seq = TokenSequence::new(vec![3, 4, 5, 6, 7, 0]);
        let exact = exact_shapley(&Constant, &seq).unwrap();
        assert!(exact.scores.iter().all(|&s| s.abs() <= 1e-9));
        let sampled = sampled_shap(&Constant, &seq, &ShapConfig { coalitions: 24 }, 5).unwrap();
        assert!(sampled.scores.iter().all(|&s| s.abs() <= 1e-9));
    }

    #[test]
    fn exact_rejects_too_many_active_tokens() {
        let seq = TokenSequence::new((2..22).collect::<Vec<u32>>());
        let err = exact_shapley(&additive_model(), &seq).unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyActivePositions { limit: 14, got: 20 }
        ));
    }

    #[test]
    fn single_active_token_takes_the_whole_gap() {
        let model = additive_model();
        let seq = TokenSequence::new(vec![0, 2, 0, 0]);
        let attr = sampled_shap(&model, &seq, &ShapConfig::default(), 1).unwrap();
        assert_abs_diff_eq!(attr.scores[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn all_pad_sequence_gets_zero_vector() {
        let model = additive_model();
        let seq = TokenSequence::new(vec![0, 0, 0]);
        assert_eq!(exact_shapley(&model, &seq).unwrap().scores, vec![0.0; 3]);
        let sampled = sampled_shap(&model, &seq, &ShapConfig::default(), 9).unwrap();
        assert_eq!(sampled.scores, vec![0.0; 3]);
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 20,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 8).unwrap());
        let mut ids = vec![0; 20];
        for (j, id) in ids.iter_mut().enumerate().take(16) {
            *id = 2 + (j * 3 % 27) as u32;
        }
        let seq = TokenSequence::new(ids);
        let a = sampled_shap(&model, &seq, &ShapConfig::default(), 42).unwrap();
        let b = sampled_shap(&model, &seq, &ShapConfig::default(), 42).unwrap();
        let c = sampled_shap(&model, &seq, &ShapConfig::default(), 43).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_ne!(a.scores, c.scores);
    }

    #[test]
    fn tiny_budget_is_rejected() {
        let model = additive_model();
        let seq = TokenSequence::new(vec![2, 3, 4, 0]);
        let err = sampled_shap(&model, &seq, &ShapConfig { coalitions: 3 }, 1).unwrap_err();
        assert!(matches!(err, Error::BadEvalConfig(_)));
    }
}
