//! Deletion-based faithfulness metrics for attribution vectors.
//!
//! Every metric perturbs the input by replacing token positions with
//! padding and watches the probability of the explained class. The
//! explained class is the model's predicted class by default and can be
//! pinned to the positive class instead. Removal always follows the same
//! ranking: non-pad positions by score magnitude, ties to the earlier
//! position.

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionVector, Method};
use crate::error::{Error, Result};
use crate::model::{Classifier, PredictModel};
use crate::text::{EncodedExample, TokenSequence};

/// Which class probability the metrics track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    /// The class the model assigns to the unperturbed sequence.
    Predicted,
    /// Always the positive class.
    Positive,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Top set size for the deletion and retention deltas and the flip
    /// scan.
    pub k: usize,
    /// Removal path length for the area metric; defaults to `k`.
    pub aopc_m: Option<usize>,
    pub class_mode: ClassMode,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            k: 20,
            aopc_m: None,
            class_mode: ClassMode::Predicted,
        }
    }
}

impl EvalConfig {
    pub fn aopc_steps(&self) -> usize {
        self.aopc_m.unwrap_or(self.k)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::BadEvalConfig("k must be at least 1".to_string()));
        }
        if self.aopc_steps() == 0 {
            return Err(Error::BadEvalConfig(
                "aopc path length must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Class the metrics explain for this sequence under the given mode.
pub fn explained_class<M: PredictModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    mode: ClassMode,
) -> u8 {
    match mode {
        ClassMode::Positive => 1,
        ClassMode::Predicted => {
            if model.positive_probability(seq) >= 0.5 {
                1
            } else {
                0
            }
        }
    }
}

fn class_probability<M: PredictModel + ?Sized>(model: &M, class: u8, seq: &TokenSequence) -> f64 {
    let p = model.positive_probability(seq);
    if class == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Non-pad positions ranked by score magnitude (descending, ties to the
/// earlier position), truncated to at most `k`.
pub fn top_k(scores: &[f64], seq: &TokenSequence, k: usize) -> Result<Vec<usize>> {
    if scores.len() != seq.len() {
        return Err(Error::ScoreLengthMismatch {
            got: scores.len(),
            expected: seq.len(),
        });
    }
    let mut ranked = seq.non_pad_positions();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// Removes the given positions, padding them out.
pub fn mask_remove(seq: &TokenSequence, positions: &[usize]) -> TokenSequence {
    seq.with_pad_at(positions)
}

/// Keeps only the given positions, padding out every other one.
pub fn mask_keep(seq: &TokenSequence, positions: &[usize]) -> TokenSequence {
    seq.keep_only(positions)
}

/// Probability drop after deleting the top-k scored tokens.
pub fn comprehensiveness(
    model: &Classifier,
    seq: &TokenSequence,
    scores: &[f64],
    k: usize,
    mode: ClassMode,
) -> Result<f64> {
    let c = explained_class(model, seq, mode);
    let top = top_k(scores, seq, k)?;
    Ok(class_probability(model, c, seq) - class_probability(model, c, &mask_remove(seq, &top)))
}

/// Probability drop after keeping only the top-k scored tokens.
pub fn sufficiency(
    model: &Classifier,
    seq: &TokenSequence,
    scores: &[f64],
    k: usize,
    mode: ClassMode,
) -> Result<f64> {
    let c = explained_class(model, seq, mode);
    let top = top_k(scores, seq, k)?;
    Ok(class_probability(model, c, seq) - class_probability(model, c, &mask_keep(seq, &top)))
}

/// Mean probability drop along the greedy removal path: tokens leave one
/// at a time in ranking order, up to `m` steps or until no non-pad
/// tokens remain, and the drops from the unperturbed probability are
/// averaged over the steps actually taken. An all-pad input scores zero.
pub fn aopc(
    model: &Classifier,
    seq: &TokenSequence,
    scores: &[f64],
    m: usize,
    mode: ClassMode,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::BadEvalConfig(
            "aopc path length must be at least 1".to_string(),
        ));
    }
    let c = explained_class(model, seq, mode);
    let ranked = top_k(scores, seq, m)?;
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let p0 = class_probability(model, c, seq);
    let mut sum = 0.0;
    for i in 1..=ranked.len() {
        sum += p0 - class_probability(model, c, &mask_remove(seq, &ranked[..i]));
    }
    Ok(sum / ranked.len() as f64)
}

/// Steps along the same removal path and reports the first prefix length
/// at which the predicted label changes, scanning at most `k` steps.
/// `None` means the label never flipped on the scanned path.
pub fn flip_at_k(
    model: &Classifier,
    seq: &TokenSequence,
    scores: &[f64],
    k: usize,
) -> Result<Option<usize>> {
    let ranked = top_k(scores, seq, k)?;
    let label0 = model.positive_probability(seq) >= 0.5;
    for i in 1..=ranked.len() {
        let label = model.positive_probability(&mask_remove(seq, &ranked[..i])) >= 0.5;
        if label != label0 {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Faithfulness metrics for one explained instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub instance_id: usize,
    pub method: Method,
    pub explained_class: u8,
    pub comprehensiveness: f64,
    pub sufficiency: f64,
    pub aopc: f64,
    /// `None` when the label never flipped within the scanned prefix.
    pub flip_at_k: Option<usize>,
    pub explain_time_s: f64,
}

/// Metric means over the successfully explained instances of one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub evaluated: usize,
    pub excluded: usize,
    pub delta_comp: f64,
    pub delta_suff: f64,
    pub aopc: f64,
    /// Mean flip step, counting never-flipped instances as `k + 1`.
    pub flip_at_k: f64,
    /// Mean explanation wall time in seconds.
    pub time_s: f64,
}

/// Explains every instance with `explain` and scores the explanations.
///
/// An instance whose explanation fails, or comes back with the wrong
/// score length, is logged, counted in `excluded` and left out of the
/// aggregate. Every instance failing is an error.
pub fn evaluate_explainer<F>(
    model: &Classifier,
    instances: &[EncodedExample],
    cfg: &EvalConfig,
    mut explain: F,
) -> Result<(Vec<MetricsRecord>, MethodAggregate)>
where
    F: FnMut(&EncodedExample) -> Result<AttributionVector>,
{
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::BadEvalConfig(
            "no instances to evaluate".to_string(),
        ));
    }

    let mut records = Vec::new();
    let mut excluded = 0usize;
    let mut method = None;
    for ex in instances {
        let attr = match explain(ex) {
            Ok(attr) => attr,
            Err(err) => {
                log::warn!("instance {}: explanation failed: {err}", ex.id);
                excluded += 1;
                continue;
            }
        };
        if attr.scores.len() != ex.sequence.len() {
            log::warn!(
                "instance {}: explanation has {} scores for {} positions",
                ex.id,
                attr.scores.len(),
                ex.sequence.len()
            );
            excluded += 1;
            continue;
        }
        method.get_or_insert(attr.method);
        let seq = &ex.sequence;
        records.push(MetricsRecord {
            instance_id: ex.id,
            method: attr.method,
            explained_class: explained_class(model, seq, cfg.class_mode),
            comprehensiveness: comprehensiveness(model, seq, &attr.scores, cfg.k, cfg.class_mode)?,
            sufficiency: sufficiency(model, seq, &attr.scores, cfg.k, cfg.class_mode)?,
            aopc: aopc(model, seq, &attr.scores, cfg.aopc_steps(), cfg.class_mode)?,
            flip_at_k: flip_at_k(model, seq, &attr.scores, cfg.k)?,
            explain_time_s: attr.wall_time_s,
        });
    }

    let n = records.len();
    let method = match method {
        Some(m) if n > 0 => m,
        _ => {
            return Err(Error::BadEvalConfig(format!(
                "explanation failed on all {} instances",
                instances.len()
            )))
        }
    };
    let mean = |f: &dyn Fn(&MetricsRecord) -> f64| -> f64 {
        records.iter().map(|r| f(r)).sum::<f64>() / n as f64
    };
    let sentinel = (cfg.k + 1) as f64;
    let aggregate = MethodAggregate {
        method,
        evaluated: n,
        excluded,
        delta_comp: mean(&|r| r.comprehensiveness),
        delta_suff: mean(&|r| r.sufficiency),
        aopc: mean(&|r| r.aopc),
        flip_at_k: mean(&|r| r.flip_at_k.map_or(sentinel, |i| i as f64)),
        time_s: mean(&|r| r.explain_time_s),
    };
    Ok((records, aggregate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{integrated_gradients, IgConfig};
    use crate::model::{CnnClassifier, CnnConfig};
    use proptest::prelude::*;

    fn small_model(seed: u64) -> Classifier {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 12,
            ..CnnConfig::default()
        };
        Classifier::Cnn(CnnClassifier::new(cfg, seed).unwrap())
    }

    fn sample_seq() -> TokenSequence {
        TokenSequence::new(vec![4, 9, 2, 17, 3, 22, 8, 0, 0, 0, 0, 0])
    }

    fn sample_scores() -> Vec<f64> {
        vec![0.4, -0.7, 0.1, 0.0, 0.3, -0.2, 0.55, 0.0, 0.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn ranking_orders_by_magnitude_with_position_ties() {
        let seq = TokenSequence::new(vec![5, 6, 7, 8, 0]);
        let scores = vec![0.5, -0.5, 0.3, 0.5, 9.0];
        // The pad position must never rank, whatever its score says.
        let ranked = top_k(&scores, &seq, 10).unwrap();
        assert_eq!(ranked, vec![0, 1, 3, 2]);
        assert_eq!(top_k(&scores, &seq, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn deleting_nothing_changes_nothing() {
        let model = small_model(1);
        let seq = sample_seq();
        let comp = comprehensiveness(&model, &seq, &vec![0.0; 12], 0, ClassMode::Predicted);
        assert_eq!(comp.unwrap(), 0.0);
    }

    #[test]
    fn keeping_everything_changes_nothing() {
        let model = small_model(2);
        let seq = sample_seq();
        let suff = sufficiency(&model, &seq, &sample_scores(), 12, ClassMode::Predicted).unwrap();
        assert_eq!(suff, 0.0);
    }

    #[test]
    fn one_step_path_equals_single_deletion_delta() {
        let model = small_model(3);
        let seq = sample_seq();
        let scores = sample_scores();
        let a = aopc(&model, &seq, &scores, 1, ClassMode::Predicted).unwrap();
        let c = comprehensiveness(&model, &seq, &scores, 1, ClassMode::Predicted).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn constant_model_never_flips() {
        let model = small_model(4);
        // Zero out the head so every probability is exactly one half.
        let mut params = model.flat_params();
        let len = params.len();
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 12,
            ..CnnConfig::default()
        };
        let head = cfg.filters + 1;
        for p in params.iter_mut().skip(len - head) {
            *p = 0.0;
        }
        let mut model = model;
        model.set_flat_params(&params);
        let flip = flip_at_k(&model, &sample_seq(), &sample_scores(), 5).unwrap();
        assert_eq!(flip, None);
    }

    #[test]
    fn flip_is_found_at_the_first_deciding_step() {
        struct Gate;
        impl PredictModel for Gate {
            fn positive_probability(&self, seq: &TokenSequence) -> f64 {
                if seq.ids().contains(&3) {
                    0.9
                } else {
                    0.2
                }
            }
        }
        // Wrap in an additive stand-in via direct metric calls: build a
        // classifier-free check by ranking scores so the gating token
        // leaves second.
        let seq = TokenSequence::new(vec![7, 3, 8, 0]);
        let scores = vec![0.9, 0.5, 0.1, 0.0];
        let ranked = top_k(&scores, &seq, 3).unwrap();
        assert_eq!(ranked, vec![0, 1, 2]);
        let label0 = Gate.positive_probability(&seq) >= 0.5;
        let mut flip = None;
        for i in 1..=ranked.len() {
            let masked = mask_remove(&seq, &ranked[..i]);
            if (Gate.positive_probability(&masked) >= 0.5) != label0 {
                flip = Some(i);
                break;
            }
        }
        assert_eq!(flip, Some(2));
    }

    #[test]
    fn path_stops_at_the_last_real_token() {
        let model = small_model(5);
        let seq = TokenSequence::new(vec![4, 9, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let scores = vec![0.3, 0.2, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        // Path length requests beyond the real tokens collapse to 3 steps.
        let a10 = aopc(&model, &seq, &scores, 10, ClassMode::Predicted).unwrap();
        let a3 = aopc(&model, &seq, &scores, 3, ClassMode::Predicted).unwrap();
        assert_eq!(a10, a3);
        let f10 = flip_at_k(&model, &seq, &scores, 10).unwrap();
        assert_eq!(f10, flip_at_k(&model, &seq, &scores, 3).unwrap());
        if let Some(i) = f10 {
            assert!(i <= 3);
        }
    }

    #[test]
    fn all_pad_input_scores_zero_area() {
        let model = small_model(6);
        let seq = TokenSequence::new(vec![0; 12]);
        let a = aopc(&model, &seq, &vec![0.0; 12], 5, ClassMode::Predicted).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn positive_mode_tracks_the_positive_class() {
        let model = small_model(7);
        let seq = sample_seq();
        let scores = sample_scores();
        let comp_pos = comprehensiveness(&model, &seq, &scores, 3, ClassMode::Positive).unwrap();
        let c = explained_class(&model, &seq, ClassMode::Predicted);
        let comp_pred = comprehensiveness(&model, &seq, &scores, 3, ClassMode::Predicted).unwrap();
        if c == 1 {
            assert_eq!(comp_pos, comp_pred);
        } else {
            assert_eq!(comp_pos, -comp_pred);
        }
    }

    #[test]
    fn wrong_score_length_is_rejected() {
        let model = small_model(8);
        let seq = sample_seq();
        let err = comprehensiveness(&model, &seq, &[0.1, 0.2], 2, ClassMode::Predicted).unwrap_err();
        assert!(matches!(
            err,
            Error::ScoreLengthMismatch {
                got: 2,
                expected: 12
            }
        ));
    }

    /// Straightforward reimplementation used as an independent check:
    /// top positions found by repeated scanning instead of sorting, sets
    /// rebuilt from scratch at every step.
    mod oracle {
        use super::*;

        pub fn top_positions(scores: &[f64], seq: &TokenSequence, k: usize) -> Vec<usize> {
            let candidates = seq.non_pad_positions();
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < k.min(candidates.len()) {
                let mut best: Option<usize> = None;
                for &p in &candidates {
                    if chosen.contains(&p) {
                        continue;
                    }
                    best = Some(match best {
                        None => p,
                        Some(b) => {
                            if scores[p].abs() > scores[b].abs() {
                                p
                            } else {
                                b
                            }
                        }
                    });
                }
                chosen.push(best.unwrap());
            }
            chosen
        }

        pub fn prob(model: &Classifier, c: u8, seq: &TokenSequence) -> f64 {
            let p = model.positive_probability(seq);
            if c == 1 {
                p
            } else {
                1.0 - p
            }
        }

        pub fn comp(model: &Classifier, seq: &TokenSequence, scores: &[f64], k: usize, c: u8) -> f64 {
            let top = top_positions(scores, seq, k);
            prob(model, c, seq) - prob(model, c, &seq.with_pad_at(&top))
        }

        pub fn suff(model: &Classifier, seq: &TokenSequence, scores: &[f64], k: usize, c: u8) -> f64 {
            let top = top_positions(scores, seq, k);
            prob(model, c, seq) - prob(model, c, &seq.keep_only(&top))
        }

        pub fn area(model: &Classifier, seq: &TokenSequence, scores: &[f64], m: usize, c: u8) -> f64 {
            let path = top_positions(scores, seq, m);
            if path.is_empty() {
                return 0.0;
            }
            let p0 = prob(model, c, seq);
            let mut sum = 0.0;
            for i in 1..=path.len() {
                sum += p0 - prob(model, c, &seq.with_pad_at(&path[..i]));
            }
            sum / path.len() as f64
        }

        pub fn flip(model: &Classifier, seq: &TokenSequence, scores: &[f64], k: usize) -> Option<usize> {
            let path = top_positions(scores, seq, k);
            let label0 = model.positive_probability(seq) >= 0.5;
            for i in 1..=path.len() {
                let masked = seq.with_pad_at(&path[..i]);
                if (model.positive_probability(&masked) >= 0.5) != label0 {
                    return Some(i);
                }
            }
            None
        }
    }

    #[test]
    fn metrics_match_the_naive_reimplementation_exactly() {
        use rand::{Rng, SeedableRng};
        let model = small_model(9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..60 {
            let ids: Vec<u32> = (0..12)
                .map(|_| if rng.gen::<f64>() < 0.3 { 0 } else { rng.gen_range(2..30) })
                .collect();
            let seq = TokenSequence::new(ids);
            let scores: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = rng.gen_range(1..=8);
            let m = rng.gen_range(1..=8);
            let c = explained_class(&model, &seq, ClassMode::Predicted);
            assert_eq!(
                comprehensiveness(&model, &seq, &scores, k, ClassMode::Predicted).unwrap(),
                oracle::comp(&model, &seq, &scores, k, c)
            );
            assert_eq!(
                sufficiency(&model, &seq, &scores, k, ClassMode::Predicted).unwrap(),
                oracle::suff(&model, &seq, &scores, k, c)
            );
            assert_eq!(
                aopc(&model, &seq, &scores, m, ClassMode::Predicted).unwrap(),
                oracle::area(&model, &seq, &scores, m, c)
            );
            assert_eq!(
                flip_at_k(&model, &seq, &scores, k).unwrap(),
                oracle::flip(&model, &seq, &scores, k)
            );
        }
    }

    proptest! {
        #[test]
        fn positive_rescaling_leaves_metrics_unchanged(exp in -3i32..=3) {
            let model = small_model(10);
            let seq = sample_seq();
            let scores = sample_scores();
            let scaled: Vec<f64> = scores.iter().map(|s| s * 2f64.powi(exp)).collect();
            let a = comprehensiveness(&model, &seq, &scores, 3, ClassMode::Predicted).unwrap();
            let b = comprehensiveness(&model, &seq, &scaled, 3, ClassMode::Predicted).unwrap();
            prop_assert_eq!(a, b);
            let fa = flip_at_k(&model, &seq, &scores, 5).unwrap();
            let fb = flip_at_k(&model, &seq, &scaled, 5).unwrap();
            prop_assert_eq!(fa, fb);
        }
    }

    fn instances_from(seqs: Vec<Vec<u32>>) -> Vec<EncodedExample> {
        seqs.into_iter()
            .enumerate()
            .map(|(id, ids)| EncodedExample {
                id,
                sequence: TokenSequence::new(ids),
                label: (id % 2) as u8,
            })
            .collect()
    }

    #[test]
    fn single_instance_aggregate_mirrors_its_record() {
        let model = small_model(11);
        let instances = instances_from(vec![vec![4, 9, 2, 17, 3, 0, 0, 0, 0, 0, 0, 0]]);
        let cfg = EvalConfig {
            k: 3,
            ..EvalConfig::default()
        };
        let (records, agg) = evaluate_explainer(&model, &instances, &cfg, |ex| {
            Ok(integrated_gradients(&model, &ex.sequence, &IgConfig::default()))
        })
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(agg.evaluated, 1);
        assert_eq!(agg.excluded, 0);
        assert_eq!(agg.delta_comp, records[0].comprehensiveness);
        assert_eq!(agg.delta_suff, records[0].sufficiency);
        assert_eq!(agg.aopc, records[0].aopc);
        let expected_flip = records[0].flip_at_k.map_or(4.0, |i| i as f64);
        assert_eq!(agg.flip_at_k, expected_flip);
    }

    #[test]
    fn failed_explanations_are_excluded_and_counted() {
        let model = small_model(12);
        let instances = instances_from(vec![
            vec![4, 9, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            vec![5, 8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            vec![6, 7, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        ]);
        let cfg = EvalConfig {
            k: 2,
            ..EvalConfig::default()
        };
        let (records, agg) = evaluate_explainer(&model, &instances, &cfg, |ex| {
            if ex.id == 1 {
                Err(Error::BadEvalConfig("boom".to_string()))
            } else {
                Ok(integrated_gradients(&model, &ex.sequence, &IgConfig::default()))
            }
        })
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(agg.evaluated, 2);
        assert_eq!(agg.excluded, 1);
        assert!(records.iter().all(|r| r.instance_id != 1));
    }

    #[test]
    fn wrong_length_scores_count_as_failures() {
        let model = small_model(13);
        let instances = instances_from(vec![vec![4, 9, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0]; 2]);
        let cfg = EvalConfig::default();
        let (records, agg) = evaluate_explainer(&model, &instances, &cfg, |ex| {
            if ex.id == 0 {
                Ok(AttributionVector::new(Method::Ig, vec![0.1; 3], 1e-3))
            } else {
                Ok(integrated_gradients(&model, &ex.sequence, &IgConfig::default()))
            }
        })
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(agg.excluded, 1);
    }

    #[test]
    fn all_failures_is_an_error() {
        let model = small_model(14);
        let instances = instances_from(vec![vec![4, 9, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0]]);
        let err = evaluate_explainer(&model, &instances, &EvalConfig::default(), |_| {
            Err(Error::BadEvalConfig("boom".to_string()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::BadEvalConfig(_)));
    }

    #[test]
    fn zero_k_is_rejected() {
        let model = small_model(15);
        let instances = instances_from(vec![vec![4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]]);
        let cfg = EvalConfig {
            k: 0,
            ..EvalConfig::default()
        };
        let err = evaluate_explainer(&model, &instances, &cfg, |ex| {
            Ok(integrated_gradients(&model, &ex.sequence, &IgConfig::default()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::BadEvalConfig(_)));
    }
}
