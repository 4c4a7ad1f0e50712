//! Integrated gradients over the embedding input.
//!
//! The path runs from the all-pad embedding (every row zero) to the
//! example's embedding. Gradients are averaged at the midpoints of a
//! uniform partition of the path, then multiplied by the embedding
//! displacement and summed over the embedding dimension. Because the
//! baseline is zero, the displacement is the embedding itself, and pad
//! rows get exactly zero score.

use std::time::Instant;

use ndarray::Array2;

use crate::attribution::{AttributionVector, Method};
use crate::model::EmbeddingModel;
use crate::text::TokenSequence;

#[derive(Debug, Clone)]
pub struct IgConfig {
    /// Number of midpoint gradient evaluations along the path.
    pub steps: usize,
}

impl Default for IgConfig {
    fn default() -> IgConfig {
        IgConfig { steps: 50 }
    }
}

pub fn integrated_gradients<M: EmbeddingModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    cfg: &IgConfig,
) -> AttributionVector {
    assert!(cfg.steps > 0, "integrated gradients needs at least one step");
    let start = Instant::now();
    let x_emb = model.embed(seq);
    let mean_grad = model.path_gradient_mean(&x_emb, cfg.steps);
    let scores = (&mean_grad * &x_emb)
        .rows()
        .into_iter()
        .map(|row| row.sum())
        .collect();
    AttributionVector::new(Method::Ig, scores, start.elapsed().as_secs_f64())
}

/// Absolute difference between the score total and the probability change
/// from the all-pad baseline to the input. Exact integration drives this
/// to zero; the midpoint rule leaves a small discretization residue.
pub fn completeness_gap<M: EmbeddingModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    attr: &AttributionVector,
) -> f64 {
    let x_emb = model.embed(seq);
    let baseline = Array2::zeros(x_emb.dim());
    let f_x = model.forward_from_embeddings(&x_emb);
    let f_b = model.forward_from_embeddings(&baseline);
    let total: f64 = attr.scores.iter().sum();
    (total - (f_x - f_b)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Classifier, CnnClassifier, CnnConfig, LstmClassifier, LstmConfig, PredictModel,
    };
    use approx::assert_abs_diff_eq;

    /// Fixed linear map from embeddings to output. For a linear function
    /// the path integral is exact at any step count, so scores must equal
    /// the per-position inner products to rounding error.
    struct LinearProbe {
        len: usize,
        dim: usize,
        w: Array2<f64>,
    }

    impl LinearProbe {
        fn new(len: usize, dim: usize) -> LinearProbe {
            let w = Array2::from_shape_fn((len, dim), |(j, d)| {
                0.05 * (j as f64 + 1.0) - 0.03 * d as f64
            });
            LinearProbe { len, dim, w }
        }
    }

    impl PredictModel for LinearProbe {
        fn positive_probability(&self, seq: &TokenSequence) -> f64 {
            self.forward_from_embeddings(&self.embed(seq))
        }
    }

    impl EmbeddingModel for LinearProbe {
        fn input_len(&self) -> usize {
            self.len
        }

        fn embedding_dim(&self) -> usize {
            self.dim
        }

        fn embed(&self, seq: &TokenSequence) -> Array2<f64> {
            let mut emb = Array2::zeros((self.len, self.dim));
            for (j, &id) in seq.ids().iter().enumerate() {
                if id != crate::text::PAD_ID {
                    for d in 0..self.dim {
                        emb[[j, d]] = id as f64 + 0.1 * d as f64;
                    }
                }
            }
            emb
        }

        fn forward_from_embeddings(&self, emb: &Array2<f64>) -> f64 {
            (&self.w * emb).sum()
        }

        fn gradient_wrt_embeddings(&self, _emb: &Array2<f64>) -> Array2<f64> {
            self.w.clone()
        }
    }

    #[test]
    fn linear_model_scores_match_closed_form() {
        let model = LinearProbe::new(6, 3);
        let seq = TokenSequence::new(vec![4, 2, 0, 9, 0, 0]);
        let attr = integrated_gradients(&model, &seq, &IgConfig { steps: 7 });
        let emb = model.embed(&seq);
        for j in 0..6 {
            let expected: f64 = (0..3).map(|d| model.w[[j, d]] * emb[[j, d]]).sum();
            assert_abs_diff_eq!(attr.scores[j], expected, epsilon = 1e-12);
        }
        assert_eq!(attr.scores[2], 0.0);
        assert_eq!(attr.scores[4], 0.0);
    }

    #[test]
    fn all_pad_input_gets_zero_scores() {
        let model = LinearProbe::new(4, 2);
        let seq = TokenSequence::new(vec![0, 0, 0, 0]);
        let attr = integrated_gradients(&model, &seq, &IgConfig::default());
        assert!(attr.scores.iter().all(|&s| s == 0.0));
        assert_abs_diff_eq!(completeness_gap(&model, &seq, &attr), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cnn_scores_nearly_sum_to_probability_change() {
        let cfg = CnnConfig {
            vocab_size: 40,
            seq_len: 24,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 11).unwrap());
        let mut ids = vec![0; 24];
        for (j, id) in ids.iter_mut().enumerate().take(17) {
            *id = 2 + (j * 5 % 38) as u32;
        }
        let seq = TokenSequence::new(ids);
        let attr = integrated_gradients(&model, &seq, &IgConfig { steps: 256 });
        assert!(
            completeness_gap(&model, &seq, &attr) < 2e-3,
            "gap {}",
            completeness_gap(&model, &seq, &attr)
        );
    }

    #[test]
    fn lstm_scores_nearly_sum_to_probability_change() {
        let cfg = LstmConfig {
            vocab_size: 40,
            seq_len: 12,
            embedding_dim: 8,
            hidden: 8,
            ..LstmConfig::default()
        };
        let model = Classifier::Lstm(LstmClassifier::new(cfg, 5).unwrap());
        let seq = TokenSequence::new(vec![3, 17, 2, 9, 30, 4, 0, 0, 0, 0, 0, 0]);
        let attr = integrated_gradients(&model, &seq, &IgConfig { steps: 256 });
        assert!(
            completeness_gap(&model, &seq, &attr) < 1e-3,
            "gap {}",
            completeness_gap(&model, &seq, &attr)
        );
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = CnnConfig {
            vocab_size: 30,
            seq_len: 16,
            ..CnnConfig::default()
        };
        let model = Classifier::Cnn(CnnClassifier::new(cfg, 3).unwrap());
        let seq = TokenSequence::new(vec![5, 9, 2, 14, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let a = integrated_gradients(&model, &seq, &IgConfig::default());
        let b = integrated_gradients(&model, &seq, &IgConfig::default());
        assert_eq!(a.scores, b.scores);
        assert!(a.wall_time_s > 0.0);
    }
}
