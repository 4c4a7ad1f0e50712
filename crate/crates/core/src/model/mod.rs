//! From-scratch text classifiers with exact analytic gradients.
//!
//! Both architectures share the same contract: a trainable embedding table
//! whose pad row is pinned at zero, a differentiable body, and a sigmoid
//! head emitting the probability of the positive class. The forward pass
//! is split in two (`embed`, then `forward_from_embeddings`) so gradient
//! based attribution can evaluate the body at arbitrary points in
//! embedding space, not just at rows of the table.

mod checkpoint;
mod cnn;
pub mod gradcheck;
mod lstm;
mod train;

pub use checkpoint::{load_model, load_model_expecting, save_model};
pub use cnn::{CnnClassifier, CnnConfig, ConvActivation, Pooling};
pub use lstm::{LstmClassifier, LstmConfig};
pub use train::{
    bce_grad, bce_loss, evaluate, example_loss_gradient, train, EpochStats, Evaluation,
    TrainConfig, TrainingHistory,
};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::text::TokenSequence;

/// Anything that maps a token sequence to a positive-class probability.
pub trait PredictModel {
    fn positive_probability(&self, seq: &TokenSequence) -> f64;
}

/// A classifier whose output is differentiable in embedding space.
pub trait EmbeddingModel: PredictModel {
    fn input_len(&self) -> usize;
    fn embedding_dim(&self) -> usize;

    /// Looks up the embedding row of every position; pad rows are zero.
    fn embed(&self, seq: &TokenSequence) -> Array2<f64>;

    /// Runs the post-embedding body in inference mode.
    fn forward_from_embeddings(&self, emb: &Array2<f64>) -> f64;

    /// Exact gradient of `forward_from_embeddings` at `emb`.
    fn gradient_wrt_embeddings(&self, emb: &Array2<f64>) -> Array2<f64>;

    /// Mean gradient over the midpoints of the straight path from the
    /// all-pad point (the zero matrix) to `x_emb`. Architectures with
    /// linear pre-activations can override this with a fused form.
    fn path_gradient_mean(&self, x_emb: &Array2<f64>, steps: usize) -> Array2<f64> {
        path_gradient_mean_generic(self, x_emb, steps)
    }
}

/// Midpoint-rule mean of `gradient_wrt_embeddings` along `alpha * x_emb`
/// for `alpha = (i + 1/2) / steps`, `i = 0..steps`.
pub fn path_gradient_mean_generic<M: EmbeddingModel + ?Sized>(
    model: &M,
    x_emb: &Array2<f64>,
    steps: usize,
) -> Array2<f64> {
    let mut acc = Array2::<f64>::zeros(x_emb.raw_dim());
    for i in 0..steps {
        let alpha = (i as f64 + 0.5) / steps as f64;
        let point = x_emb.mapv(|v| v * alpha);
        acc += &model.gradient_wrt_embeddings(&point);
    }
    acc.mapv_inplace(|v| v / steps as f64);
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Lstm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Either trained architecture, behind one façade so pipelines, storage
/// and explainers stay architecture-agnostic.
#[derive(Debug, Clone)]
pub enum Classifier {
    Cnn(CnnClassifier),
    Lstm(LstmClassifier),
}

impl Classifier {
    pub fn architecture(&self) -> Architecture {
        match self {
            Classifier::Cnn(_) => Architecture::Cnn,
            Classifier::Lstm(_) => Architecture::Lstm,
        }
    }

    /// `[P(class 0), P(class 1)]`; the pair always sums to 1.
    pub fn predict_proba(&self, seq: &TokenSequence) -> [f64; 2] {
        let p = self.positive_probability(seq);
        [1.0 - p, p]
    }

    pub fn predict_proba_batch(&self, seqs: &[TokenSequence]) -> Vec<[f64; 2]> {
        seqs.iter().map(|s| self.predict_proba(s)).collect()
    }

    /// Stable short identifier derived from the serialized parameters.
    pub fn fingerprint(&self) -> String {
        checkpoint::fingerprint(self)
    }

    pub(crate) fn zero_grads(&self) -> Grads {
        match self {
            Classifier::Cnn(m) => Grads::Cnn(m.zero_grads()),
            Classifier::Lstm(m) => Grads::Lstm(m.zero_grads()),
        }
    }

    /// Training-mode forward/backward for one example; accumulates the
    /// loss gradient into `grads` and returns the example loss.
    pub(crate) fn accumulate_example(
        &self,
        seq: &TokenSequence,
        label: u8,
        dropout_rng: &mut ChaCha8Rng,
        grads: &mut Grads,
    ) -> Result<f64> {
        match (self, grads) {
            (Classifier::Cnn(m), Grads::Cnn(g)) => m.accumulate_example(seq, label, dropout_rng, g),
            (Classifier::Lstm(m), Grads::Lstm(g)) => {
                m.accumulate_example(seq, label, dropout_rng, g)
            }
            _ => unreachable!("gradient buffer built for a different architecture"),
        }
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Classifier::Cnn(m) => m.param_slices_mut(),
            Classifier::Lstm(m) => m.param_slices_mut(),
        }
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Classifier::Cnn(m) => m.param_slices(),
            Classifier::Lstm(m) => m.param_slices(),
        }
    }

    /// Every parameter as one flat vector. Tensor order: embedding table
    /// (row-major, pad row first), then the body weights in declaration
    /// order, then the dense layer. The layout is what checkpoints store
    /// and what `set_flat_params` expects back.
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&values[offset..offset + slice.len()]);
            offset += slice.len();
        }
        assert_eq!(offset, values.len(), "parameter vector length mismatch");
    }
}

impl PredictModel for Classifier {
    fn positive_probability(&self, seq: &TokenSequence) -> f64 {
        match self {
            Classifier::Cnn(m) => m.positive_probability(seq),
            Classifier::Lstm(m) => m.positive_probability(seq),
        }
    }
}

impl EmbeddingModel for Classifier {
    fn input_len(&self) -> usize {
        match self {
            Classifier::Cnn(m) => m.input_len(),
            Classifier::Lstm(m) => m.input_len(),
        }
    }

    fn embedding_dim(&self) -> usize {
        match self {
            Classifier::Cnn(m) => m.embedding_dim(),
            Classifier::Lstm(m) => m.embedding_dim(),
        }
    }

    fn embed(&self, seq: &TokenSequence) -> Array2<f64> {
        match self {
            Classifier::Cnn(m) => m.embed(seq),
            Classifier::Lstm(m) => m.embed(seq),
        }
    }

    fn forward_from_embeddings(&self, emb: &Array2<f64>) -> f64 {
        match self {
            Classifier::Cnn(m) => m.forward_from_embeddings(emb),
            Classifier::Lstm(m) => m.forward_from_embeddings(emb),
        }
    }

    fn gradient_wrt_embeddings(&self, emb: &Array2<f64>) -> Array2<f64> {
        match self {
            Classifier::Cnn(m) => m.gradient_wrt_embeddings(emb),
            Classifier::Lstm(m) => m.gradient_wrt_embeddings(emb),
        }
    }

    fn path_gradient_mean(&self, x_emb: &Array2<f64>, steps: usize) -> Array2<f64> {
        match self {
            Classifier::Cnn(m) => m.path_gradient_mean(x_emb, steps),
            Classifier::Lstm(m) => m.path_gradient_mean(x_emb, steps),
        }
    }
}

pub(crate) enum Grads {
    Cnn(cnn::CnnGrads),
    Lstm(lstm::LstmGrads),
}

impl Grads {
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        match self {
            Grads::Cnn(g) => g.slices(),
            Grads::Lstm(g) => g.slices(),
        }
    }

    pub(crate) fn scale(&mut self, k: f64) {
        match self {
            Grads::Cnn(g) => g.scale(k),
            Grads::Lstm(g) => g.scale(k),
        }
    }
}

/// Keeps every stored parameter on the f32 grid so checkpoints (which
/// hold f32 tensors) round-trip without changing a single prediction.
pub(crate) fn q32(x: f64) -> f64 {
    x as f32 as f64
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Uniform Glorot draw bound for a layer with the given fan-in/out.
pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Inverted-dropout mask: entries are either 0 or 1/(1-rate), drawn once
/// per call, so multiplying by the mask is the whole training-time op and
/// inference needs no rescaling.
pub(crate) fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    use rand::Rng;
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}
