//! Central finite-difference oracles for gradient verification.
//!
//! These evaluate nothing but the forward pass, so they are an
//! implementation-independent check of every analytic gradient. Parameter
//! checks probe the training loss; embedding checks probe the positive
//! probability (the quantity gradient-based attribution differentiates).
//!
//! Run parameter checks on models with dropout rates of zero; dropout
//! randomness would otherwise make the compared function ill-defined.

use ndarray::Array2;

use crate::model::{bce_loss, Classifier, EmbeddingModel, PredictModel};
use crate::text::TokenSequence;

/// d(loss)/d(param[index]) by central differences. Restores the model's
/// parameters before returning.
pub fn fd_loss_wrt_param(
    model: &mut Classifier,
    seq: &TokenSequence,
    label: u8,
    index: usize,
    step: f64,
) -> f64 {
    let base = model.flat_params();
    let mut probe = base.clone();

    probe[index] = base[index] + step;
    model.set_flat_params(&probe);
    let loss_plus = bce_loss(model.positive_probability(seq), label);

    probe[index] = base[index] - step;
    model.set_flat_params(&probe);
    let loss_minus = bce_loss(model.positive_probability(seq), label);

    model.set_flat_params(&base);
    (loss_plus - loss_minus) / (2.0 * step)
}

/// d(probability)/d(emb[j][d]) by central differences.
pub fn fd_prob_wrt_embedding(
    model: &Classifier,
    emb: &Array2<f64>,
    j: usize,
    d: usize,
    step: f64,
) -> f64 {
    let mut probe = emb.clone();
    probe[[j, d]] = emb[[j, d]] + step;
    let p_plus = model.forward_from_embeddings(&probe);
    probe[[j, d]] = emb[[j, d]] - step;
    let p_minus = model.forward_from_embeddings(&probe);
    (p_plus - p_minus) / (2.0 * step)
}

/// Relative error with a floor: |a - b| / max(|a|, |b|, floor). The floor
/// keeps near-zero gradient pairs from dividing noise by noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
