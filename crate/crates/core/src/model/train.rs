//! Binary cross-entropy, Adam, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{q32, Classifier, PredictModel};
use crate::seeding::component_seed;
use crate::text::EncodedExample;

const BCE_EPS: f64 = 1e-7;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Binary cross-entropy with the probability clamped to
/// `[1e-7, 1 - 1e-7]` so saturated predictions stay finite.
pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of `bce_loss` with respect to the probability. Inside the
/// clamp band this is (p - y) / (p (1 - p)); outside it the clamp is
/// flat, so the derivative is zero.
pub fn bce_grad(p: f64, label: u8) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    let y = f64::from(label);
    (p - y) / (p * (1.0 - p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, dropout active.
    pub train_loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n: usize,
}

struct Adam {
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, shapes: &[usize]) -> Adam {
        Adam {
            lr,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            for j in 0..param.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                param[j] = q32(param[j] - self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
            }
        }
    }
}

/// Trains in place with Adam on shuffled minibatches. Deterministic for a
/// fixed seed: shuffling and dropout draw from independent streams derived
/// from `cfg.seed`, so two runs produce bit-identical parameters.
pub fn train(
    model: &mut Classifier,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    if cfg.batch_size == 0 {
        return Err(Error::BadModelConfig("batch_size must be positive".into()));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::BadModelConfig(format!(
            "learning_rate must be finite and non-negative, got {}",
            cfg.learning_rate
        )));
    }
    let mut history = TrainingHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, "train.shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(component_seed(cfg.seed, "train.dropout"));
    let shapes: Vec<usize> = {
        let slices = model.param_slices_mut();
        slices.iter().map(|s| s.len()).collect()
    };
    let mut adam = Adam::new(cfg.learning_rate, &shapes);

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batch_count = 0usize;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let loss = model
                    .accumulate_example(&ex.sequence, ex.label, &mut dropout_rng, &mut grads)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::Diverged {
                            epoch,
                            batch: batch_idx,
                        },
                        other => other,
                    })?;
                batch_loss += loss;
            }
            let batch_mean = batch_loss / batch.len() as f64;
            if !batch_mean.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.param_slices_mut(), &grads.slices());
            loss_sum += batch_mean;
            batch_count += 1;
        }

        let train_eval = evaluate(model, train_set);
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let e = evaluate(model, val_set);
            (Some(e.mean_loss), Some(e.accuracy))
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / batch_count as f64,
            train_accuracy: train_eval.accuracy,
            val_loss,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Inference-mode accuracy (positive iff P(1) >= 0.5) and mean loss.
/// An empty dataset evaluates to zeros.
pub fn evaluate(model: &Classifier, data: &[EncodedExample]) -> Evaluation {
    if data.is_empty() {
        return Evaluation {
            accuracy: 0.0,
            mean_loss: 0.0,
            n: 0,
        };
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for ex in data {
        let p = model.positive_probability(&ex.sequence);
        let predicted = u8::from(p >= 0.5);
        if predicted == ex.label {
            correct += 1;
        }
        loss_sum += bce_loss(p, ex.label);
    }
    Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss_sum / data.len() as f64,
        n: data.len(),
    }
}

/// Training-mode loss and flattened parameter gradient for one example.
/// With both dropout rates at zero this is fully deterministic and is the
/// analytic side of the finite-difference gradient checks.
pub fn example_loss_gradient(
    model: &Classifier,
    seq: &crate::text::TokenSequence,
    label: u8,
) -> Result<(f64, Vec<f64>)> {
    let mut grads = model.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = model.accumulate_example(seq, label, &mut rng, &mut grads)?;
    let flat: Vec<f64> = grads.slices().concat();
    Ok((loss, flat))
}
