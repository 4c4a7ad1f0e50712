//! 1-D convolutional classifier.
//!
//! Embedding -> valid convolution (F filters of width W) -> activation ->
//! global average pooling over time -> dropout -> dense + sigmoid.
//!
//! Pooling has two modes. `Masked` (default) averages only windows that
//! touch at least one real token, so trailing pad never dilutes the
//! pooled features; a window is "real" when it covers a row that is not
//! exactly zero, which keeps the post-embedding body a pure function of
//! the embedding matrix. `Full` is the plain average over all windows.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bce_grad, bce_loss, dropout_mask, glorot_limit, q32, sigmoid, EmbeddingModel, PredictModel,
};
use crate::text::{TokenSequence, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvActivation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Average over windows containing at least one real token.
    Masked,
    /// Plain average over every window.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnConfig {
    pub vocab_size: u32,
    pub seq_len: usize,
    pub embedding_dim: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    pub activation: ConvActivation,
    pub pooling: Pooling,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            vocab_size: 0,
            seq_len: 64,
            embedding_dim: 16,
            filters: 16,
            kernel_width: 5,
            dropout: 0.5,
            activation: ConvActivation::Relu,
            pooling: Pooling::Masked,
        }
    }
}

impl CnnConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::BadModelConfig(
                "vocab_size must cover the two reserved ids".into(),
            ));
        }
        if self.kernel_width == 0 || self.seq_len < self.kernel_width {
            return Err(Error::BadModelConfig(format!(
                "need seq_len >= kernel_width >= 1, got {} and {}",
                self.seq_len, self.kernel_width
            )));
        }
        if self.embedding_dim == 0 || self.filters == 0 {
            return Err(Error::BadModelConfig(
                "embedding_dim and filters must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadModelConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CnnClassifier {
    cfg: CnnConfig,
    pub(crate) embedding: Array2<f64>, // V x D, row 0 pinned at zero
    pub(crate) kernel: Array3<f64>,    // F x W x D
    pub(crate) conv_bias: Array1<f64>, // F
    pub(crate) dense_w: Array1<f64>,   // F
    pub(crate) dense_b: f64,
}

struct Trace {
    pre_act: Array2<f64>, // T x F
    active: Vec<usize>,
    dropped: Array1<f64>, // dense input (pooled * mask)
    mask: Vec<f64>,
    logit: f64,
    prob: f64,
}

pub(crate) struct CnnGrads {
    pub embedding: Array2<f64>,
    pub kernel: Array3<f64>,
    pub conv_bias: Array1<f64>,
    pub dense_w: Array1<f64>,
    pub dense_b: f64,
}

impl CnnGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice().unwrap(),
            self.kernel.as_slice().unwrap(),
            self.conv_bias.as_slice().unwrap(),
            self.dense_w.as_slice().unwrap(),
            std::slice::from_ref(&self.dense_b),
        ]
    }

    pub fn scale(&mut self, k: f64) {
        self.embedding.mapv_inplace(|v| v * k);
        self.kernel.mapv_inplace(|v| v * k);
        self.conv_bias.mapv_inplace(|v| v * k);
        self.dense_w.mapv_inplace(|v| v * k);
        self.dense_b *= k;
    }
}

impl CnnClassifier {
    pub fn new(cfg: CnnConfig, seed: u64) -> Result<CnnClassifier> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = cfg.vocab_size as usize;
        let (d, f, w) = (cfg.embedding_dim, cfg.filters, cfg.kernel_width);

        let mut embedding = Array2::<f64>::zeros((v, d));
        for row in 1..v {
            for col in 0..d {
                embedding[[row, col]] = q32(rng.gen_range(-0.05..0.05));
            }
        }

        let k_limit = glorot_limit(w * d, w * f);
        let mut kernel = Array3::<f64>::zeros((f, w, d));
        for x in kernel.iter_mut() {
            *x = q32(rng.gen_range(-k_limit..k_limit));
        }

        let conv_bias = Array1::<f64>::zeros(f);

        let d_limit = glorot_limit(f, 1);
        let mut dense_w = Array1::<f64>::zeros(f);
        for x in dense_w.iter_mut() {
            *x = q32(rng.gen_range(-d_limit..d_limit));
        }

        Ok(CnnClassifier {
            cfg,
            embedding,
            kernel,
            conv_bias,
            dense_w,
            dense_b: 0.0,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    /// Number of valid convolution windows, `seq_len - kernel_width + 1`.
    pub fn conv_output_len(&self) -> usize {
        self.cfg.seq_len - self.cfg.kernel_width + 1
    }

    fn assert_input(&self, seq: &TokenSequence) {
        assert_eq!(
            seq.len(),
            self.cfg.seq_len,
            "sequence length {} does not match model input length {}",
            seq.len(),
            self.cfg.seq_len
        );
    }

    /// Windows that cover at least one row of `emb` that is not exactly
    /// zero. Pad rows are zero by invariant, so for encoded sequences this
    /// coincides with windows touching a real token.
    fn active_windows(&self, emb: &Array2<f64>) -> Vec<usize> {
        let w = self.cfg.kernel_width;
        let t_len = self.conv_output_len();
        let row_real: Vec<bool> = (0..self.cfg.seq_len)
            .map(|j| emb.row(j).iter().any(|&v| v != 0.0))
            .collect();
        (0..t_len)
            .filter(|&t| row_real[t..t + w].iter().any(|&b| b))
            .collect()
    }

    fn activate(&self, z: f64) -> f64 {
        match self.cfg.activation {
            ConvActivation::Relu => z.max(0.0),
            ConvActivation::Identity => z,
        }
    }

    fn activate_grad(&self, z: f64) -> f64 {
        match self.cfg.activation {
            ConvActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ConvActivation::Identity => 1.0,
        }
    }

    /// Convolution without bias; returns a T x F matrix.
    fn conv_linear(&self, emb: &Array2<f64>) -> Array2<f64> {
        let (f_n, w, d) = (self.cfg.filters, self.cfg.kernel_width, self.cfg.embedding_dim);
        let t_len = self.conv_output_len();
        let mut out = Array2::<f64>::zeros((t_len, f_n));
        for t in 0..t_len {
            for f in 0..f_n {
                let mut acc = 0.0;
                for ww in 0..w {
                    for dd in 0..d {
                        acc += self.kernel[[f, ww, dd]] * emb[[t + ww, dd]];
                    }
                }
                out[[t, f]] = acc;
            }
        }
        out
    }

    /// Adjoint of `conv_linear`: folds window sensitivities back onto the
    /// embedding rows they read.
    fn conv_transpose(&self, dz: &Array2<f64>) -> Array2<f64> {
        let (f_n, w, d) = (self.cfg.filters, self.cfg.kernel_width, self.cfg.embedding_dim);
        let mut demb = Array2::<f64>::zeros((self.cfg.seq_len, d));
        for (t, row) in dz.outer_iter().enumerate() {
            for f in 0..f_n {
                let g = row[f];
                if g == 0.0 {
                    continue;
                }
                for ww in 0..w {
                    for dd in 0..d {
                        demb[[t + ww, dd]] += g * self.kernel[[f, ww, dd]];
                    }
                }
            }
        }
        demb
    }

    /// Averages activated window outputs. With masking and no active
    /// window (the all-pad point) the average degenerates to the uniform
    /// all-pad window response, `act(bias)`, which is also its limit along
    /// any ray into the all-pad point.
    fn pool(&self, act: &Array2<f64>, active: &[usize]) -> Array1<f64> {
        let f_n = self.cfg.filters;
        let mut pooled = Array1::<f64>::zeros(f_n);
        match self.cfg.pooling {
            Pooling::Masked => {
                if active.is_empty() {
                    for f in 0..f_n {
                        pooled[f] = self.activate(self.conv_bias[f]);
                    }
                } else {
                    for &t in active {
                        for f in 0..f_n {
                            pooled[f] += act[[t, f]];
                        }
                    }
                    pooled.mapv_inplace(|v| v / active.len() as f64);
                }
            }
            Pooling::Full => {
                let t_len = act.nrows();
                for t in 0..t_len {
                    for f in 0..f_n {
                        pooled[f] += act[[t, f]];
                    }
                }
                pooled.mapv_inplace(|v| v / t_len as f64);
            }
        }
        pooled
    }

    fn forward_trace(&self, emb: &Array2<f64>, mask: Vec<f64>) -> Trace {
        let t_len = self.conv_output_len();
        let f_n = self.cfg.filters;
        let mut pre_act = self.conv_linear(emb);
        for t in 0..t_len {
            for f in 0..f_n {
                pre_act[[t, f]] += self.conv_bias[f];
            }
        }
        let act = pre_act.mapv(|z| self.activate(z));
        let active = match self.cfg.pooling {
            Pooling::Masked => self.active_windows(emb),
            Pooling::Full => Vec::new(),
        };
        let pooled = self.pool(&act, &active);
        let dropped: Array1<f64> =
            Array1::from_iter(pooled.iter().zip(&mask).map(|(&p, &m)| p * m));
        let logit = self.dense_w.dot(&dropped) + self.dense_b;
        let prob = sigmoid(logit);
        Trace {
            pre_act,
            active,
            dropped,
            mask,
            logit,
            prob,
        }
    }

    /// Window sensitivities dlogit/dz for a trace, already divided by the
    /// pooling denominator. Returns None at the all-pad point (no window
    /// depends on the embedding there).
    fn window_sensitivities(&self, trace: &Trace, dlogit: f64) -> Option<Array2<f64>> {
        let t_len = self.conv_output_len();
        let f_n = self.cfg.filters;
        let mut dz = Array2::<f64>::zeros((t_len, f_n));
        match self.cfg.pooling {
            Pooling::Masked => {
                if trace.active.is_empty() {
                    return None;
                }
                let denom = trace.active.len() as f64;
                for &t in &trace.active {
                    for f in 0..f_n {
                        dz[[t, f]] = dlogit * self.dense_w[f] * trace.mask[f] / denom
                            * self.activate_grad(trace.pre_act[[t, f]]);
                    }
                }
            }
            Pooling::Full => {
                let denom = t_len as f64;
                for t in 0..t_len {
                    for f in 0..f_n {
                        dz[[t, f]] = dlogit * self.dense_w[f] * trace.mask[f] / denom
                            * self.activate_grad(trace.pre_act[[t, f]]);
                    }
                }
            }
        }
        Some(dz)
    }

    /// Training-mode forward/backward for one example. Accumulates the
    /// BCE gradient into `grads` and returns the example loss.
    pub(crate) fn accumulate_example(
        &self,
        seq: &TokenSequence,
        label: u8,
        dropout_rng: &mut ChaCha8Rng,
        grads: &mut CnnGrads,
    ) -> Result<f64> {
        self.assert_input(seq);
        let emb = self.embed(seq);
        let mask = dropout_mask(dropout_rng, self.cfg.filters, self.cfg.dropout);
        let trace = self.forward_trace(&emb, mask);
        if !trace.logit.is_finite() {
            return Err(Error::NonFinite {
                context: "cnn forward".into(),
            });
        }
        let loss = bce_loss(trace.prob, label);
        let dlogit = bce_grad(trace.prob, label) * trace.prob * (1.0 - trace.prob);

        grads.dense_b += dlogit;
        for f in 0..self.cfg.filters {
            grads.dense_w[f] += dlogit * trace.dropped[f];
        }
        if let Some(dz) = self.window_sensitivities(&trace, dlogit) {
            let (f_n, w, d) = (self.cfg.filters, self.cfg.kernel_width, self.cfg.embedding_dim);
            let mut demb = Array2::<f64>::zeros((self.cfg.seq_len, d));
            for (t, row) in dz.outer_iter().enumerate() {
                for f in 0..f_n {
                    let g = row[f];
                    if g == 0.0 {
                        continue;
                    }
                    grads.conv_bias[f] += g;
                    for ww in 0..w {
                        for dd in 0..d {
                            grads.kernel[[f, ww, dd]] += g * emb[[t + ww, dd]];
                            demb[[t + ww, dd]] += g * self.kernel[[f, ww, dd]];
                        }
                    }
                }
            }
            for (j, &id) in seq.ids().iter().enumerate() {
                if id == PAD_ID {
                    continue;
                }
                for dd in 0..d {
                    grads.embedding[[id as usize, dd]] += demb[[j, dd]];
                }
            }
        } else {
            // All-pad input: pooled is act(bias), so only the conv bias
            // (and the dense layer, already handled) receives gradient.
            for f in 0..self.cfg.filters {
                grads.conv_bias[f] += dlogit
                    * self.dense_w[f]
                    * trace.mask[f]
                    * self.activate_grad(self.conv_bias[f]);
            }
        }
        Ok(loss)
    }

    pub(crate) fn zero_grads(&self) -> CnnGrads {
        CnnGrads {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            kernel: Array3::zeros(self.kernel.raw_dim()),
            conv_bias: Array1::zeros(self.conv_bias.len()),
            dense_w: Array1::zeros(self.dense_w.len()),
            dense_b: 0.0,
        }
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.as_slice_mut().unwrap(),
            self.kernel.as_slice_mut().unwrap(),
            self.conv_bias.as_slice_mut().unwrap(),
            self.dense_w.as_slice_mut().unwrap(),
            std::slice::from_mut(&mut self.dense_b),
        ]
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice().unwrap(),
            self.kernel.as_slice().unwrap(),
            self.conv_bias.as_slice().unwrap(),
            self.dense_w.as_slice().unwrap(),
            std::slice::from_ref(&self.dense_b),
        ]
    }
}

impl PredictModel for CnnClassifier {
    fn positive_probability(&self, seq: &TokenSequence) -> f64 {
        self.assert_input(seq);
        self.forward_from_embeddings(&self.embed(seq))
    }
}

impl EmbeddingModel for CnnClassifier {
    fn input_len(&self) -> usize {
        self.cfg.seq_len
    }

    fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    fn embed(&self, seq: &TokenSequence) -> Array2<f64> {
        self.assert_input(seq);
        let d = self.cfg.embedding_dim;
        let mut emb = Array2::<f64>::zeros((self.cfg.seq_len, d));
        for (j, &id) in seq.ids().iter().enumerate() {
            assert!(
                (id as usize) < self.embedding.nrows(),
                "token id {id} outside embedding table"
            );
            for dd in 0..d {
                emb[[j, dd]] = self.embedding[[id as usize, dd]];
            }
        }
        emb
    }

    fn forward_from_embeddings(&self, emb: &Array2<f64>) -> f64 {
        let mask = vec![1.0; self.cfg.filters];
        self.forward_trace(emb, mask).prob
    }

    fn gradient_wrt_embeddings(&self, emb: &Array2<f64>) -> Array2<f64> {
        let mask = vec![1.0; self.cfg.filters];
        let trace = self.forward_trace(emb, mask);
        let dlogit = trace.prob * (1.0 - trace.prob);
        match self.window_sensitivities(&trace, dlogit) {
            Some(dz) => self.conv_transpose(&dz),
            None => Array2::zeros((self.cfg.seq_len, self.cfg.embedding_dim)),
        }
    }

    /// Fused form of the generic midpoint loop. Pre-activations are
    /// linear in the embedding, so along `alpha * x_emb` the convolution
    /// is computed once and each step only rescales it; the per-step
    /// window sensitivities are accumulated and folded back through the
    /// kernel a single time at the end.
    fn path_gradient_mean(&self, x_emb: &Array2<f64>, steps: usize) -> Array2<f64> {
        let t_len = self.conv_output_len();
        let f_n = self.cfg.filters;
        let conv = self.conv_linear(x_emb);
        let active = match self.cfg.pooling {
            Pooling::Masked => self.active_windows(x_emb),
            Pooling::Full => (0..t_len).collect(),
        };
        if active.is_empty() {
            return Array2::zeros(x_emb.raw_dim());
        }
        let denom = active.len() as f64;

        let mut dz_sum = Array2::<f64>::zeros((t_len, f_n));
        for i in 0..steps {
            let alpha = (i as f64 + 0.5) / steps as f64;
            let mut pooled = Array1::<f64>::zeros(f_n);
            for &t in &active {
                for f in 0..f_n {
                    pooled[f] += self.activate(alpha * conv[[t, f]] + self.conv_bias[f]);
                }
            }
            pooled.mapv_inplace(|v| v / denom);
            let logit = self.dense_w.dot(&pooled) + self.dense_b;
            let prob = sigmoid(logit);
            let dlogit = prob * (1.0 - prob);
            for &t in &active {
                for f in 0..f_n {
                    dz_sum[[t, f]] += dlogit * self.dense_w[f] / denom
                        * self.activate_grad(alpha * conv[[t, f]] + self.conv_bias[f]);
                }
            }
        }
        dz_sum.mapv_inplace(|v| v / steps as f64);
        self.conv_transpose(&dz_sum)
    }
}
