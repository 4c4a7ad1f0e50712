//! LSTM classifier.
//!
//! Embedding -> single LSTM layer over all steps (pad steps included, as
//! zero inputs) -> final hidden state -> dense + sigmoid. Input and
//! recurrent dropout use one mask each per sequence, applied at every
//! step, so a dropped coordinate stays dropped for the whole pass.
//!
//! Gate blocks are stacked in the order input, forget, cell, output.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bce_grad, bce_loss, dropout_mask, glorot_limit, q32, sigmoid, EmbeddingModel, PredictModel,
};
use crate::text::{TokenSequence, PAD_ID};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmConfig {
    pub vocab_size: u32,
    pub seq_len: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            vocab_size: 0,
            seq_len: 64,
            embedding_dim: 16,
            hidden: 16,
            dropout: 0.2,
            recurrent_dropout: 0.2,
        }
    }
}

impl LstmConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::BadModelConfig(
                "vocab_size must cover the two reserved ids".into(),
            ));
        }
        if self.seq_len == 0 || self.embedding_dim == 0 || self.hidden == 0 {
            return Err(Error::BadModelConfig(
                "seq_len, embedding_dim and hidden must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(Error::BadModelConfig(
                "dropout rates must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LstmClassifier {
    cfg: LstmConfig,
    pub(crate) embedding: Array2<f64>, // V x D, row 0 pinned at zero
    pub(crate) wx: Array2<f64>,        // 4H x D
    pub(crate) wh: Array2<f64>,        // 4H x H
    pub(crate) bias: Array1<f64>,      // 4H, forget block starts at 1
    pub(crate) dense_w: Array1<f64>,   // H
    pub(crate) dense_b: f64,
}

struct Trace {
    xs: Vec<Array1<f64>>,            // dropped inputs, one per step
    hs: Vec<Array1<f64>>,            // hs[t] = hidden after t steps, hs[0] = 0
    cs: Vec<Array1<f64>>,            // cell states, cs[0] = 0
    gates: Vec<[Array1<f64>; 4]>,    // i, f, g, o per step
    tanh_c: Vec<Array1<f64>>,        // tanh(c_t) per step
    mx: Vec<f64>,
    mh: Vec<f64>,
    logit: f64,
    prob: f64,
}

pub(crate) struct LstmGrads {
    pub embedding: Array2<f64>,
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub bias: Array1<f64>,
    pub dense_w: Array1<f64>,
    pub dense_b: f64,
}

impl LstmGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice().unwrap(),
            self.wx.as_slice().unwrap(),
            self.wh.as_slice().unwrap(),
            self.bias.as_slice().unwrap(),
            self.dense_w.as_slice().unwrap(),
            std::slice::from_ref(&self.dense_b),
        ]
    }

    pub fn scale(&mut self, k: f64) {
        self.embedding.mapv_inplace(|v| v * k);
        self.wx.mapv_inplace(|v| v * k);
        self.wh.mapv_inplace(|v| v * k);
        self.bias.mapv_inplace(|v| v * k);
        self.dense_w.mapv_inplace(|v| v * k);
        self.dense_b *= k;
    }
}

impl LstmClassifier {
    pub fn new(cfg: LstmConfig, seed: u64) -> Result<LstmClassifier> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = cfg.vocab_size as usize;
        let (d, h) = (cfg.embedding_dim, cfg.hidden);

        let mut embedding = Array2::<f64>::zeros((v, d));
        for row in 1..v {
            for col in 0..d {
                embedding[[row, col]] = q32(rng.gen_range(-0.05..0.05));
            }
        }

        let x_limit = glorot_limit(d, h);
        let mut wx = Array2::<f64>::zeros((4 * h, d));
        for x in wx.iter_mut() {
            *x = q32(rng.gen_range(-x_limit..x_limit));
        }

        let h_limit = glorot_limit(h, h);
        let mut wh = Array2::<f64>::zeros((4 * h, h));
        for x in wh.iter_mut() {
            *x = q32(rng.gen_range(-h_limit..h_limit));
        }

        let mut bias = Array1::<f64>::zeros(4 * h);
        for j in h..2 * h {
            bias[j] = 1.0; // forget-gate bias starts open
        }

        let d_limit = glorot_limit(h, 1);
        let mut dense_w = Array1::<f64>::zeros(h);
        for x in dense_w.iter_mut() {
            *x = q32(rng.gen_range(-d_limit..d_limit));
        }

        Ok(LstmClassifier {
            cfg,
            embedding,
            wx,
            wh,
            bias,
            dense_w,
            dense_b: 0.0,
        })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.cfg
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

    fn forward_trace(&self, emb: &Array2<f64>, mx: Vec<f64>, mh: Vec<f64>) -> Trace {
        let h_n = self.cfg.hidden;
        let d = self.cfg.embedding_dim;
        let steps = self.cfg.seq_len;

        let mut xs = Vec::with_capacity(steps);
        let mut hs = Vec::with_capacity(steps + 1);
        let mut cs = Vec::with_capacity(steps + 1);
        let mut gates = Vec::with_capacity(steps);
        let mut tanh_c = Vec::with_capacity(steps);
        hs.push(Array1::<f64>::zeros(h_n));
        cs.push(Array1::<f64>::zeros(h_n));

        for t in 0..steps {
            let mut x = Array1::<f64>::zeros(d);
            for dd in 0..d {
                x[dd] = emb[[t, dd]] * mx[dd];
            }
            let h_prev = &hs[t];
            let mut h_drop = Array1::<f64>::zeros(h_n);
            for j in 0..h_n {
                h_drop[j] = h_prev[j] * mh[j];
            }

            // z = Wx x + Wh h_drop + b, gate blocks i|f|g|o
            let mut z = self.bias.clone();
            for r in 0..4 * h_n {
                let mut acc = 0.0;
                for dd in 0..d {
                    acc += self.wx[[r, dd]] * x[dd];
                }
                for j in 0..h_n {
                    acc += self.wh[[r, j]] * h_drop[j];
                }
                z[r] += acc;
            }

            let mut gi = Array1::<f64>::zeros(h_n);
            let mut gf = Array1::<f64>::zeros(h_n);
            let mut gg = Array1::<f64>::zeros(h_n);
            let mut go = Array1::<f64>::zeros(h_n);
            for j in 0..h_n {
                gi[j] = sigmoid(z[j]);
                gf[j] = sigmoid(z[h_n + j]);
                gg[j] = z[2 * h_n + j].tanh();
                go[j] = sigmoid(z[3 * h_n + j]);
            }

            let c_prev = &cs[t];
            let mut c = Array1::<f64>::zeros(h_n);
            for j in 0..h_n {
                c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
            }
            let tc = c.mapv(f64::tanh);
            let mut h = Array1::<f64>::zeros(h_n);
            for j in 0..h_n {
                h[j] = go[j] * tc[j];
            }

            xs.push(x);
            gates.push([gi, gf, gg, go]);
            tanh_c.push(tc);
            cs.push(c);
            hs.push(h);
        }

        let logit = self.dense_w.dot(&hs[steps]) + self.dense_b;
        let prob = sigmoid(logit);
        Trace {
            xs,
            hs,
            cs,
            gates,
            tanh_c,
            mx,
            mh,
            logit,
            prob,
        }
    }

    /// Backpropagation through time. Fills `demb` with the gradient with
    /// respect to the (undropped) embedding input; when `grads` is given,
    /// also accumulates every parameter gradient.
    fn backward(
        &self,
        trace: &Trace,
        dlogit: f64,
        demb: &mut Array2<f64>,
        mut grads: Option<&mut LstmGrads>,
    ) {
        let h_n = self.cfg.hidden;
        let d = self.cfg.embedding_dim;
        let steps = self.cfg.seq_len;

        if let Some(g) = grads.as_deref_mut() {
            g.dense_b += dlogit;
            for j in 0..h_n {
                g.dense_w[j] += dlogit * trace.hs[steps][j];
            }
        }

        let mut dh: Array1<f64> = self.dense_w.mapv(|w| w * dlogit);
        let mut dc = Array1::<f64>::zeros(h_n);
        let mut dz = Array1::<f64>::zeros(4 * h_n);

        for t in (0..steps).rev() {
            let [gi, gf, gg, go] = &trace.gates[t];
            let tc = &trace.tanh_c[t];
            let c_prev = &trace.cs[t];
            let h_prev = &trace.hs[t];

            for j in 0..h_n {
                let do_j = dh[j] * tc[j];
                let dc_j = dc[j] + dh[j] * go[j] * (1.0 - tc[j] * tc[j]);
                let di = dc_j * gg[j];
                let df = dc_j * c_prev[j];
                let dg = dc_j * gi[j];
                dz[j] = di * gi[j] * (1.0 - gi[j]);
                dz[h_n + j] = df * gf[j] * (1.0 - gf[j]);
                dz[2 * h_n + j] = dg * (1.0 - gg[j] * gg[j]);
                dz[3 * h_n + j] = do_j * go[j] * (1.0 - go[j]);
                dc[j] = dc_j * gf[j];
            }

            if let Some(g) = grads.as_deref_mut() {
                for r in 0..4 * h_n {
                    let zr = dz[r];
                    if zr == 0.0 {
                        continue;
                    }
                    g.bias[r] += zr;
                    for dd in 0..d {
                        g.wx[[r, dd]] += zr * trace.xs[t][dd];
                    }
                    for j in 0..h_n {
                        g.wh[[r, j]] += zr * h_prev[j] * trace.mh[j];
                    }
                }
            }

            for dd in 0..d {
                let mut acc = 0.0;
                for r in 0..4 * h_n {
                    acc += self.wx[[r, dd]] * dz[r];
                }
                demb[[t, dd]] = acc * trace.mx[dd];
            }
            for j in 0..h_n {
                let mut acc = 0.0;
                for r in 0..4 * h_n {
                    acc += self.wh[[r, j]] * dz[r];
                }
                dh[j] = acc * trace.mh[j];
            }
        }
    }

    pub(crate) fn accumulate_example(
        &self,
        seq: &TokenSequence,
        label: u8,
        dropout_rng: &mut ChaCha8Rng,
        grads: &mut LstmGrads,
    ) -> Result<f64> {
        self.assert_input(seq);
        let emb = self.embed(seq);
        let mx = dropout_mask(dropout_rng, self.cfg.embedding_dim, self.cfg.dropout);
        let mh = dropout_mask(dropout_rng, self.cfg.hidden, self.cfg.recurrent_dropout);
        let trace = self.forward_trace(&emb, mx, mh);
        if !trace.logit.is_finite() {
            return Err(Error::NonFinite {
                context: "lstm forward".into(),
            });
        }
        let loss = bce_loss(trace.prob, label);
        let dlogit = bce_grad(trace.prob, label) * trace.prob * (1.0 - trace.prob);

        let mut demb = Array2::<f64>::zeros((self.cfg.seq_len, self.cfg.embedding_dim));
        self.backward(&trace, dlogit, &mut demb, Some(grads));

        for (j, &id) in seq.ids().iter().enumerate() {
            if id == PAD_ID {
                continue;
            }
            for dd in 0..self.cfg.embedding_dim {
                grads.embedding[[id as usize, dd]] += demb[[j, dd]];
            }
        }
        Ok(loss)
    }

    pub(crate) fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            dense_w: Array1::zeros(self.dense_w.len()),
            dense_b: 0.0,
        }
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.as_slice_mut().unwrap(),
            self.wx.as_slice_mut().unwrap(),
            self.wh.as_slice_mut().unwrap(),
            self.bias.as_slice_mut().unwrap(),
            self.dense_w.as_slice_mut().unwrap(),
            std::slice::from_mut(&mut self.dense_b),
        ]
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice().unwrap(),
            self.wx.as_slice().unwrap(),
            self.wh.as_slice().unwrap(),
            self.bias.as_slice().unwrap(),
            self.dense_w.as_slice().unwrap(),
            std::slice::from_ref(&self.dense_b),
        ]
    }
}

impl PredictModel for LstmClassifier {
    fn positive_probability(&self, seq: &TokenSequence) -> f64 {
        self.assert_input(seq);
        self.forward_from_embeddings(&self.embed(seq))
    }
}

impl EmbeddingModel for LstmClassifier {
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
        let mx = vec![1.0; self.cfg.embedding_dim];
        let mh = vec![1.0; self.cfg.hidden];
        self.forward_trace(emb, mx, mh).prob
    }

    fn gradient_wrt_embeddings(&self, emb: &Array2<f64>) -> Array2<f64> {
        let mx = vec![1.0; self.cfg.embedding_dim];
        let mh = vec![1.0; self.cfg.hidden];
        let trace = self.forward_trace(emb, mx, mh);
        let dlogit = trace.prob * (1.0 - trace.prob);
        let mut demb = Array2::<f64>::zeros((self.cfg.seq_len, self.cfg.embedding_dim));
        self.backward(&trace, dlogit, &mut demb, None);
        demb
    }
}
