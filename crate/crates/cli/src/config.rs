//! Run configuration: a flat TOML file, every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use veritext_core::attribution::{Explainer, IgConfig, LimeConfig, Method, ShapConfig};
use veritext_core::faithfulness::ClassMode;
use veritext_core::model::Pooling;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Lstm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<ModelKind, String> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(format!("unknown model '{other}' (expected cnn or lstm)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// "synthetic" or a path to a CSV file with text and label columns.
    #[serde(default = "d_dataset")]
    pub dataset: String,
    #[serde(default = "d_synthetic_size")]
    pub synthetic_size: usize,
    #[serde(default = "d_vocab_capacity")]
    pub vocab_capacity: usize,
    #[serde(default = "d_sequence_length")]
    pub sequence_length: usize,

    #[serde(default = "d_model")]
    pub model: ModelKind,
    #[serde(default = "d_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "d_conv_filters")]
    pub conv_filters: usize,
    #[serde(default = "d_kernel_width")]
    pub kernel_width: usize,
    #[serde(default = "d_hidden_units")]
    pub hidden_units: usize,
    #[serde(default = "d_pooling")]
    pub pooling: Pooling,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_recurrent_dropout")]
    pub recurrent_dropout: f64,

    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_train_ratio")]
    pub train_ratio: f64,
    #[serde(default = "d_val_ratio")]
    pub val_ratio: f64,
    #[serde(default = "d_test_ratio")]
    pub test_ratio: f64,

    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "d_ig_steps")]
    pub ig_steps: usize,
    #[serde(default = "d_shap_coalitions")]
    pub shap_coalitions: usize,
    #[serde(default = "d_lime_samples")]
    pub lime_samples: usize,
    #[serde(default = "d_lime_kernel_width")]
    pub lime_kernel_width: f64,
    #[serde(default = "d_lime_ridge")]
    pub lime_ridge: f64,
    #[serde(default = "d_lime_top_k")]
    pub lime_top_k: usize,

    #[serde(default = "d_eval_k")]
    pub eval_k: usize,
    #[serde(default)]
    pub aopc_m: Option<usize>,
    #[serde(default = "d_class_mode")]
    pub class_mode: ClassMode,
    #[serde(default = "d_eval_instances")]
    pub eval_instances: usize,
    #[serde(default = "d_explain_instances")]
    pub explain_instances: usize,

    #[serde(default = "d_out_dir")]
    pub out_dir: String,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

fn d_dataset() -> String {
    "synthetic".to_string()
}
fn d_synthetic_size() -> usize {
    240
}
fn d_vocab_capacity() -> usize {
    20000
}
fn d_sequence_length() -> usize {
    64
}
fn d_model() -> ModelKind {
    ModelKind::Cnn
}
fn d_embedding_dim() -> usize {
    16
}
fn d_conv_filters() -> usize {
    16
}
fn d_kernel_width() -> usize {
    5
}
fn d_hidden_units() -> usize {
    16
}
fn d_pooling() -> Pooling {
    Pooling::Masked
}
fn d_dropout() -> f64 {
    0.5
}
fn d_recurrent_dropout() -> f64 {
    0.2
}
fn d_learning_rate() -> f64 {
    1e-3
}
fn d_batch_size() -> usize {
    16
}
fn d_epochs() -> usize {
    10
}
fn d_train_ratio() -> f64 {
    0.63
}
fn d_val_ratio() -> f64 {
    0.07
}
fn d_test_ratio() -> f64 {
    0.30
}
fn d_methods() -> Vec<Method> {
    vec![Method::Ig, Method::Shap, Method::Lime]
}
fn d_ig_steps() -> usize {
    50
}
fn d_shap_coalitions() -> usize {
    100
}
fn d_lime_samples() -> usize {
    1000
}
fn d_lime_kernel_width() -> f64 {
    0.25
}
fn d_lime_ridge() -> f64 {
    1e-3
}
fn d_lime_top_k() -> usize {
    20
}
fn d_eval_k() -> usize {
    20
}
fn d_class_mode() -> ClassMode {
    ClassMode::Predicted
}
fn d_eval_instances() -> usize {
    60
}
fn d_explain_instances() -> usize {
    5
}
fn d_out_dir() -> String {
    "veritext-run".to_string()
}
fn d_seed() -> u64 {
    42
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        toml::from_str("").expect("empty config is valid")
    }
}

impl RunConfig {
    /// Loads the file, or the all-defaults configuration when no path is
    /// given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::user(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::user(format!("bad config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::user(msg));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                return bad(format!("method '{m}' listed twice"));
            }
            seen.push(*m);
        }
        for (name, v) in [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.dataset == "synthetic" && self.synthetic_size == 0 {
            return bad("synthetic_size must be at least 1".into());
        }
        if self.sequence_length == 0 {
            return bad("sequence_length must be at least 1".into());
        }
        if self.eval_instances == 0 || self.explain_instances == 0 {
            return bad("instance counts must be at least 1".into());
        }
        Ok(())
    }

    pub fn explainer_for(&self, method: Method) -> Explainer {
        match method {
            Method::Ig => Explainer::Ig(IgConfig { steps: self.ig_steps }),
            Method::Shap => Explainer::Shap(ShapConfig {
                coalitions: self.shap_coalitions,
            }),
            Method::Lime => Explainer::Lime(LimeConfig {
                samples: self.lime_samples,
                kernel_width: self.lime_kernel_width,
                ridge: self.lime_ridge,
                top_k: self.lime_top_k,
            }),
        }
    }
}
