//! The four pipeline stages. Each one reads and writes files under the
//! configured output directory, so a later stage can always be re-run
//! against the artifacts of an earlier one, and each keeps `manifest.json`
//! up to date with the files the run has produced.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use veritext_core::attribution::Method;
use veritext_core::faithfulness::{evaluate_explainer, EvalConfig, MethodAggregate, MetricsRecord};
use veritext_core::model::{
    evaluate, load_model_expecting, save_model, train, Architecture, Classifier, CnnClassifier,
    CnnConfig, ConvActivation, Evaluation, LstmClassifier, LstmConfig, TrainConfig,
    TrainingHistory,
};
use veritext_core::report::{render_heatmap, render_metrics_table, TableFormat};
use veritext_core::seeding::component_seed;
use veritext_core::text::{
    load_csv, split_dataset, synthetic_corpus, DatasetSplit, EncodedExample, LabeledExample,
    Vocabulary, PAD_ID,
};

use crate::config::{ModelKind, RunConfig};
use crate::CliError;

const VOCAB_FILE: &str = "vocabulary.json";
const SPLITS_FILE: &str = "splits.json";
const LOCK_FILE: &str = "config.lock.json";
const MODEL_FILE: &str = "model.ckpt";
const HISTORY_FILE: &str = "history.json";
const MANIFEST_FILE: &str = "manifest.json";
const TIMINGS_FILE: &str = "timings.csv";

/// Which test instances a command works on: the first `n`, or an explicit
/// id list. Parsed from `--instances`; a lone number means a count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceSelector {
    Count(usize),
    Ids(Vec<usize>),
}

impl std::str::FromStr for InstanceSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<InstanceSelector, String> {
        let parse = |part: &str| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| format!("'{part}' is not a non-negative integer"))
        };
        if s.contains(',') {
            // A trailing comma marks a one-element list ("17,"), since a
            // lone number always means a count.
            let parts: Vec<&str> = s.split(',').collect();
            let parts = match parts.split_last() {
                Some((last, head)) if last.trim().is_empty() && !head.is_empty() => head,
                _ => &parts[..],
            };
            let ids = parts.iter().copied().map(parse).collect::<Result<Vec<_>, _>>()?;
            Ok(InstanceSelector::Ids(ids))
        } else {
            Ok(InstanceSelector::Count(parse(s)?))
        }
    }
}

/// Training summary written next to the checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_id: String,
    pub history: TrainingHistory,
    pub test: Evaluation,
}

/// One explanation, with enough context to re-read it standalone. Wall
/// times live in a separate timings file so these records are identical
/// across reruns of the same seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct AttrRecord {
    pub method: Method,
    pub model_id: String,
    pub instance_id: usize,
    pub label: u8,
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub scores: Vec<f64>,
    pub explained_class: u8,
    pub seed: u64,
}

/// The resolved configuration a run was executed with, plus a short hash
/// of it for quick comparison between runs.
#[derive(Debug, Serialize, Deserialize)]
struct ConfigLock {
    fingerprint: String,
    config: RunConfig,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The config with its destination directory reset to the default.
/// Where a run writes its artifacts is not part of what it computes, so
/// the lock file and fingerprint ignore it.
fn canonical_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.out_dir = RunConfig::default().out_dir;
    c
}

pub fn config_fingerprint(cfg: &RunConfig) -> String {
    let canonical =
        serde_json::to_string(&canonical_config(cfg)).expect("config serializes");
    format!("{:016x}", fnv1a64(canonical.as_bytes()))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.out_dir)
}

fn stage<T>(name: &str, r: Result<T, CliError>) -> Result<T, CliError> {
    r.map_err(|e| CliError {
        code: e.code,
        msg: format!("{name}: {}", e.msg),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::internal(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::user(format!("malformed {}: {e}", path.display())))
}

/// Adds the given file names to the run's manifest, keeping it a sorted,
/// duplicate-free list.
fn update_manifest(dir: &Path, produced: &[String]) -> Result<(), CliError> {
    let path = dir.join(MANIFEST_FILE);
    let mut files: Vec<String> = if path.exists() {
        read_json(&path)?
    } else {
        Vec::new()
    };
    files.extend(produced.iter().cloned());
    files.sort();
    files.dedup();
    write_json(&path, &files)
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<LabeledExample>, CliError> {
    if cfg.dataset == "synthetic" {
        Ok(synthetic_corpus(
            cfg.synthetic_size,
            component_seed(cfg.seed, "corpus"),
        ))
    } else {
        load_csv(Path::new(&cfg.dataset)).map_err(CliError::from_core)
    }
}

fn build_dataset(cfg: &RunConfig) -> Result<(Vocabulary, DatasetSplit), CliError> {
    let corpus = stage("load", load_corpus(cfg))?;
    let vocab = Vocabulary::build(corpus.iter().map(|e| e.text.as_str()), cfg.vocab_capacity);
    let encoded: Vec<EncodedExample> = corpus
        .iter()
        .enumerate()
        .map(|(id, e)| EncodedExample {
            id,
            sequence: vocab.encode(&e.text, cfg.sequence_length),
            label: e.label,
        })
        .collect();
    let splits = stage(
        "split",
        split_dataset(
            &encoded,
            (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
            component_seed(cfg.seed, "split"),
        )
        .map_err(CliError::from_core),
    )?;
    Ok((vocab, splits))
}

fn write_dataset(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    splits: &DatasetSplit,
) -> Result<(), CliError> {
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    let lock = ConfigLock {
        fingerprint: config_fingerprint(cfg),
        config: canonical_config(cfg),
    };
    stage("write", {
        vocab
            .save(&dir.join(VOCAB_FILE))
            .map_err(CliError::from_core)?;
        write_json(&dir.join(SPLITS_FILE), splits)?;
        write_json(&dir.join(LOCK_FILE), &lock)
    })?;
    update_manifest(
        &dir,
        &[
            VOCAB_FILE.to_string(),
            SPLITS_FILE.to_string(),
            LOCK_FILE.to_string(),
        ],
    )
}

/// Loads the prepared dataset, or derives and writes it when the files
/// are not there yet.
fn ensure_dataset(cfg: &RunConfig) -> Result<(Vocabulary, DatasetSplit), CliError> {
    let dir = out_dir(cfg);
    let vocab_path = dir.join(VOCAB_FILE);
    let splits_path = dir.join(SPLITS_FILE);
    if vocab_path.exists() && splits_path.exists() {
        let vocab = Vocabulary::load(&vocab_path).map_err(CliError::from_core)?;
        let splits: DatasetSplit = read_json(&splits_path)?;
        return Ok((vocab, splits));
    }
    let (vocab, splits) = build_dataset(cfg)?;
    write_dataset(cfg, &vocab, &splits)?;
    Ok((vocab, splits))
}

fn require_dataset(cfg: &RunConfig) -> Result<(Vocabulary, DatasetSplit), CliError> {
    let dir = out_dir(cfg);
    let vocab_path = dir.join(VOCAB_FILE);
    let splits_path = dir.join(SPLITS_FILE);
    if !vocab_path.exists() || !splits_path.exists() {
        return Err(CliError::user(format!(
            "no prepared dataset under {} (run prepare or train first)",
            dir.display()
        )));
    }
    let vocab = Vocabulary::load(&vocab_path).map_err(CliError::from_core)?;
    let splits: DatasetSplit = read_json(&splits_path)?;
    Ok((vocab, splits))
}

fn init_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Classifier, CliError> {
    let seed = component_seed(cfg.seed, "model.init");
    let model = match cfg.model {
        ModelKind::Cnn => Classifier::Cnn(
            CnnClassifier::new(
                CnnConfig {
                    vocab_size: vocab.size(),
                    seq_len: cfg.sequence_length,
                    embedding_dim: cfg.embedding_dim,
                    filters: cfg.conv_filters,
                    kernel_width: cfg.kernel_width,
                    dropout: cfg.dropout,
                    activation: ConvActivation::Relu,
                    pooling: cfg.pooling,
                },
                seed,
            )
            .map_err(CliError::from_core)?,
        ),
        ModelKind::Lstm => Classifier::Lstm(
            LstmClassifier::new(
                LstmConfig {
                    vocab_size: vocab.size(),
                    seq_len: cfg.sequence_length,
                    embedding_dim: cfg.embedding_dim,
                    hidden: cfg.hidden_units,
                    dropout: cfg.dropout,
                    recurrent_dropout: cfg.recurrent_dropout,
                },
                seed,
            )
            .map_err(CliError::from_core)?,
        ),
    };
    Ok(model)
}

fn expected_arch(cfg: &RunConfig) -> Architecture {
    match cfg.model {
        ModelKind::Cnn => Architecture::Cnn,
        ModelKind::Lstm => Architecture::Lstm,
    }
}

fn require_model(cfg: &RunConfig) -> Result<Classifier, CliError> {
    let path = out_dir(cfg).join(MODEL_FILE);
    if !path.exists() {
        return Err(CliError::user(format!(
            "no checkpoint at {} (run train first)",
            path.display()
        )));
    }
    load_model_expecting(&path, expected_arch(cfg)).map_err(CliError::from_core)
}

/// Resolves the selector against the test split: `Count(n)` takes the
/// first `n` instances, `Ids` looks instances up in the listed order.
fn select_instances(
    splits: &DatasetSplit,
    selector: &InstanceSelector,
) -> Result<Vec<EncodedExample>, CliError> {
    match selector {
        InstanceSelector::Count(n) => {
            let picked: Vec<EncodedExample> =
                splits.test.iter().take(*n).cloned().collect();
            if picked.is_empty() {
                return Err(CliError::user("test split is empty"));
            }
            Ok(picked)
        }
        InstanceSelector::Ids(ids) => ids
            .iter()
            .map(|&id| {
                splits
                    .test
                    .iter()
                    .find(|ex| ex.id == id)
                    .cloned()
                    .ok_or_else(|| {
                        CliError::user(format!("instance {id} is not in the test split"))
                    })
            })
            .collect(),
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, splits) = build_dataset(cfg)?;
    write_dataset(cfg, &vocab, &splits)?;
    println!(
        "prepared {} examples (train {}, val {}, test {}), vocabulary of {} entries -> {}",
        splits.train.len() + splits.validation.len() + splits.test.len(),
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        vocab.size(),
        out_dir(cfg).display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, splits) = ensure_dataset(cfg)?;
    let mut model = init_model(cfg, &vocab)?;

    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: component_seed(cfg.seed, "train"),
    };
    let started = Instant::now();
    let history = train(&mut model, &splits.train, &splits.validation, &train_cfg)
        .map_err(CliError::from_core)?;
    let elapsed = started.elapsed().as_secs_f64();
    let test = evaluate(&model, &splits.test);

    let dir = out_dir(cfg);
    save_model(&model, &dir.join(MODEL_FILE)).map_err(CliError::from_core)?;
    let report = TrainReport {
        model_id: model.fingerprint(),
        history,
        test,
    };
    write_json(&dir.join(HISTORY_FILE), &report)?;
    update_manifest(&dir, &[MODEL_FILE.to_string(), HISTORY_FILE.to_string()])?;

    for e in &report.history.epochs {
        let val = match (e.val_loss, e.val_accuracy) {
            (Some(l), Some(a)) => format!(" val_loss {l:.4} val_acc {a:.3}"),
            _ => String::new(),
        };
        println!(
            "epoch {:>2}: loss {:.4} acc {:.3}{val}",
            e.epoch, e.train_loss, e.train_accuracy
        );
    }
    println!(
        "trained {} in {elapsed:.1}s: test accuracy {:.3}, test loss {:.4} ({} examples) -> {}",
        report.model_id,
        report.test.accuracy,
        report.test.mean_loss,
        report.test.n,
        dir.join(MODEL_FILE).display()
    );
    Ok(())
}

pub fn cmd_explain(
    cfg: &RunConfig,
    methods: &[Method],
    selector: &InstanceSelector,
) -> Result<(), CliError> {
    let (vocab, splits) = require_dataset(cfg)?;
    let model = require_model(cfg)?;
    let model_id = model.fingerprint();
    let picked = select_instances(&splits, selector)?;

    let dir = out_dir(cfg);
    let mut produced = Vec::new();
    let mut timings = String::from("instance_id,method,wall_time_s\n");
    let mut failed = 0usize;
    for ex in &picked {
        for &method in methods {
            let explainer = cfg.explainer_for(method);
            let seed = component_seed(cfg.seed, &format!("explain.{method}.{}", ex.id));
            let attr = match explainer.explain(&model, &ex.sequence, seed) {
                Ok(attr) => attr,
                Err(err) => {
                    log::warn!("instance {} via {method}: {err}", ex.id);
                    failed += 1;
                    continue;
                }
            };

            let tokens = vocab.decode(&ex.sequence).map_err(CliError::from_core)?;
            let token_ids: Vec<u32> = ex
                .sequence
                .ids()
                .iter()
                .copied()
                .filter(|&id| id != PAD_ID)
                .collect();
            let record = AttrRecord {
                method,
                model_id: model_id.clone(),
                instance_id: ex.id,
                label: ex.label,
                tokens,
                token_ids,
                scores: attr.scores.clone(),
                explained_class: attr.explained_class,
                seed,
            };
            let json_name = format!("attr_{:04}_{method}.json", ex.id);
            write_json(&dir.join(&json_name), &record)?;

            let caption = format!("{model_id}, instance {}", ex.id);
            let html = render_heatmap(&vocab, &ex.sequence, &attr, &caption)
                .map_err(CliError::from_core)?;
            let html_name = format!("heatmap_{:04}_{method}.html", ex.id);
            write_text(&dir.join(&html_name), &html)?;

            timings.push_str(&format!(
                "{},{method},{:.6}\n",
                ex.id, attr.wall_time_s
            ));
            produced.push(json_name);
            produced.push(html_name);
        }
    }
    write_text(&dir.join(TIMINGS_FILE), &timings)?;
    produced.push(TIMINGS_FILE.to_string());
    update_manifest(&dir, &produced)?;

    let note = if failed > 0 {
        format!(", {failed} failed (see log)")
    } else {
        String::new()
    };
    println!(
        "explained {} instances with {} methods ({} artifact pairs{note}) -> {}",
        picked.len(),
        methods.len(),
        (produced.len() - 1) / 2,
        dir.display()
    );
    Ok(())
}

pub fn cmd_eval(
    cfg: &RunConfig,
    methods: &[Method],
    selector: &InstanceSelector,
) -> Result<(), CliError> {
    let (_vocab, splits) = require_dataset(cfg)?;
    let model = require_model(cfg)?;
    let picked = select_instances(&splits, selector)?;

    let eval_cfg = EvalConfig {
        k: cfg.eval_k,
        aopc_m: cfg.aopc_m,
        class_mode: cfg.class_mode,
    };

    let mut all_records: Vec<MetricsRecord> = Vec::new();
    let mut aggregates: Vec<MethodAggregate> = Vec::new();
    for &method in methods {
        let explainer = cfg.explainer_for(method);
        let (records, aggregate) = evaluate_explainer(&model, &picked, &eval_cfg, |ex| {
            let seed = component_seed(cfg.seed, &format!("explain.{method}.{}", ex.id));
            explainer.explain(&model, &ex.sequence, seed)
        })
        .map_err(CliError::from_core)?;
        log::info!(
            "{method}: evaluated {} instances, excluded {}",
            aggregate.evaluated,
            aggregate.excluded
        );
        all_records.extend(records);
        aggregates.push(aggregate);
    }

    let dir = out_dir(cfg);
    let mut jsonl = String::new();
    for r in &all_records {
        jsonl.push_str(
            &serde_json::to_string(r)
                .map_err(|e| CliError::internal(format!("cannot serialize record: {e}")))?,
        );
        jsonl.push('\n');
    }
    write_text(&dir.join("per_instance.jsonl"), &jsonl)?;
    write_text(
        &dir.join("metrics.csv"),
        &render_metrics_table(&aggregates, TableFormat::Csv),
    )?;
    let table = render_metrics_table(&aggregates, TableFormat::Markdown);
    write_text(&dir.join("metrics.md"), &table)?;
    update_manifest(
        &dir,
        &[
            "per_instance.jsonl".to_string(),
            "metrics.csv".to_string(),
            "metrics.md".to_string(),
        ],
    )?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_parses_counts_and_id_lists() {
        assert_eq!(
            "30".parse::<InstanceSelector>().unwrap(),
            InstanceSelector::Count(30)
        );
        assert_eq!(
            "3,17, 42".parse::<InstanceSelector>().unwrap(),
            InstanceSelector::Ids(vec![3, 17, 42])
        );
        assert_eq!(
            "17,".parse::<InstanceSelector>().unwrap(),
            InstanceSelector::Ids(vec![17])
        );
        assert!("three".parse::<InstanceSelector>().is_err());
        assert!("3,,5".parse::<InstanceSelector>().is_err());
        assert!(",".parse::<InstanceSelector>().is_err());
    }

    #[test]
    fn fingerprint_tracks_config_changes() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        b.out_dir = "elsewhere".to_string();
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        b.seed = 43;
        assert_ne!(config_fingerprint(&a), config_fingerprint(&b));
    }
}
