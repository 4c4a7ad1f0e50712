//! Corpus ingestion and the bundled synthetic corpus.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw document with its binary label (1 = reliable, 0 = unreliable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: u8,
}

/// Loads a `text,label` CSV (RFC-4180, quoted fields allowed). Every row
/// must carry non-empty text and a 0/1 label; offending rows are collected
/// and reported together by their 1-based data row number.
pub fn load_csv(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path.display().to_string(),
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv(e),
        })?;

    let headers = reader.headers()?.clone();
    let text_col = headers
        .iter()
        .position(|h| h == "text")
        .ok_or_else(|| Error::MissingColumn("text".into()))?;
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::MissingColumn("label".into()))?;

    let mut examples = Vec::new();
    let mut bad_rows: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let text = record.get(text_col).unwrap_or("");
        let label_raw = record.get(label_col).unwrap_or("").trim();
        let label = match label_raw {
            "0" => Some(0u8),
            "1" => Some(1u8),
            _ => None,
        };
        match (text.trim().is_empty(), label) {
            (false, Some(label)) => examples.push(LabeledExample {
                text: text.to_string(),
                label,
            }),
            (true, _) => bad_rows.push(format!("row {row}: empty text")),
            (_, None) => bad_rows.push(format!("row {row}: label '{label_raw}' is not 0 or 1")),
        }
    }

    if !bad_rows.is_empty() {
        let shown = bad_rows.iter().take(20).cloned().collect::<Vec<_>>();
        let mut msg = shown.join("; ");
        if bad_rows.len() > 20 {
            let _ = write!(msg, "; and {} more", bad_rows.len() - 20);
        }
        return Err(Error::InvalidRows(msg));
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(examples)
}

const FILLER: &[&str] = &[
    "the", "a", "of", "to", "and", "in", "that", "for", "on", "with", "as", "at", "by", "from",
    "about", "into", "after", "over", "between", "during", "people", "city", "country", "group",
    "company", "market", "school", "family", "house", "water", "money", "street", "night",
    "morning", "week", "month", "year", "world", "state", "member", "leader", "plan", "issue",
    "party", "case", "court", "police", "program", "public", "local", "national", "early",
    "recent", "major", "small", "large", "young", "likely", "several", "many", "other", "last",
    "next", "first", "second", "said", "told", "made", "found", "called", "asked", "showed",
    "became", "began", "released", "added", "moved", "held", "brought", "announced", "described",
];

const RELIABLE_MARKERS: &[&str] = &[
    "confirmed", "official", "verified", "spokesperson", "statement", "according", "minister",
    "documented", "sourced", "briefing", "parliament", "agency",
];

const SENSATIONAL_MARKERS: &[&str] = &[
    "shocking", "exposed", "miracle", "secret", "hoax", "banned", "unbelievable", "viral",
    "outrageous", "scandal", "conspiracy", "bombshell",
];

/// Generates a separable two-class corpus: every document is filler text
/// with a handful of class-marker words planted at random positions. The
/// marker sets are disjoint, so the classes are linearly separable from
/// token presence alone. Labels alternate for exact balance.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let len = rng.gen_range(20..=40);
        let mut words: Vec<&str> = (0..len)
            .map(|_| FILLER[rng.gen_range(0..FILLER.len())])
            .collect();
        let markers = if label == 1 {
            RELIABLE_MARKERS
        } else {
            SENSATIONAL_MARKERS
        };
        let plant = rng.gen_range(3..=6);
        let mut positions: Vec<usize> = (0..len).collect();
        positions.shuffle(&mut rng);
        for &p in positions.iter().take(plant) {
            words[p] = markers[rng.gen_range(0..markers.len())];
        }
        corpus.push(LabeledExample {
            text: words.join(" "),
            label,
        });
    }
    corpus
}
