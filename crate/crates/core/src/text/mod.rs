//! Text pipeline: tokenization, capped vocabulary, fixed-length encoding.
//!
//! Ids 0 and 1 are reserved: 0 pads sequences (and doubles as the removal
//! token for perturbations), 1 stands in for out-of-vocabulary words. Real
//! words occupy ids 2 and up, assigned by descending corpus frequency with
//! ties broken by ascending lexicographic order.

mod corpus;
mod split;

pub use corpus::{load_csv, synthetic_corpus, LabeledExample};
pub use split::{split_dataset, DatasetSplit, EncodedExample};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const OOV_TOKEN: &str = "<OOV>";

/// Lowercases, strips punctuation from token boundaries and splits on
/// whitespace. Interior punctuation survives, so "don't" stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Fixed-length vector of token ids, padded at the tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_pad(&self, position: usize) -> bool {
        self.ids[position] == PAD_ID
    }

    /// Positions holding a real (non-pad) token, ascending.
    pub fn non_pad_positions(&self) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id != PAD_ID)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn active_len(&self) -> usize {
        self.ids.iter().filter(|&&id| id != PAD_ID).count()
    }

    /// Copy with the given positions replaced by the pad id. Length is
    /// preserved, which keeps every perturbed variant a valid model input.
    pub fn with_pad_at(&self, positions: &[usize]) -> TokenSequence {
        let mut ids = self.ids.clone();
        for &p in positions {
            ids[p] = PAD_ID;
        }
        TokenSequence { ids }
    }

    /// Copy keeping only the given positions; everything else becomes pad.
    pub fn keep_only(&self, positions: &[usize]) -> TokenSequence {
        let mut ids = vec![PAD_ID; self.ids.len()];
        for &p in positions {
            ids[p] = self.ids[p];
        }
        TokenSequence { ids }
    }
}

/// Frequency-ranked word table with two reserved ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    capacity: usize,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    capacity: usize,
    pad_id: u32,
    oov_id: u32,
    oov_token: String,
    words: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds the table from raw texts. At most `capacity` distinct words
    /// are kept, ranked by descending frequency; ties go to the
    /// lexicographically smaller word.
    pub fn build<'a, I>(corpus: I, capacity: usize) -> Vocabulary
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in corpus {
            for token in tokenize(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(capacity);

        let mut token_to_id = HashMap::with_capacity(ranked.len());
        let mut id_to_token = Vec::with_capacity(ranked.len());
        for (i, (token, _)) in ranked.into_iter().enumerate() {
            token_to_id.insert(token.clone(), 2 + i as u32);
            id_to_token.push(token);
        }
        Vocabulary {
            capacity,
            token_to_id,
            id_to_token,
        }
    }

    /// Total id count including the two reserved ids.
    pub fn size(&self) -> u32 {
        2 + self.id_to_token.len() as u32
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Word for a real id; pad and oov have no word form here.
    pub fn word_of(&self, id: u32) -> Option<&str> {
        if id < 2 {
            return None;
        }
        self.id_to_token.get((id - 2) as usize).map(|s| s.as_str())
    }

    /// Tokenizes, maps unknown words to the oov id, truncates to `len`
    /// and pads the tail.
    pub fn encode(&self, text: &str, len: usize) -> TokenSequence {
        let mut ids: Vec<u32> = tokenize(text)
            .iter()
            .take(len)
            .map(|t| self.id_of(t).unwrap_or(OOV_ID))
            .collect();
        ids.resize(len, PAD_ID);
        TokenSequence::new(ids)
    }

    /// Recovers tokens from a sequence. Pad positions are dropped, the oov
    /// id renders as the oov marker. Ids outside the table are an error.
    pub fn decode(&self, seq: &TokenSequence) -> Result<Vec<String>> {
        let mut tokens = Vec::new();
        for &id in seq.ids() {
            if id == PAD_ID {
                continue;
            }
            if id == OOV_ID {
                tokens.push(OOV_TOKEN.to_string());
                continue;
            }
            match self.word_of(id) {
                Some(w) => tokens.push(w.to_string()),
                None => {
                    return Err(Error::IdOutOfRange {
                        id,
                        size: self.size(),
                    })
                }
            }
        }
        Ok(tokens)
    }

    pub fn to_json(&self) -> String {
        let words: BTreeMap<String, u32> = self
            .token_to_id
            .iter()
            .map(|(t, &id)| (t.clone(), id))
            .collect();
        let file = VocabularyFile {
            capacity: self.capacity,
            pad_id: PAD_ID,
            oov_id: OOV_ID,
            oov_token: OOV_TOKEN.to_string(),
            words,
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Vocabulary> {
        let file: VocabularyFile = serde_json::from_str(json)?;
        if file.pad_id != PAD_ID || file.oov_id != OOV_ID {
            return Err(Error::BadVocabulary(
                "reserved ids must be 0 (pad) and 1 (oov)".into(),
            ));
        }
        let n = file.words.len();
        let mut id_to_token = vec![String::new(); n];
        let mut token_to_id = HashMap::with_capacity(n);
        for (token, id) in file.words {
            if id < 2 || (id - 2) as usize >= n {
                return Err(Error::BadVocabulary(format!(
                    "word id {id} outside the dense range 2..{}",
                    2 + n
                )));
            }
            if !id_to_token[(id - 2) as usize].is_empty() {
                return Err(Error::BadVocabulary(format!("duplicate word id {id}")));
            }
            id_to_token[(id - 2) as usize] = token.clone();
            token_to_id.insert(token, id);
        }
        Ok(Vocabulary {
            capacity: file.capacity,
            token_to_id,
            id_to_token,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Vocabulary::from_json(&json)
    }
}
