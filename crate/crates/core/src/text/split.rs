//! Seeded train/validation/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenSequence;

/// An encoded document. `id` is the index into the original corpus order,
/// kept so split manifests can name their members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub id: usize,
    pub sequence: TokenSequence,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub seed: u64,
}

/// Shuffles with the given seed and cuts into three parts. Train and
/// validation sizes are floored, the remainder is the test set, so the
/// three parts always cover the input exactly.
pub fn split_dataset(
    examples: &[EncodedExample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if (sum - 1.0).abs() > 1e-9 || r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::BadSplitRatios(sum));
    }

    let mut shuffled: Vec<EncodedExample> = examples.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let n_train = (n as f64 * r_train).floor() as usize;
    let n_val = (n as f64 * r_val).floor() as usize;

    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        seed,
    })
}
