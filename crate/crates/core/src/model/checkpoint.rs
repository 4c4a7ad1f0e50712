//! Single-file model checkpoints.
//!
//! Layout: magic `VTXM`, u32 format version, u8 architecture tag, a
//! length-prefixed JSON hyperparameter block, the parameter tensors as
//! little-endian f32 runs (in `flat_params` order, each length-prefixed),
//! and a trailing CRC-32 over everything before it. Parameters are kept
//! on the f32 grid in memory, so a save/load round trip reproduces
//! bit-identical predictions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, Classifier, CnnClassifier, CnnConfig, LstmClassifier, LstmConfig};

const MAGIC: &[u8; 4] = b"VTXM";
const VERSION: u32 = 1;

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut bit = 0;
        while bit < 8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            bit += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_crc_table();

pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ u32::from(b)) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

fn arch_tag(arch: Architecture) -> u8 {
    match arch {
        Architecture::Cnn => 0,
        Architecture::Lstm => 1,
    }
}

fn serialize(model: &Classifier) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(arch_tag(model.architecture()));

    let config_json = match model {
        Classifier::Cnn(m) => serde_json::to_vec(m.config()).expect("config serializes"),
        Classifier::Lstm(m) => serde_json::to_vec(m.config()).expect("config serializes"),
    };
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);

    for tensor in model.param_slices() {
        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
        for &v in tensor {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Short stable id for a parameter set, e.g. `cnn-9f1c03aa`. The hex
/// part is the checkpoint's own trailing checksum, so the id printed at
/// save time can be checked against the file later.
pub(crate) fn fingerprint(model: &Classifier) -> String {
    let bytes = serialize(model);
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    format!("{}-{crc:08x}", model.architecture())
}

pub fn save_model(model: &Classifier, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(model)).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::BadCheckpoint {
                path: self.path.to_string(),
                reason: "file truncated".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_model(path: &Path) -> Result<Classifier> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let bad = |reason: &str| Error::BadCheckpoint {
        path: path_str.clone(),
        reason: reason.into(),
    };

    if bytes.len() < MAGIC.len() + 4 + 1 + 4 + 4 {
        return Err(bad("file too short"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32(body) != stored_crc {
        return Err(bad("checksum mismatch"));
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
        path: &path_str,
    };
    if r.take(4)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = r.take_u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let tag = r.take_u8()?;
    let config_len = r.take_u32()? as usize;
    let config_bytes = r.take(config_len)?;

    let mut model = match tag {
        0 => {
            let cfg: CnnConfig =
                serde_json::from_slice(config_bytes).map_err(|e| bad(&format!("bad config: {e}")))?;
            Classifier::Cnn(CnnClassifier::new(cfg, 0)?)
        }
        1 => {
            let cfg: LstmConfig =
                serde_json::from_slice(config_bytes).map_err(|e| bad(&format!("bad config: {e}")))?;
            Classifier::Lstm(LstmClassifier::new(cfg, 0)?)
        }
        other => return Err(bad(&format!("unknown architecture tag {other}"))),
    };

    let mut values: Vec<f64> = Vec::new();
    {
        let slices = model.param_slices();
        for expected in slices.iter().map(|s| s.len()) {
            let n = r.take_u64()? as usize;
            if n != expected {
                return Err(bad(&format!(
                    "tensor length {n} does not match architecture (expected {expected})"
                )));
            }
            let raw = r.take(n * 4)?;
            for chunk in raw.chunks_exact(4) {
                values.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
            }
        }
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes after parameter tensors"));
    }
    model.set_flat_params(&values);
    Ok(model)
}

/// Loads and insists on an architecture, for callers that need one.
pub fn load_model_expecting(path: &Path, expected: Architecture) -> Result<Classifier> {
    let model = load_model(path)?;
    if model.architecture() != expected {
        return Err(Error::ArchitectureMismatch {
            found: model.architecture().name().into(),
            expected: expected.name().into(),
        });
    }
    Ok(model)
}
