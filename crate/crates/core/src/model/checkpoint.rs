//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OCRM" | version u32 | dict sha256 [32]
//! dict_len u32 | dictionary text (one char per line)
//! meta_len u32 | metadata text (key=value lines)
//! tensor_count u32
//! tensor_count x ( name_len u32 | name | rank u32 | dims u32 x rank | offset u64 )
//! value_count u64 | value_count x f32
//! crc32 u32 over every preceding byte
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ModelError, ModelParams, ParamLayout, TensorInfo};
use crate::dataset::{CharDict, DictError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OCRM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("dictionary does not match the checkpoint's dictionary hash")]
    DictMismatch,
    #[error("checkpoint dictionary invalid: {0}")]
    Dict(#[from] DictError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Trained parameters bundled with the dictionary they were trained on and
/// free-form `key=value` metadata (training configuration, provenance).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dict: CharDict,
    pub params: ModelParams<f32>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(dict: CharDict, params: ModelParams<f32>) -> Result<Self, CheckpointError> {
        if params.arch().classes != dict.num_classes() {
            return Err(CheckpointError::DictMismatch);
        }
        Ok(Self { dict, params, metadata: Vec::new() })
    }

    pub fn with_metadata(mut self, metadata: Vec<(String, String)>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.dict.digest());
        put_str(&mut out, &self.dict.to_text());
        let meta: String = self
            .metadata
            .iter()
            .map(|(k, v)| format!("{}={}\n", k.replace(['=', '\n'], "_"), v.replace('\n', " ")))
            .collect();
        put_str(&mut out, &meta);
        let tensors = self.params.layout().tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(t.offset as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if stored != crc32fast::hash(body) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cur = Reader { buf: body, pos: 4 };
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
        let dict = CharDict::from_text(&cur.string()?)?;
        if dict.digest() != hash {
            return Err(CheckpointError::DictMismatch);
        }
        let metadata = cur
            .string()?
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = cur.string()?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let offset = cur.u64()? as usize;
            tensors.push(TensorInfo { name, shape, offset });
        }
        let (layout, arch) = ParamLayout::from_tensors(tensors)?;
        let n = cur.u64()? as usize;
        if n != layout.total() {
            return Err(corrupt("parameter count disagrees with manifest"));
        }
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| corrupt("parameter count overflow"))?)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let params = ModelParams::from_values(arch, values)?;
        if !params.all_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        let mut ckpt = Self::new(dict, params)?;
        ckpt.metadata = metadata;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    fn sample() -> Checkpoint {
        let dict = CharDict::from_chars("abcde".chars()).unwrap();
        Checkpoint::new(dict, init_params(5, 9))
            .unwrap()
            .with_metadata(vec![("lambda1".into(), "1".into()), ("note".into(), "x=y".into())])
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.metadata_value("note"), Some("x=y"));
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = sample().to_bytes();
        for pos in [0, 5, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at {pos} undetected");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn dict_must_fit_head() {
        let dict = CharDict::from_chars("ab".chars()).unwrap();
        assert!(matches!(Checkpoint::new(dict, init_params(5, 0)), Err(CheckpointError::DictMismatch)));
    }
}
