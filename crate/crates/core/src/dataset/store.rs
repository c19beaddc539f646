//! Single-file record container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OCRS" | version u32 | count u64
//! count x ( key_len u32 | key | label_len u32 | label | img_len u64 | png bytes )
//! crc32 u32 over every preceding byte
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::ManifestEntry;

pub const STORE_MAGIC: &[u8; 4] = b"OCRS";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("duplicate record key {0:?}")]
    DuplicateKey(String),
    #[error("not a record store (bad magic)")]
    BadMagic,
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("store checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("store truncated or malformed at byte {0}")]
    Truncated(usize),
    #[error("record text is not valid UTF-8 at byte {0}")]
    NotUtf8(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub key: String,
    pub label: String,
    /// Encoded PNG bytes as read from disk.
    pub image: Vec<u8>,
}

/// In-memory view of a packed store, records in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordStore {
    path: Option<PathBuf>,
    records: Vec<Record>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl RecordStore {
    pub fn from_records(records: Vec<Record>) -> Result<Self, StoreError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.key.as_str()) {
                return Err(StoreError::DuplicateKey(r.key.clone()));
            }
        }
        Ok(Self { path: None, records })
    }

    /// Reads every manifest image under `image_root` and writes the store to
    /// `out`. Keys are the manifest paths.
    pub fn pack(entries: &[ManifestEntry], image_root: &Path, out: &Path) -> Result<Self, StoreError> {
        let records = entries
            .iter()
            .map(|e| {
                let path = image_root.join(&e.path);
                let image = std::fs::read(&path).map_err(io_err(&path))?;
                Ok(Record { key: e.path.clone(), label: e.label.clone(), image })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        let mut store = Self::from_records(records)?;
        store.save(out)?;
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let mut store = Self::from_bytes(&bytes)?;
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn save(&mut self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))?;
        self.path = Some(path.to_path_buf());
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, key: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.key == key)
    }

    pub fn keys(&self) -> Vec<String> {
        self.records.iter().map(|r| r.key.clone()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .records
            .iter()
            .map(|r| 16 + r.key.len() + r.label.len() + r.image.len())
            .sum();
        let mut out = Vec::with_capacity(20 + payload);
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.key.len() as u32).to_le_bytes());
            out.extend_from_slice(r.key.as_bytes());
            out.extend_from_slice(&(r.label.len() as u32).to_le_bytes());
            out.extend_from_slice(r.label.as_bytes());
            out.extend_from_slice(&(r.image.len() as u64).to_le_bytes());
            out.extend_from_slice(&r.image);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 4 + 4 + 8 + 4 {
            return Err(StoreError::Truncated(bytes.len()));
        }
        if &bytes[..4] != STORE_MAGIC {
            return Err(StoreError::BadMagic);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(StoreError::Checksum { stored, computed });
        }
        let mut cur = Cursor { buf: body, pos: 4 };
        let version = cur.u32()?;
        if version != STORE_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let count = cur.u64()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let key = cur.string_u32()?;
            let label = cur.string_u32()?;
            let len = cur.u64()? as usize;
            let image = cur.take(len)?.to_vec();
            records.push(Record { key, label, image });
        }
        if cur.pos != body.len() {
            return Err(StoreError::Truncated(cur.pos));
        }
        Self::from_records(records)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(StoreError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string_u32(&mut self) -> Result<String, StoreError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| StoreError::NotUtf8(at))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(key: &str, label: &str, image: &[u8]) -> Record {
        Record { key: key.into(), label: label.into(), image: image.to_vec() }
    }

    #[test]
    fn empty_store_has_valid_header() {
        let bytes = RecordStore::default().to_bytes();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"OCRS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 0);
        let back = RecordStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn exact_layout_for_one_record() {
        let store = RecordStore::from_records(vec![rec("k", "ab", &[9, 8, 7])]).unwrap();
        let bytes = store.to_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"OCRS");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(b"k");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.extend_from_slice(&3u64.to_le_bytes());
        expect.extend_from_slice(&[9, 8, 7]);
        let crc = crc32fast::hash(&expect);
        expect.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = RecordStore::from_records(vec![rec("a", "x", &[1]), rec("a", "y", &[2])]);
        assert!(matches!(err, Err(StoreError::DuplicateKey(k)) if k == "a"));
    }

    #[test]
    fn corruption_is_detected() {
        let store = RecordStore::from_records(vec![rec("a", "漢", &[1, 2, 3])]).unwrap();
        let mut bytes = store.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(RecordStore::from_bytes(&bytes), Err(StoreError::Checksum { .. })));
        let truncated = &store.to_bytes()[..10];
        assert!(RecordStore::from_bytes(truncated).is_err());
        let mut magic = store.to_bytes();
        magic[0] = b'X';
        assert!(matches!(RecordStore::from_bytes(&magic), Err(StoreError::BadMagic)));
    }
}
