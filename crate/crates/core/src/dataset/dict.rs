use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// CTC blank class. Printable characters start at index 1.
pub const BLANK_INDEX: u32 = 0;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("no labels to build a dictionary from")]
    EmptyManifest,
    #[error("character {0:?} appears more than once")]
    Duplicate(char),
    #[error("dictionary line {line} must hold exactly one character")]
    BadLine { line: usize },
    #[error("character {0:?} cannot be stored in a dictionary")]
    Unprintable(char),
    #[error("character {0:?} is not in the dictionary")]
    UnknownCharacter(char),
    #[error("index {0} is outside the dictionary")]
    IndexOutOfRange(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered character to class-index mapping used for CTC targets and
/// decoding.
///
/// Index `k` (1-based) holds `chars[k - 1]`; index 0 is the blank.
#[derive(Clone, PartialEq, Eq)]
pub struct CharDict {
    chars: Vec<char>,
    index_of: HashMap<char, u32>,
}

impl fmt::Debug for CharDict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CharDict").field("len", &self.chars.len()).finish()
    }
}

impl CharDict {
    /// Builds a dictionary from characters in the given order.
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Result<Self, DictError> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut index_of = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if c == '\n' || c == '\r' {
                return Err(DictError::Unprintable(c));
            }
            if index_of.insert(c, i as u32 + 1).is_some() {
                return Err(DictError::Duplicate(c));
            }
        }
        Ok(Self { chars, index_of })
    }

    /// All distinct label characters sorted by code point.
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Result<Self, DictError> {
        let set: BTreeSet<char> = labels.into_iter().flat_map(str::chars).collect();
        if set.is_empty() {
            return Err(DictError::EmptyManifest);
        }
        Self::from_chars(set)
    }

    /// Number of printable characters (the blank is not counted).
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Model output width: characters plus the blank.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of.contains_key(&c)
    }

    pub fn index_of(&self, c: char) -> Option<u32> {
        self.index_of.get(&c).copied()
    }

    pub fn char_at(&self, index: u32) -> Option<char> {
        if index == BLANK_INDEX {
            return None;
        }
        self.chars.get(index as usize - 1).copied()
    }

    pub fn encode(&self, label: &str) -> Result<Vec<u32>, DictError> {
        label
            .chars()
            .map(|c| self.index_of(c).ok_or(DictError::UnknownCharacter(c)))
            .collect()
    }

    pub fn decode(&self, indices: &[u32]) -> Result<String, DictError> {
        indices
            .iter()
            .map(|&i| self.char_at(i).ok_or(DictError::IndexOutOfRange(i)))
            .collect()
    }

    /// One character per line, LF terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.chars.len() * 4);
        for c in &self.chars {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DictError> {
        let mut chars = Vec::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(DictError::BadLine { line: i + 1 }),
            }
        }
        Self::from_chars(chars)
    }

    pub fn save(&self, path: &Path) -> Result<(), DictError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DictError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized dictionary.
    pub fn digest(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(self.to_text().as_bytes()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_indices_from_labels() {
        let d = CharDict::from_labels(["ab", "bc"]).unwrap();
        assert_eq!(d.chars(), &['a', 'b', 'c']);
        assert_eq!(d.index_of('a'), Some(1));
        assert_eq!(d.index_of('b'), Some(2));
        assert_eq!(d.index_of('c'), Some(3));
        assert_eq!(d.num_classes(), 4);
    }

    #[test]
    fn single_repeated_char() {
        let d = CharDict::from_labels(["aaa"]).unwrap();
        assert_eq!(d.chars(), &['a']);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(CharDict::from_labels([]), Err(DictError::EmptyManifest)));
        assert!(matches!(CharDict::from_labels([""]), Err(DictError::EmptyManifest)));
    }

    #[test]
    fn text_round_trip_and_line_rule() {
        let d = CharDict::from_labels(["漢字 x", "y"]).unwrap();
        let text = d.to_text();
        assert_eq!(CharDict::from_text(&text).unwrap(), d);
        assert!(matches!(CharDict::from_text("ab\n"), Err(DictError::BadLine { line: 1 })));
        assert!(matches!(CharDict::from_text("a\na\n"), Err(DictError::Duplicate('a'))));
    }

    #[test]
    fn blank_never_decodes() {
        let d = CharDict::from_labels(["ab"]).unwrap();
        assert_eq!(d.char_at(BLANK_INDEX), None);
        assert_eq!(d.decode(&[1, 2]).unwrap(), "ab");
        assert!(d.decode(&[3]).is_err());
        assert!(matches!(d.encode("az"), Err(DictError::UnknownCharacter('z'))));
    }

    #[test]
    fn order_independent() {
        let a = CharDict::from_labels(["xyz", "abc", "q"]).unwrap();
        let b = CharDict::from_labels(["q", "abc", "xyz"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
    }
}
