use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest unreadable: {0}")]
    Unreadable(#[from] std::io::Error),
    #[error("manifest is not valid UTF-8")]
    NotUtf8,
}

/// One `image_path<TAB>label` line.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, label: impl Into<String>) -> Self {
        Self { path: path.into(), label: label.into() }
    }
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.path, self.label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    MalformedLine,
    EmptyLabel,
    MissingImage,
    CorruptImage,
    DuplicatePath,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::MalformedLine => "MALFORMED_LINE",
            RejectReason::EmptyLabel => "EMPTY_LABEL",
            RejectReason::MissingImage => "MISSING_IMAGE",
            RejectReason::CorruptImage => "CORRUPT_IMAGE",
            RejectReason::DuplicatePath => "DUPLICATE_PATH",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based manifest line.
    pub line: usize,
    pub content: String,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.line, self.reason.code(), self.content.escape_default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CleanedManifest {
    pub kept: Vec<ManifestEntry>,
    pub rejected: Vec<Rejection>,
}

/// Parses manifest text. Lines that are not exactly `path<TAB>label` come
/// back as `Err` with their line number so the cleaner can report them.
pub fn parse_manifest(text: &str) -> Vec<(usize, Result<ManifestEntry, String>)> {
    text.split_terminator('\n')
        .enumerate()
        .map(|(i, raw)| {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let mut parts = line.split('\t');
            let parsed = match (parts.next(), parts.next(), parts.next()) {
                (Some(path), Some(label), None) if !path.is_empty() => {
                    Ok(ManifestEntry::new(path, label))
                }
                _ => Err(line.to_string()),
            };
            (i + 1, parsed)
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<String, ManifestError> {
    let bytes = std::fs::read(path)?;
    String::from_utf8(bytes).map_err(|_| ManifestError::NotUtf8)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Drops malformed lines, unlabeled samples, duplicate paths and entries
/// whose image is missing or fails to decode.
pub fn clean_manifest(text: &str, image_root: &Path) -> CleanedManifest {
    let mut out = CleanedManifest::default();
    let mut seen = HashSet::new();
    for (line, parsed) in parse_manifest(text) {
        let entry = match parsed {
            Ok(e) => e,
            Err(content) => {
                out.rejected.push(Rejection { line, content, reason: RejectReason::MalformedLine });
                continue;
            }
        };
        let reason = if entry.label.trim().is_empty() {
            Some(RejectReason::EmptyLabel)
        } else if seen.contains(&entry.path) {
            Some(RejectReason::DuplicatePath)
        } else {
            check_image(&image_root.join(&entry.path))
        };
        match reason {
            Some(reason) => out.rejected.push(Rejection { line, content: entry.to_string(), reason }),
            None => {
                seen.insert(entry.path.clone());
                out.kept.push(entry);
            }
        }
    }
    out
}

pub fn clean_manifest_file(manifest: &Path, image_root: &Path) -> Result<CleanedManifest, ManifestError> {
    Ok(clean_manifest(&read_manifest(manifest)?, image_root))
}

fn check_image(path: &Path) -> Option<RejectReason> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(_) => return Some(RejectReason::MissingImage),
    };
    match image::load_from_memory(&bytes) {
        Ok(img) if img.width() > 0 && img.height() > 0 => None,
        _ => Some(RejectReason::CorruptImage),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rejects_wrong_tab_count() {
        let parsed = parse_manifest("a.png\tab\nb.png\nc.png\tx\ty\n\tlabel\n");
        assert!(parsed[0].1.is_ok());
        assert!(parsed[1].1.is_err());
        assert!(parsed[2].1.is_err());
        assert!(parsed[3].1.is_err());
    }

    #[test]
    fn crlf_is_tolerated() {
        let parsed = parse_manifest("a.png\tab\r\n");
        assert_eq!(parsed[0].1.as_ref().unwrap().label, "ab");
    }
}
