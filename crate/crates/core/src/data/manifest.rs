use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::packed::read_packed_file;
use super::{DataError, LabeledVideo};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: f64,
}

/// Parses `video_id,relative_path,label` lines; blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, DataError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| DataError::Manifest {
            line: lineno + 1,
            message: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, path, label] = fields[..] else {
            return Err(bad("expected video_id,relative_path,label"));
        };
        if id.is_empty() {
            return Err(bad("empty video id"));
        }
        let label: f64 = label.parse().map_err(|_| bad("label is not a number"))?;
        if !(0.0..=1.0).contains(&label) {
            return Err(bad("label outside [0, 1]"));
        }
        entries.push(ManifestEntry {
            id: id.to_string(),
            path: PathBuf::from(path),
            label,
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# video_id,relative_path,label\n");
    for e in entries {
        let _ = writeln!(out, "{},{},{}", e.id, e.path.display(), e.label);
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::at_path(path, e))?;
    parse_manifest(&text)
}

/// Loads every video named by a manifest, resolving paths against the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<LabeledVideo>, DataError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let video = read_packed_file(&base.join(&e.path), e.id)?;
            Ok(LabeledVideo {
                video,
                label: e.label,
            })
        })
        .collect()
}
