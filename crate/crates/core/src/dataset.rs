//! Directory ingestion for MIMII-style corpora:
//! `<root>/<machine_type>/<machine_id>/<normal|abnormal>/*.wav`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::Taxonomy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        }
    }
}

/// One WAV file found in the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEntry {
    pub path: PathBuf,
    /// Path relative to the scanned root, without extension.
    pub clip_id: String,
    pub machine_type: String,
    pub machine_id: String,
    pub label: Label,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.push((name.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_wav = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Walks the tree in sorted order and lists every clip. Directory names
/// become the labels; subdirectories other than `normal`/`abnormal` are an
/// error, stray files are ignored.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<ClipEntry>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut clips = Vec::new();
    for (type_name, type_dir) in sorted_subdirs(root)? {
        for (id_name, id_dir) in sorted_subdirs(&type_dir)? {
            for (cls_name, cls_dir) in sorted_subdirs(&id_dir)? {
                let label = match cls_name.as_str() {
                    "normal" => Label::Normal,
                    "abnormal" => Label::Anomaly,
                    other => {
                        return Err(Error::Dataset(format!(
                            "unexpected directory {other:?} under {} (want normal/abnormal)",
                            id_dir.display()
                        )))
                    }
                };
                for path in sorted_wavs(&cls_dir)? {
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("clip")
                        .to_string();
                    clips.push(ClipEntry {
                        clip_id: format!("{type_name}/{id_name}/{cls_name}/{stem}"),
                        path,
                        machine_type: type_name.clone(),
                        machine_id: id_name.clone(),
                        label,
                    });
                }
            }
        }
    }
    if clips.is_empty() {
        return Err(Error::Dataset(format!(
            "no WAV files under {}",
            root.display()
        )));
    }
    Ok(clips)
}

/// Taxonomy of every (type, id) pair that holds at least one clip.
pub fn build_taxonomy(root: impl AsRef<Path>) -> Result<Taxonomy> {
    let clips = scan_dataset(root)?;
    Taxonomy::from_pairs(
        clips
            .iter()
            .map(|c| (c.machine_type.clone(), c.machine_id.clone())),
    )
}
