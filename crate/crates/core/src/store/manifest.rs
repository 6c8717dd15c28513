use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::store::hierarchy::ClassHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Known,
    Unknown,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Known => "known",
            Split::Unknown => "unknown",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(Split::Known),
            "unknown" => Ok(Split::Unknown),
            other => Err(Error::Validation(format!(
                "split must be `known` or `unknown`, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub feature_path: PathBuf,
    pub class_id: u32,
    pub split: Split,
}

/// A validated dataset listing. The known and unknown splits never share a
/// class; there is no way to build a value that violates this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    class_count: usize,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, hierarchy: &ClassHierarchy) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image id {:?}",
                    e.image_id
                )));
            }
            if !hierarchy.contains_class(e.class_id) {
                return Err(Error::Reference(format!(
                    "image {:?} has class {} which is not in the hierarchy ({} classes)",
                    e.image_id,
                    e.class_id,
                    hierarchy.class_count()
                )));
            }
        }
        let known: BTreeSet<u32> = class_set(&entries, Split::Known);
        let unknown: BTreeSet<u32> = class_set(&entries, Split::Unknown);
        if let Some(&class_id) = known.intersection(&unknown).next() {
            return Err(Error::SplitContamination {
                class_id,
                class_name: hierarchy.class_name(class_id).to_string(),
            });
        }
        if known.is_empty() {
            return Err(Error::Validation(
                "known split is empty; training needs at least one known image".into(),
            ));
        }
        Ok(Self {
            entries,
            class_count: hierarchy.class_count(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn classes_in(&self, split: Split) -> BTreeSet<u32> {
        class_set(&self.entries, split)
    }
}

fn class_set(entries: &[ManifestEntry], split: Split) -> BTreeSet<u32> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| e.class_id)
        .collect()
}

/// Parses manifest lines without cross-record validation. Feature paths are
/// returned exactly as written.
pub fn parse_manifest_records(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let class_id = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad class id {:?}", fields[2])))?;
        let split = fields[3]
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        out.push(ManifestEntry {
            image_id: fields[0].to_string(),
            feature_path: PathBuf::from(fields[1]),
            class_id,
            split,
        });
    }
    Ok(out)
}

/// Reads the raw records of a manifest file, resolving feature paths
/// against the manifest's directory.
pub fn read_manifest_records(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut records = parse_manifest_records(&text, path)?;
    for r in &mut records {
        if r.feature_path.is_relative() {
            r.feature_path = base.join(&r.feature_path);
        }
    }
    Ok(records)
}

pub fn load_manifest(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
) -> Result<DatasetManifest> {
    DatasetManifest::new(read_manifest_records(path)?, hierarchy)
}

/// Serializes records in manifest text form. Paths are written as given.
pub fn manifest_to_text(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# image_id\tfeature_path\tclass_id\tsplit\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            e.image_id,
            e.feature_path.display(),
            e.class_id,
            e.split
        );
    }
    out
}
