//! On-disk dataset representation: `APFT` patch-feature files, the
//! tab-separated manifest and the class hierarchy config.

mod grid;
mod hierarchy;
mod manifest;
mod validate;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use grid::{
    read_feature_grid, write_feature_grid, FeatureGrid, FEATURE_HEADER_LEN, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use hierarchy::{ClassHierarchy, ClassInfo};
pub use manifest::{
    load_manifest, manifest_to_text, parse_manifest_records, read_manifest_records,
    DatasetManifest, ManifestEntry, Split,
};

pub use validate::{validate_dataset, ValidationIssue, ValidationReport};

use crate::error::{Error, Result};

/// File names of a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const HIERARCHY_FILE: &str = "hierarchy.tsv";

/// A grid paired with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGrid {
    pub grid: FeatureGrid,
    pub class_id: u32,
}

/// A dataset directory holding `manifest.tsv`, `hierarchy.tsv` and the
/// feature files the manifest points to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub hierarchy: ClassHierarchy,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let hierarchy = ClassHierarchy::load(root.join(HIERARCHY_FILE))?;
        let manifest = load_manifest(root.join(MANIFEST_FILE), &hierarchy)?;
        Ok(Self {
            root,
            hierarchy,
            manifest,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledGrid>> {
        load_grids(self.manifest.split(split))
    }
}

/// Reads the feature grids of `entries` concurrently, preserving order.
/// All grids must share one feature dimension.
pub fn load_grids<'a>(
    entries: impl Iterator<Item = &'a ManifestEntry>,
) -> Result<Vec<LabeledGrid>> {
    let entries: Vec<&ManifestEntry> = entries.collect();
    let grids = entries
        .par_iter()
        .map(|e| {
            Ok(LabeledGrid {
                grid: read_feature_grid(&e.feature_path)?.with_image_id(e.image_id.clone()),
                class_id: e.class_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_uniform_dim(grids.iter().map(|g| &g.grid))?;
    Ok(grids)
}

pub fn check_uniform_dim<'a>(
    grids: impl IntoIterator<Item = &'a FeatureGrid>,
) -> Result<Option<usize>> {
    let mut dim = None;
    for g in grids {
        match dim {
            None => dim = Some((g.feature_dim(), g.image_id().to_string())),
            Some((d, ref first)) if d != g.feature_dim() => {
                return Err(Error::Validation(format!(
                    "feature dimension mismatch: {first} has {d}, {} has {}",
                    g.image_id(),
                    g.feature_dim()
                )))
            }
            _ => {}
        }
    }
    Ok(dim.map(|(d, _)| d))
}
