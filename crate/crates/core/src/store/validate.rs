use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    read_feature_grid, read_manifest_records, ClassHierarchy, Split, HIERARCHY_FILE, MANIFEST_FILE,
};
use crate::error::{Error, ErrorCategory};

#[derive(Debug)]
pub struct ValidationIssue {
    /// The file the issue is about, when it concerns one feature file.
    pub file: Option<PathBuf>,
    pub error: Error,
}

/// Everything wrong with a dataset directory, in a stable order: hierarchy
/// and manifest problems first, then feature files in manifest order.
#[derive(Debug, Default)]
pub struct ValidationReport {
    pub files_checked: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    /// The category that should decide the outcome: protocol violations
    /// outrank data errors, which outrank the rest.
    pub fn worst_category(&self) -> Option<ErrorCategory> {
        let cats: Vec<ErrorCategory> = self.issues.iter().map(|i| i.error.category()).collect();
        [
            ErrorCategory::Protocol,
            ErrorCategory::Data,
            ErrorCategory::Internal,
        ]
        .into_iter()
        .find(|c| cats.contains(c))
    }

    fn push(&mut self, error: Error) {
        self.issues.push(ValidationIssue { file: None, error });
    }
}

/// Runs every dataset check without stopping at the first failure.
pub fn validate_dataset(root: impl AsRef<Path>) -> ValidationReport {
    let root = root.as_ref();
    let mut report = ValidationReport::default();
    let hierarchy = ClassHierarchy::load(root.join(HIERARCHY_FILE))
        .map_err(|e| report.push(e))
        .ok();
    let records = match read_manifest_records(root.join(MANIFEST_FILE)) {
        Ok(r) => r,
        Err(e) => {
            report.push(e);
            return report;
        }
    };

    let mut ids = HashSet::new();
    let mut splits: BTreeMap<u32, BTreeSet<Split>> = BTreeMap::new();
    for r in &records {
        if !ids.insert(r.image_id.as_str()) {
            report.push(Error::Validation(format!(
                "duplicate image id {:?}",
                r.image_id
            )));
        }
        splits.entry(r.class_id).or_default().insert(r.split);
        if let Some(h) = &hierarchy {
            if !h.contains_class(r.class_id) {
                report.push(Error::Reference(format!(
                    "image {:?} has class {} which is not in the hierarchy",
                    r.image_id, r.class_id
                )));
            }
        }
    }
    for (&class_id, s) in &splits {
        if s.len() > 1 {
            let class_name = hierarchy
                .as_ref()
                .filter(|h| h.contains_class(class_id))
                .map(|h| h.class_name(class_id).to_string())
                .unwrap_or_else(|| "?".into());
            report.push(Error::SplitContamination {
                class_id,
                class_name,
            });
        }
    }
    if !records.iter().any(|r| r.split == Split::Known) {
        report.push(Error::Validation("known split is empty".into()));
    }

    let results: Vec<_> = records
        .par_iter()
        .map(|r| read_feature_grid(&r.feature_path).map(|g| g.feature_dim()))
        .collect();
    report.files_checked = records.len();
    let mut expected_dim = None;
    for (r, res) in records.iter().zip(results) {
        let error = match res {
            Ok(dim) => match expected_dim {
                None => {
                    expected_dim = Some(dim);
                    continue;
                }
                Some(d) if d != dim => Error::Validation(format!(
                    "feature dimension {dim} differs from {d} used by earlier files"
                )),
                Some(_) => continue,
            },
            Err(e) => e,
        };
        report.issues.push(ValidationIssue {
            file: Some(r.feature_path.clone()),
            error,
        });
    }
    report
}
