use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::TrainedModel;
use crate::error::{Error, Result};
use crate::store::{read_feature_grid, ManifestEntry};

pub const ASSIGNMENT_CSV_HEADER: &str =
    "image_id,patch_row,patch_col,cluster_id,class_id,superclass_id";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes one CSV row per patch with its cluster and labels, in manifest
/// order. Returns the number of data rows written.
pub fn export_assignments<'a>(
    entries: impl IntoIterator<Item = &'a ManifestEntry>,
    model: &TrainedModel,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let entries: Vec<&ManifestEntry> = entries.into_iter().collect();
    let blocks = entries
        .par_iter()
        .map(|e| {
            let grid = read_feature_grid(&e.feature_path)?.with_image_id(e.image_id.clone());
            let clusters = model.assign_grid(&grid)?;
            let superclass = model.hierarchy().superclass_of(e.class_id);
            let id = csv_field(&e.image_id);
            let mut block = String::new();
            for (m, k) in clusters.iter().enumerate() {
                let (row, col) = grid.position(m);
                block.push_str(&format!(
                    "{id},{row},{col},{k},{},{superclass}\n",
                    e.class_id
                ));
            }
            Ok((block, clusters.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut rows = 0;
    let write_err = |e| Error::io(path, e);
    writeln!(w, "{ASSIGNMENT_CSV_HEADER}").map_err(write_err)?;
    for (block, n) in blocks {
        w.write_all(block.as_bytes()).map_err(write_err)?;
        rows += n;
    }
    w.flush().map_err(write_err)?;
    Ok(rows)
}
