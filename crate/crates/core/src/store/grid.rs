//! Patch feature grids and the `APFT` binary file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "APFT"
//! version      u16      = 1
//! grid_rows    u16
//! grid_cols    u16
//! feature_dim  u32
//! payload      grid_rows * grid_cols * feature_dim f32, patch-major then channel
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"APFT";
pub const FEATURE_VERSION: u16 = 1;
/// Size of the fixed `APFT` header in bytes.
pub const FEATURE_HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4;

/// One image's patch appearance matrix together with its grid geometry.
///
/// Row `m` of the matrix is the patch at `(m / grid_cols, m % grid_cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    image_id: String,
    grid_rows: usize,
    grid_cols: usize,
    feature_dim: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(
        image_id: impl Into<String>,
        grid_rows: usize,
        grid_cols: usize,
        feature_dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if grid_rows == 0 || grid_cols == 0 || feature_dim == 0 {
            return Err(Error::Validation(format!(
                "grid {image_id}: geometry {grid_rows}x{grid_cols}x{feature_dim} must be positive"
            )));
        }
        let expected = grid_rows * grid_cols * feature_dim;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "grid {image_id}: expected {expected} values for {grid_rows}x{grid_cols}x{feature_dim}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "grid {image_id}: non-finite value at patch {} channel {}",
                pos / feature_dim,
                pos % feature_dim
            )));
        }
        Ok(Self {
            image_id,
            grid_rows,
            grid_cols,
            feature_dim,
            data,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn with_image_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Flat row-major patch matrix.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, m: usize) -> &[f32] {
        &self.data[m * self.feature_dim..(m + 1) * self.feature_dim]
    }

    pub fn patches(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.feature_dim)
    }

    /// `(row, col)` of patch `m`.
    pub fn position(&self, m: usize) -> (usize, usize) {
        (m / self.grid_cols, m % self.grid_cols)
    }

    /// Replaces the patch matrix, keeping geometry. Used by preprocessing
    /// stages that map features to features.
    pub(crate) fn map_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            image_id: self.image_id.clone(),
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            feature_dim: self.feature_dim,
            data,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rows = u16::try_from(self.grid_rows)
            .map_err(|_| Error::Validation(format!("grid_rows {} exceeds u16", self.grid_rows)))?;
        let cols = u16::try_from(self.grid_cols)
            .map_err(|_| Error::Validation(format!("grid_cols {} exceeds u16", self.grid_cols)))?;
        let dim = u32::try_from(self.feature_dim).map_err(|_| {
            Error::Validation(format!("feature_dim {} exceeds u32", self.feature_dim))
        })?;
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses an `APFT` buffer. `path` is only used for error context.
    pub fn from_bytes(bytes: &[u8], image_id: impl Into<String>, path: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let corrupt = |reason: String| Error::Corruption {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
            return Err(format("missing APFT magic".into()));
        }
        if bytes.len() < FEATURE_HEADER_LEN {
            return Err(corrupt(format!(
                "header truncated at {} bytes",
                bytes.len()
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FEATURE_VERSION {
            return Err(format(format!(
                "unsupported version {version} (expected {FEATURE_VERSION})"
            )));
        }
        let rows = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let cols = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let dim = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
        let payload = &bytes[FEATURE_HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dim))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("header dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(corrupt(format!(
                "header declares {rows}x{cols} patches of dim {dim} ({expected} payload bytes) but payload holds {} bytes",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureGrid::new(image_id, rows, cols, dim, data).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Reads an `APFT` file. The grid's image id defaults to the file stem.
pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureGrid::from_bytes(&bytes, image_id, path)
}

pub fn write_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = grid.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enumerated() -> FeatureGrid {
        FeatureGrid::new("g", 2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn enumeration_payload_reads_back_by_patch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.apft");
        write_feature_grid(&enumerated(), &path).unwrap();
        let grid = read_feature_grid(&path).unwrap();
        assert_eq!(grid.patch(0), &[0.0, 1.0, 2.0]);
        assert_eq!(grid.patch(3), &[9.0, 10.0, 11.0]);
        assert_eq!(grid.image_id(), "g");
    }

    #[test]
    fn short_payload_is_corruption() {
        let grid = FeatureGrid::new("x", 14, 14, 2, vec![0.5; 14 * 14 * 2]).unwrap();
        let mut bytes = grid.to_bytes().unwrap();
        // drop the last patch row
        bytes.truncate(bytes.len() - 2 * 4);
        let err = FeatureGrid::from_bytes(&bytes, "x", Path::new("x.apft")).unwrap_err();
        assert!(matches!(err, Error::Corruption { .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let mut bytes = enumerated().to_bytes().unwrap();
        bytes[0] = b'X';
        let err = FeatureGrid::from_bytes(&bytes, "g", Path::new("g")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));

        let mut bytes = enumerated().to_bytes().unwrap();
        bytes[4] = 2;
        let err = FeatureGrid::from_bytes(&bytes, "g", Path::new("g")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = enumerated().to_bytes().unwrap();
        let off = FEATURE_HEADER_LEN + 5 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = FeatureGrid::from_bytes(&bytes, "g", Path::new("g")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn zero_patch_grid_is_rejected() {
        assert!(matches!(
            FeatureGrid::new("z", 0, 14, 768, vec![]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn paper_geometry_file_size() {
        let grid = FeatureGrid::new("vit", 14, 14, 768, vec![0.25; 14 * 14 * 768]).unwrap();
        // 14 * 14 * 768 * 4 payload bytes + 14 header bytes
        assert_eq!(grid.to_bytes().unwrap().len(), 602_112 + 14);
    }

    #[test]
    fn non_square_geometry_is_accepted() {
        let grid = FeatureGrid::new("r", 2, 5, 1, (0..10).map(|v| v as f32).collect()).unwrap();
        assert_eq!(grid.position(7), (1, 2));
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_identity(
            rows in 1usize..6,
            cols in 1usize..6,
            dim in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..rows * cols * dim)
                .map(|_| rng.random_range(-1.0e6f32..1.0e6))
                .collect();
            let grid = FeatureGrid::new("p", rows, cols, dim, data).unwrap();
            let back = FeatureGrid::from_bytes(&grid.to_bytes().unwrap(), "p", Path::new("p")).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            grid.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, grid);
        }
    }
}
