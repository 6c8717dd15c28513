//! Patch feature preprocessing: 2-D sinusoidal positional mixing and
//! per-image saliency weights.

use crate::error::{Error, Result};
use crate::store::FeatureGrid;

/// Base period of the sinusoidal frequency ladder.
const POSITIONAL_BASE: f64 = 10_000.0;

/// How strongly the positional code is mixed into each patch feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalConfig {
    weight: f32,
    dim: usize,
}

impl PositionalConfig {
    pub fn new(weight: f32, dim: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Config(format!(
                "positional weight must lie in [0, 1], got {weight}"
            )));
        }
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "positional encoding needs an even, positive dimension, got {dim}"
            )));
        }
        Ok(Self { weight, dim })
    }

    pub fn weight(&self) -> f32 {
        self.weight
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Sinusoidal code for a patch position. The first `dim / 2` components
/// encode `row` and the last `dim / 2` encode `col`; within each half,
/// components alternate `sin`, `cos` over frequencies `base^(-2i / half)`.
pub fn positional_encode(
    row: usize,
    col: usize,
    grid_rows: usize,
    grid_cols: usize,
    dim: usize,
) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even, positive dimension, got {dim}"
        )));
    }
    if row >= grid_rows || col >= grid_cols {
        return Err(Error::Validation(format!(
            "position ({row}, {col}) outside a {grid_rows}x{grid_cols} grid"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    encode_axis(row as f64, half, &mut out);
    encode_axis(col as f64, half, &mut out);
    Ok(out)
}

fn encode_axis(pos: f64, half: usize, out: &mut Vec<f64>) {
    for j in 0..half {
        let pair = (j / 2) as f64;
        let freq = POSITIONAL_BASE.powf(-2.0 * pair / half as f64);
        let angle = pos * freq;
        out.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

/// L2-normalizes every patch feature. A zero patch cannot be normalized and
/// is reported as degenerate input.
pub fn normalize_rows(grid: &FeatureGrid) -> Result<FeatureGrid> {
    let mut out = Vec::with_capacity(grid.data().len());
    for (m, patch) in grid.patches().enumerate() {
        let inv = inverse_norm(grid, m, patch)?;
        out.extend(patch.iter().map(|&v| (v as f64 * inv) as f32));
    }
    Ok(grid.map_data(out))
}

fn inverse_norm(grid: &FeatureGrid, m: usize, patch: &[f32]) -> Result<f64> {
    let norm = patch
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        let (row, col) = grid.position(m);
        return Err(Error::Degenerate(format!(
            "image {}: patch ({row}, {col}) has a zero feature vector",
            grid.image_id()
        )));
    }
    Ok(1.0 / norm)
}

/// Convex mix of the L2-normalized feature and the L2-normalized positional
/// code: `(1 - w) * u + w * p` per patch.
///
/// With `w = 0` the output is exactly [`normalize_rows`]. The only
/// positional code with zero norm is the origin at `dim = 2`; it mixes in as
/// the zero vector.
pub fn mix_positional(grid: &FeatureGrid, cfg: &PositionalConfig) -> Result<FeatureGrid> {
    if cfg.dim != grid.feature_dim() {
        return Err(Error::Validation(format!(
            "positional dim {} does not match feature dim {}",
            cfg.dim,
            grid.feature_dim()
        )));
    }
    let w = cfg.weight as f64;
    let keep = 1.0 - w;
    let mut out = Vec::with_capacity(grid.data().len());
    for (m, patch) in grid.patches().enumerate() {
        let inv = inverse_norm(grid, m, patch)?;
        let (row, col) = grid.position(m);
        let mut pos = positional_encode(row, col, grid.grid_rows(), grid.grid_cols(), cfg.dim)?;
        let pos_norm = pos.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pos_norm > 0.0 {
            pos.iter_mut().for_each(|v| *v /= pos_norm);
        }
        out.extend(
            patch
                .iter()
                .zip(&pos)
                .map(|(&v, &p)| (keep * (v as f64 * inv) + w * p) as f32),
        );
    }
    Ok(grid.map_data(out))
}

/// Per-patch saliency score used before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaliencyScore {
    /// Sum of absolute channel values.
    #[default]
    Absolute,
    /// Signed channel sum, negative totals clamped to zero.
    Signed,
}

/// Per-patch weights with mean exactly 1 over the image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyWeights {
    pub per_patch: Vec<f64>,
}

impl SaliencyWeights {
    pub fn uniform(num_patches: usize) -> Self {
        Self {
            per_patch: vec![1.0; num_patches],
        }
    }

    pub fn total(&self) -> f64 {
        self.per_patch.iter().sum()
    }
}

pub fn saliency_weights(grid: &FeatureGrid, score: SaliencyScore) -> SaliencyWeights {
    let scores: Vec<f64> = grid
        .patches()
        .map(|p| match score {
            SaliencyScore::Absolute => p.iter().map(|v| (*v as f64).abs()).sum(),
            SaliencyScore::Signed => p.iter().map(|v| *v as f64).sum::<f64>().max(0.0),
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return SaliencyWeights::uniform(scores.len());
    }
    let scale = scores.len() as f64 / total;
    SaliencyWeights {
        per_patch: scores.into_iter().map(|s| s * scale).collect(),
    }
}
