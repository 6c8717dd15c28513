//! Class-agnostic clustering of patch vectors: mini-batch K-means, exact
//! nearest-centroid assignment and elbow-based selection of K.

mod elbow;
mod kmeans;

use rayon::prelude::*;

pub use elbow::{elbow_select, knee_index, ElbowCurve};
pub use kmeans::{fit_kmeans, fit_kmeans_traced, kmeans_plus_plus, EpochStats, KMeansParams};

use crate::error::{Error, Result};
use crate::store::FeatureGrid;

/// Squared Euclidean distance, accumulated in `f64` in index order.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Patch vectors gathered from many images, stored contiguously. Image
/// boundaries are kept because mini-batches sample whole images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchSet {
    dim: usize,
    data: Vec<f32>,
    /// Patch offset of each image; the last entry is the total patch count.
    image_offsets: Vec<usize>,
}

impl PatchSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            image_offsets: vec![0],
        }
    }

    pub fn from_grids<'a>(grids: impl IntoIterator<Item = &'a FeatureGrid>) -> Result<Self> {
        let mut set: Option<PatchSet> = None;
        for g in grids {
            let set = set.get_or_insert_with(|| PatchSet::new(g.feature_dim()));
            set.push_image(g.data())?;
        }
        set.ok_or_else(|| Error::Validation("no patches to cluster".into()))
    }

    /// Appends one image's patches (flat row-major, `dim` values per patch).
    pub fn push_image(&mut self, patches: &[f32]) -> Result<()> {
        if self.dim == 0 || !patches.len().is_multiple_of(self.dim) {
            return Err(Error::Validation(format!(
                "image patch buffer of {} values is not a multiple of dim {}",
                patches.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(patches);
        self.image_offsets.push(self.data.len() / self.dim);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_images(&self) -> usize {
        self.image_offsets.len() - 1
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn image_range(&self, image: usize) -> std::ops::Range<usize> {
        self.image_offsets[image]..self.image_offsets[image + 1]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Fitted cluster centers. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    k: usize,
    dim: usize,
    centers: Vec<f32>,
    training_sse: f64,
    iterations_run: usize,
}

impl Centroids {
    pub fn new(
        k: usize,
        dim: usize,
        centers: Vec<f32>,
        training_sse: f64,
        iterations_run: usize,
    ) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "centroids need k >= 1 and dim >= 1, got k={k} dim={dim}"
            )));
        }
        if centers.len() != k * dim {
            return Err(Error::Validation(format!(
                "expected {} center values for k={k} dim={dim}, got {}",
                k * dim,
                centers.len()
            )));
        }
        if let Some(pos) = centers.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "center {} has a non-finite component",
                pos / dim
            )));
        }
        if training_sse.is_nan() || training_sse < 0.0 {
            return Err(Error::Validation(format!(
                "training SSE must be non-negative, got {training_sse}"
            )));
        }
        Ok(Self {
            k,
            dim,
            centers,
            training_sse,
            iterations_run,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    pub fn center(&self, k: usize) -> &[f32] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn training_sse(&self) -> f64 {
        self.training_sse
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    /// Index of the closest center and its squared distance. Ties go to the
    /// lowest index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        nearest_center(&self.centers, self.dim, x)
    }
}

pub(crate) fn nearest_center(centers: &[f32], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.chunks_exact(dim).enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Nearest-center index for every row of a flat `(m, dim)` patch matrix.
pub fn assign(patches: &[f32], centroids: &Centroids) -> Result<Vec<usize>> {
    let dim = centroids.dim();
    if !patches.len().is_multiple_of(dim) {
        return Err(Error::Validation(format!(
            "patch matrix of {} values does not have rows of dim {dim}",
            patches.len()
        )));
    }
    Ok(patches
        .par_chunks(dim)
        .map(|p| centroids.nearest(p).0)
        .collect())
}

/// Full-dataset sum of squared distances to the nearest center.
pub fn sse(patches: &PatchSet, centroids: &Centroids) -> f64 {
    let mins: Vec<f64> = patches
        .data()
        .par_chunks(patches.dim())
        .map(|p| centroids.nearest(p).1)
        .collect();
    mins.iter().sum()
}
