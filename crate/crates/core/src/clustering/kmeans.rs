//! Mini-batch K-means over whole-image batches.
//!
//! Every point carries a cluster label. An epoch shuffles the images, and for
//! each batch of `batch_size_images` images it relabels the batch points to
//! their nearest current center and then moves every center to the mean of
//! its members. At the end of the epoch a full pass relabels all points,
//! records the dataset SSE and rebuilds the member sums from scratch.
//!
//! Relabeling a point to its nearest center and moving a center to the mean
//! of its members both lower the labeled cost, so the full-dataset SSE is
//! non-increasing from one epoch boundary to the next. With one batch that
//! covers the whole dataset an epoch is exactly one Lloyd iteration.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{nearest_center, squared_distance, Centroids, PatchSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    /// Number of whole images per mini-batch.
    pub batch_size_images: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once no center moves further than this (L2) within an epoch.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            batch_size_images: 6000,
            max_iters: 100,
            seed: 0,
            tol: 1e-4,
        }
    }
}

/// Snapshot handed to the trace callback after every epoch. Epoch 0 is the
/// seeding.
#[derive(Debug)]
pub struct EpochStats<'a> {
    pub epoch: usize,
    pub sse: f64,
    pub max_shift: f64,
    pub centers: &'a [f32],
}

pub fn fit_kmeans(patches: &PatchSet, k: usize, params: &KMeansParams) -> Result<Centroids> {
    fit_kmeans_traced(patches, k, params, |_| {})
}

pub fn fit_kmeans_traced(
    patches: &PatchSet,
    k: usize,
    params: &KMeansParams,
    mut on_epoch: impl FnMut(&EpochStats<'_>),
) -> Result<Centroids> {
    if patches.is_empty() {
        return Err(Error::Validation("no patches to cluster".into()));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if params.batch_size_images == 0 {
        return Err(Error::Config("batch_size_images must be at least 1".into()));
    }
    if patches.len() < k {
        return Err(Error::Degenerate(format!(
            "{} patches cannot form {k} clusters",
            patches.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = kmeans_plus_plus(patches, k, &mut rng)?;
    let mut state = State::new(patches, k, centers);
    let mut sse = state.full_pass();
    on_epoch(&EpochStats {
        epoch: 0,
        sse,
        max_shift: 0.0,
        centers: &state.centers,
    });

    let mut images: Vec<usize> = (0..patches.num_images()).collect();
    let mut epochs = 0;
    while epochs < params.max_iters {
        epochs += 1;
        let previous = state.centers.clone();
        images.shuffle(&mut rng);
        for batch in images.chunks(params.batch_size_images) {
            let points: Vec<usize> = batch
                .iter()
                .flat_map(|&img| patches.image_range(img))
                .collect();
            state.batch_step(&points);
        }
        let next_sse = state.full_pass();
        if next_sse > sse * (1.0 + 1e-9) + 1e-12 {
            warn!("k-means SSE rose from {sse} to {next_sse} at epoch {epochs}");
        }
        sse = next_sse;
        let max_shift = previous
            .chunks_exact(patches.dim())
            .zip(state.centers.chunks_exact(patches.dim()))
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        debug!("k-means k={k} epoch {epochs}: sse={sse:.6} shift={max_shift:.3e}");
        on_epoch(&EpochStats {
            epoch: epochs,
            sse,
            max_shift,
            centers: &state.centers,
        });
        if max_shift < params.tol {
            break;
        }
    }
    Centroids::new(k, patches.dim(), state.centers, sse, epochs)
}

/// Greedy k-means++ seeding. The first center is uniform. For each next one,
/// `2 + ln k` candidates are drawn with probability proportional to their
/// squared distance from the closest chosen center, and the candidate that
/// leaves the smallest total squared distance is kept.
pub fn kmeans_plus_plus<R: Rng>(patches: &PatchSet, k: usize, rng: &mut R) -> Result<Vec<f32>> {
    let n = patches.len();
    let dim = patches.dim();
    if n == 0 {
        return Err(Error::Validation("no patches to cluster".into()));
    }
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(patches.point(first));
    let mut d2: Vec<f64> = patches
        .data()
        .par_chunks(dim)
        .map(|p| squared_distance(p, patches.point(first)))
        .collect();
    for chosen in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(format!(
                "only {chosen} distinct patch vectors, cannot seed {k} clusters"
            )));
        }
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let pick = sample_d2(&d2, rng.random::<f64>() * total);
            let c = patches.point(pick);
            let next: Vec<f64> = d2
                .par_iter()
                .zip(patches.data().par_chunks(dim))
                .map(|(d, p)| d.min(squared_distance(p, c)))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, next, pick));
            }
        }
        let (_, next, pick) = best.unwrap();
        d2 = next;
        centers.extend_from_slice(patches.point(pick));
    }
    Ok(centers)
}

fn sample_d2(d2: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    for (i, d) in d2.iter().enumerate() {
        acc += d;
        if acc > target && *d > 0.0 {
            return i;
        }
    }
    // Rounding can leave the target just past the final sum.
    d2.iter().rposition(|d| *d > 0.0).unwrap()
}

struct State<'a> {
    patches: &'a PatchSet,
    k: usize,
    dim: usize,
    centers: Vec<f32>,
    labels: Vec<usize>,
    /// Squared distance of each point to its labeled center at labeling time.
    dists: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl<'a> State<'a> {
    fn new(patches: &'a PatchSet, k: usize, centers: Vec<f32>) -> Self {
        let n = patches.len();
        Self {
            patches,
            k,
            dim: patches.dim(),
            centers,
            labels: vec![0; n],
            dists: vec![0.0; n],
            sums: vec![0.0; k * patches.dim()],
            counts: vec![0; k],
        }
    }

    /// Labels every point with its nearest center, reseeding empty clusters
    /// until none remain, and rebuilds the member sums. Returns the SSE.
    fn full_pass(&mut self) -> f64 {
        for _ in 0..=self.k {
            self.label_all();
            let empty: Vec<usize> = (0..self.k).filter(|&c| self.counts[c] == 0).collect();
            if empty.is_empty() {
                break;
            }
            let all: Vec<usize> = (0..self.patches.len()).collect();
            if !self.reseed(&empty, &all) {
                break;
            }
        }
        self.rebuild_sums();
        self.dists.iter().sum()
    }

    fn label_all(&mut self) {
        let (centers, dim) = (&self.centers, self.dim);
        let nearest: Vec<(usize, f64)> = self
            .patches
            .data()
            .par_chunks(dim)
            .map(|p| nearest_center(centers, dim, p))
            .collect();
        self.counts.iter_mut().for_each(|c| *c = 0);
        for (i, (label, d)) in nearest.into_iter().enumerate() {
            self.labels[i] = label;
            self.dists[i] = d;
            self.counts[label] += 1;
        }
    }

    fn rebuild_sums(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        for i in 0..self.patches.len() {
            let base = self.labels[i] * self.dim;
            for (s, v) in self.sums[base..base + self.dim]
                .iter_mut()
                .zip(self.patches.point(i))
            {
                *s += *v as f64;
            }
        }
    }

    fn batch_step(&mut self, points: &[usize]) {
        let (centers, dim, patches) = (&self.centers, self.dim, self.patches);
        let nearest: Vec<(usize, f64)> = points
            .par_iter()
            .map(|&i| nearest_center(centers, dim, patches.point(i)))
            .collect();
        for (&i, (label, d)) in points.iter().zip(nearest) {
            self.dists[i] = d;
            let old = self.labels[i];
            if old != label {
                self.move_point(i, old, label);
            }
        }
        let empty: Vec<usize> = (0..self.k).filter(|&c| self.counts[c] == 0).collect();
        if !empty.is_empty() {
            self.reseed(&empty, points);
        }
        self.update_centers();
    }

    fn move_point(&mut self, i: usize, from: usize, to: usize) {
        let p = self.patches.point(i);
        let dim = self.dim;
        for (s, v) in self.sums[from * dim..(from + 1) * dim].iter_mut().zip(p) {
            *s -= *v as f64;
        }
        for (s, v) in self.sums[to * dim..(to + 1) * dim].iter_mut().zip(p) {
            *s += *v as f64;
        }
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.labels[i] = to;
    }

    /// Moves each empty center onto the candidate point farthest from its
    /// own center. Only points whose cluster keeps another member qualify.
    /// Returns false if some empty cluster could not be filled.
    fn reseed(&mut self, empty: &[usize], candidates: &[usize]) -> bool {
        for &c in empty {
            let mut best: Option<(usize, f64)> = None;
            for &i in candidates {
                let d = self.dists[i];
                if self.counts[self.labels[i]] > 1 && d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            let Some((i, _)) = best else {
                warn!("could not reseed empty cluster {c}");
                return false;
            };
            let old = self.labels[i];
            self.move_point(i, old, c);
            self.dists[i] = 0.0;
            let p = self.patches.point(i);
            self.centers[c * self.dim..(c + 1) * self.dim].copy_from_slice(p);
        }
        true
    }

    fn update_centers(&mut self) {
        let dim = self.dim;
        for c in 0..self.k {
            let n = self.counts[c];
            if n == 0 {
                continue;
            }
            for (dst, s) in self.centers[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&self.sums[c * dim..(c + 1) * dim])
            {
                *dst = (*s / n as f64) as f32;
            }
        }
    }
}
