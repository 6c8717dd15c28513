//! Per-cluster semantic confidence vectors learned from known-split patch
//! assignments.
//!
//! `counts[g][k]` is the (optionally saliency-weighted) number of class-`g`
//! patches that fell into cluster `k`. In per-cluster mode each column is
//! divided by its total `Q^k`, turning it into a class histogram; in
//! dataset-wide mode every entry is divided by the grand total.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;

use crate::embedding::SaliencyWeights;
use crate::error::{Error, Result};
use crate::store::ClassHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationMode {
    #[default]
    PerCluster,
    DatasetWide,
}

impl NormalizationMode {
    pub fn as_u8(self) -> u8 {
        match self {
            NormalizationMode::PerCluster => 0,
            NormalizationMode::DatasetWide => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(NormalizationMode::PerCluster),
            1 => Some(NormalizationMode::DatasetWide),
            _ => None,
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::PerCluster => "per_cluster",
            NormalizationMode::DatasetWide => "dataset_wide",
        })
    }
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_cluster" => Ok(NormalizationMode::PerCluster),
            "dataset_wide" => Ok(NormalizationMode::DatasetWide),
            other => Err(Error::Config(format!(
                "normalization must be per_cluster or dataset_wide, got {other:?}"
            ))),
        }
    }
}

/// Cluster index of every patch of one training image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAssignment {
    pub clusters: Vec<usize>,
    pub class_id: u32,
    pub weights: Option<SaliencyWeights>,
}

/// The `G x K` confidence matrix, stored row-major by class.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMatrix {
    class_count: usize,
    k: usize,
    mode: NormalizationMode,
    values: Vec<f32>,
    counts: Vec<f32>,
}

impl SemanticMatrix {
    /// Reassembles a matrix from stored parts.
    pub fn from_parts(
        class_count: usize,
        k: usize,
        mode: NormalizationMode,
        values: Vec<f32>,
        counts: Vec<f32>,
    ) -> Result<Self> {
        let n = class_count * k;
        if class_count == 0 || k == 0 || values.len() != n || counts.len() != n {
            return Err(Error::Validation(format!(
                "semantic matrix {class_count}x{k} has {} values and {} counts",
                values.len(),
                counts.len()
            )));
        }
        if values
            .iter()
            .chain(&counts)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Validation(
                "semantic matrix entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            class_count,
            k,
            mode,
            values,
            counts,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn counts(&self) -> &[f32] {
        &self.counts
    }

    pub fn value(&self, class_id: usize, cluster: usize) -> f32 {
        self.values[class_id * self.k + cluster]
    }

    pub fn count(&self, class_id: usize, cluster: usize) -> f32 {
        self.counts[class_id * self.k + cluster]
    }

    pub fn column(&self, cluster: usize) -> Vec<f32> {
        (0..self.class_count)
            .map(|g| self.value(g, cluster))
            .collect()
    }

    /// `Q^k`: the (weighted) number of patches in each cluster.
    pub fn patch_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0f64; self.k];
        for row in self.counts.chunks_exact(self.k) {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += *c as f64;
            }
        }
        totals
    }

    /// Clusters that received no training patches; their column is zero.
    pub fn empty_clusters(&self) -> Vec<usize> {
        self.patch_totals()
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

pub fn build_semantic_matrix(
    images: &[ImageAssignment],
    k: usize,
    class_count: usize,
    mode: NormalizationMode,
) -> Result<SemanticMatrix> {
    if k == 0 || class_count == 0 {
        return Err(Error::Validation(format!(
            "semantic matrix needs k >= 1 and at least one class (k={k}, G={class_count})"
        )));
    }
    let mut counts = vec![0.0f64; class_count * k];
    for (idx, img) in images.iter().enumerate() {
        let g = img.class_id as usize;
        if g >= class_count {
            return Err(Error::Validation(format!(
                "image {idx}: class {g} out of range for {class_count} classes"
            )));
        }
        if let Some(w) = &img.weights {
            if w.per_patch.len() != img.clusters.len() {
                return Err(Error::Validation(format!(
                    "image {idx}: {} saliency weights for {} patches",
                    w.per_patch.len(),
                    img.clusters.len()
                )));
            }
        }
        for (m, &c) in img.clusters.iter().enumerate() {
            if c >= k {
                return Err(Error::Validation(format!(
                    "image {idx}: cluster {c} out of range for k={k}"
                )));
            }
            let w = img.weights.as_ref().map_or(1.0, |w| w.per_patch[m]);
            counts[g * k + c] += w;
        }
    }

    let mut values = vec![0.0f64; class_count * k];
    match mode {
        NormalizationMode::PerCluster => {
            let mut totals = vec![0.0f64; k];
            for row in counts.chunks_exact(k) {
                for (t, c) in totals.iter_mut().zip(row) {
                    *t += c;
                }
            }
            if totals.iter().all(|t| *t == 0.0) {
                return Err(Error::EmptyTraining);
            }
            for (row_v, row_c) in values.chunks_exact_mut(k).zip(counts.chunks_exact(k)) {
                for ((v, c), t) in row_v.iter_mut().zip(row_c).zip(&totals) {
                    if *t > 0.0 {
                        *v = c / t;
                    }
                }
            }
            let empty = totals.iter().filter(|t| **t == 0.0).count();
            if empty > 0 {
                warn!("{empty} of {k} clusters received no training patches; their confidence columns are zero");
            }
        }
        NormalizationMode::DatasetWide => {
            let total: f64 = counts.iter().sum();
            if total == 0.0 {
                return Err(Error::EmptyTraining);
            }
            for (v, c) in values.iter_mut().zip(&counts) {
                *v = c / total;
            }
        }
    }
    SemanticMatrix::from_parts(
        class_count,
        k,
        mode,
        values.into_iter().map(|v| v as f32).collect(),
        counts.into_iter().map(|v| v as f32).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPurity {
    pub cluster: usize,
    pub patch_count: f64,
    pub dominant_class: Option<u32>,
    pub dominant_superclass: Option<u32>,
    /// Shannon entropy of the cluster's class distribution, in nats.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurityReport {
    pub clusters: Vec<ClusterPurity>,
}

impl PurityReport {
    pub fn to_csv(&self, hierarchy: &ClassHierarchy) -> String {
        let mut out =
            String::from("cluster,patch_count,dominant_class,dominant_superclass,entropy\n");
        for c in &self.clusters {
            let class = c
                .dominant_class
                .map(|g| hierarchy.class_name(g).to_string())
                .unwrap_or_default();
            let sup = c
                .dominant_superclass
                .map(|s| hierarchy.superclass_name(s).to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                c.cluster, c.patch_count, class, sup, c.entropy
            );
        }
        out
    }
}

/// Per-cluster dominant class, dominant superclass and class entropy,
/// purest clusters first. Empty clusters come last.
pub fn cluster_purity_report(matrix: &SemanticMatrix, hierarchy: &ClassHierarchy) -> PurityReport {
    let totals = matrix.patch_totals();
    let mut clusters: Vec<ClusterPurity> = (0..matrix.k())
        .map(|k| {
            let total = totals[k];
            if total == 0.0 {
                return ClusterPurity {
                    cluster: k,
                    patch_count: 0.0,
                    dominant_class: None,
                    dominant_superclass: None,
                    entropy: 0.0,
                };
            }
            let probs: Vec<f64> = (0..matrix.class_count())
                .map(|g| matrix.count(g, k) as f64 / total)
                .collect();
            let entropy = -probs
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>();
            let mut super_mass = vec![0.0f64; hierarchy.superclass_count()];
            for (g, p) in probs.iter().enumerate() {
                super_mass[hierarchy.superclass_of(g as u32) as usize] += p;
            }
            ClusterPurity {
                cluster: k,
                patch_count: total,
                dominant_class: Some(argmax(&probs) as u32),
                dominant_superclass: Some(argmax(&super_mass) as u32),
                entropy: entropy.max(0.0),
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        (a.patch_count == 0.0)
            .cmp(&(b.patch_count == 0.0))
            .then(a.entropy.total_cmp(&b.entropy))
            .then(a.cluster.cmp(&b.cluster))
    });
    PurityReport { clusters }
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
