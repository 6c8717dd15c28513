//! End-to-end training over known-split grids: preprocess every image,
//! cluster all patches, then count class labels per cluster.

use rayon::prelude::*;

use crate::clustering::{
    assign, elbow_select, fit_kmeans_traced, Centroids, ElbowCurve, EpochStats, KMeansParams,
    PatchSet,
};
use crate::embedding::{
    mix_positional, saliency_weights, PositionalConfig, SaliencyScore, SaliencyWeights,
};
use crate::error::{Error, Result};
use crate::inference::TrainedModel;
use crate::semantics::{build_semantic_matrix, ImageAssignment, NormalizationMode, SemanticMatrix};
use crate::store::{check_uniform_dim, ClassHierarchy, LabeledGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub k: usize,
    pub kmeans: KMeansParams,
    pub positional_weight: f32,
    pub saliency_train: bool,
    pub saliency_eval: bool,
    pub saliency_score: SaliencyScore,
    pub normalization: NormalizationMode,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            k: 800,
            kmeans: KMeansParams::default(),
            positional_weight: 0.0,
            saliency_train: false,
            saliency_eval: false,
            saliency_score: SaliencyScore::Absolute,
            normalization: NormalizationMode::PerCluster,
        }
    }
}

/// Preprocessed training patches and their labels.
#[derive(Debug, Clone)]
pub struct PreparedPatches {
    pub patches: PatchSet,
    pub positional: PositionalConfig,
    pub class_ids: Vec<u32>,
    pub weights: Vec<Option<SaliencyWeights>>,
}

/// Applies positional mixing to every known image and gathers the patches.
/// Saliency weights come from the raw features.
pub fn prepare_patches(
    known: &[LabeledGrid],
    positional_weight: f32,
    saliency: Option<SaliencyScore>,
) -> Result<PreparedPatches> {
    let dim = check_uniform_dim(known.iter().map(|g| &g.grid))?
        .ok_or_else(|| Error::Validation("no known images to train on".into()))?;
    let positional = PositionalConfig::new(positional_weight, dim)?;
    let mixed = known
        .par_iter()
        .map(|g| mix_positional(&g.grid, &positional))
        .collect::<Result<Vec<_>>>()?;
    let patches = PatchSet::from_grids(&mixed)?;
    Ok(PreparedPatches {
        patches,
        positional,
        class_ids: known.iter().map(|g| g.class_id).collect(),
        weights: known
            .iter()
            .map(|g| saliency.map(|s| saliency_weights(&g.grid, s)))
            .collect(),
    })
}

pub fn fit_clusters(
    prepared: &PreparedPatches,
    k: usize,
    params: &KMeansParams,
    on_epoch: impl FnMut(&EpochStats<'_>),
) -> Result<Centroids> {
    fit_kmeans_traced(&prepared.patches, k, params, on_epoch)
}

pub fn select_k(
    prepared: &PreparedPatches,
    k_grid: &[usize],
    params: &KMeansParams,
) -> Result<(ElbowCurve, usize)> {
    elbow_select(&prepared.patches, k_grid, params)
}

/// Assigns every prepared patch to its nearest center and builds the
/// confidence matrix.
pub fn learn_semantics(
    prepared: &PreparedPatches,
    centroids: &Centroids,
    class_count: usize,
    mode: NormalizationMode,
) -> Result<SemanticMatrix> {
    let labels = assign(prepared.patches.data(), centroids)?;
    let images: Vec<ImageAssignment> = (0..prepared.patches.num_images())
        .map(|i| ImageAssignment {
            clusters: labels[prepared.patches.image_range(i)].to_vec(),
            class_id: prepared.class_ids[i],
            weights: prepared.weights[i].clone(),
        })
        .collect();
    build_semantic_matrix(&images, centroids.k(), class_count, mode)
}

pub fn train_model(
    known: &[LabeledGrid],
    hierarchy: &ClassHierarchy,
    params: &TrainParams,
    on_epoch: impl FnMut(&EpochStats<'_>),
) -> Result<TrainedModel> {
    let saliency = params.saliency_train.then_some(params.saliency_score);
    let prepared = prepare_patches(known, params.positional_weight, saliency)?;
    let centroids = fit_clusters(&prepared, params.k, &params.kmeans, on_epoch)?;
    let semantics = learn_semantics(
        &prepared,
        &centroids,
        hierarchy.class_count(),
        params.normalization,
    )?;
    TrainedModel::new(
        centroids,
        semantics,
        prepared.positional,
        params.saliency_train,
        params.saliency_eval,
        params.saliency_score,
        hierarchy.clone(),
    )
}
