//! Nearest-centroid inference: each patch of an unseen image looks up the
//! confidence column of its closest cluster, the columns are averaged into a
//! class distribution, and class mass is pooled into superclasses.

mod eval;
mod export;
mod model_io;

pub use eval::{
    evaluate, evaluate_grids, rank_superclasses, EvalReport, ImageFailure, SuperclassStats,
};
pub use export::{export_assignments, ASSIGNMENT_CSV_HEADER};
pub use model_io::{
    load_model, model_from_bytes, model_to_bytes, save_model, MODEL_HEADER_LEN, MODEL_MAGIC,
    MODEL_VERSION,
};

use crate::clustering::Centroids;
use crate::embedding::{mix_positional, saliency_weights, PositionalConfig, SaliencyScore};
use crate::error::{Error, Result};
use crate::semantics::SemanticMatrix;
use crate::store::{ClassHierarchy, FeatureGrid};

/// Everything needed to run inference, plus the preprocessing settings the
/// model was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    centroids: Centroids,
    semantics: SemanticMatrix,
    positional: PositionalConfig,
    saliency_train: bool,
    saliency_eval: bool,
    saliency_score: SaliencyScore,
    hierarchy: ClassHierarchy,
}

impl TrainedModel {
    pub const FORMAT_VERSION: u16 = MODEL_VERSION;

    pub fn new(
        centroids: Centroids,
        semantics: SemanticMatrix,
        positional: PositionalConfig,
        saliency_train: bool,
        saliency_eval: bool,
        saliency_score: SaliencyScore,
        hierarchy: ClassHierarchy,
    ) -> Result<Self> {
        if centroids.k() != semantics.k() {
            return Err(Error::Validation(format!(
                "centroids have k={} but semantic matrix has k={}",
                centroids.k(),
                semantics.k()
            )));
        }
        if semantics.class_count() != hierarchy.class_count() {
            return Err(Error::Validation(format!(
                "semantic matrix has {} classes but hierarchy has {}",
                semantics.class_count(),
                hierarchy.class_count()
            )));
        }
        if positional.dim() != centroids.dim() {
            return Err(Error::Validation(format!(
                "positional dim {} does not match centroid dim {}",
                positional.dim(),
                centroids.dim()
            )));
        }
        Ok(Self {
            centroids,
            semantics,
            positional,
            saliency_train,
            saliency_eval,
            saliency_score,
            hierarchy,
        })
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    pub fn semantics(&self) -> &SemanticMatrix {
        &self.semantics
    }

    pub fn positional(&self) -> &PositionalConfig {
        &self.positional
    }

    pub fn saliency_train(&self) -> bool {
        self.saliency_train
    }

    pub fn saliency_eval(&self) -> bool {
        self.saliency_eval
    }

    pub fn saliency_score(&self) -> SaliencyScore {
        self.saliency_score
    }

    pub fn hierarchy(&self) -> &ClassHierarchy {
        &self.hierarchy
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn k(&self) -> usize {
        self.centroids.k()
    }

    /// Positional mixing followed by nearest-center lookup for every patch.
    pub fn assign_grid(&self, grid: &FeatureGrid) -> Result<Vec<usize>> {
        self.check_dim(grid)?;
        let mixed = mix_positional(grid, &self.positional)?;
        Ok(mixed
            .patches()
            .map(|p| self.centroids.nearest(p).0)
            .collect())
    }

    fn check_dim(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.feature_dim() != self.dim() {
            return Err(Error::Validation(format!(
                "image {}: feature dim {} does not match model dim {}",
                grid.image_id(),
                grid.feature_dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPrediction {
    pub image_id: String,
    /// Mean confidence column over the image's patches.
    pub class_scores: Vec<f64>,
    /// Class scores pooled per superclass, renormalized to sum 1.
    pub superclass_scores: Vec<f64>,
}

/// Sums class scores into their superclasses. Total mass is conserved.
pub fn aggregate_superclasses(class_scores: &[f64], hierarchy: &ClassHierarchy) -> Vec<f64> {
    let mut out = vec![0.0; hierarchy.superclass_count()];
    for (g, s) in class_scores.iter().enumerate() {
        out[hierarchy.superclass_of(g as u32) as usize] += s;
    }
    out
}

pub fn predict(grid: &FeatureGrid, model: &TrainedModel) -> Result<SemanticPrediction> {
    let clusters = model.assign_grid(grid)?;
    let weights = model
        .saliency_eval
        .then(|| saliency_weights(grid, model.saliency_score).per_patch);
    let g_count = model.semantics.class_count();
    let mut class_scores = vec![0.0f64; g_count];
    let mut weight_total = 0.0f64;
    for (m, &k) in clusters.iter().enumerate() {
        let w = weights.as_ref().map_or(1.0, |w| w[m]);
        weight_total += w;
        for (g, s) in class_scores.iter_mut().enumerate() {
            *s += w * model.semantics.value(g, k) as f64;
        }
    }
    let mass: f64 = class_scores.iter().sum();
    if mass <= 0.0 || weight_total <= 0.0 {
        return Err(Error::UndefinedPrediction {
            image_id: grid.image_id().to_string(),
        });
    }
    class_scores.iter_mut().for_each(|s| *s /= weight_total);
    let mut superclass_scores = aggregate_superclasses(&class_scores, &model.hierarchy);
    let total: f64 = superclass_scores.iter().sum();
    superclass_scores.iter_mut().for_each(|s| *s /= total);
    Ok(SemanticPrediction {
        image_id: grid.image_id().to_string(),
        class_scores,
        superclass_scores,
    })
}
