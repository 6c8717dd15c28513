use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{predict, TrainedModel};
use crate::error::{Error, Result};
use crate::store::{read_feature_grid, ClassHierarchy, DatasetManifest, LabeledGrid, Split};

/// Superclass ids ordered by descending score; equal scores keep the lower
/// id first.
pub fn rank_superclasses(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|a, b| scores[*b as usize].total_cmp(&scores[*a as usize]));
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperclassStats {
    pub images: usize,
    /// Hits for each entry of [`EvalReport::ks`].
    pub top_k_hits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFailure {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    /// Top-1 accuracy per true superclass (0 for superclasses with no images).
    pub per_superclass_accuracy: Vec<f64>,
    pub per_superclass: Vec<SuperclassStats>,
    /// Rows are true superclasses, columns the top-1 prediction.
    pub confusion: Vec<Vec<usize>>,
    pub n_images: usize,
    /// Images that could not be scored; they are excluded from every metric.
    pub failures: Vec<ImageFailure>,
}

impl EvalReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k_accuracy.get(&k).copied()
    }

    pub fn to_text(&self, hierarchy: &ClassHierarchy) -> String {
        let name_w = hierarchy
            .superclass_names()
            .iter()
            .map(|n| n.len())
            .chain(std::iter::once("superclass".len()))
            .max()
            .unwrap_or(10);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$} {:>7}", "superclass", "images");
        for k in &self.ks {
            let _ = write!(out, " {:>8}", format!("top{k}"));
        }
        out.push('\n');
        for (s, stats) in self.per_superclass.iter().enumerate() {
            let _ = write!(
                out,
                "{:<name_w$} {:>7}",
                hierarchy.superclass_name(s as u32),
                stats.images
            );
            for hits in &stats.top_k_hits {
                let _ = write!(out, " {:>8}", percent(*hits, stats.images));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<name_w$} {:>7}", "all", self.n_images);
        for k in &self.ks {
            let _ = write!(out, " {:>7.2}%", self.top_k_accuracy[k] * 100.0);
        }
        out.push('\n');
        if !self.failures.is_empty() {
            let _ = writeln!(out, "{} image(s) failed:", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(out, "  {}: {}", f.image_id, f.reason);
            }
        }
        out
    }

    /// One row per superclass plus an `all` row; columns `top{k}` hold
    /// accuracies in `[0, 1]`.
    pub fn to_csv(&self, hierarchy: &ClassHierarchy) -> String {
        let mut out = String::from("scope,images");
        for k in &self.ks {
            let _ = write!(out, ",top{k}");
        }
        out.push('\n');
        let _ = write!(out, "all,{}", self.n_images);
        for k in &self.ks {
            let _ = write!(out, ",{:.6}", self.top_k_accuracy[k]);
        }
        out.push('\n');
        for (s, stats) in self.per_superclass.iter().enumerate() {
            let _ = write!(
                out,
                "{},{}",
                hierarchy.superclass_name(s as u32),
                stats.images
            );
            for hits in &stats.top_k_hits {
                let _ = write!(out, ",{:.6}", ratio(*hits, stats.images));
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn percent(hits: usize, n: usize) -> String {
    if n == 0 {
        "-".into()
    } else {
        format!("{:.2}%", ratio(hits, n) * 100.0)
    }
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "top-k list must be non-empty, positive and strictly ascending, got {ks:?}"
        )));
    }
    Ok(())
}

/// Scores already-loaded grids. Per-image failures are collected, not fatal.
pub fn evaluate_grids(
    images: &[LabeledGrid],
    model: &TrainedModel,
    ks: &[usize],
) -> Result<EvalReport> {
    check_ks(ks)?;
    let outcomes: Vec<Result<(u32, Vec<u32>)>> = images
        .par_iter()
        .map(|img| {
            let truth = model.hierarchy().superclass_of(img.class_id);
            let pred = predict(&img.grid, model)?;
            Ok((truth, rank_superclasses(&pred.superclass_scores)))
        })
        .collect();
    let ids = images.iter().map(|i| i.grid.image_id().to_string());
    Ok(reduce(outcomes.into_iter().zip(ids), model, ks))
}

fn reduce(
    outcomes: impl Iterator<Item = (Result<(u32, Vec<u32>)>, String)>,
    model: &TrainedModel,
    ks: &[usize],
) -> EvalReport {
    let s_count = model.hierarchy().superclass_count();
    let mut per_superclass = vec![
        SuperclassStats {
            images: 0,
            top_k_hits: vec![0; ks.len()],
        };
        s_count
    ];
    let mut confusion = vec![vec![0usize; s_count]; s_count];
    let mut failures = Vec::new();
    let mut n_images = 0;
    for (outcome, image_id) in outcomes {
        let (truth, ranking) = match outcome {
            Ok(v) => v,
            Err(e) => {
                failures.push(ImageFailure {
                    image_id,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        n_images += 1;
        let rank = ranking
            .iter()
            .position(|s| *s == truth)
            .unwrap_or(usize::MAX);
        let stats = &mut per_superclass[truth as usize];
        stats.images += 1;
        for (hits, k) in stats.top_k_hits.iter_mut().zip(ks) {
            if rank < *k {
                *hits += 1;
            }
        }
        confusion[truth as usize][ranking[0] as usize] += 1;
    }
    let top_k_accuracy = ks
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let hits: usize = per_superclass.iter().map(|s| s.top_k_hits[i]).sum();
            (*k, ratio(hits, n_images))
        })
        .collect();
    let per_superclass_accuracy = per_superclass
        .iter()
        .map(|s| ratio(s.top_k_hits[0], s.images))
        .collect();
    EvalReport {
        ks: ks.to_vec(),
        top_k_accuracy,
        per_superclass_accuracy,
        per_superclass,
        confusion,
        n_images,
        failures,
    }
}

/// Evaluates one split of a manifest. Scoring the known split breaks the
/// open-world protocol and is refused unless `allow_known` is set.
pub fn evaluate(
    manifest: &DatasetManifest,
    split: Split,
    model: &TrainedModel,
    ks: &[usize],
    allow_known: bool,
) -> Result<EvalReport> {
    if split == Split::Known && !allow_known {
        return Err(Error::Protocol(
            "refusing to evaluate on the known split (classes seen during training)".into(),
        ));
    }
    check_ks(ks)?;
    let entries: Vec<_> = manifest.split(split).collect();
    let outcomes: Vec<Result<(u32, Vec<u32>)>> = entries
        .par_iter()
        .map(|e| {
            let grid = read_feature_grid(&e.feature_path)?.with_image_id(e.image_id.clone());
            let truth = model.hierarchy().superclass_of(e.class_id);
            let pred = predict(&grid, model)?;
            Ok((truth, rank_superclasses(&pred.superclass_scores)))
        })
        .collect();
    let ids = entries.iter().map(|e| e.image_id.clone());
    Ok(reduce(outcomes.into_iter().zip(ids), model, ks))
}
