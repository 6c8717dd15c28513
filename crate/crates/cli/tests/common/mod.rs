#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owr_core::inference::TrainedModel;
use owr_core::store::{FeatureGrid, LabeledGrid};

pub fn owr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owr"))
        .args(args)
        .output()
        .expect("failed to launch owr")
}

pub fn owr_ok(args: &[&str]) -> Output {
    let out = owr(args);
    assert!(
        out.status.success(),
        "owr {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn run_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

/// Straightforward re-derivation of prediction from the model's stored
/// parameters: explicit loops, no shared code with the library.
pub struct OracleModel {
    pub k: usize,
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    /// values[g][k]
    pub values: Vec<Vec<f64>>,
    pub superclass_of: Vec<usize>,
    pub superclasses: usize,
    pub weight: f64,
    pub saliency: Option<bool>,
}

impl OracleModel {
    pub fn from_model(m: &TrainedModel) -> Self {
        let k = m.k();
        let dim = m.dim();
        let centers = (0..k)
            .map(|c| m.centroids().center(c).iter().map(|&v| v as f64).collect())
            .collect();
        let g_count = m.hierarchy().class_count();
        let values = (0..g_count)
            .map(|g| (0..k).map(|c| m.semantics().value(g, c) as f64).collect())
            .collect();
        let superclass_of = (0..g_count)
            .map(|g| m.hierarchy().superclass_of(g as u32) as usize)
            .collect();
        let signed = m.saliency_score() == owr_core::embedding::SaliencyScore::Signed;
        Self {
            k,
            dim,
            centers,
            values,
            superclass_of,
            superclasses: m.hierarchy().superclass_count(),
            weight: m.positional().weight() as f64,
            saliency: m.saliency_eval().then_some(signed),
        }
    }
}

fn oracle_position(row: usize, col: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for (offset, pos) in [(0, row as f64), (half, col as f64)] {
        for j in 0..half {
            let freq = 10000f64.powf(-2.0 * (j / 2) as f64 / half as f64);
            v[offset + j] = if j % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            };
        }
    }
    v
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

pub struct OraclePrediction {
    pub class_scores: Vec<f64>,
    pub superclass_scores: Vec<f64>,
    pub ranking: Vec<usize>,
}

pub fn oracle_predict(grid: &FeatureGrid, m: &OracleModel) -> Option<OraclePrediction> {
    let n = grid.num_patches();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|p| grid.patch(p).iter().map(|&v| v as f64).collect())
        .collect();
    let weights: Vec<f64> = match m.saliency {
        None => vec![1.0; n],
        Some(signed) => {
            let s: Vec<f64> = raw
                .iter()
                .map(|p| {
                    if signed {
                        p.iter().sum::<f64>().max(0.0)
                    } else {
                        p.iter().map(|x| x.abs()).sum()
                    }
                })
                .collect();
            let total: f64 = s.iter().sum();
            if total == 0.0 {
                vec![1.0; n]
            } else {
                s.iter().map(|x| x * n as f64 / total).collect()
            }
        }
    };
    let mut class_scores = vec![0.0; m.values.len()];
    for (p, feat) in raw.iter().enumerate() {
        let u = unit(feat);
        let (row, col) = (p / grid.grid_cols(), p % grid.grid_cols());
        let pos = unit(&oracle_position(row, col, m.dim));
        let mixed: Vec<f64> = (0..m.dim)
            .map(|i| ((1.0 - m.weight) * u[i] + m.weight * pos[i]) as f32 as f64)
            .collect();
        let mut best = (f64::INFINITY, 0);
        for (c, center) in m.centers.iter().enumerate() {
            let d: f64 = mixed
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        for (g, s) in class_scores.iter_mut().enumerate() {
            *s += weights[p] * m.values[g][best.1];
        }
    }
    let wsum: f64 = weights.iter().sum();
    if class_scores.iter().sum::<f64>() <= 0.0 {
        return None;
    }
    for s in &mut class_scores {
        *s /= wsum;
    }
    let mut sup = vec![0.0; m.superclasses];
    for (g, s) in class_scores.iter().enumerate() {
        sup[m.superclass_of[g]] += s;
    }
    let t: f64 = sup.iter().sum();
    for s in &mut sup {
        *s /= t;
    }
    let mut ranking: Vec<usize> = (0..m.superclasses).collect();
    ranking.sort_by(|&a, &b| sup[b].partial_cmp(&sup[a]).unwrap().then(a.cmp(&b)));
    Some(OraclePrediction {
        class_scores,
        superclass_scores: sup,
        ranking,
    })
}

/// Top-k accuracies over the images the oracle can score.
pub fn oracle_topk(images: &[LabeledGrid], m: &OracleModel, ks: &[usize]) -> (Vec<f64>, usize) {
    let mut hits = vec![0usize; ks.len()];
    let mut n = 0;
    for img in images {
        let Some(pred) = oracle_predict(&img.grid, m) else {
            continue;
        };
        n += 1;
        let truth = m.superclass_of[img.class_id as usize];
        let rank = pred.ranking.iter().position(|&s| s == truth).unwrap();
        for (i, &k) in ks.iter().enumerate() {
            if rank < k {
                hits[i] += 1;
            }
        }
    }
    let acc = hits
        .iter()
        .map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    (acc, n)
}

/// Parses an eval CSV into (scope, images, top-k accuracies).
pub fn parse_eval_csv(text: &str) -> Vec<(String, usize, Vec<f64>)> {
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            (
                f[0].to_string(),
                f[1].parse().unwrap(),
                f[2..].iter().map(|v| v.parse().unwrap()).collect(),
            )
        })
        .collect()
}
