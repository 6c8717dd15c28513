use std::fmt::Write as _;

use log::warn;

use super::{fit_kmeans, KMeansParams, PatchSet};
use crate::error::{Error, Result};

/// Training SSE as a function of K.
#[derive(Debug, Clone, PartialEq)]
pub struct ElbowCurve {
    points: Vec<(usize, f64)>,
}

impl ElbowCurve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Validation(
                "elbow curve k values must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|(_, s)| s.is_nan() || *s < 0.0) {
            return Err(Error::Validation(
                "elbow curve SSE must be non-negative".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    /// Consecutive grid points `(k_prev, k_next)` where SSE rose by more
    /// than `1e-6 * sse[0]`, a sign that some fit did not converge.
    pub fn monotonicity_violations(&self) -> Vec<(usize, usize)> {
        let Some(&(_, first)) = self.points.first() else {
            return Vec::new();
        };
        let slack = 1e-6 * first;
        self.points
            .windows(2)
            .filter(|w| w[1].1 > w[0].1 + slack)
            .map(|w| (w[0].0, w[1].0))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,sse\n");
        for (k, sse) in &self.points {
            let _ = writeln!(out, "{k},{sse}");
        }
        out
    }
}

/// Index of the knee: the interior point farthest from the chord joining
/// the first and last points, with both axes min-max scaled to `[0, 1]`.
/// Near-equal distances resolve to the lowest k.
pub fn knee_index(curve: &ElbowCurve) -> Result<usize> {
    let pts = curve.points();
    if pts.len() < 3 {
        return Err(Error::Validation(format!(
            "elbow selection needs at least 3 grid points, got {}",
            pts.len()
        )));
    }
    let (k0, kn) = (pts[0].0 as f64, pts[pts.len() - 1].0 as f64);
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| {
            (lo.min(*s), hi.max(*s))
        });
    let span = hi - lo;
    let scaled: Vec<(f64, f64)> = pts
        .iter()
        .map(|(k, s)| {
            let x = (*k as f64 - k0) / (kn - k0);
            let y = if span > 0.0 { (s - lo) / span } else { 0.0 };
            (x, y)
        })
        .collect();
    let (ax, ay) = scaled[0];
    let (bx, by) = scaled[scaled.len() - 1];
    let (dx, dy) = (bx - ax, by - ay);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (1, f64::NEG_INFINITY);
    for (i, (x, y)) in scaled.iter().enumerate().take(scaled.len() - 1).skip(1) {
        let dist = ((x - ax) * dy - (y - ay) * dx).abs() / len;
        if dist > best.1 + 1e-12 {
            best = (i, dist);
        }
    }
    Ok(best.0)
}

/// Fits K-means at every grid point and picks K at the knee of the SSE
/// curve.
pub fn elbow_select(
    patches: &PatchSet,
    k_grid: &[usize],
    params: &KMeansParams,
) -> Result<(ElbowCurve, usize)> {
    if k_grid.len() < 3 {
        return Err(Error::Validation(format!(
            "elbow grid needs at least 3 values, got {}",
            k_grid.len()
        )));
    }
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(
            "elbow grid must be strictly ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let fit = fit_kmeans(patches, k, params).map_err(|e| Error::AtK {
            k,
            source: Box::new(e),
        })?;
        points.push((k, fit.training_sse()));
    }
    let curve = ElbowCurve::new(points)?;
    for (a, b) in curve.monotonicity_violations() {
        warn!("elbow curve SSE increases from k={a} to k={b}; fits may not have converged");
    }
    let knee = knee_index(&curve)?;
    Ok((curve.clone(), curve.points()[knee].0))
}
