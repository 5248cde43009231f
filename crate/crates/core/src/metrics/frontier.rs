//! Divergence-frontier closeness between two corpora of feature vectors.
//!
//! Features from both corpora are quantized together with seeded k-means. The
//! two cluster histograms `P` (reference) and `Q` (generated) are mixed as
//! `R = w·P + (1 - w)·Q` over a grid of weights `w`, each weight giving the
//! point `(exp(-c·KL(Q‖R)), exp(-c·KL(P‖R)))`. The score is the area under the
//! resulting curve, anchored by the extreme points `(0, 1)` at `w = 1` and
//! `(1, 0)` at `w = 0`, so identical histograms score exactly 1.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TokenId;

pub const DEFAULT_SCALING_CONSTANT: f64 = 5.0;
pub const DEFAULT_GRID_SIZE: usize = 25;
pub const DEFAULT_KMEANS_ITERATIONS: usize = 100;
pub const FRONTIER_TRUNCATION: usize = 128;

/// First `min(len, limit)` tokens.
pub fn truncate_for_frontier(text: &[TokenId], limit: usize) -> &[TokenId] {
    &text[..text.len().min(limit)]
}

/// `grid_size` evenly spaced weights strictly inside (0, 1).
pub fn mixture_grid(grid_size: usize) -> Vec<f64> {
    (1..=grid_size)
        .map(|i| i as f64 / (grid_size + 1) as f64)
        .collect()
}

/// `KL(a ‖ b)` in nats; infinite when `a` puts mass where `b` has none.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| {
            if *y > 0.0 {
                x * (x / y).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Weight of the reference histogram in the mixture.
    pub weight: f64,
    /// `KL(Q ‖ R)`; `None` stands for infinity.
    pub q_divergence: Option<f64>,
    /// `KL(P ‖ R)`; `None` stands for infinity.
    pub p_divergence: Option<f64>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierScore {
    pub value: f64,
    pub num_bins: usize,
    pub scaling_constant: f64,
    pub curve: Vec<CurvePoint>,
}

/// Area under the divergence curve of two histograms over the given interior weights.
pub fn frontier_from_histograms(
    p: &[f64],
    q: &[f64],
    weights: &[f64],
    scaling_constant: f64,
) -> Result<FrontierScore> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidInput(format!(
            "histograms must be non-empty and of equal length ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    if !(scaling_constant > 0.0 && scaling_constant.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scaling constant must be positive, got {scaling_constant}"
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
        return Err(Error::InvalidInput(format!(
            "mixture weights must lie strictly inside (0, 1), got {w}"
        )));
    }
    let finite = |d: f64| d.is_finite().then_some(d);

    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut curve = Vec::with_capacity(sorted.len() + 2);
    curve.push(CurvePoint {
        weight: 1.0,
        q_divergence: None,
        p_divergence: Some(0.0),
        x: 0.0,
        y: 1.0,
    });
    for w in sorted {
        let r: Vec<f64> = p
            .iter()
            .zip(q)
            .map(|(pi, qi)| w * pi + (1.0 - w) * qi)
            .collect();
        let kq = kl_divergence(q, &r);
        let kp = kl_divergence(p, &r);
        curve.push(CurvePoint {
            weight: w,
            q_divergence: finite(kq),
            p_divergence: finite(kp),
            x: (-scaling_constant * kq).exp(),
            y: (-scaling_constant * kp).exp(),
        });
    }
    curve.push(CurvePoint {
        weight: 0.0,
        q_divergence: Some(0.0),
        p_divergence: None,
        x: 1.0,
        y: 0.0,
    });

    let mut by_x: Vec<(f64, f64)> = curve.iter().map(|c| (c.x, c.y)).collect();
    by_x.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let value = by_x
        .windows(2)
        .map(|s| (s[1].0 - s[0].0) * (s[0].1 + s[1].1) / 2.0)
        .sum();

    Ok(FrontierScore {
        value,
        num_bins: p.len(),
        scaling_constant,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierConfig {
    /// Cluster count; `None` picks one bin per ten samples (at least two).
    pub num_bins: Option<usize>,
    pub scaling_constant: f64,
    pub grid_size: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            num_bins: None,
            scaling_constant: DEFAULT_SCALING_CONSTANT,
            grid_size: DEFAULT_GRID_SIZE,
            kmeans_iterations: DEFAULT_KMEANS_ITERATIONS,
            seed: 0,
        }
    }
}

/// Quantizes both feature sets jointly and scores the resulting histograms.
/// `reference` plays the role of `P`, `generated` of `Q`.
pub fn frontier_score(
    reference: &[Vec<f64>],
    generated: &[Vec<f64>],
    config: &FrontierConfig,
) -> Result<FrontierScore> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::InvalidInput(
            "frontier score needs non-empty feature sets".into(),
        ));
    }
    let dim = reference[0].len();
    if reference.iter().chain(generated).any(|f| f.len() != dim) {
        return Err(Error::InvalidInput(
            "feature vectors must share one dimension".into(),
        ));
    }
    let points: Vec<&[f64]> = reference
        .iter()
        .chain(generated)
        .map(Vec::as_slice)
        .collect();
    let requested = config
        .num_bins
        .unwrap_or_else(|| (points.len() / 10).max(2));
    if requested == 0 {
        return Err(Error::InvalidInput("num_bins must be at least 1".into()));
    }

    let (centroids, assignment) = kmeans(&points, requested, config.kmeans_iterations, config.seed);
    let bins = centroids.len();
    let histogram = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        let mut h = vec![0.0; bins];
        for i in range {
            h[assignment[i]] += 1.0;
        }
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let p = histogram(0..reference.len());
    let q = histogram(reference.len()..points.len());
    frontier_from_histograms(
        &p,
        &q,
        &mixture_grid(config.grid_size),
        config.scaling_constant,
    )
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm seeded with `k` distinct sample points. When fewer than
/// `k` distinct points exist the cluster count is clamped with a warning.
/// Returns the centroids and each point's cluster.
pub fn kmeans(
    points: &[&[f64]],
    k: usize,
    max_iterations: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut seen = HashSet::new();
    let distinct: Vec<&[f64]> = points
        .iter()
        .copied()
        .filter(|p| seen.insert(p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>()))
        .collect();
    let k_eff = k.min(distinct.len());
    if k_eff < k {
        log::warn!(
            "requested {k} bins but only {} distinct feature vectors; using {k_eff}",
            distinct.len()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, distinct.len(), k_eff)
        .into_iter()
        .map(|i| distinct[i].to_vec())
        .collect();

    let dim = points[0].len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iterations {
        let mut sums = vec![vec![0.0; dim]; k_eff];
        let mut counts = vec![0usize; k_eff];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
        }
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if *n > 0 {
                *c = s.into_iter().map(|x| x / *n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    (centroids, assignment)
}
