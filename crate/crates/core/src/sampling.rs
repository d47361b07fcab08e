//! Triplet construction and the triplet margin loss.
//!
//! Positives are uniform draws from an anchor's aggregation neighbors.
//! Negatives are drawn with distance-weighted sampling: on the unit sphere
//! in `n` dimensions, pairwise distances of random points follow
//! `q(d) ∝ d^(n-2) (1 - d²/4)^((n-3)/2)`, and a candidate at distance `d`
//! is drawn with probability proportional to `min(λ, 1/q(d))`, which
//! spreads negatives evenly over distances instead of concentrating them
//! near `sqrt(2)`.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::graph::ArtistGraph;

/// Distances are clipped to `[DISTANCE_CLIP, 2 - DISTANCE_CLIP]`.
pub const DISTANCE_CLIP: f64 = 0.01;
/// The weight cap `λ` is this multiple of the median candidate weight.
pub const WEIGHT_CAP_RATIO: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Uniform draw from the anchor's kept neighbors; `None` for isolated
/// anchors.
pub fn sample_positive<R: Rng + ?Sized>(graph: &ArtistGraph, anchor: usize, rng: &mut R) -> Option<usize> {
    graph.kept_neighbors(anchor).choose(rng).map(|&(v, _)| v)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `[d(a, p) - d(a, n) + margin]+` with Euclidean distance. Inputs are
/// expected to be l2-normalized already.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (euclidean(anchor, positive) - euclidean(anchor, negative) + margin).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceWeightedSampler {
    pub dim: usize,
    pub distance_clip: f64,
    pub cap_ratio: f64,
}

impl DistanceWeightedSampler {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            distance_clip: DISTANCE_CLIP,
            cap_ratio: WEIGHT_CAP_RATIO,
        }
    }

    /// `-ln q(d)` up to an additive constant, with `d` clipped.
    pub fn log_inverse_density(&self, distance: f64) -> f64 {
        let d = distance.clamp(self.distance_clip, 2.0 - self.distance_clip);
        let n = self.dim as f64;
        -((n - 2.0) * d.ln() + 0.5 * (n - 3.0) * (1.0 - 0.25 * d * d).ln())
    }

    /// Selection probabilities for candidates at the given distances.
    ///
    /// Weights are capped at `cap_ratio` times the median weight (for an
    /// even count, the geometric mean of the two middle weights).
    pub fn probabilities(&self, distances: &[f64]) -> Vec<f64> {
        if distances.is_empty() {
            return Vec::new();
        }
        let mut logs: Vec<f64> = distances
            .iter()
            .map(|&d| self.log_inverse_density(d))
            .collect();
        let mut sorted = logs.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let cap = median + self.cap_ratio.ln();
        for l in &mut logs {
            *l = l.min(cap);
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Index of the chosen candidate; `None` when there are none.
    pub fn sample_by_distance<R: Rng + ?Sized>(&self, distances: &[f64], rng: &mut R) -> Option<usize> {
        let probs = self.probabilities(distances);
        if probs.is_empty() {
            return None;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Some(i);
            }
        }
        Some(probs.len() - 1)
    }

    /// Picks one of `candidates` (normalized embeddings, already filtered
    /// to eligible negatives) for `anchor`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        anchor: &[f64],
        candidates: &[&[f64]],
        rng: &mut R,
    ) -> Option<usize> {
        let distances: Vec<f64> = candidates.iter().map(|c| euclidean(anchor, c)).collect();
        self.sample_by_distance(&distances, rng)
    }
}
