//! Weighted calibration-score samples, conformal quantiles, p-values, and
//! prediction regions.
//!
//! Every method in this crate reduces to the same primitive: a weighted
//! empirical distribution over calibration scores together with a point mass
//! `infinite_weight` at +∞ (the slot held by the test pair), whose
//! generalized-inverse quantile at level 1−α is the acceptance threshold for
//! candidate responses.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Miscoverage level α ∈ (0, 1); the target coverage is 1−α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    alpha: f64,
}

impl Level {
    /// Validates α ∈ (0, 1).
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid_config(
                "alpha",
                alloc::format!("must lie strictly between 0 and 1, got {alpha}"),
            ));
        }
        Ok(Level { alpha })
    }

    /// The miscoverage level α.
    #[must_use]
    pub fn alpha(self) -> f64 {
        self.alpha
    }

    /// The nominal coverage 1−α.
    #[must_use]
    pub fn coverage(self) -> f64 {
        1.0 - self.alpha
    }
}

/// Calibration scores with nonnegative weights plus a point mass at +∞.
///
/// The infinite atom carries the weight of the test pair, whose score is
/// unknown and bounded above by +∞; this is what makes the resulting
/// threshold distribution-free.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScoreSample {
    scores: Vec<f64>,
    weights: Vec<f64>,
    infinite_weight: f64,
}

impl WeightedScoreSample {
    /// Builds a sample, validating lengths, finiteness, and positivity of the
    /// total mass.
    pub fn new(scores: Vec<f64>, weights: Vec<f64>, infinite_weight: f64) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::invalid_config(
                "weights",
                alloc::format!(
                    "length {} does not match {} scores",
                    weights.len(),
                    scores.len()
                ),
            ));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid_config("scores", "scores must not be NaN"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid_config(
                "weights",
                "weights must be finite and nonnegative",
            ));
        }
        if !(infinite_weight >= 0.0) || !infinite_weight.is_finite() {
            return Err(Error::invalid_config(
                "infinite_weight",
                "must be finite and nonnegative",
            ));
        }
        let total: f64 = weights.iter().sum::<f64>() + infinite_weight;
        if !(total > 0.0) {
            return Err(Error::degenerate("total calibration mass is zero"));
        }
        Ok(WeightedScoreSample {
            scores,
            weights,
            infinite_weight,
        })
    }

    /// Uniform weights with a unit atom at +∞, the unweighted split-conformal
    /// configuration.
    pub fn uniform(scores: Vec<f64>) -> Result<Self> {
        let weights = alloc::vec![1.0; scores.len()];
        Self::new(scores, weights, 1.0)
    }

    /// Number of finite calibration atoms.
    #[must_use]
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// True when no finite atoms are present.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Total mass including the infinite atom.
    #[must_use]
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.infinite_weight
    }

    /// Mass of the +∞ atom.
    #[must_use]
    pub fn infinite_weight(&self) -> f64 {
        self.infinite_weight
    }

    /// The weighted conformal quantile
    /// inf{u : Σ_{i: sᵢ ≤ u} wᵢ ≥ (1−α)·(Σ wᵢ + infinite_weight)},
    /// or +∞ when the finite mass never reaches the target.
    ///
    /// Ties pool their mass: the cumulative weight at a score value includes
    /// every atom equal to it, so the result is the left-continuous
    /// generalized inverse of the weighted CDF.
    #[must_use]
    pub fn quantile(&self, level: Level) -> f64 {
        let total = self.total_weight();
        let target = level.coverage() * total;

        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_unstable_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));

        let mut cum = 0.0;
        let mut idx = 0;
        while idx < order.len() {
            let value = self.scores[order[idx]];
            // Pool the whole tie group before testing the threshold.
            let mut group = 0.0;
            while idx < order.len() && self.scores[order[idx]] == value {
                group += self.weights[order[idx]];
                idx += 1;
            }
            cum += group;
            if cum >= target {
                return value;
            }
        }
        f64::INFINITY
    }

    /// The conformal p-value for a hypothesised test score:
    /// Σᵢ wᵢ·1{test_score < sᵢ} / (Σᵢ wᵢ + infinite_weight).
    ///
    /// The indicator is strict, and the test pair's own contribution to the
    /// numerator is zero while its weight (the infinite atom) stays in the
    /// denominator. Rejecting when p̂ ≤ α matches exclusion from the
    /// prediction region at the weight-adjusted level
    /// α + infinite_weight/total, and implies exclusion at level α itself.
    #[must_use]
    pub fn p_value(&self, test_score: f64) -> f64 {
        let exceed: f64 = self
            .scores
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| test_score < **s)
            .map(|(_, w)| *w)
            .sum();
        exceed / self.total_weight()
    }

    /// Calibration scores.
    #[must_use]
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Finite-atom weights.
    #[must_use]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// How a region was produced: exact interval inversion or grid search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Closed-form inversion of a score that is monotone away from a center.
    Analytic,
    /// Score evaluated over an equally spaced response grid.
    Grid {
        /// Number of grid points used.
        resolution: usize,
    },
}

/// Minimum admissible grid resolution for region construction.
pub const MIN_GRID_RESOLUTION: usize = 8;

/// A prediction region: a sorted sequence of disjoint closed intervals,
/// possibly unbounded on either side. An empty sequence is the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRegion {
    intervals: Vec<(f64, f64)>,
    representation: Representation,
}

impl PredictionRegion {
    /// Builds an analytic region from closed intervals, validating order and
    /// disjointness.
    pub fn analytic(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &intervals {
            if a.is_nan() || b.is_nan() || a > b {
                return Err(Error::invalid_config(
                    "intervals",
                    alloc::format!("[{a}, {b}] is not a valid closed interval"),
                ));
            }
        }
        for pair in intervals.windows(2) {
            if pair[0].1 >= pair[1].0 {
                return Err(Error::invalid_config(
                    "intervals",
                    "intervals must be sorted and pairwise disjoint",
                ));
            }
        }
        Ok(PredictionRegion {
            intervals,
            representation: Representation::Analytic,
        })
    }

    /// The empty region.
    #[must_use]
    pub fn empty() -> Self {
        PredictionRegion {
            intervals: Vec::new(),
            representation: Representation::Analytic,
        }
    }

    /// Merges a grid acceptance mask into intervals. Runs of accepted
    /// neighbouring grid points become one closed interval spanning them.
    pub fn from_grid(points: &[f64], accepted: &[bool]) -> Result<Self> {
        if points.len() < MIN_GRID_RESOLUTION {
            return Err(Error::invalid_config(
                "resolution",
                alloc::format!(
                    "grid needs at least {MIN_GRID_RESOLUTION} points, got {}",
                    points.len()
                ),
            ));
        }
        if points.len() != accepted.len() {
            return Err(Error::invalid_config(
                "accepted",
                "mask length must match grid length",
            ));
        }
        let mut intervals = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..points.len() {
            if accepted[i] {
                if start.is_none() {
                    start = Some(i);
                }
            } else if let Some(s) = start.take() {
                intervals.push((points[s], points[i - 1]));
            }
        }
        if let Some(s) = start {
            intervals.push((points[s], points[points.len() - 1]));
        }
        Ok(PredictionRegion {
            intervals,
            representation: Representation::Grid {
                resolution: points.len(),
            },
        })
    }

    /// Membership test (closed intervals).
    #[must_use]
    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= y && y <= b)
    }

    /// Lebesgue measure of the region; +∞ if any interval is unbounded.
    #[must_use]
    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|&(a, b)| b - a).sum()
    }

    /// The intervals, sorted and disjoint.
    #[must_use]
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// True when the region is the empty set.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// How the region was computed.
    #[must_use]
    pub fn representation(&self) -> Representation {
        self.representation
    }
}

/// Equally spaced grid of `resolution` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, resolution: usize) -> Result<Vec<f64>> {
    if resolution < MIN_GRID_RESOLUTION {
        return Err(Error::invalid_config(
            "resolution",
            alloc::format!("must be at least {MIN_GRID_RESOLUTION}, got {resolution}"),
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid_config(
            "y_domain",
            alloc::format!("must be a finite nonempty interval, got [{lo}, {hi}]"),
        ));
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    Ok((0..resolution)
        .map(|i| {
            if i + 1 == resolution {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

/// Default response search domain: the calibration response range padded by
/// four interquartile ranges on each side.
pub fn default_y_domain(responses: &[f64]) -> Result<(f64, f64)> {
    if responses.is_empty() {
        return Err(Error::degenerate(
            "cannot derive a response domain from an empty calibration set".to_string(),
        ));
    }
    let mut sorted = responses.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        } else {
            sorted[i]
        }
    };
    let mut iqr = q(0.75) - q(0.25);
    if iqr <= 0.0 {
        // Degenerate spread: fall back to the full range or a unit pad.
        iqr = (hi - lo).max(1.0);
    }
    Ok((lo - 4.0 * iqr, hi + 4.0 * iqr))
}
