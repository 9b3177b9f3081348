//! Conditional-coverage model selection over a pool of candidate methods.
//!
//! For each candidate, the calibration points receive coverage residuals
//! ζ_j = 1{s_j ≤ q} − (1−α) ∈ {α, α−1}. A localized empirical-likelihood
//! statistic then measures how far each point's kernel neighbourhood is from
//! mean-zero residuals: rows with systematic over- or under-coverage near
//! them force a large likelihood tilt and a large loss. Selecting the
//! candidate with the smallest loss targets conditional, not just marginal,
//! coverage.

use alloc::vec::Vec;

use rand::Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::calib::{default_y_domain, linspace, Level, PredictionRegion, WeightedScoreSample};
use crate::kernels::{bandwidth_for_target_neff, KernelFamily, KernelSpec};
use crate::methods::{
    build_prediction_region, CalibSet, PredictorSpec, ScoreSpec, WeightSpec,
};
use crate::{Error, Result};

/// Effective-sample-size targets used to pick the selection bandwidths.
pub const SELECTION_NEFF_TARGETS: [f64; 3] = [30.0, 40.0, 50.0];

/// Guaranteed bound on the per-row tilt residual |g_i(λ_i)| at returned
/// non-degenerate roots.
pub const EL_ROOT_TOL: f64 = 1e-12;

const EL_CLAMP: f64 = 1.0 - 1e-6;

/// Coverage residuals ζ_j = 1{s_j ≤ threshold} − (1−α).
#[must_use]
pub fn zeta_residual(scores: &[f64], threshold: f64, level: Level) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| {
            if s <= threshold {
                level.alpha()
            } else {
                level.alpha() - 1.0
            }
        })
        .collect()
}

/// One row of the localized EL statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElRow {
    /// The maximizing tilt λ_i.
    pub lambda: f64,
    /// The row's contribution to the total loss (≥ 0 up to root error).
    pub contribution: f64,
    /// |g_i(λ_i)| at the returned tilt.
    pub residual: f64,
    /// True when all neighbourhood mass sat on one residual sign, so the
    /// tilt was clamped at the feasibility boundary.
    pub degenerate: bool,
}

/// The localized EL loss: total and per-row detail.
#[derive(Debug, Clone, PartialEq)]
pub struct ElLoss {
    /// Σ_i contribution_i.
    pub total: f64,
    /// Per-row tilts and contributions.
    pub rows: Vec<ElRow>,
}

impl ElLoss {
    /// The largest root residual over non-degenerate rows (clamped rows have
    /// no root; their recorded residual is a boundary diagnostic).
    #[must_use]
    pub fn max_residual(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.degenerate)
            .map(|r| r.residual)
            .fold(0.0, f64::max)
    }

    /// Number of clamped rows.
    #[must_use]
    pub fn degenerate_count(&self) -> usize {
        self.rows.iter().filter(|r| r.degenerate).count()
    }
}

/// Row-normalized kernel weights a_ij = K(X_i, X_j) / Σ_ℓ K(X_i, X_ℓ),
/// self-weight included.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    n: usize,
    a: Vec<f64>,
}

impl NormalizedRows {
    /// Builds the normalized rows for one kernel over one covariate set.
    pub fn new(kernel: &KernelSpec, covariates: &[Vec<f64>]) -> Result<Self> {
        let n = covariates.len();
        if n == 0 {
            return Err(Error::degenerate("kernel rows need at least one point"));
        }
        let mut a = alloc::vec![0.0f64; n * n];
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let k = kernel.eval(&covariates[i], &covariates[j])?;
                a[i * n + j] = k;
                row_sum += k;
            }
            // The self-weight K(x, x) = 1 keeps every row sum positive.
            for j in 0..n {
                a[i * n + j] /= row_sum;
            }
        }
        Ok(NormalizedRows { n, a })
    }

    /// Number of rows.
    #[must_use]
    pub fn len(&self) -> usize {
        self.n
    }

    /// True when empty (unreachable after construction).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }
}

/// g_i(λ): the derivative of the row's EL objective in the tilt.
fn g_row(mass_pos: f64, mass_neg: f64, v_pos: f64, v_neg: f64, c: f64, lambda: f64) -> f64 {
    mass_pos * (v_pos / c) / (1.0 + lambda * v_pos / c)
        + mass_neg * (v_neg / c) / (1.0 + lambda * v_neg / c)
}

/// One solved row: the tilt, its barrier arguments 1 + λv/c for each
/// residual sign, the root residual, and the degenerate flag.
struct SolvedRow {
    lambda: f64,
    barrier_pos: f64,
    barrier_neg: f64,
    residual: f64,
    degenerate: bool,
}

/// Solves one row. With two residual values the root equation
/// A·p/(1+λp) + B·m/(1+λm) = 0 (p = v_pos/c, m = v_neg/c) is linear in λ,
/// and the barrier arguments at the root have the cancellation-free forms
/// 1+λp = A(p−m)/(−m(A+B)) and 1+λm = B(p−m)/(p(A+B)), so the root is
/// computed in closed form to full precision.
fn solve_row(mass_pos: f64, mass_neg: f64, v_pos: f64, v_neg: f64, c: f64) -> SolvedRow {
    let p = v_pos / c;
    let m = v_neg / c;
    if mass_pos <= 0.0 {
        // All residual mass negative: the objective increases toward the
        // lower feasibility boundary; clamp there and flag the row.
        let lambda = (-c / v_pos) * EL_CLAMP;
        return SolvedRow {
            lambda,
            barrier_pos: 1.0 + lambda * p,
            barrier_neg: 1.0 + lambda * m,
            residual: g_row(mass_pos, mass_neg, v_pos, v_neg, c, lambda).abs(),
            degenerate: true,
        };
    }
    if mass_neg <= 0.0 {
        let lambda = (-c / v_neg) * EL_CLAMP;
        return SolvedRow {
            lambda,
            barrier_pos: 1.0 + lambda * p,
            barrier_neg: 1.0 + lambda * m,
            residual: g_row(mass_pos, mass_neg, v_pos, v_neg, c, lambda).abs(),
            degenerate: true,
        };
    }
    let total = mass_pos + mass_neg;
    let barrier_pos = mass_pos * (p - m) / (-m * total);
    let barrier_neg = mass_neg * (p - m) / (p * total);
    let lambda = -(mass_pos * p + mass_neg * m) / (p * m * total);
    let residual = (mass_pos * p / barrier_pos + mass_neg * m / barrier_neg).abs();
    SolvedRow {
        lambda,
        barrier_pos,
        barrier_neg,
        residual,
        degenerate: false,
    }
}

fn row_contribution(mass_pos: f64, mass_neg: f64, solved: &SolvedRow) -> f64 {
    let mut value = 0.0;
    if mass_pos > 0.0 {
        value += mass_pos * solved.barrier_pos.ln();
    }
    if mass_neg > 0.0 {
        value += mass_neg * solved.barrier_neg.ln();
    }
    value
}

/// The loss given precomputed rows and residuals; `zetas` must take at most
/// two distinct values, one of each sign.
fn el_loss_for_rows(rows: &NormalizedRows, zetas: &[f64]) -> Result<ElLoss> {
    let n = zetas.len();
    if rows.len() != n {
        return Err(Error::invalid_config(
            "zetas",
            "residual vector length must match the kernel rows",
        ));
    }
    let mut v_pos = f64::NAN;
    let mut v_neg = f64::NAN;
    for &z in zetas {
        if z > 0.0 {
            if v_pos.is_nan() {
                v_pos = z;
            } else if z != v_pos {
                return Err(Error::invalid_config(
                    "zetas",
                    "residuals must take at most one positive value",
                ));
            }
        } else if z < 0.0 {
            if v_neg.is_nan() {
                v_neg = z;
            } else if z != v_neg {
                return Err(Error::invalid_config(
                    "zetas",
                    "residuals must take at most one negative value",
                ));
            }
        } else {
            return Err(Error::invalid_config("zetas", "residuals must be nonzero"));
        }
    }
    // Whole-sample degeneracy: every residual on one side. Fall back to the
    // nominal ±1 bounds for the missing side so the clamp stays finite.
    if v_pos.is_nan() {
        v_pos = 1.0;
    }
    if v_neg.is_nan() {
        v_neg = -1.0;
    }
    let c = (n + 1) as f64;
    let mut rows_out = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let row = rows.row(i);
        let mut mass_pos = 0.0;
        let mut mass_neg = 0.0;
        for (a, &z) in row.iter().zip(zetas) {
            if z > 0.0 {
                mass_pos += a;
            } else {
                mass_neg += a;
            }
        }
        let solved = solve_row(mass_pos, mass_neg, v_pos, v_neg, c);
        let contribution = row_contribution(mass_pos, mass_neg, &solved);
        total += contribution;
        rows_out.push(ElRow {
            lambda: solved.lambda,
            contribution,
            residual: solved.residual,
            degenerate: solved.degenerate,
        });
    }
    Ok(ElLoss {
        total,
        rows: rows_out,
    })
}

/// The localized EL loss of a residual vector over a covariate set.
pub fn localized_el_loss(
    covariates: &[Vec<f64>],
    zetas: &[f64],
    kernel: &KernelSpec,
) -> Result<ElLoss> {
    if covariates.len() != zetas.len() {
        return Err(Error::invalid_config(
            "zetas",
            "covariates and residuals must have equal length",
        ));
    }
    let rows = NormalizedRows::new(kernel, covariates)?;
    el_loss_for_rows(&rows, zetas)
}

/// How a candidate is chosen from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Smallest mean EL loss across the selection bandwidths.
    AvgLoss,
    /// Smallest mean midrank of the EL loss across the bandwidths.
    AvgRankLoss,
    /// Smallest mean region length over the calibration covariates.
    EffSize,
    /// Uniform random choice (baseline).
    Rand,
}

impl SelectionRule {
    /// Stable label.
    #[must_use]
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionRule::AvgLoss => "avg_loss",
            SelectionRule::AvgRankLoss => "avg_rank_loss",
            SelectionRule::EffSize => "eff_size",
            SelectionRule::Rand => "rand",
        }
    }
}

/// A shared calibration set plus the candidate methods under comparison.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    calib: CalibSet,
    candidates: Vec<PredictorSpec>,
}

impl CandidatePool {
    /// At least one candidate.
    pub fn new(calib: CalibSet, candidates: Vec<PredictorSpec>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid_config(
                "candidates",
                "the pool needs at least one candidate",
            ));
        }
        Ok(CandidatePool { calib, candidates })
    }

    /// The shared calibration set.
    #[must_use]
    pub fn calib(&self) -> &CalibSet {
        &self.calib
    }

    /// The candidates.
    #[must_use]
    pub fn candidates(&self) -> &[PredictorSpec] {
        &self.candidates
    }

    /// Number of candidates.
    #[must_use]
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// True when empty (unreachable after construction).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// What the selection saw and chose.
#[derive(Debug, Clone)]
pub struct SelectionReport {
    /// The rule applied.
    pub rule: SelectionRule,
    /// Index of the chosen candidate.
    pub chosen: usize,
    /// Matched bandwidths, one per effective-sample-size target (empty for
    /// rules that do not use the EL loss).
    pub bandwidths: Vec<f64>,
    /// EL losses, `losses[candidate][bandwidth]`.
    pub losses: Vec<Vec<f64>>,
    /// Mean EL loss per candidate.
    pub mean_losses: Vec<f64>,
    /// Mean region length per candidate (EffSize only).
    pub mean_lengths: Option<Vec<f64>>,
    /// Total clamped rows across candidates and bandwidths.
    pub degenerate_rows: usize,
    /// Largest per-row root residual seen.
    pub max_root_residual: f64,
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Midranks (1-based, ties averaged).
fn midranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn candidate_scores(pool: &CandidatePool) -> Result<Vec<Vec<f64>>> {
    pool.candidates
        .iter()
        .map(|spec| spec.calibration_scores(pool.calib()))
        .collect()
}

/// Runs the selection rule on the pool's calibration set.
pub fn select<R: Rng + ?Sized>(
    pool: &CandidatePool,
    level: Level,
    rule: SelectionRule,
    rng: &mut R,
) -> Result<SelectionReport> {
    let k = pool.len();
    let mut report = SelectionReport {
        rule,
        chosen: 0,
        bandwidths: Vec::new(),
        losses: alloc::vec![Vec::new(); k],
        mean_losses: Vec::new(),
        mean_lengths: None,
        degenerate_rows: 0,
        max_root_residual: 0.0,
    };
    match rule {
        SelectionRule::Rand => {
            report.chosen = rng.random_range(0..k);
            Ok(report)
        }
        SelectionRule::EffSize => {
            let mut lengths = Vec::with_capacity(k);
            for spec in pool.candidates() {
                let mut sum = 0.0;
                for x in pool.calib().covariates() {
                    let realized = spec.realize_weights(x, rng);
                    let region = build_prediction_region(
                        spec,
                        pool.calib(),
                        x,
                        level,
                        &realized,
                        None,
                        512,
                    )?;
                    sum += region.total_length();
                }
                lengths.push(sum / pool.calib().len() as f64);
            }
            report.chosen = argmin(&lengths);
            report.mean_lengths = Some(lengths);
            Ok(report)
        }
        SelectionRule::AvgLoss | SelectionRule::AvgRankLoss => {
            let n = pool.calib().len();
            let scores = candidate_scores(pool)?;
            let zetas: Vec<Vec<f64>> = scores
                .iter()
                .map(|s| {
                    let q = WeightedScoreSample::uniform(s.clone())?.quantile(level);
                    Ok(zeta_residual(s, q, level))
                })
                .collect::<Result<_>>()?;
            for &target in &SELECTION_NEFF_TARGETS {
                let target = target.min(n as f64);
                let h = bandwidth_for_target_neff(
                    KernelFamily::Gaussian,
                    target,
                    pool.calib().covariates(),
                )?;
                report.bandwidths.push(h);
                let kernel = KernelSpec::gaussian(h)?;
                let rows = NormalizedRows::new(&kernel, pool.calib().covariates())?;
                for (c, zeta) in zetas.iter().enumerate() {
                    let loss = el_loss_for_rows(&rows, zeta)?;
                    report.degenerate_rows += loss.degenerate_count();
                    report.max_root_residual = report.max_root_residual.max(loss.max_residual());
                    report.losses[c].push(loss.total);
                }
            }
            let b = report.bandwidths.len() as f64;
            report.mean_losses = report
                .losses
                .iter()
                .map(|row| row.iter().sum::<f64>() / b)
                .collect();
            report.chosen = if rule == SelectionRule::AvgLoss {
                argmin(&report.mean_losses)
            } else {
                let mut mean_ranks = alloc::vec![0.0f64; k];
                for b_idx in 0..report.bandwidths.len() {
                    let column: Vec<f64> =
                        report.losses.iter().map(|row| row[b_idx]).collect();
                    for (c, r) in midranks(&column).into_iter().enumerate() {
                        mean_ranks[c] += r;
                    }
                }
                for r in &mut mean_ranks {
                    *r /= b;
                }
                argmin(&mean_ranks)
            };
            Ok(report)
        }
    }
}

/// Selects once on the calibration set, then builds the chosen candidate's
/// region at the test covariate.
pub fn efficient_selected_region<R: Rng + ?Sized>(
    pool: &CandidatePool,
    x_test: &[f64],
    level: Level,
    rule: SelectionRule,
    rng: &mut R,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<(PredictionRegion, SelectionReport)> {
    let report = select(pool, level, rule, rng)?;
    let spec = &pool.candidates()[report.chosen];
    let realized = spec.realize_weights(x_test, rng);
    let region = build_prediction_region(
        spec,
        pool.calib(),
        x_test,
        level,
        &realized,
        y_domain,
        resolution,
    )?;
    Ok((region, report))
}

fn is_trial_free(spec: &PredictorSpec) -> bool {
    !matches!(
        spec.score(),
        ScoreSpec::LcpRank { .. }
            | ScoreSpec::CcCentered { .. }
            | ScoreSpec::BaseLcpDiagnostic { .. }
    )
}

/// The k-th smallest value (1-based) of `sorted` with `extra` inserted.
fn kth_of_augmented(sorted: &[f64], extra: f64, k: usize) -> f64 {
    let pos = sorted.partition_point(|&s| s <= extra);
    if k <= pos {
        sorted[k - 1]
    } else if k == pos + 1 {
        extra
    } else {
        sorted[k - 2]
    }
}

/// Exact-mode selected region: for every trial response the test pair joins
/// the residual vector and the localization weights, the rule is re-run, and
/// the trial is accepted by the re-chosen candidate's augmented threshold.
///
/// Requires uniform-weight candidates whose scores do not depend on the
/// calibration set. Rules that never look at the trial response (EffSize,
/// Rand) coincide with the efficient region and are delegated to it.
pub fn exact_selected_region<R: Rng + ?Sized>(
    pool: &CandidatePool,
    x_test: &[f64],
    level: Level,
    rule: SelectionRule,
    rng: &mut R,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<PredictionRegion> {
    if matches!(rule, SelectionRule::EffSize | SelectionRule::Rand) {
        return efficient_selected_region(pool, x_test, level, rule, rng, y_domain, resolution)
            .map(|(region, _)| region);
    }
    for spec in pool.candidates() {
        if !is_trial_free(spec) {
            return Err(Error::invalid_config(
                "candidates",
                "exact selection needs trial-free candidate scores",
            ));
        }
        if !matches!(spec.weight(), WeightSpec::Uniform) {
            return Err(Error::invalid_config(
                "candidates",
                "exact selection supports uniform-weight candidates only",
            ));
        }
    }
    let calib = pool.calib();
    let n = calib.len();
    let k = pool.len();
    let (lo, hi) = match y_domain {
        Some(pair) => pair,
        None => default_y_domain(calib.responses())?,
    };
    let grid = linspace(lo, hi, resolution)?;

    // Sorted calibration scores per candidate.
    let scores = candidate_scores(pool)?;
    let mut sorted_scores = scores.clone();
    for s in &mut sorted_scores {
        s.sort_unstable_by(f64::total_cmp);
    }

    // Augmented covariates: calibration plus the test point at index n.
    let mut aug: Vec<Vec<f64>> = calib.covariates().to_vec();
    aug.push(x_test.to_vec());

    // Per bandwidth: normalized rows over the augmented set, and per
    // candidate a prefix-mass table over the candidate's score order:
    // prefix[i][t] = Σ of a_i,j over the t calibration points with the
    // smallest scores. Residual masses for any threshold then cost O(1)
    // per row.
    let mut row_sets = Vec::with_capacity(SELECTION_NEFF_TARGETS.len());
    for &target in &SELECTION_NEFF_TARGETS {
        let target = target.min(n as f64);
        let h = bandwidth_for_target_neff(KernelFamily::Gaussian, target, calib.covariates())?;
        let kernel = KernelSpec::gaussian(h)?;
        row_sets.push(NormalizedRows::new(&kernel, &aug)?);
    }
    // Score order per candidate (indices of ascending calibration scores).
    let orders: Vec<Vec<usize>> = scores
        .iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_unstable_by(|&a, &b| s[a].total_cmp(&s[b]));
            idx
        })
        .collect();
    // prefix[bandwidth][candidate][row * (n+1) + t].
    let mut prefix = Vec::with_capacity(row_sets.len());
    for rows in &row_sets {
        let mut per_candidate = Vec::with_capacity(k);
        for order in &orders {
            let mut table = alloc::vec![0.0f64; (n + 1) * (n + 1)];
            for i in 0..=n {
                let row = rows.row(i);
                let base = i * (n + 1);
                let mut acc = 0.0;
                for (t, &j) in order.iter().enumerate() {
                    acc += row[j];
                    table[base + t + 1] = acc;
                }
            }
            per_candidate.push(table);
        }
        prefix.push(per_candidate);
    }

    let coverage = level.coverage();
    let alpha = level.alpha();
    let c_el = (n + 2) as f64;
    let tau = coverage * (n + 2) as f64;
    let k_order = tau.ceil() as usize;

    let mut accepted = Vec::with_capacity(grid.len());
    let mut test_scores = alloc::vec![0.0f64; k];
    let mut thresholds = alloc::vec![0.0f64; k];
    let mut losses = alloc::vec![alloc::vec![0.0f64; row_sets.len()]; k];
    for &y in &grid {
        for c in 0..k {
            let s_star = pool.candidates()[c].test_score(calib, x_test, y)?;
            test_scores[c] = s_star;
            thresholds[c] = if k_order <= n + 1 {
                kth_of_augmented(&sorted_scores[c], s_star, k_order)
            } else {
                f64::INFINITY
            };
        }
        for c in 0..k {
            let q = thresholds[c];
            // Number of calibration scores at or below the threshold.
            let t_cut = sorted_scores[c].partition_point(|&s| s <= q);
            let star_covered = test_scores[c] <= q;
            for (b, rows) in row_sets.iter().enumerate() {
                let table = &prefix[b][c];
                let mut total = 0.0;
                for i in 0..=n {
                    let base = i * (n + 1);
                    let star_mass = rows.row(i)[n];
                    let covered = table[base + t_cut]
                        + if star_covered { star_mass } else { 0.0 };
                    let uncovered = (table[base + n] - table[base + t_cut])
                        + if star_covered { 0.0 } else { star_mass };
                    let solved = solve_row(covered, uncovered, alpha, alpha - 1.0, c_el);
                    total += row_contribution(covered, uncovered, &solved);
                }
                losses[c][b] = total;
            }
        }
        let chosen = if rule == SelectionRule::AvgLoss {
            let means: Vec<f64> = losses
                .iter()
                .map(|row| row.iter().sum::<f64>() / row.len() as f64)
                .collect();
            argmin(&means)
        } else {
            let b_count = row_sets.len();
            let mut mean_ranks = alloc::vec![0.0f64; k];
            for b in 0..b_count {
                let column: Vec<f64> = losses.iter().map(|row| row[b]).collect();
                for (c, r) in midranks(&column).into_iter().enumerate() {
                    mean_ranks[c] += r;
                }
            }
            for r in &mut mean_ranks {
                *r /= b_count as f64;
            }
            argmin(&mean_ranks)
        };
        accepted.push(test_scores[chosen] <= thresholds[chosen]);
    }
    PredictionRegion::from_grid(&grid, &accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{
        fit_least_squares, fit_pinball_qr, BasisSpec, Feature, SolverConfig,
    };
    use crate::methods::{CalibrationMode, RatioFn, RealizedWeights};
    use crate::sim::{child_rng, Dgp};
    use alloc::vec;

    fn level(alpha: f64) -> Level {
        Level::new(alpha).unwrap()
    }

    #[test]
    fn two_point_problem_reproduces_the_closed_form_root() {
        // Two coincident covariates, residuals (α, α−1) with α = 0.1 and
        // equal weights 1/2: g(λ) = 0 at λ = −40/3 and each row contributes
        // (1/2)·ln(25/9).
        let covariates = vec![vec![0.0], vec![0.0]];
        let zetas = zeta_residual(&[0.0, 10.0], 0.5, level(0.1));
        assert_eq!(zetas, vec![0.1, -0.9]);
        let loss =
            localized_el_loss(&covariates, &zetas, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        for row in &loss.rows {
            assert!(
                (row.lambda - (-40.0 / 3.0)).abs() < 1e-8,
                "lambda {}",
                row.lambda
            );
            assert!(row.residual <= 1e-10);
            assert!(!row.degenerate);
        }
        let expected = (25.0f64 / 9.0).ln();
        assert!((loss.total - expected).abs() < 1e-9, "loss {}", loss.total);
    }

    #[test]
    fn balanced_row_has_zero_tilt_and_zero_contribution() {
        // α = 0.5 puts equal mass on ζ = ±0.5, so g(0) = 0 already.
        let covariates = vec![vec![0.0], vec![0.0]];
        let zetas = zeta_residual(&[0.0, 10.0], 0.5, level(0.5));
        let loss =
            localized_el_loss(&covariates, &zetas, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        for row in &loss.rows {
            assert!(row.lambda.abs() <= 1e-10);
            assert!(row.contribution.abs() <= 1e-12);
        }
    }

    #[test]
    fn row_objective_derivative_is_strictly_decreasing() {
        let (a, b, vp, vn, c) = (0.3, 0.7, 0.1, -0.9, 41.0);
        let lo = -c / vp;
        let hi = -c / vn;
        let mut prev = f64::INFINITY;
        for t in 1..=20 {
            let lambda = lo + (hi - lo) * t as f64 / 21.0;
            let g = g_row(a, b, vp, vn, c, lambda);
            assert!(g < prev, "g not decreasing at λ={lambda}");
            prev = g;
        }
    }

    #[test]
    fn loss_rows_are_nonnegative_and_degenerate_rows_are_flagged() {
        let mut rng = child_rng(3, 0);
        let dgp = Dgp::from_index(1, 2).unwrap();
        let (xs, _) = dgp.sample_pairs(60, 1.0, &mut rng);
        // A lopsided residual vector: only five covered points.
        let scores: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let zetas = zeta_residual(&scores, 4.5, level(0.1));
        let loss =
            localized_el_loss(&xs, &zetas, &KernelSpec::gaussian(0.05).unwrap()).unwrap();
        for row in &loss.rows {
            assert!(row.contribution >= -1e-9);
        }
        // With a tiny bandwidth most neighbourhoods are pure one-sided.
        assert!(loss.degenerate_count() > 0);
        assert!(loss.total >= -1e-9 * loss.rows.len() as f64);
    }

    #[test]
    fn loss_is_invariant_under_permutation() {
        let mut rng = child_rng(5, 0);
        let dgp = Dgp::from_index(2, 3).unwrap();
        let (xs, _) = dgp.sample_pairs(40, 1.0, &mut rng);
        let scores: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let zetas = zeta_residual(&scores, 0.2, level(0.1));
        let kernel = KernelSpec::gaussian(0.7).unwrap();
        let base = localized_el_loss(&xs, &zetas, &kernel).unwrap();
        // A fixed permutation.
        let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
        let xs_p: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let zetas_p: Vec<f64> = perm.iter().map(|&i| zetas[i]).collect();
        let permuted = localized_el_loss(&xs_p, &zetas_p, &kernel).unwrap();
        assert!(
            (base.total - permuted.total).abs() <= 1e-12,
            "{} vs {}",
            base.total,
            permuted.total
        );
    }

    /// A candidate pool of one-sided quantile-centered scores whose quantile
    /// models differ in specification quality.
    fn rigged_pool(n: usize, seed: u64, dgp_index: u8) -> (CandidatePool, usize) {
        let dgp = Dgp::from_index(dgp_index, 1).unwrap();
        let mut rng = child_rng(seed, 0);
        let (tx1, ty1) = dgp.sample_pairs(n, 1.0, &mut rng);
        let mean = fit_least_squares(&tx1, &ty1, &BasisSpec::linear(1)).unwrap();
        let (tx2, ty2) = dgp.sample_pairs(n, 1.0, &mut rng);
        let targets: Vec<f64> = tx2
            .iter()
            .zip(&ty2)
            .map(|(x, &y)| (y - mean.predict(x)).abs())
            .collect();
        fn dgp1_sd(x: &[f64]) -> f64 {
            let d = x.len() as f64;
            x.iter()
                .map(|v| (v.abs() - crate::sim::ROOT_TWO_OVER_PI).abs())
                .sum::<f64>()
                / d.sqrt()
        }
        let good_basis = BasisSpec::new(vec![
            Feature::Intercept,
            Feature::Named {
                name: "noise_scale",
                map: dgp1_sd,
            },
        ])
        .unwrap();
        let alpha = level(0.1);
        let lam = 0.01;
        let cfg = SolverConfig::default();
        let good =
            fit_pinball_qr(&tx2, &targets, &good_basis, alpha, lam, None, cfg).unwrap();
        let flat = fit_pinball_qr(
            &tx2,
            &targets,
            &BasisSpec::intercept_only(),
            alpha,
            lam,
            None,
            cfg,
        )
        .unwrap();
        let linear = fit_pinball_qr(
            &tx2,
            &targets,
            &BasisSpec::linear(1),
            alpha,
            lam,
            None,
            cfg,
        )
        .unwrap();
        // Trained at the wrong level: systematically short.
        let short =
            fit_pinball_qr(&tx2, &targets, &good_basis, level(0.4), lam, None, cfg).unwrap();
        let (cx, cy) = dgp.sample_pairs(n, 1.0, &mut rng);
        let calib = CalibSet::new(cx, cy).unwrap();
        let candidates = [good, flat, linear, short]
            .into_iter()
            .map(|upper| {
                PredictorSpec::new(
                    ScoreSpec::CqrOneSided {
                        mean: mean.clone(),
                        upper,
                    },
                    WeightSpec::Uniform,
                    CalibrationMode::Fast,
                )
                .unwrap()
            })
            .collect();
        (CandidatePool::new(calib, candidates).unwrap(), 0)
    }

    #[test]
    fn well_specified_candidate_beats_the_flat_one() {
        let (pool, good_index) = rigged_pool(400, 11, 1);
        let mut rng = child_rng(12, 0);
        let report = select(&pool, level(0.1), SelectionRule::AvgLoss, &mut rng).unwrap();
        assert!(
            report.mean_losses[good_index] < report.mean_losses[1],
            "good {} vs flat {}",
            report.mean_losses[good_index],
            report.mean_losses[1]
        );
        assert!(report.max_root_residual <= 1e-10);
    }

    #[test]
    fn identical_candidates_select_the_first() {
        let (pool, _) = rigged_pool(120, 21, 1);
        let twin = pool.candidates()[1].clone();
        let pool2 = CandidatePool::new(
            pool.calib().clone(),
            vec![twin.clone(), twin.clone(), twin],
        )
        .unwrap();
        let mut rng = child_rng(22, 0);
        for rule in [SelectionRule::AvgLoss, SelectionRule::AvgRankLoss] {
            let report = select(&pool2, level(0.1), rule, &mut rng).unwrap();
            assert_eq!(report.chosen, 0, "{rule:?}");
        }
    }

    #[test]
    fn random_rule_is_reproducible() {
        let (pool, _) = rigged_pool(80, 31, 1);
        let a = select(
            &pool,
            level(0.1),
            SelectionRule::Rand,
            &mut child_rng(77, 0),
        )
        .unwrap();
        let b = select(
            &pool,
            level(0.1),
            SelectionRule::Rand,
            &mut child_rng(77, 0),
        )
        .unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert!(a.chosen < pool.len());
    }

    #[test]
    fn pool_of_one_reproduces_the_direct_region() {
        let (pool, _) = rigged_pool(100, 41, 1);
        let single = CandidatePool::new(
            pool.calib().clone(),
            vec![pool.candidates()[0].clone()],
        )
        .unwrap();
        let x_test = vec![0.3];
        let mut rng = child_rng(42, 0);
        let (selected, report) = efficient_selected_region(
            &single,
            &x_test,
            level(0.1),
            SelectionRule::AvgLoss,
            &mut rng,
            None,
            512,
        )
        .unwrap();
        assert_eq!(report.chosen, 0);
        let direct = build_prediction_region(
            &single.candidates()[0],
            single.calib(),
            &x_test,
            level(0.1),
            &RealizedWeights::deterministic(),
            None,
            512,
        )
        .unwrap();
        assert_eq!(selected.intervals(), direct.intervals());
    }

    #[test]
    fn eff_size_prefers_adaptive_candidates() {
        let (pool, _) = rigged_pool(200, 51, 1);
        let mut rng = child_rng(52, 0);
        let report =
            select(&pool, level(0.1), SelectionRule::EffSize, &mut rng).unwrap();
        // Conformal calibration absorbs level shifts, so what separates the
        // candidates is how well the interval width tracks the noise scale:
        // the noise-adaptive bases beat the flat and linear ones.
        let lengths = report.mean_lengths.clone().unwrap();
        assert!(
            report.chosen == 0 || report.chosen == 3,
            "chosen {} lengths {lengths:?}",
            report.chosen
        );
        assert!(lengths[0] < lengths[1]);
        assert!(lengths[0] < lengths[2]);
    }

    #[test]
    fn exact_and_efficient_regions_agree_on_most_of_the_grid() {
        let (pool, _) = rigged_pool(80, 61, 1);
        let x_test = vec![-0.4];
        let resolution = 256;
        let exact = exact_selected_region(
            &pool,
            &x_test,
            level(0.1),
            SelectionRule::AvgLoss,
            &mut child_rng(62, 0),
            None,
            resolution,
        )
        .unwrap();
        let (efficient, _) = efficient_selected_region(
            &pool,
            &x_test,
            level(0.1),
            SelectionRule::AvgLoss,
            &mut child_rng(62, 0),
            None,
            resolution,
        )
        .unwrap();
        let (lo, hi) = default_y_domain(pool.calib().responses()).unwrap();
        let grid = linspace(lo, hi, resolution).unwrap();
        let agree = grid
            .iter()
            .filter(|&&y| exact.contains(y) == efficient.contains(y))
            .count();
        assert!(
            agree as f64 >= 0.95 * grid.len() as f64,
            "agreement {agree}/{}",
            grid.len()
        );
    }

    #[test]
    fn exact_selection_rejects_calibration_dependent_candidates() {
        let (pool, _) = rigged_pool(40, 71, 1);
        let mean = fit_least_squares(
            pool.calib().covariates(),
            pool.calib().responses(),
            &BasisSpec::linear(1),
        )
        .unwrap();
        let lcp = PredictorSpec::new(
            ScoreSpec::LcpRank {
                mean,
                kernel: KernelSpec::gaussian(1.0).unwrap(),
            },
            WeightSpec::Uniform,
            CalibrationMode::Fast,
        )
        .unwrap();
        let mixed = CandidatePool::new(
            pool.calib().clone(),
            vec![pool.candidates()[0].clone(), lcp],
        )
        .unwrap();
        let err = exact_selected_region(
            &mixed,
            &[0.0],
            level(0.1),
            SelectionRule::AvgLoss,
            &mut child_rng(1, 0),
            None,
            256,
        )
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn exact_selection_rejects_weighted_candidates() {
        let (pool, _) = rigged_pool(40, 81, 1);
        let mut shifted = pool.candidates()[0].clone();
        shifted = PredictorSpec::new(
            shifted.score().clone(),
            WeightSpec::DensityRatio(RatioFn::Unit),
            CalibrationMode::Fast,
        )
        .unwrap();
        let mixed = CandidatePool::new(
            pool.calib().clone(),
            vec![pool.candidates()[0].clone(), shifted],
        )
        .unwrap();
        let err = exact_selected_region(
            &mixed,
            &[0.0],
            level(0.1),
            SelectionRule::AvgLoss,
            &mut child_rng(1, 0),
            None,
            256,
        )
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn efficient_selection_keeps_marginal_coverage() {
        // DGP1, n = 500, α = 0.1: the selected region's coverage, averaged
        // over repetitions and computed analytically given each test
        // covariate, stays within [0.88, 0.93].
        let reps = 500;
        let n = 500;
        let alpha = level(0.1);
        let dgp = Dgp::from_index(1, 1).unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for rep in 0..reps {
            let (pool, _) = rigged_pool(n, 1000 + rep as u64, 1);
            let mut rng = child_rng(2000 + rep as u64, 0);
            let report = select(&pool, alpha, SelectionRule::AvgLoss, &mut rng).unwrap();
            let spec = &pool.candidates()[report.chosen];
            let mut test_rng = child_rng(3000 + rep as u64, 0);
            for _ in 0..20 {
                let x = dgp.sample_covariate(1.0, &mut test_rng);
                let realized = spec.realize_weights(&x, &mut test_rng);
                let region = build_prediction_region(
                    spec,
                    pool.calib(),
                    &x,
                    alpha,
                    &realized,
                    None,
                    512,
                )
                .unwrap();
                total += dgp.conditional_coverage(&region, &x);
                count += 1;
            }
        }
        let marginal = total / count as f64;
        assert!(
            (0.88..=0.93).contains(&marginal),
            "selected marginal coverage {marginal}"
        );
    }
}
