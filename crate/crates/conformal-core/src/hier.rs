//! Two-layer hierarchical calibration: branches fit their own conditional
//! components, scores are pooled across branches for one shared quantile,
//! and the region for the unobserved cell inverts the test branch's score.
//!
//! Pooling trades a small coverage slack (at most 1/(KN) from the +∞ atom)
//! for calibration strength no single branch could provide: with N
//! observations per branch, a within-branch quantile at level 1−α is
//! infinite whenever ⌈(1−α)N⌉ > N−1, while the pooled quantile over KN−1
//! scores is finite and nearly branch-pivotal because every branch is
//! scored by its own fitted components.

use alloc::vec::Vec;

use crate::calib::{Level, PredictionRegion, WeightedScoreSample};
use crate::estimators::{
    fit_pinball_qr, BasisSpec, ConditionalCdf, PinballModel, SolverConfig,
};
use crate::kernels::{median_pairwise_distance, KernelSpec};
use crate::{Error, Result};

/// Ridge weight for the branch quantile fits. Kept tiny: a material ridge
/// narrows each branch's fitted quantile band in proportion to that
/// branch's own scale, and the pooled threshold can only absorb a shift
/// that is common to all branches.
const BRANCH_PINBALL_LAMBDA: f64 = 1e-4;

/// Branch CDF bandwidth as a multiple of the branch's median pairwise
/// covariate distance. Branches are small, so the kernel must stay wide:
/// a narrow kernel lets each point's own weight dominate its in-sample CDF
/// value, deflating the pooled calibration scores and the coverage with
/// them. Widening toward the empirical CDF keeps in-sample ranks pivotal.
const HIER_BANDWIDTH_SCALE: f64 = 6.0;

/// Smallest fit set a branch may have.
const MIN_BRANCH_FIT: usize = 2;

/// Rectangular two-layer data: K branches of N observations each, with the
/// last cell (branch K, observation N) unobserved. Its covariate is known.
#[derive(Debug, Clone, PartialEq)]
pub struct HierData {
    covariates: Vec<Vec<Vec<f64>>>,
    responses: Vec<Vec<f64>>,
}

impl HierData {
    /// Validates the rectangular layout: every branch carries N covariate
    /// rows; every branch but the last carries N responses, the last N−1.
    pub fn new(covariates: Vec<Vec<Vec<f64>>>, responses: Vec<Vec<f64>>) -> Result<Self> {
        let k = covariates.len();
        if k < 2 {
            return Err(Error::invalid_config(
                "branches",
                "hierarchical calibration needs at least two branches",
            ));
        }
        if responses.len() != k {
            return Err(Error::invalid_config(
                "responses",
                "one response list per branch required",
            ));
        }
        let n = covariates[0].len();
        if n < 2 {
            return Err(Error::invalid_config(
                "observations",
                "each branch needs at least two observations",
            ));
        }
        let dim = covariates[0].first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::invalid_config(
                "covariates",
                "covariates must be nonempty",
            ));
        }
        for (b, branch) in covariates.iter().enumerate() {
            if branch.len() != n {
                return Err(Error::invalid_config(
                    "covariates",
                    "all branches must have the same number of observations",
                ));
            }
            if branch.iter().any(|x| x.len() != dim) {
                return Err(Error::invalid_config(
                    "covariates",
                    "covariate dimension must be constant",
                ));
            }
            if branch
                .iter()
                .any(|x| x.iter().any(|value| !value.is_finite()))
            {
                return Err(Error::invalid_config(
                    "covariates",
                    "covariates must be finite",
                ));
            }
            let expected = if b + 1 == k { n - 1 } else { n };
            if responses[b].len() != expected {
                return Err(Error::invalid_config(
                    "responses",
                    "every cell except the last must carry a response",
                ));
            }
            if responses[b].iter().any(|y| !y.is_finite()) {
                return Err(Error::invalid_config(
                    "responses",
                    "responses must be finite",
                ));
            }
        }
        Ok(HierData {
            covariates,
            responses,
        })
    }

    /// Number of branches K.
    #[must_use]
    pub fn branch_count(&self) -> usize {
        self.covariates.len()
    }

    /// Observations per branch N.
    #[must_use]
    pub fn obs_per_branch(&self) -> usize {
        self.covariates[0].len()
    }

    /// Covariate of the unobserved cell (branch K, observation N).
    #[must_use]
    pub fn test_covariate(&self) -> &[f64] {
        let k = self.branch_count();
        let n = self.obs_per_branch();
        &self.covariates[k - 1][n - 1]
    }

    /// Covariate rows of one branch.
    #[must_use]
    pub fn branch_covariates(&self, branch: usize) -> &[Vec<f64>] {
        &self.covariates[branch]
    }

    /// Observed responses of one branch (N−1 for the last branch).
    #[must_use]
    pub fn branch_responses(&self, branch: usize) -> &[f64] {
        &self.responses[branch]
    }

    /// The branch's fit set: its observed cells only, so the last branch
    /// fits on N−1 observations and the rest on all N.
    fn fit_set(&self, branch: usize) -> (&[Vec<f64>], &[f64]) {
        let m = self.responses[branch].len();
        (&self.covariates[branch][..m], &self.responses[branch])
    }
}

/// Which per-branch conformity score to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HierScore {
    /// Distance of the branch conditional CDF from one half:
    /// |F̂(y | x) − 1/2|, with a kernel CDF per branch.
    DcpBranch,
    /// Two-sided quantile-regression score per branch:
    /// max{y − Q̂_{1−α/2}(x), Q̂_{α/2}(x) − y}.
    CqrBranch,
}

enum BranchScorer {
    Dcp(ConditionalCdf),
    Cqr { lo: PinballModel, hi: PinballModel },
}

impl BranchScorer {
    fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            BranchScorer::Dcp(cdf) => {
                Ok((cdf.eval_with_fallback(y, x)?.value - 0.5).abs())
            }
            BranchScorer::Cqr { lo, hi } => {
                let upper = y - hi.predict(x);
                let lower = lo.predict(x) - y;
                Ok(upper.max(lower))
            }
        }
    }
}

fn fit_branch(
    covariates: &[Vec<f64>],
    responses: &[f64],
    kind: HierScore,
    level: Level,
) -> Result<BranchScorer> {
    if responses.len() < MIN_BRANCH_FIT {
        return Err(Error::invalid_config(
            "branch",
            "branch has too few observations to fit",
        ));
    }
    match kind {
        HierScore::DcpBranch => {
            let bandwidth = HIER_BANDWIDTH_SCALE * median_pairwise_distance(covariates)?;
            if !(bandwidth > 0.0) {
                return Err(Error::invalid_config(
                    "branch",
                    "branch covariates are degenerate",
                ));
            }
            let kernel = KernelSpec::gaussian(bandwidth)?;
            Ok(BranchScorer::Dcp(ConditionalCdf::new(
                kernel,
                covariates.to_vec(),
                responses.to_vec(),
            )?))
        }
        HierScore::CqrBranch => {
            let dim = covariates[0].len();
            let basis = BasisSpec::linear(dim);
            let config = SolverConfig {
                iterations: 4000,
                ..SolverConfig::default()
            };
            let alpha = level.alpha();
            let lo = fit_pinball_qr(
                covariates,
                responses,
                &basis,
                Level::new(1.0 - alpha / 2.0)?,
                BRANCH_PINBALL_LAMBDA,
                None,
                config,
            )?;
            let hi = fit_pinball_qr(
                covariates,
                responses,
                &basis,
                Level::new(alpha / 2.0)?,
                BRANCH_PINBALL_LAMBDA,
                None,
                config,
            )?;
            Ok(BranchScorer::Cqr { lo, hi })
        }
    }
}

/// Fits every branch and pools the observed cells' scores, each cell scored
/// by its own branch's components. Returns the scorers and the KN−1 pooled
/// scores, test-branch scorer last.
fn pooled_scores(
    data: &HierData,
    kind: HierScore,
    level: Level,
) -> Result<(Vec<BranchScorer>, Vec<f64>)> {
    let k = data.branch_count();
    let mut scorers = Vec::with_capacity(k);
    let mut scores = Vec::new();
    for b in 0..k {
        let (xs, ys) = data.fit_set(b);
        let scorer = fit_branch(xs, ys, kind, level)?;
        for (x, &y) in xs.iter().zip(ys) {
            scores.push(scorer.score(x, y)?);
        }
        scorers.push(scorer);
    }
    Ok((scorers, scores))
}

/// The pooled calibration quantile: Q(1−α) of the KN−1 observed-cell scores
/// together with one +∞ atom, all at equal weight (total mass KN).
pub fn hierarchical_threshold(data: &HierData, kind: HierScore, level: Level) -> Result<f64> {
    let (_, scores) = pooled_scores(data, kind, level)?;
    WeightedScoreSample::uniform(scores).map(|sample| sample.quantile(level))
}

/// The prediction region for the unobserved cell, by grid inversion of the
/// test branch's score against the pooled quantile.
pub fn hierarchical_region(
    data: &HierData,
    kind: HierScore,
    level: Level,
    grid: &[f64],
) -> Result<PredictionRegion> {
    let (scorers, scores) = pooled_scores(data, kind, level)?;
    let q = WeightedScoreSample::uniform(scores)?.quantile(level);
    let test_scorer = scorers.last().expect("at least two branches");
    let x = data.test_covariate();
    let mut accepted = Vec::with_capacity(grid.len());
    for &y in grid {
        accepted.push(test_scorer.score(x, y)? <= q);
    }
    PredictionRegion::from_grid(grid, &accepted)
}
