//! Synthetic data generation and analytic coverage evaluation.
//!
//! Three data-generating processes share the mean μ(x) = 2·Σᵢxᵢ/d and differ
//! in their heteroskedastic conditional normal noise. Covariate shift scales
//! the test covariate law to N_d(0, σ²I); the density ratio against the
//! training law is known in closed form. Because the conditional law of Y
//! given X = x is normal, the conditional coverage of any interval region is
//! available analytically, which removes one Monte-Carlo layer from every
//! experiment.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::calib::{Level, PredictionRegion};
use crate::estimators::{
    cc_ridge_lambda, fit_batchgcp, fit_least_squares, fit_pinball_qr, BasisSpec, ConditionalCdf,
    Group, SolverConfig,
};
use crate::hier::HierData;
use crate::kernels::{bandwidth_for_target_neff, KernelFamily, KernelSpec};
use crate::methods::{
    build_prediction_region_cached, make_predictor, CalibSet, FittedComponents, RatioFn,
};
use crate::{Error, Result};

/// √(2/π), the mean of |N(0,1)|.
pub const ROOT_TWO_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Which heteroskedastic noise law drives the responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgpKind {
    /// sd(x) = |Σᵢ(|xᵢ| − √(2/π))| / √d: the centered folded-normal sum
    /// keeps the noise-scale variation severe at every dimension, and the
    /// scale vanishes on a thick surface of typical covariates.
    One,
    /// sd(x) = Σᵢ exp(|xᵢ|) / √d: heavy right tail of noise scales.
    Two,
    /// sd(x) = √(Σᵢ|xᵢ| / d): mild heteroskedasticity.
    Three,
}

/// A data-generating process: dimension plus noise law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dgp {
    kind: DgpKind,
    dim: usize,
}

impl Dgp {
    /// Validates the dimension.
    pub fn new(kind: DgpKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_config("d", "dimension must be at least 1"));
        }
        Ok(Dgp { kind, dim })
    }

    /// Numeric constructor: 1, 2, or 3.
    pub fn from_index(index: u8, dim: usize) -> Result<Self> {
        let kind = match index {
            1 => DgpKind::One,
            2 => DgpKind::Two,
            3 => DgpKind::Three,
            other => {
                return Err(Error::invalid_config(
                    "dgp",
                    alloc::format!("must be 1, 2, or 3, got {other}"),
                ))
            }
        };
        Dgp::new(kind, dim)
    }

    /// The covariate dimension d.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The noise law.
    #[must_use]
    pub fn kind(&self) -> DgpKind {
        self.kind
    }

    /// Conditional mean μ(x) = 2·Σᵢxᵢ/d.
    #[must_use]
    pub fn mean(&self, x: &[f64]) -> f64 {
        2.0 * x.iter().sum::<f64>() / self.dim as f64
    }

    /// Conditional noise standard deviation at x.
    #[must_use]
    pub fn noise_sd(&self, x: &[f64]) -> f64 {
        let d = self.dim as f64;
        match self.kind {
            DgpKind::One => {
                x.iter()
                    .map(|xi| xi.abs() - ROOT_TWO_OVER_PI)
                    .sum::<f64>()
                    .abs()
                    / d.sqrt()
            }
            DgpKind::Two => x.iter().map(|xi| xi.abs().exp()).sum::<f64>() / d.sqrt(),
            DgpKind::Three => (x.iter().map(|xi| xi.abs()).sum::<f64>() / d).sqrt(),
        }
    }

    /// One covariate draw from N_d(0, σ²I).
    pub fn sample_covariate<R: Rng + ?Sized>(&self, sigma_x: f64, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| sigma_x * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// One response draw from the conditional law at x.
    pub fn sample_response<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        self.mean(x) + self.noise_sd(x) * rng.sample::<f64, _>(StandardNormal)
    }

    /// Draws n labelled pairs with covariate scale `sigma_x`.
    pub fn sample_pairs<R: Rng + ?Sized>(
        &self,
        n: usize,
        sigma_x: f64,
        rng: &mut R,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.sample_covariate(sigma_x, rng);
            let y = self.sample_response(&x, rng);
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    /// Closed-form density ratio of N_d(0, σ²I) against N_d(0, I):
    /// r(x) = σ^{−d} · exp(‖x‖²(1 − σ^{−2})/2).
    #[must_use]
    pub fn density_ratio(&self, sigma_x: f64, x: &[f64]) -> f64 {
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        sigma_x.powi(-(self.dim as i32)) * (0.5 * norm_sq * (1.0 - sigma_x.powi(-2))).exp()
    }

    /// Analytic conditional coverage Pr(Y ∈ region | X = x).
    #[must_use]
    pub fn conditional_coverage(&self, region: &PredictionRegion, x: &[f64]) -> f64 {
        normal_region_coverage(region, self.mean(x), self.noise_sd(x))
    }
}

/// Probability a N(mu, sd²) draw lands in the region. A zero sd collapses to
/// the indicator of mu's membership.
#[must_use]
pub fn normal_region_coverage(region: &PredictionRegion, mu: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return if region.contains(mu) { 1.0 } else { 0.0 };
    }
    let mut cov = 0.0;
    for &(a, b) in region.intervals() {
        cov += standard_normal_cdf((b - mu) / sd) - standard_normal_cdf((a - mu) / sd);
    }
    cov.clamp(0.0, 1.0)
}

/// Standard normal CDF via a rational tail approximation with absolute error
/// below 7.5e−8, dependency-free.
#[must_use]
pub fn standard_normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let abs = z.abs();
    let t = 1.0 / (1.0 + 0.231_641_9 * abs);
    let poly = t
        * (0.319_381_530
            + t * (-0.356_563_782 + t * (1.781_477_937 + t * (-1.821_255_978 + t * 1.330_274_429))));
    let pdf = (-0.5 * abs * abs).exp() / (2.0 * core::f64::consts::PI).sqrt();
    let upper = pdf * poly;
    if z >= 0.0 {
        1.0 - upper
    } else {
        upper
    }
}

/// Standard normal quantile by bisection on the CDF; accurate to the CDF's
/// own error level, which is ample for diagnostics.
#[must_use]
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    let (mut lo, mut hi) = (-13.0f64, 13.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if standard_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Derives an independent RNG stream as a pure function of a master seed and
/// a stream index, so parallel repetitions are reproducible in any order.
#[must_use]
pub fn child_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    fn splitmix64(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = master_seed ^ {
        let mut s = stream.wrapping_mul(0xA076_1D64_78BD_642F);
        splitmix64(&mut s)
    };
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stochastic block model with per-block response noise scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    block_sizes: Vec<usize>,
    p_in: f64,
    p_out: f64,
    noise_scales: Vec<f64>,
    dim: usize,
}

impl SbmSpec {
    /// Validates sizes and probabilities. Equal within/between probabilities
    /// are admitted so recovery-failure boundaries can be exercised.
    pub fn new(
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
        noise_scales: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        if block_sizes.is_empty() || block_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid_config(
                "blocks",
                "need at least one nonempty block",
            ));
        }
        if noise_scales.len() != block_sizes.len() {
            return Err(Error::invalid_config(
                "noise_scales",
                "must supply one noise scale per block",
            ));
        }
        if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
            return Err(Error::invalid_config(
                "p_in/p_out",
                alloc::format!("need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"),
            ));
        }
        if dim == 0 {
            return Err(Error::invalid_config("dim", "dimension must be at least 1"));
        }
        Ok(SbmSpec {
            block_sizes,
            p_in,
            p_out,
            noise_scales,
            dim,
        })
    }

    /// Total node count.
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Block sizes.
    #[must_use]
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Expected number of edges.
    #[must_use]
    pub fn expected_edges(&self) -> f64 {
        let mut within = 0.0;
        let mut between = 0.0;
        for (b, &s) in self.block_sizes.iter().enumerate() {
            within += (s * (s - 1) / 2) as f64;
            for &t in &self.block_sizes[b + 1..] {
                between += (s * t) as f64;
            }
        }
        within * self.p_in + between * self.p_out
    }
}

/// A generated SBM sample: nodes with covariates, responses, edges, and the
/// planted block labels for oracle evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSample {
    /// Undirected edges as (u, v) with u < v, 0-indexed.
    pub edges: Vec<(usize, usize)>,
    /// Per-node covariates, x ~ N_d(0, I).
    pub covariates: Vec<Vec<f64>>,
    /// Per-node responses, y = μ(x) + τ_block·ε.
    pub responses: Vec<f64>,
    /// Planted block label per node.
    pub planted_labels: Vec<usize>,
}

/// Draws covariates, block-scaled responses, and Bernoulli block edges.
pub fn generate_sbm_graph<R: Rng + ?Sized>(spec: &SbmSpec, rng: &mut R) -> SbmSample {
    let n = spec.node_count();
    let mut planted = Vec::with_capacity(n);
    for (b, &s) in spec.block_sizes.iter().enumerate() {
        planted.extend(core::iter::repeat(b).take(s));
    }
    let mean_dgp = Dgp {
        kind: DgpKind::Three,
        dim: spec.dim,
    };
    let mut covariates = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for &label in &planted {
        let x = mean_dgp.sample_covariate(1.0, rng);
        let y = mean_dgp.mean(&x)
            + spec.noise_scales[label] * rng.sample::<f64, _>(StandardNormal);
        covariates.push(x);
        responses.push(y);
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if planted[u] == planted[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    SbmSample {
        edges,
        covariates,
        responses,
        planted_labels: planted,
    }
}

/// A random-effects hierarchical draw: `K` branches of `N` cells where
/// branch `k` scales the base noise law by its own draw τ_k ~ U[0.5, 2],
/// arranged so the final cell of the final branch is the test position.
#[derive(Debug, Clone)]
pub struct RandomEffectsDraw {
    /// Covariates for every cell plus responses for all but the test cell.
    pub data: HierData,
    /// True conditional mean of the test cell's response.
    pub test_mean: f64,
    /// True conditional standard deviation of the test cell's response.
    pub test_sd: f64,
    /// The test branch's noise scale τ_K.
    pub test_scale: f64,
}

/// Draws a two-layer random-effects layout on top of a base process: each of
/// the `k` branches gets an independent scale τ ~ U[0.5, 2] multiplying the
/// base noise sd, and every branch holds `n` cells drawn iid from the scaled
/// law. The test cell (last cell, last branch) keeps its covariate but its
/// response is withheld; its true conditional law is returned for analytic
/// coverage evaluation.
pub fn sample_random_effects<R: Rng + ?Sized>(
    dgp: &Dgp,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<RandomEffectsDraw> {
    let mut covariates = Vec::with_capacity(k);
    let mut responses = Vec::with_capacity(k);
    let mut test_mean = 0.0;
    let mut test_sd = 0.0;
    let mut test_scale = 0.0;
    for b in 0..k {
        let tau: f64 = 0.5 + 1.5 * rng.random::<f64>();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let x = dgp.sample_covariate(1.0, rng);
            let mu = dgp.mean(&x);
            let sd = tau * dgp.noise_sd(&x);
            if b + 1 == k && i + 1 == n {
                test_mean = mu;
                test_sd = sd;
                test_scale = tau;
            } else {
                ys.push(mu + sd * rng.sample::<f64, _>(StandardNormal));
            }
            xs.push(x);
        }
        covariates.push(xs);
        responses.push(ys);
    }
    Ok(RandomEffectsDraw {
        data: HierData::new(covariates, responses)?,
        test_mean,
        test_sd,
        test_scale,
    })
}

/// Method names understood by the experiment driver, as stable identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[allow(missing_docs)]
pub enum MethodName {
    Scp,
    Wcp,
    Cqr,
    CqrShift,
    Dcp,
    Glcp,
    GlcpShift,
    Lcp,
    LcpShift,
    Rlcp,
    Grlcp,
    Cc,
    CcShift,
    BatchGcp,
}

impl MethodName {
    /// All methods in catalogue order.
    pub const ALL: [MethodName; 14] = [
        MethodName::Scp,
        MethodName::Wcp,
        MethodName::Cqr,
        MethodName::CqrShift,
        MethodName::Dcp,
        MethodName::Glcp,
        MethodName::GlcpShift,
        MethodName::Lcp,
        MethodName::LcpShift,
        MethodName::Rlcp,
        MethodName::Grlcp,
        MethodName::Cc,
        MethodName::CcShift,
        MethodName::BatchGcp,
    ];

    /// The stable identifier used in configs and reports.
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Scp => "scp",
            MethodName::Wcp => "wcp",
            MethodName::Cqr => "cqr",
            MethodName::CqrShift => "cqr_shift",
            MethodName::Dcp => "dcp",
            MethodName::Glcp => "glcp",
            MethodName::GlcpShift => "glcp_shift",
            MethodName::Lcp => "lcp",
            MethodName::LcpShift => "lcp_shift",
            MethodName::Rlcp => "rlcp",
            MethodName::Grlcp => "grlcp",
            MethodName::Cc => "cc",
            MethodName::CcShift => "cc_shift",
            MethodName::BatchGcp => "batchgcp",
        }
    }

    /// Parses a stable identifier.
    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == name)
            .ok_or_else(|| {
                Error::invalid_config("methods", alloc::format!("unknown method `{name}`"))
            })
    }

    /// True for methods whose weights correct for covariate shift.
    #[must_use]
    pub fn is_shift_aware(self) -> bool {
        matches!(
            self,
            MethodName::Wcp
                | MethodName::CqrShift
                | MethodName::GlcpShift
                | MethodName::LcpShift
                | MethodName::Grlcp
                | MethodName::CcShift
        )
    }
}

impl core::fmt::Display for MethodName {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Method identifier.
    pub method: String,
    /// Repetition index, or `None` for the aggregate row.
    pub rep: Option<u32>,
    /// Mean analytic coverage over test points (and reps, if aggregated).
    pub marginal: f64,
    /// Conditional miscoverage error; only defined on the aggregate row for
    /// multi-rep experiments (per-rep rows carry the single-rep analogue).
    pub cond_miscov: f64,
    /// Mean region length over test points; +∞ propagates.
    pub mean_length: f64,
}

/// Per-repetition and aggregated coverage metrics for a set of methods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    /// Per-repetition rows, ordered by (method, rep).
    pub rows: Vec<MetricsRow>,
    /// One aggregate row per method.
    pub summary: Vec<MetricsRow>,
}

/// Ridge weight for the conditional quantile fit of the base score on the
/// second training half (the CQR-family upper-quantile model).
pub const SCORE_QUANTILE_LAMBDA: f64 = 0.01;

/// Default number of fixed test covariates.
pub const DEFAULT_TEST_POINTS: usize = 500;

/// Default repetition count.
pub const DEFAULT_REPS: u32 = 50;

/// Default effective-sample-size target for the localization kernel, as a
/// fraction of the calibration size. Localized ranks with a small effective
/// sample size carry a persistent smoothing bias that grows quickly with the
/// covariate dimension, so the default keeps the kernel gentle; tighten the
/// target through [`ExperimentSpec::with_neff_target`] to adapt harder in
/// low dimensions.
pub const DEFAULT_NEFF_FRACTION: f64 = 0.8;

/// Default y-grid resolution for regions without an analytic inversion.
pub const DEFAULT_GRID_RESOLUTION: usize = 512;

/// Configuration of a Monte-Carlo coverage experiment.
///
/// Each repetition draws 2n training pairs (first half fits the mean model,
/// second half the conditional estimators) and n calibration pairs, all with
/// unit covariate scale; the `sigma_x` shift applies only to the fixed test
/// covariates, which are drawn once from stream 0 of the master seed and
/// shared by every repetition. Repetition j uses stream j + 1, so any subset
/// of repetitions can be reproduced in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    dgp: Dgp,
    sigma_x: f64,
    n: usize,
    n_te: usize,
    level: Level,
    reps: u32,
    seed: u64,
    methods: Vec<MethodName>,
    neff_target: f64,
    bandwidth_override: Option<f64>,
    grid_resolution: usize,
}

impl ExperimentSpec {
    /// Creates a spec with default sizes (500 test points, 50 repetitions,
    /// kernel matched to an effective sample size of `0.8 n`, 512-point y
    /// grid).
    pub fn new(
        dgp: Dgp,
        sigma_x: f64,
        n: usize,
        level: Level,
        methods: Vec<MethodName>,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(Error::invalid_config(
                "sigma_x",
                alloc::format!("test covariate scale must be positive and finite, got {sigma_x}"),
            ));
        }
        if n < dgp.dim() + 2 {
            return Err(Error::invalid_config(
                "n",
                alloc::format!(
                    "need at least d + 2 = {} calibration points, got {n}",
                    dgp.dim() + 2
                ),
            ));
        }
        if methods.is_empty() {
            return Err(Error::invalid_config("methods", "method list is empty"));
        }
        let spec = Self {
            dgp,
            sigma_x,
            n,
            n_te: DEFAULT_TEST_POINTS,
            level,
            reps: DEFAULT_REPS,
            seed,
            methods,
            neff_target: DEFAULT_NEFF_FRACTION * n as f64,
            bandwidth_override: None,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        };
        spec.check_neff(spec.neff_target)?;
        Ok(spec)
    }

    fn check_neff(&self, target: f64) -> Result<()> {
        if !(target > 1.0 && target <= self.n as f64) {
            return Err(Error::invalid_config(
                "neff_target",
                alloc::format!("must lie in (1, {}], got {target}", self.n),
            ));
        }
        Ok(())
    }

    /// Overrides the repetition count.
    pub fn with_reps(mut self, reps: u32) -> Result<Self> {
        if reps == 0 {
            return Err(Error::invalid_config("reps", "need at least 1 repetition"));
        }
        self.reps = reps;
        Ok(self)
    }

    /// Overrides the number of fixed test covariates.
    pub fn with_test_points(mut self, n_te: usize) -> Result<Self> {
        if n_te == 0 {
            return Err(Error::invalid_config("n_te", "need at least 1 test point"));
        }
        self.n_te = n_te;
        Ok(self)
    }

    /// Overrides the kernel effective-sample-size target.
    pub fn with_neff_target(mut self, target: f64) -> Result<Self> {
        self.check_neff(target)?;
        self.neff_target = target;
        Ok(self)
    }

    /// Pins the localization bandwidth instead of matching `neff_target`.
    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid_config(
                "bandwidth",
                alloc::format!("must be positive and finite, got {bandwidth}"),
            ));
        }
        self.bandwidth_override = Some(bandwidth);
        Ok(self)
    }

    /// Overrides the y-grid resolution for non-analytic regions.
    pub fn with_grid_resolution(mut self, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid_config(
                "grid_resolution",
                "need at least 2 grid points",
            ));
        }
        self.grid_resolution = resolution;
        Ok(self)
    }

    /// The data-generating process.
    #[must_use]
    pub fn dgp(&self) -> &Dgp {
        &self.dgp
    }

    /// Test-side covariate scale.
    #[must_use]
    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    /// Calibration size (training uses 2n).
    #[must_use]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of fixed test covariates.
    #[must_use]
    pub fn test_points(&self) -> usize {
        self.n_te
    }

    /// Miscoverage level.
    #[must_use]
    pub fn level(&self) -> Level {
        self.level
    }

    /// Repetition count.
    #[must_use]
    pub fn reps(&self) -> u32 {
        self.reps
    }

    /// Master seed.
    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Methods under evaluation, in report order.
    #[must_use]
    pub fn methods(&self) -> &[MethodName] {
        &self.methods
    }

    /// Effective-sample-size target for the kernel bandwidth.
    #[must_use]
    pub fn neff_target(&self) -> f64 {
        self.neff_target
    }

    /// Pinned bandwidth, if any.
    #[must_use]
    pub fn bandwidth_override(&self) -> Option<f64> {
        self.bandwidth_override
    }

    /// y-grid resolution for non-analytic regions.
    #[must_use]
    pub fn grid_resolution(&self) -> usize {
        self.grid_resolution
    }

    /// Draws the fixed test covariates from stream 0 of the master seed.
    #[must_use]
    pub fn draw_test_covariates(&self) -> Vec<Vec<f64>> {
        let mut rng = child_rng(self.seed, 0);
        (0..self.n_te)
            .map(|_| self.dgp.sample_covariate(self.sigma_x, &mut rng))
            .collect()
    }
}

/// One method's analytic evaluation within a single repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    /// The catalogue method.
    pub method: MethodName,
    /// Analytic conditional coverage at each fixed test covariate.
    pub coverages: Vec<f64>,
    /// Mean region length over the test covariates; +∞ propagates.
    pub mean_length: f64,
}

/// Immutable result of one repetition: the unit emitted by a worker and
/// consumed by the deterministic aggregation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionRecord {
    /// Repetition index (0-based).
    pub rep: u32,
    /// Per-method outcomes, in the spec's method order.
    pub outcomes: Vec<MethodOutcome>,
}

fn attach_rep(err: Error, rep: u32) -> Error {
    match err {
        Error::InvalidConfig { field, reason } => Error::InvalidConfig {
            field,
            reason: alloc::format!("repetition {rep}: {reason}"),
        },
        Error::Degenerate { reason } => Error::Degenerate {
            reason: alloc::format!("repetition {rep}: {reason}"),
        },
    }
}

/// Response search domain padded by the pooled empirical range, so grids
/// track heavy-noise repetitions instead of assuming a fixed window.
fn padded_response_domain(train: &[f64], calib: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &y in train.iter().chain(calib) {
        lo = lo.min(y);
        hi = hi.max(y);
    }
    let pad = (hi - lo).max(1.0);
    (lo - pad, hi + pad)
}

/// Runs repetition `rep` against the shared test covariates: fits the mean on
/// the first training half and every conditional estimator on the second,
/// fits the calibration-set components, then calibrates and evaluates each
/// method analytically. Errors carry the repetition index.
pub fn run_single_repetition(
    spec: &ExperimentSpec,
    rep: u32,
    test_covariates: &[Vec<f64>],
) -> Result<RepetitionRecord> {
    repetition_inner(spec, rep, test_covariates).map_err(|e| attach_rep(e, rep))
}

fn repetition_inner(
    spec: &ExperimentSpec,
    rep: u32,
    test_covariates: &[Vec<f64>],
) -> Result<RepetitionRecord> {
    if test_covariates.is_empty() {
        return Err(Error::degenerate("no test covariates to evaluate"));
    }
    let d = spec.dgp.dim();
    let mut rng = child_rng(spec.seed, 1 + u64::from(rep));
    let basis = BasisSpec::linear(d);

    let (xs_tr, ys_tr) = spec.dgp.sample_pairs(2 * spec.n, 1.0, &mut rng);
    let (x1, x2) = xs_tr.split_at(spec.n);
    let (y1, y2) = ys_tr.split_at(spec.n);
    let mean = fit_least_squares(x1, y1, &basis)?;
    let v2: Vec<f64> = x2
        .iter()
        .zip(y2)
        .map(|(x, &y)| (y - mean.predict(x)).abs())
        .collect();
    let score_quantile = fit_pinball_qr(
        x2,
        &v2,
        &basis,
        spec.level,
        SCORE_QUANTILE_LAMBDA,
        None,
        SolverConfig::default(),
    )?;
    let bandwidth = match spec.bandwidth_override {
        Some(h) => h,
        None => bandwidth_for_target_neff(KernelFamily::Gaussian, spec.neff_target, x2)?,
    };
    let kernel = KernelSpec::gaussian(bandwidth)?;
    let response_cdf = ConditionalCdf::new(kernel, x2.to_vec(), y2.to_vec())?;
    let score_cdf = ConditionalCdf::new(kernel, x2.to_vec(), v2)?;

    let (xc, yc) = spec.dgp.sample_pairs(spec.n, 1.0, &mut rng);
    let vc: Vec<f64> = xc
        .iter()
        .zip(&yc)
        .map(|(x, &y)| (y - mean.predict(x)).abs())
        .collect();
    let cc_threshold = fit_pinball_qr(
        &xc,
        &vc,
        &basis,
        spec.level,
        cc_ridge_lambda(basis.d0(), spec.n),
        None,
        SolverConfig::default(),
    )?;
    let groups: Vec<Group> = (0..d.min(2)).map(Group::CoordinatePositive).collect();
    let adjustment = fit_batchgcp(&xc, &vc, &groups, spec.level, SolverConfig::default())?;

    let y_domain = padded_response_domain(&ys_tr, &yc);
    let parts = FittedComponents {
        mean: Some(mean),
        score_quantile: Some(score_quantile),
        response_cdf: Some(response_cdf),
        score_cdf: Some(score_cdf),
        cc_threshold: Some(cc_threshold),
        adjustment: Some(adjustment),
        kernel: Some(kernel),
        ratio: Some(RatioFn::GaussianScale {
            sigma_x: spec.sigma_x,
            dim: d,
        }),
    };
    let calib = CalibSet::new(xc, yc)?;

    let mut outcomes = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let predictor = make_predictor(method, &parts)?;
        let cache = predictor.calibration_cache(&calib)?;
        let mut coverages = Vec::with_capacity(test_covariates.len());
        let mut total_length = 0.0;
        for x in test_covariates {
            let realized = predictor.realize_weights(x, &mut rng);
            let region = build_prediction_region_cached(
                &predictor,
                &cache,
                &calib,
                x,
                spec.level,
                &realized,
                Some(y_domain),
                spec.grid_resolution,
            )?;
            coverages.push(spec.dgp.conditional_coverage(&region, x));
            total_length += region.total_length();
        }
        let mean_length = total_length / test_covariates.len() as f64;
        outcomes.push(MethodOutcome {
            method,
            coverages,
            mean_length,
        });
    }
    Ok(RepetitionRecord { rep, outcomes })
}

/// Folds repetition records into a metrics table: per-rep rows carry the
/// single-repetition coverage deviation, the aggregate row the conditional
/// miscoverage error n_te⁻¹ Σᵢ |R⁻¹ Σⱼ covᵢⱼ − (1−α)|. The fold is ordered
/// by repetition index, so the result is independent of record arrival
/// order.
pub fn aggregate(spec: &ExperimentSpec, records: &[RepetitionRecord]) -> Result<MetricsTable> {
    if records.is_empty() {
        return Err(Error::degenerate("no repetition records to aggregate"));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_unstable_by_key(|&i| records[i].rep);
    for w in order.windows(2) {
        if records[w[0]].rep == records[w[1]].rep {
            return Err(Error::invalid_config(
                "records",
                alloc::format!("duplicate repetition index {}", records[w[0]].rep),
            ));
        }
    }
    let n_te = records[0]
        .outcomes
        .first()
        .map(|o| o.coverages.len())
        .unwrap_or(0);
    if n_te == 0 {
        return Err(Error::degenerate("repetition records carry no coverages"));
    }
    for record in records {
        let aligned = record.outcomes.len() == spec.methods.len()
            && record
                .outcomes
                .iter()
                .zip(&spec.methods)
                .all(|(o, &m)| o.method == m && o.coverages.len() == n_te);
        if !aligned {
            return Err(Error::invalid_config(
                "records",
                "records must cover the spec's methods in order with equal test-point counts",
            ));
        }
    }

    let r_count = records.len() as f64;
    let target = spec.level.coverage();
    let mut rows = Vec::with_capacity(records.len() * spec.methods.len());
    let mut summary = Vec::with_capacity(spec.methods.len());
    for (k, &method) in spec.methods.iter().enumerate() {
        let mut point_sums = alloc::vec![0.0; n_te];
        let mut marginal_sum = 0.0;
        let mut length_sum = 0.0;
        for &i in &order {
            let outcome = &records[i].outcomes[k];
            let marginal = outcome.coverages.iter().sum::<f64>() / n_te as f64;
            let deviation = outcome
                .coverages
                .iter()
                .map(|&c| (c - target).abs())
                .sum::<f64>()
                / n_te as f64;
            rows.push(MetricsRow {
                method: String::from(method.as_str()),
                rep: Some(records[i].rep),
                marginal,
                cond_miscov: deviation,
                mean_length: outcome.mean_length,
            });
            for (s, &c) in point_sums.iter_mut().zip(&outcome.coverages) {
                *s += c;
            }
            marginal_sum += marginal;
            length_sum += outcome.mean_length;
        }
        let cond_miscov = point_sums
            .iter()
            .map(|&s| (s / r_count - target).abs())
            .sum::<f64>()
            / n_te as f64;
        summary.push(MetricsRow {
            method: String::from(method.as_str()),
            rep: None,
            marginal: marginal_sum / r_count,
            cond_miscov,
            mean_length: length_sum / r_count,
        });
    }
    Ok(MetricsTable { rows, summary })
}

/// Sequential experiment driver: fixed test covariates, then one repetition
/// per independent child stream, then the aggregation fold.
pub fn run_coverage_experiment(spec: &ExperimentSpec) -> Result<MetricsTable> {
    let test_covariates = spec.draw_test_covariates();
    let mut records = Vec::with_capacity(spec.reps as usize);
    for rep in 0..spec.reps {
        records.push(run_single_repetition(spec, rep, &test_covariates)?);
    }
    aggregate(spec, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::PredictionRegion;
    use alloc::vec;

    #[test]
    fn dgp3_at_unit_covariate_is_standard_normal_around_two() {
        let dgp = Dgp::from_index(3, 1).unwrap();
        assert_eq!(dgp.mean(&[1.0]), 2.0);
        assert_eq!(dgp.noise_sd(&[1.0]), 1.0);
    }

    #[test]
    fn dgp1_noise_vanishes_at_the_absolute_mean() {
        let dgp = Dgp::from_index(1, 3).unwrap();
        let x = vec![ROOT_TWO_OVER_PI, -ROOT_TWO_OVER_PI, ROOT_TWO_OVER_PI];
        assert!(dgp.noise_sd(&x).abs() < 1e-15);
    }

    #[test]
    fn dgp1_signed_deviations_cancel() {
        // The scale is the absolute value of the centered sum, so opposite
        // deviations of |x_i| from sqrt(2/pi) cancel instead of adding.
        let dgp = Dgp::from_index(1, 2).unwrap();
        let x = vec![ROOT_TWO_OVER_PI + 0.3, -(ROOT_TWO_OVER_PI - 0.3)];
        assert!(dgp.noise_sd(&x).abs() < 1e-15);
        let y = vec![ROOT_TWO_OVER_PI + 0.3, ROOT_TWO_OVER_PI + 0.1];
        assert!((dgp.noise_sd(&y) - 0.4 / 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn density_ratio_closed_form_values() {
        let dgp = Dgp::from_index(1, 1).unwrap();
        assert_eq!(dgp.density_ratio(1.0, &[0.37]), 1.0);
        assert!((dgp.density_ratio(2.0, &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_hits_tabulated_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((standard_normal_cdf(1.644_853_6) - 0.95).abs() < 1e-6);
        assert!((standard_normal_cdf(-1.959_964) - 0.025).abs() < 1e-6);
        assert_eq!(standard_normal_cdf(f64::INFINITY), 1.0);
    }

    #[test]
    fn normal_quantile_inverts_the_cdf() {
        for p in [0.01, 0.1, 0.5, 0.9, 0.975] {
            let z = standard_normal_quantile(p);
            assert!((standard_normal_cdf(z) - p).abs() < 1e-7);
        }
    }

    #[test]
    fn central_interval_covers_ninety_percent() {
        let dgp = Dgp::from_index(2, 4).unwrap();
        let x = vec![0.3, -1.0, 0.0, 2.0];
        let (mu, sd) = (dgp.mean(&x), dgp.noise_sd(&x));
        let region =
            PredictionRegion::analytic(vec![(mu - 1.6449 * sd, mu + 1.6449 * sd)]).unwrap();
        assert!((dgp.conditional_coverage(&region, &x) - 0.90).abs() < 1e-4);
    }

    #[test]
    fn whole_line_has_unit_coverage_and_zero_sd_is_an_indicator() {
        let dgp = Dgp::from_index(1, 1).unwrap();
        let line =
            PredictionRegion::analytic(vec![(f64::NEG_INFINITY, f64::INFINITY)]).unwrap();
        assert_eq!(dgp.conditional_coverage(&line, &[0.2]), 1.0);
        let point_region = PredictionRegion::analytic(vec![(1.0, 2.0)]).unwrap();
        // At |x| = sqrt(2/pi) the noise vanishes; coverage is 1{mu in region}.
        let x = vec![ROOT_TWO_OVER_PI];
        assert_eq!(normal_region_coverage(&point_region, dgp.mean(&x), 0.0), 1.0);
    }

    #[test]
    fn child_streams_differ_and_are_reproducible() {
        let mut a = child_rng(7, 0);
        let mut b = child_rng(7, 1);
        let mut a2 = child_rng(7, 0);
        let xa: f64 = a.random();
        let xb: f64 = b.random();
        let xa2: f64 = a2.random();
        assert_eq!(xa, xa2);
        assert_ne!(xa, xb);
    }

    #[test]
    fn sbm_spec_validation() {
        assert!(SbmSpec::new(vec![10, 10], 0.5, 0.1, vec![1.0, 2.0], 2).is_ok());
        assert!(SbmSpec::new(vec![10, 10], 0.1, 0.5, vec![1.0, 2.0], 2).is_err());
        assert!(SbmSpec::new(vec![10], 0.5, 0.1, vec![1.0, 2.0], 2).is_err());
        assert!(SbmSpec::new(vec![], 0.5, 0.1, vec![], 2).is_err());
    }

    #[test]
    fn sbm_disconnects_blocks_when_p_out_is_zero() {
        let spec = SbmSpec::new(vec![15, 15], 1.0, 0.0, vec![1.0, 1.0], 1).unwrap();
        let mut rng = child_rng(3, 0);
        let sample = generate_sbm_graph(&spec, &mut rng);
        for &(u, v) in &sample.edges {
            assert_eq!(sample.planted_labels[u], sample.planted_labels[v]);
        }
        // p_in = 1 makes each block a clique.
        assert_eq!(sample.edges.len(), 2 * (15 * 14 / 2));
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodName::ALL {
            assert_eq!(MethodName::parse(m.as_str()).unwrap(), m);
        }
        assert!(MethodName::parse("bogus").is_err());
    }

    #[test]
    fn sampled_moments_match_the_conditional_law() {
        let dgp = Dgp::from_index(2, 3).unwrap();
        let x = vec![0.4, -1.1, 0.7];
        let (mu, sd) = (dgp.mean(&x), dgp.noise_sd(&x));
        let draws = 100_000usize;
        let mut rng = child_rng(11, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let y = dgp.sample_response(&x, &mut rng);
            sum += y;
            sum_sq += y * y;
        }
        let m = sum / draws as f64;
        let v = sum_sq / draws as f64 - m * m;
        let se_mean = sd / (draws as f64).sqrt();
        let se_var = sd * sd * (2.0 / draws as f64).sqrt();
        assert!((m - mu).abs() < 4.0 * se_mean, "mean {m} vs {mu}");
        assert!((v - sd * sd).abs() < 4.0 * se_var, "var {v} vs {}", sd * sd);
    }

    #[test]
    fn density_ratio_integrates_to_one_under_the_training_law() {
        let dgp = Dgp::from_index(1, 3).unwrap();
        let sigma_x = 1.2;
        let draws = 100_000usize;
        let mut rng = child_rng(12, 0);
        let mut sum = 0.0;
        for _ in 0..draws {
            let x = dgp.sample_covariate(1.0, &mut rng);
            sum += dgp.density_ratio(sigma_x, &x);
        }
        let mean = sum / draws as f64;
        assert!((mean - 1.0).abs() < 0.01, "normalization {mean}");
    }

    #[test]
    fn analytic_coverage_matches_monte_carlo_on_random_regions() {
        let dgp = Dgp::from_index(2, 2).unwrap();
        let draws = 1_000_000usize;
        let mut rng = child_rng(13, 0);
        for round in 0..20u32 {
            let x = dgp.sample_covariate(1.0, &mut rng);
            let (mu, sd) = (dgp.mean(&x), dgp.noise_sd(&x));
            let pieces = 1 + (round % 3) as usize;
            let mut cuts: Vec<f64> = (0..2 * pieces)
                .map(|_| mu + sd * 6.0 * (rng.random::<f64>() - 0.5))
                .collect();
            cuts.sort_unstable_by(f64::total_cmp);
            let intervals: Vec<(f64, f64)> =
                cuts.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let region = PredictionRegion::analytic(intervals).unwrap();
            let p = dgp.conditional_coverage(&region, &x);

            let mut hits = 0usize;
            for _ in 0..draws {
                if region.contains(dgp.sample_response(&x, &mut rng)) {
                    hits += 1;
                }
            }
            let p_hat = hits as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-6);
            assert!(
                (p_hat - p).abs() <= 3.0 * se,
                "round {round}: analytic {p} vs empirical {p_hat} (se {se})"
            );
        }
    }

    #[test]
    fn random_interval_coverage_matches_a_ten_million_draw_estimate() {
        let dgp = Dgp::from_index(2, 4).unwrap();
        let mut rng = child_rng(14, 0);
        let x = dgp.sample_covariate(1.0, &mut rng);
        let (mu, sd) = (dgp.mean(&x), dgp.noise_sd(&x));
        let a = mu - sd * (0.3 + 2.0 * rng.random::<f64>());
        let b = mu + sd * (0.3 + 2.0 * rng.random::<f64>());
        let region = PredictionRegion::analytic(vec![(a, b)]).unwrap();
        let p = dgp.conditional_coverage(&region, &x);

        let draws = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..draws {
            if region.contains(dgp.sample_response(&x, &mut rng)) {
                hits += 1;
            }
        }
        let p_hat = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (p_hat - p).abs() <= 3.0 * se,
            "analytic {p} vs empirical {p_hat} (se {se})"
        );
    }

    #[test]
    fn sbm_edge_count_matches_the_binomial_moments() {
        let spec = SbmSpec::new(vec![40, 50, 30], 0.3, 0.05, vec![1.0, 1.5, 2.0], 2).unwrap();
        let pairs_in = (40 * 39 + 50 * 49 + 30 * 29) as f64 / 2.0;
        let pairs_out = (120 * 119) as f64 / 2.0 - pairs_in;
        let expected = pairs_in * 0.3 + pairs_out * 0.05;
        assert!((spec.expected_edges() - expected).abs() < 1e-9);
        let variance = pairs_in * 0.3 * 0.7 + pairs_out * 0.05 * 0.95;

        let seeds = 40u64;
        let mut total = 0.0;
        for seed in 0..seeds {
            let mut rng = child_rng(500 + seed, 0);
            total += generate_sbm_graph(&spec, &mut rng).edges.len() as f64;
        }
        let mean = total / seeds as f64;
        let band = 4.0 * (variance / seeds as f64).sqrt();
        assert!(
            (mean - expected).abs() <= band,
            "mean edges {mean} vs {expected} (band {band})"
        );
    }

    #[test]
    fn spec_validation_rejects_bad_configs() {
        let dgp = Dgp::from_index(1, 2).unwrap();
        let level = Level::new(0.1).unwrap();
        let methods = vec![MethodName::Scp];
        assert!(Level::new(0.0).is_err());
        assert!(
            ExperimentSpec::new(dgp.clone(), 0.0, 100, level, methods.clone(), 1).is_err()
        );
        assert!(ExperimentSpec::new(dgp.clone(), 1.0, 3, level, methods.clone(), 1).is_err());
        assert!(ExperimentSpec::new(dgp.clone(), 1.0, 100, level, vec![], 1).is_err());
        let spec = ExperimentSpec::new(dgp, 1.0, 100, level, methods, 1).unwrap();
        assert!(spec.clone().with_reps(0).is_err());
        assert!(spec.clone().with_test_points(0).is_err());
        assert!(spec.clone().with_neff_target(1.0).is_err());
        assert!(spec.clone().with_neff_target(101.0).is_err());
        assert!(spec.clone().with_bandwidth(0.0).is_err());
        assert!(spec.clone().with_grid_resolution(1).is_err());
        assert!(spec.with_neff_target(40.0).is_ok());
    }

    #[test]
    fn repetition_errors_carry_the_repetition_index() {
        let dgp = Dgp::from_index(1, 2).unwrap();
        let level = Level::new(0.1).unwrap();
        let spec =
            ExperimentSpec::new(dgp, 1.0, 50, level, vec![MethodName::Scp], 1).unwrap();
        let err = run_single_repetition(&spec, 3, &[]).unwrap_err();
        let text = alloc::format!("{err}");
        assert!(text.contains("repetition 3"), "message: {text}");
    }

    #[test]
    fn identical_seeds_give_bit_identical_tables() {
        let dgp = Dgp::from_index(1, 2).unwrap();
        let level = Level::new(0.1).unwrap();
        let methods = vec![MethodName::Scp, MethodName::Rlcp, MethodName::Wcp];
        let make = || {
            ExperimentSpec::new(dgp.clone(), 1.2, 60, level, methods.clone(), 42)
                .unwrap()
                .with_reps(2)
                .unwrap()
                .with_test_points(20)
                .unwrap()
        };
        let table_a = run_coverage_experiment(&make()).unwrap();
        let table_b = run_coverage_experiment(&make()).unwrap();
        assert_eq!(table_a, table_b);
        assert_eq!(table_a.rows.len(), 6);
        assert_eq!(table_a.summary.len(), 3);
        // Rows are method-major with repetitions ascending inside.
        assert_eq!(table_a.rows[0].method, "scp");
        assert_eq!(table_a.rows[0].rep, Some(0));
        assert_eq!(table_a.rows[1].rep, Some(1));
        assert_eq!(table_a.rows[2].method, "rlcp");
    }

    #[test]
    fn aggregate_rejects_misaligned_records() {
        let dgp = Dgp::from_index(1, 2).unwrap();
        let level = Level::new(0.1).unwrap();
        let spec = ExperimentSpec::new(dgp, 1.0, 50, level, vec![MethodName::Scp], 9)
            .unwrap()
            .with_test_points(5)
            .unwrap();
        let xs = spec.draw_test_covariates();
        let record = run_single_repetition(&spec, 0, &xs).unwrap();
        assert!(aggregate(&spec, &[]).is_err());
        assert!(aggregate(&spec, &[record.clone(), record.clone()]).is_err());
        let mut wrong_method = record.clone();
        wrong_method.outcomes[0].method = MethodName::Wcp;
        assert!(aggregate(&spec, &[wrong_method]).is_err());
        let mut wrong_len = record.clone();
        wrong_len.outcomes[0].coverages.pop();
        let mut other = record.clone();
        other.rep = 1;
        assert!(aggregate(&spec, &[other, wrong_len]).is_err());
        assert!(aggregate(&spec, &[record]).is_ok());
    }

    #[test]
    fn scp_experiment_sits_near_nominal_coverage() {
        let dgp = Dgp::from_index(3, 1).unwrap();
        let level = Level::new(0.1).unwrap();
        let spec = ExperimentSpec::new(dgp, 1.0, 150, level, vec![MethodName::Scp], 7)
            .unwrap()
            .with_reps(4)
            .unwrap()
            .with_test_points(100)
            .unwrap();
        let table = run_coverage_experiment(&spec).unwrap();
        let summary = &table.summary[0];
        assert!(
            (summary.marginal - 0.9).abs() < 0.05,
            "marginal {}",
            summary.marginal
        );
        assert!(summary.mean_length.is_finite() && summary.mean_length > 0.0);
        let per_rep_mean: f64 =
            table.rows.iter().map(|r| r.marginal).sum::<f64>() / table.rows.len() as f64;
        assert!((per_rep_mean - summary.marginal).abs() < 1e-12);
        for row in table.rows.iter().chain(table.summary.iter()) {
            assert!(row.marginal >= 0.0 && row.marginal <= 1.0);
            assert!(row.cond_miscov >= 0.0 && row.cond_miscov <= 1.0);
        }
    }

    #[test]
    fn grid_regions_converge_at_the_default_resolution() {
        use crate::methods::{build_prediction_region, build_region_grid};

        let dgp = Dgp::from_index(3, 1).unwrap();
        let mut rng = child_rng(15, 0);
        let (xs, ys) = dgp.sample_pairs(80, 1.0, &mut rng);
        let basis = BasisSpec::linear(1);
        let mean = fit_least_squares(&xs, &ys, &basis).unwrap();
        let kernel = KernelSpec::gaussian(0.5).unwrap();
        let parts = FittedComponents {
            mean: Some(mean),
            kernel: Some(kernel),
            ..FittedComponents::default()
        };
        let predictor = make_predictor(MethodName::Lcp, &parts).unwrap();
        let (xc, yc) = dgp.sample_pairs(80, 1.0, &mut rng);
        let domain = padded_response_domain(&yc, &[]);
        let calib = CalibSet::new(xc, yc).unwrap();
        let level = Level::new(0.2).unwrap();
        let x_test = vec![0.3];
        let realized = crate::methods::RealizedWeights::deterministic();

        let analytic = build_prediction_region(
            &predictor,
            &calib,
            &x_test,
            level,
            &realized,
            Some(domain),
            DEFAULT_GRID_RESOLUTION,
        )
        .unwrap();
        let coarse = build_region_grid(
            &predictor,
            &calib,
            &x_test,
            level,
            &realized,
            Some(domain),
            DEFAULT_GRID_RESOLUTION,
        )
        .unwrap();
        let fine = build_region_grid(
            &predictor,
            &calib,
            &x_test,
            level,
            &realized,
            Some(domain),
            2 * DEFAULT_GRID_RESOLUTION,
        )
        .unwrap();
        let step = (domain.1 - domain.0) / (DEFAULT_GRID_RESOLUTION - 1) as f64;
        let len_a = analytic.total_length();
        assert!(len_a.is_finite() && len_a > 0.0);
        assert!(
            (coarse.total_length() - len_a).abs() <= 2.5 * step,
            "grid {} vs analytic {len_a}",
            coarse.total_length()
        );
        assert!(
            (fine.total_length() - coarse.total_length()).abs() <= 2.5 * step,
            "fine {} vs coarse {}",
            fine.total_length(),
            coarse.total_length()
        );
    }
}
