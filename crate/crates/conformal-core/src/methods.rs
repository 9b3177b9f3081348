//! The method catalogue: each method binds a score construction to a weight
//! construction, and every prediction region is the same weighted-quantile
//! inversion applied to that pair.
//!
//! Scores fall into two families. Z-free scores (residual, quantile-centered,
//! CDF-transformed with pre-trained estimators, group-adjusted) are fixed
//! functions once their components are fitted on training data, so
//! calibration is a single quantile. Calibration-dependent scores (localized
//! rank, calibration-fitted centering) default to a fast variant fit on the
//! calibration points only, with an exact trial-response refit behind the
//! `Exact` mode for the two kinds that support it.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::calib::{
    default_y_domain, linspace, Level, PredictionRegion, WeightedScoreSample,
};
use crate::estimators::{
    fit_pinball_qr, ConditionalCdf, GroupAdjustment, LinearModel, PinballModel, SolverConfig,
    WeightedCdf,
};
use crate::kernels::KernelSpec;
use crate::sim::{Dgp, MethodName};
use crate::{Error, Result};

/// A labelled calibration set.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibSet {
    covariates: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl CalibSet {
    /// Validates a nonempty set with matching lengths and finite responses.
    pub fn new(covariates: Vec<Vec<f64>>, responses: Vec<f64>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::degenerate("calibration set is empty"));
        }
        if covariates.len() != responses.len() {
            return Err(Error::invalid_config(
                "responses",
                "covariates and responses must have equal length",
            ));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid_config(
                "responses",
                "responses must be finite",
            ));
        }
        Ok(CalibSet {
            covariates,
            responses,
        })
    }

    /// Number of calibration pairs.
    #[must_use]
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    /// True when empty (unreachable after construction).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Covariate rows.
    #[must_use]
    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    /// Responses.
    #[must_use]
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
}

/// A known positive density-ratio function r(x) = dP_test/dP_train.
#[derive(Debug, Clone, Copy)]
pub enum RatioFn {
    /// Constant 1: no shift.
    Unit,
    /// The gaussian scale ratio N_d(0, σ²I) / N_d(0, I).
    GaussianScale {
        /// Test-side covariate scale σ.
        sigma_x: f64,
        /// Covariate dimension.
        dim: usize,
    },
    /// Arbitrary deterministic ratio with a stable name.
    Named {
        /// Identifier shown in reports.
        name: &'static str,
        /// The ratio function.
        ratio: fn(&[f64]) -> f64,
    },
}

impl RatioFn {
    /// r(x).
    #[must_use]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RatioFn::Unit => 1.0,
            RatioFn::GaussianScale { sigma_x, dim } => {
                let norm_sq: f64 = x.iter().map(|v| v * v).sum();
                sigma_x.powi(-(*dim as i32)) * (0.5 * norm_sq * (1.0 - sigma_x.powi(-2))).exp()
            }
            RatioFn::Named { ratio, .. } => ratio(x),
        }
    }
}

/// How calibration weights are constructed.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    /// w ≡ 1.
    Uniform,
    /// w(x) = r(x), the known covariate-shift density ratio.
    DensityRatio(RatioFn),
    /// w(x) = K(x, X̃; h) with X̃ drawn around the test covariate.
    RandomizedLocal(KernelSpec),
    /// w(x) = r(x)·K(x, X̃; h): shift and localization composed.
    ShiftLocal(RatioFn, KernelSpec),
}

impl WeightSpec {
    fn kernel(&self) -> Option<&KernelSpec> {
        match self {
            WeightSpec::RandomizedLocal(k) | WeightSpec::ShiftLocal(_, k) => Some(k),
            _ => None,
        }
    }
}

/// The per-test-point realization of a weight spec: localized weights draw
/// their auxiliary covariate X̃ once per test point per repetition, and the
/// draw is recorded here so reports can reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedWeights {
    x_tilde: Option<Vec<f64>>,
}

impl RealizedWeights {
    /// Realization for deterministic weight kinds.
    #[must_use]
    pub fn deterministic() -> Self {
        RealizedWeights { x_tilde: None }
    }

    /// The recorded auxiliary draw, when the weights are randomized.
    #[must_use]
    pub fn x_tilde(&self) -> Option<&[f64]> {
        self.x_tilde.as_deref()
    }
}

/// Score constructions. Each carries exactly the fitted components its kind
/// requires.
#[derive(Debug, Clone)]
pub enum ScoreSpec {
    /// v(x, y) = |y − μ̂(x)| with a pre-trained mean model.
    Residual {
        /// Pre-trained mean model.
        mean: LinearModel,
    },
    /// s = v(x, y) − Q̂(x): the base score centered by a pre-trained
    /// conditional-quantile estimate of the score itself.
    CqrOneSided {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Pre-trained (1−α)-quantile model of v given x.
        upper: PinballModel,
    },
    /// s = max{y − Q̂_hi(x), Q̂_lo(x) − y}: the two-sided interval score.
    CqrTwoSided {
        /// Lower quantile model.
        lower: PinballModel,
        /// Upper quantile model.
        upper: PinballModel,
    },
    /// s = |F̂(y | x) − 1/2| with a pre-trained conditional response CDF.
    Dcp {
        /// Conditional CDF of the response.
        cdf: ConditionalCdf,
    },
    /// s = F̂(v(x, y) | x): the CDF-transformed base score (identity link).
    GlcpIdentity {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Conditional CDF of the base score, fit on training data.
        cdf: ConditionalCdf,
    },
    /// The localized rank of the base score among the calibration scores,
    /// with the kernel centered at the scored point's own covariate.
    LcpRank {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Localization kernel.
        kernel: KernelSpec,
    },
    /// s = v(x, y) − Q̂(x) with the quantile model fit on the calibration
    /// set itself (fast mode) or refit per trial response (exact mode).
    CcCentered {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Quantile threshold model fit on the calibration scores.
        threshold: PinballModel,
    },
    /// s = v(x, y) − g(x; â) with the fitted group adjustment.
    BatchGcp {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Group-quantile adjustment fit on training data.
        adjustment: GroupAdjustment,
    },
    /// Diagnostic only: the naive localization that centers the kernel at
    /// the test covariate for every score, breaking exchangeability. Not
    /// marginally valid; exposed to demonstrate the failure, never selected
    /// by the catalogue factory.
    BaseLcpDiagnostic {
        /// Pre-trained mean model behind v.
        mean: LinearModel,
        /// Localization kernel.
        kernel: KernelSpec,
    },
}

impl ScoreSpec {
    /// True when the score depends on the calibration set, so an exact
    /// trial-response recomputation is meaningful.
    #[must_use]
    pub fn supports_exact(&self) -> bool {
        matches!(self, ScoreSpec::LcpRank { .. } | ScoreSpec::CcCentered { .. })
    }

    fn base_residual(mean: &LinearModel, x: &[f64], y: f64) -> f64 {
        (y - mean.predict(x)).abs()
    }
}

/// Fast mode calibrates scores on the calibration points only; exact mode
/// recomputes calibration-dependent scores for every trial response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    /// Score functions are fit on the calibration points only.
    Fast,
    /// Calibration-dependent scores are refit per trial response.
    Exact,
}

/// A complete method: score, weights, calibration mode.
#[derive(Debug, Clone)]
pub struct PredictorSpec {
    score: ScoreSpec,
    weight: WeightSpec,
    mode: CalibrationMode,
}

impl PredictorSpec {
    /// Builds a predictor, enforcing that only calibration-dependent scores
    /// may request exact mode.
    pub fn new(score: ScoreSpec, weight: WeightSpec, mode: CalibrationMode) -> Result<Self> {
        if mode == CalibrationMode::Exact && !score.supports_exact() {
            return Err(Error::invalid_config(
                "calibration_mode",
                "exact mode applies only to calibration-dependent scores",
            ));
        }
        Ok(PredictorSpec {
            score,
            weight,
            mode,
        })
    }

    /// The score construction.
    #[must_use]
    pub fn score(&self) -> &ScoreSpec {
        &self.score
    }

    /// The weight construction.
    #[must_use]
    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    /// The calibration mode.
    #[must_use]
    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    /// Draws the auxiliary covariate for localized weights (once per test
    /// point per repetition); deterministic weight kinds need no randomness.
    pub fn realize_weights<R: Rng + ?Sized>(
        &self,
        x_test: &[f64],
        rng: &mut R,
    ) -> RealizedWeights {
        match self.weight.kernel() {
            Some(kernel) => RealizedWeights {
                x_tilde: Some(kernel.sample_auxiliary(x_test, rng)),
            },
            None => RealizedWeights::deterministic(),
        }
    }

    /// Calibration weights and the test-point weight (the +∞ atom's mass).
    pub fn weights(
        &self,
        calib: &CalibSet,
        x_test: &[f64],
        realized: &RealizedWeights,
    ) -> Result<(Vec<f64>, f64)> {
        let eval = |x: &[f64]| -> Result<f64> {
            Ok(match &self.weight {
                WeightSpec::Uniform => 1.0,
                WeightSpec::DensityRatio(r) => r.eval(x),
                WeightSpec::RandomizedLocal(kernel) => {
                    let xt = realized.x_tilde.as_ref().ok_or_else(|| {
                        Error::invalid_config(
                            "realized",
                            "localized weights need a realized auxiliary draw",
                        )
                    })?;
                    kernel.eval(x, xt)?
                }
                WeightSpec::ShiftLocal(r, kernel) => {
                    let xt = realized.x_tilde.as_ref().ok_or_else(|| {
                        Error::invalid_config(
                            "realized",
                            "localized weights need a realized auxiliary draw",
                        )
                    })?;
                    r.eval(x) * kernel.eval(x, xt)?
                }
            })
        };
        let mut weights = Vec::with_capacity(calib.len());
        for x in calib.covariates() {
            weights.push(eval(x)?);
        }
        Ok((weights, eval(x_test)?))
    }

    /// Fast-mode calibration scores.
    pub fn calibration_scores(&self, calib: &CalibSet) -> Result<Vec<f64>> {
        match &self.score {
            ScoreSpec::Residual { mean } => Ok(calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y))
                .collect()),
            ScoreSpec::CqrOneSided { mean, upper } => Ok(calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y) - upper.predict(x))
                .collect()),
            ScoreSpec::CqrTwoSided { lower, upper } => Ok(calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| (y - upper.predict(x)).max(lower.predict(x) - y))
                .collect()),
            ScoreSpec::Dcp { cdf } => calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| Ok((cdf.eval_with_fallback(y, x)?.value - 0.5).abs()))
                .collect(),
            ScoreSpec::GlcpIdentity { mean, cdf } => calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| {
                    let v = ScoreSpec::base_residual(mean, x, y);
                    Ok(cdf.eval_with_fallback(v, x)?.value)
                })
                .collect(),
            ScoreSpec::LcpRank { mean, kernel } => {
                let vs: Vec<f64> = calib
                    .covariates()
                    .iter()
                    .zip(calib.responses())
                    .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y))
                    .collect();
                let reference = ConditionalCdf::new(
                    *kernel,
                    calib.covariates().to_vec(),
                    vs.clone(),
                )?;
                calib
                    .covariates()
                    .iter()
                    .zip(&vs)
                    .map(|(x, &v)| Ok(reference.eval_with_fallback(v, x)?.value))
                    .collect()
            }
            ScoreSpec::CcCentered { mean, threshold } => Ok(calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y) - threshold.predict(x))
                .collect()),
            ScoreSpec::BatchGcp { mean, adjustment } => Ok(calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y) - adjustment.adjust(x))
                .collect()),
            ScoreSpec::BaseLcpDiagnostic { .. } => Err(Error::invalid_config(
                "score",
                "the diagnostic score needs the test covariate; use test-centered scoring",
            )),
        }
    }

    /// Fast-mode score of a hypothesised test pair.
    pub fn test_score(&self, calib: &CalibSet, x_test: &[f64], y: f64) -> Result<f64> {
        match &self.score {
            ScoreSpec::Residual { mean } => Ok(ScoreSpec::base_residual(mean, x_test, y)),
            ScoreSpec::CqrOneSided { mean, upper } => {
                Ok(ScoreSpec::base_residual(mean, x_test, y) - upper.predict(x_test))
            }
            ScoreSpec::CqrTwoSided { lower, upper } => {
                Ok((y - upper.predict(x_test)).max(lower.predict(x_test) - y))
            }
            ScoreSpec::Dcp { cdf } => {
                Ok((cdf.eval_with_fallback(y, x_test)?.value - 0.5).abs())
            }
            ScoreSpec::GlcpIdentity { mean, cdf } => {
                let v = ScoreSpec::base_residual(mean, x_test, y);
                Ok(cdf.eval_with_fallback(v, x_test)?.value)
            }
            ScoreSpec::LcpRank { mean, kernel } => {
                // Localized rank over the calibration points plus the
                // hypothesised pair itself, mirroring the exact-mode
                // augmented reference; the self mass keeps the score
                // comparable to the self-inclusive calibration ranks.
                let v = ScoreSpec::base_residual(mean, x_test, y);
                let self_mass = kernel.eval(x_test, x_test)?;
                let mut num = self_mass;
                let mut den = self_mass;
                for (xj, &yc) in calib.covariates().iter().zip(calib.responses()) {
                    let k = kernel.eval(xj, x_test)?;
                    den += k;
                    if ScoreSpec::base_residual(mean, xj, yc) <= v {
                        num += k;
                    }
                }
                Ok(num / den)
            }
            ScoreSpec::CcCentered { mean, threshold } => {
                Ok(ScoreSpec::base_residual(mean, x_test, y) - threshold.predict(x_test))
            }
            ScoreSpec::BatchGcp { mean, adjustment } => {
                Ok(ScoreSpec::base_residual(mean, x_test, y) - adjustment.adjust(x_test))
            }
            ScoreSpec::BaseLcpDiagnostic { mean, kernel } => {
                let vs: Vec<f64> = calib
                    .covariates()
                    .iter()
                    .zip(calib.responses())
                    .map(|(x, &yc)| ScoreSpec::base_residual(mean, x, yc))
                    .collect();
                let reference =
                    ConditionalCdf::new(*kernel, calib.covariates().to_vec(), vs)?;
                let v = ScoreSpec::base_residual(mean, x_test, y);
                // Kernel centered at the test covariate for every evaluation.
                Ok(reference.eval_with_fallback(v, x_test)?.value)
            }
        }
    }
}

/// Fitted components handed to the catalogue factory; each method consumes
/// the subset it requires.
#[derive(Debug, Clone, Default)]
pub struct FittedComponents {
    /// Pre-trained mean model for residual base scores.
    pub mean: Option<LinearModel>,
    /// Pre-trained (1−α)-quantile model of the base score given x.
    pub score_quantile: Option<PinballModel>,
    /// Conditional CDF of the response given x (distributional methods).
    pub response_cdf: Option<ConditionalCdf>,
    /// Conditional CDF of the base score given x (CDF-transformed scores).
    pub score_cdf: Option<ConditionalCdf>,
    /// Quantile threshold model fit on the calibration set.
    pub cc_threshold: Option<PinballModel>,
    /// Fitted group adjustment.
    pub adjustment: Option<GroupAdjustment>,
    /// Localization kernel.
    pub kernel: Option<KernelSpec>,
    /// Known covariate-shift density ratio.
    pub ratio: Option<RatioFn>,
}

impl FittedComponents {
    fn take<T>(part: &Option<T>, what: &'static str, method: MethodName) -> Result<T>
    where
        T: Clone,
    {
        part.clone().ok_or_else(|| {
            Error::invalid_config(
                "components",
                alloc::format!("method `{method}` needs {what}"),
            )
        })
    }
}

/// Builds the predictor for a catalogue method from its fitted components.
pub fn make_predictor(method: MethodName, parts: &FittedComponents) -> Result<PredictorSpec> {
    let mean = |parts: &FittedComponents| {
        FittedComponents::take(&parts.mean, "a pre-trained mean model", method)
    };
    let ratio = |parts: &FittedComponents| {
        FittedComponents::take(&parts.ratio, "a density-ratio function", method)
    };
    let kernel = |parts: &FittedComponents| {
        FittedComponents::take(&parts.kernel, "a localization kernel", method)
    };

    let (score, weight) = match method {
        MethodName::Scp => (
            ScoreSpec::Residual {
                mean: mean(parts)?,
            },
            WeightSpec::Uniform,
        ),
        MethodName::Wcp => (
            ScoreSpec::Residual {
                mean: mean(parts)?,
            },
            WeightSpec::DensityRatio(ratio(parts)?),
        ),
        MethodName::Cqr | MethodName::CqrShift => {
            let score = ScoreSpec::CqrOneSided {
                mean: mean(parts)?,
                upper: FittedComponents::take(
                    &parts.score_quantile,
                    "a pre-trained score-quantile model",
                    method,
                )?,
            };
            let weight = if method == MethodName::Cqr {
                WeightSpec::Uniform
            } else {
                WeightSpec::DensityRatio(ratio(parts)?)
            };
            (score, weight)
        }
        MethodName::Dcp => (
            ScoreSpec::Dcp {
                cdf: FittedComponents::take(
                    &parts.response_cdf,
                    "a conditional response CDF",
                    method,
                )?,
            },
            WeightSpec::Uniform,
        ),
        MethodName::Glcp | MethodName::GlcpShift => {
            let score = ScoreSpec::GlcpIdentity {
                mean: mean(parts)?,
                cdf: FittedComponents::take(
                    &parts.score_cdf,
                    "a conditional score CDF",
                    method,
                )?,
            };
            let weight = if method == MethodName::Glcp {
                WeightSpec::Uniform
            } else {
                WeightSpec::DensityRatio(ratio(parts)?)
            };
            (score, weight)
        }
        MethodName::Lcp | MethodName::LcpShift => {
            let score = ScoreSpec::LcpRank {
                mean: mean(parts)?,
                kernel: kernel(parts)?,
            };
            let weight = if method == MethodName::Lcp {
                WeightSpec::Uniform
            } else {
                WeightSpec::DensityRatio(ratio(parts)?)
            };
            (score, weight)
        }
        MethodName::Rlcp => (
            ScoreSpec::Residual {
                mean: mean(parts)?,
            },
            WeightSpec::RandomizedLocal(kernel(parts)?),
        ),
        MethodName::Grlcp => (
            ScoreSpec::Residual {
                mean: mean(parts)?,
            },
            WeightSpec::ShiftLocal(ratio(parts)?, kernel(parts)?),
        ),
        MethodName::Cc | MethodName::CcShift => {
            let score = ScoreSpec::CcCentered {
                mean: mean(parts)?,
                threshold: FittedComponents::take(
                    &parts.cc_threshold,
                    "a calibration-fitted threshold model",
                    method,
                )?,
            };
            let weight = if method == MethodName::Cc {
                WeightSpec::Uniform
            } else {
                WeightSpec::DensityRatio(ratio(parts)?)
            };
            (score, weight)
        }
        MethodName::BatchGcp => (
            ScoreSpec::BatchGcp {
                mean: mean(parts)?,
                adjustment: FittedComponents::take(
                    &parts.adjustment,
                    "a fitted group adjustment",
                    method,
                )?,
            },
            WeightSpec::Uniform,
        ),
    };
    PredictorSpec::new(score, weight, CalibrationMode::Fast)
}

/// Test-point-independent calibration state: the fast-mode scores plus, for
/// localized ranks, the residual reference distribution. Building it once
/// per calibration set and reusing it across test points avoids an O(n²)
/// rescore per prediction.
#[derive(Debug, Clone)]
pub struct CalibrationCache {
    scores: Vec<f64>,
    reference: Option<ConditionalCdf>,
}

impl CalibrationCache {
    /// Fast-mode calibration scores, in calibration order.
    #[must_use]
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl PredictorSpec {
    /// Precomputes the calibration state shared by every test point.
    pub fn calibration_cache(&self, calib: &CalibSet) -> Result<CalibrationCache> {
        let scores = self.calibration_scores(calib)?;
        let reference = match &self.score {
            ScoreSpec::LcpRank { mean, kernel } => {
                let vs: Vec<f64> = calib
                    .covariates()
                    .iter()
                    .zip(calib.responses())
                    .map(|(x, &y)| ScoreSpec::base_residual(mean, x, y))
                    .collect();
                Some(ConditionalCdf::new(
                    *kernel,
                    calib.covariates().to_vec(),
                    vs,
                )?)
            }
            _ => None,
        };
        Ok(CalibrationCache { scores, reference })
    }
}

/// The weighted conformal threshold for a test point.
pub fn conformal_threshold(
    spec: &PredictorSpec,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
) -> Result<f64> {
    let cache = spec.calibration_cache(calib)?;
    conformal_threshold_cached(spec, &cache, calib, x_test, level, realized)
}

/// [`conformal_threshold`] with a precomputed [`CalibrationCache`].
pub fn conformal_threshold_cached(
    spec: &PredictorSpec,
    cache: &CalibrationCache,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
) -> Result<f64> {
    let (weights, w_test) = spec.weights(calib, x_test, realized)?;
    let sample = WeightedScoreSample::new(cache.scores.clone(), weights, w_test)?;
    Ok(sample.quantile(level))
}

/// Builds the prediction region {y : s(x_test, y) ≤ q}: analytic interval
/// inversion for score kinds monotone away from a center, grid search
/// otherwise (and always in exact mode).
pub fn build_prediction_region(
    spec: &PredictorSpec,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<PredictionRegion> {
    if spec.mode() == CalibrationMode::Exact {
        return build_region_exact(spec, calib, x_test, level, realized, y_domain, resolution);
    }
    let cache = spec.calibration_cache(calib)?;
    build_prediction_region_cached(
        spec, &cache, calib, x_test, level, realized, y_domain, resolution,
    )
}

/// [`build_prediction_region`] with a precomputed [`CalibrationCache`].
#[allow(clippy::too_many_arguments)]
pub fn build_prediction_region_cached(
    spec: &PredictorSpec,
    cache: &CalibrationCache,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<PredictionRegion> {
    if spec.mode() == CalibrationMode::Exact {
        return build_region_exact(spec, calib, x_test, level, realized, y_domain, resolution);
    }
    let q = conformal_threshold_cached(spec, cache, calib, x_test, level, realized)?;
    if q == f64::INFINITY {
        return PredictionRegion::analytic(alloc::vec![(f64::NEG_INFINITY, f64::INFINITY)]);
    }

    match &spec.score {
        ScoreSpec::Residual { mean } => {
            symmetric_interval(mean.predict(x_test), q)
        }
        ScoreSpec::CqrOneSided { mean, upper } => {
            symmetric_interval(mean.predict(x_test), upper.predict(x_test) + q)
        }
        ScoreSpec::CqrTwoSided { lower, upper } => {
            let lo = lower.predict(x_test) - q;
            let hi = upper.predict(x_test) + q;
            if lo > hi {
                Ok(PredictionRegion::empty())
            } else {
                PredictionRegion::analytic(alloc::vec![(lo, hi)])
            }
        }
        ScoreSpec::Dcp { cdf } => {
            let localizer = cdf.localizer_at(x_test)?;
            cdf_band_interval(&localizer, 0.5 - q, 0.5 + q)
        }
        ScoreSpec::GlcpIdentity { mean, cdf } => {
            let localizer = cdf.localizer_at(x_test)?;
            symmetric_cdf_interval(mean.predict(x_test), &localizer, q)
        }
        ScoreSpec::LcpRank { mean, kernel } => {
            let reference = cache.reference.as_ref().ok_or_else(|| {
                Error::invalid_config(
                    "cache",
                    "calibration cache was built for a different score kind",
                )
            })?;
            let localizer = reference.localizer_at(x_test)?;
            // The test rank includes the hypothesised pair's own mass s:
            // rank(v) = (W·F̂(v) + s)/(W + s) ≤ q  ⟺  F̂(v) ≤ q_adj.
            let self_mass = kernel.eval(x_test, x_test)?;
            let mass = localizer.total_mass();
            if !(mass > 0.0) {
                // Empty neighborhood: the rank is identically 1.
                return if 1.0 <= q {
                    PredictionRegion::analytic(alloc::vec![(
                        f64::NEG_INFINITY,
                        f64::INFINITY,
                    )])
                } else {
                    Ok(PredictionRegion::empty())
                };
            }
            let q_adj = (q * (mass + self_mass) - self_mass) / mass;
            if q_adj < 0.0 {
                return Ok(PredictionRegion::empty());
            }
            symmetric_cdf_interval(mean.predict(x_test), &localizer, q_adj)
        }
        ScoreSpec::CcCentered { mean, threshold } => {
            symmetric_interval(mean.predict(x_test), threshold.predict(x_test) + q)
        }
        ScoreSpec::BatchGcp { mean, adjustment } => {
            symmetric_interval(mean.predict(x_test), adjustment.adjust(x_test) + q)
        }
        ScoreSpec::BaseLcpDiagnostic { .. } => {
            build_region_grid(spec, calib, x_test, level, realized, y_domain, resolution)
        }
    }
}

/// {y : |y − center| ≤ half_width}, empty when the half-width is negative.
fn symmetric_interval(center: f64, half_width: f64) -> Result<PredictionRegion> {
    if half_width < 0.0 {
        Ok(PredictionRegion::empty())
    } else if half_width == f64::INFINITY {
        PredictionRegion::analytic(alloc::vec![(f64::NEG_INFINITY, f64::INFINITY)])
    } else {
        PredictionRegion::analytic(alloc::vec![(center - half_width, center + half_width)])
    }
}

/// {y : |y − center| < v⁺} where v⁺ is the first atom whose CDF value
/// exceeds q; the open endpoint is represented by the previous float.
fn symmetric_cdf_interval(
    center: f64,
    localizer: &WeightedCdf,
    q: f64,
) -> Result<PredictionRegion> {
    let v_sup = localizer.upper_jump(q);
    if v_sup == f64::INFINITY {
        return PredictionRegion::analytic(alloc::vec![(f64::NEG_INFINITY, f64::INFINITY)]);
    }
    let v_max = v_sup.next_down();
    if v_max < 0.0 {
        return Ok(PredictionRegion::empty());
    }
    PredictionRegion::analytic(alloc::vec![(center - v_max, center + v_max)])
}

/// {y : p_lo ≤ F̂(y) ≤ p_hi} for a step CDF: starts at the first atom
/// reaching p_lo, ends just before the first atom exceeding p_hi.
fn cdf_band_interval(
    localizer: &WeightedCdf,
    p_lo: f64,
    p_hi: f64,
) -> Result<PredictionRegion> {
    let a = localizer.lower_inverse(p_lo);
    let jump = localizer.upper_jump(p_hi);
    let b = if jump == f64::INFINITY {
        f64::INFINITY
    } else {
        jump.next_down()
    };
    if a > b {
        return Ok(PredictionRegion::empty());
    }
    PredictionRegion::analytic(alloc::vec![(a, b)])
}

/// Grid-search region build: evaluates the fast-mode score on every grid
/// point and merges accepted runs.
pub fn build_region_grid(
    spec: &PredictorSpec,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<PredictionRegion> {
    let q = conformal_threshold(spec, calib, x_test, level, realized)?;
    let (lo, hi) = match y_domain {
        Some(pair) => pair,
        None => default_y_domain(calib.responses())?,
    };
    let grid = linspace(lo, hi, resolution)?;
    let mut accepted = Vec::with_capacity(grid.len());
    for &y in &grid {
        accepted.push(spec.test_score(calib, x_test, y)? <= q);
    }
    PredictionRegion::from_grid(&grid, &accepted)
}

/// Exact-mode region build: for each trial response the calibration-dependent
/// score is recomputed on the augmented sample before thresholding.
fn build_region_exact(
    spec: &PredictorSpec,
    calib: &CalibSet,
    x_test: &[f64],
    level: Level,
    realized: &RealizedWeights,
    y_domain: Option<(f64, f64)>,
    resolution: usize,
) -> Result<PredictionRegion> {
    let (lo, hi) = match y_domain {
        Some(pair) => pair,
        None => default_y_domain(calib.responses())?,
    };
    let grid = linspace(lo, hi, resolution)?;
    let (weights, w_test) = spec.weights(calib, x_test, realized)?;
    let mut accepted = Vec::with_capacity(grid.len());

    match &spec.score {
        ScoreSpec::LcpRank { mean, kernel } => {
            let n = calib.len();
            let vs: Vec<f64> = calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &yc)| ScoreSpec::base_residual(mean, x, yc))
                .collect();
            // Reusable aggregates: within-calibration rank mass and row mass,
            // plus each row's kernel value against the test covariate.
            let mut rank_mass = alloc::vec![0.0f64; n];
            let mut row_mass = alloc::vec![0.0f64; n];
            let mut k_test = alloc::vec![0.0f64; n];
            for i in 0..n {
                k_test[i] = kernel.eval(&calib.covariates()[i], x_test)?;
                for j in 0..n {
                    let k = kernel.eval(&calib.covariates()[i], &calib.covariates()[j])?;
                    row_mass[i] += k;
                    if vs[j] <= vs[i] {
                        rank_mass[i] += k;
                    }
                }
            }
            let k_test_total: f64 = k_test.iter().sum();
            let mu = mean.predict(x_test);
            for &y in &grid {
                let v_trial = (y - mu).abs();
                let mut scores = Vec::with_capacity(n);
                for i in 0..n {
                    let extra = if v_trial <= vs[i] { k_test[i] } else { 0.0 };
                    let denom = row_mass[i] + k_test[i];
                    scores.push(if denom > 0.0 {
                        (rank_mass[i] + extra) / denom
                    } else {
                        1.0
                    });
                }
                let test_rank_mass: f64 = vs
                    .iter()
                    .zip(&k_test)
                    .filter(|(vj, _)| **vj <= v_trial)
                    .map(|(_, k)| *k)
                    .sum::<f64>()
                    + 1.0;
                let s_test = test_rank_mass / (k_test_total + 1.0);
                let sample =
                    WeightedScoreSample::new(scores, weights.clone(), w_test)?;
                accepted.push(s_test <= sample.quantile(level));
            }
        }
        ScoreSpec::CcCentered { mean, threshold } => {
            let basis = threshold.basis().clone();
            let alpha = threshold.alpha();
            let lambda = threshold.lambda();
            let bound = threshold.norm_bound();
            let mut xs: Vec<Vec<f64>> = calib.covariates().to_vec();
            xs.push(x_test.to_vec());
            let mu = mean.predict(x_test);
            let base_vs: Vec<f64> = calib
                .covariates()
                .iter()
                .zip(calib.responses())
                .map(|(x, &yc)| ScoreSpec::base_residual(mean, x, yc))
                .collect();
            for &y in &grid {
                let mut vs = base_vs.clone();
                vs.push((y - mu).abs());
                let refit = fit_pinball_qr(
                    &xs,
                    &vs,
                    &basis,
                    alpha,
                    lambda,
                    Some(bound),
                    SolverConfig::default(),
                )?;
                let scores: Vec<f64> = calib
                    .covariates()
                    .iter()
                    .zip(&base_vs)
                    .map(|(x, &v)| v - refit.predict(x))
                    .collect();
                let s_test = vs[vs.len() - 1] - refit.predict(x_test);
                let sample =
                    WeightedScoreSample::new(scores, weights.clone(), w_test)?;
                accepted.push(s_test <= sample.quantile(level));
            }
        }
        _ => {
            return Err(Error::invalid_config(
                "calibration_mode",
                "exact mode applies only to calibration-dependent scores",
            ))
        }
    }
    PredictionRegion::from_grid(&grid, &accepted)
}

/// The conformal p-value of a hypothesised test response under a method.
pub fn conformal_p_value(
    spec: &PredictorSpec,
    calib: &CalibSet,
    x_test: &[f64],
    y_test: f64,
    realized: &RealizedWeights,
) -> Result<f64> {
    let scores = spec.calibration_scores(calib)?;
    let (weights, w_test) = spec.weights(calib, x_test, realized)?;
    let sample = WeightedScoreSample::new(scores, weights, w_test)?;
    Ok(sample.p_value(spec.test_score(calib, x_test, y_test)?))
}

/// Oracle score kinds with closed-form conditional laws under the synthetic
/// processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleScoreKind {
    /// s*(x, y) = |y − μ(x)| with the true mean.
    Residual,
    /// s*(x, y) = |F(y|x) − 1/2| with the true conditional CDF.
    Dcp,
    /// s*(x, y) = v*(x, y) − Q_{1−α}(v* | x) with the true score quantile.
    Cqr,
}

/// The intrinsic conditional-mismatch diagnostic: the absolute difference
/// between the conditional (1−α)-quantile of the oracle score at `t` and the
/// weighted marginal (1−α)-quantile of the same score under the training
/// covariate law (Monte Carlo with `mc_samples` draws).
pub fn oracle_conditional_quantile_gap(
    kind: OracleScoreKind,
    weight: &WeightSpec,
    dgp: &Dgp,
    t: &[f64],
    level: Level,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    if t.len() != dgp.dim() {
        return Err(Error::invalid_config(
            "t",
            "query covariate dimension must match the process",
        ));
    }
    if mc_samples < 100 {
        return Err(Error::invalid_config(
            "mc_samples",
            "need at least 100 Monte-Carlo draws",
        ));
    }
    let ratio = match weight {
        WeightSpec::Uniform => None,
        WeightSpec::DensityRatio(r) => Some(*r),
        _ => {
            return Err(Error::invalid_config(
                "weight",
                "the diagnostic supports deterministic weights only",
            ))
        }
    };

    let conditional = match kind {
        OracleScoreKind::Residual => {
            dgp.noise_sd(t)
                * crate::sim::standard_normal_quantile(1.0 - level.alpha() / 2.0)
        }
        // |U − 1/2| has conditional (1−α)-quantile (1−α)/2 at every t.
        OracleScoreKind::Dcp => level.coverage() / 2.0,
        // The centered score has conditional (1−α)-quantile 0 at every t.
        OracleScoreKind::Cqr => 0.0,
    };

    let mut rng = crate::sim::child_rng(seed, 0);
    let mut scores = Vec::with_capacity(mc_samples);
    let mut weights = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        let x = dgp.sample_covariate(1.0, &mut rng);
        let y = dgp.sample_response(&x, &mut rng);
        let s = match kind {
            OracleScoreKind::Residual => (y - dgp.mean(&x)).abs(),
            OracleScoreKind::Dcp => {
                let sd = dgp.noise_sd(&x);
                let u = if sd > 0.0 {
                    crate::sim::standard_normal_cdf((y - dgp.mean(&x)) / sd)
                } else {
                    0.5
                };
                (u - 0.5).abs()
            }
            OracleScoreKind::Cqr => {
                let v = (y - dgp.mean(&x)).abs();
                let q_cond = dgp.noise_sd(&x)
                    * crate::sim::standard_normal_quantile(1.0 - level.alpha() / 2.0);
                v - q_cond
            }
        };
        scores.push(s);
        weights.push(ratio.map_or(1.0, |r| r.eval(&x)));
    }
    let sample = WeightedScoreSample::new(scores, weights, 0.0)?;
    let marginal = sample.quantile(level);
    Ok((conditional - marginal).abs())
}

/// A stable label for reports.
#[must_use]
pub fn describe(spec: &PredictorSpec) -> String {
    let score = match &spec.score {
        ScoreSpec::Residual { .. } => "residual",
        ScoreSpec::CqrOneSided { .. } => "cqr_one_sided",
        ScoreSpec::CqrTwoSided { .. } => "cqr_two_sided",
        ScoreSpec::Dcp { .. } => "dcp",
        ScoreSpec::GlcpIdentity { .. } => "glcp_identity",
        ScoreSpec::LcpRank { .. } => "lcp_rank",
        ScoreSpec::CcCentered { .. } => "cc_centered",
        ScoreSpec::BatchGcp { .. } => "batchgcp",
        ScoreSpec::BaseLcpDiagnostic { .. } => "base_lcp_diagnostic",
    };
    let weight = match &spec.weight {
        WeightSpec::Uniform => "uniform",
        WeightSpec::DensityRatio(_) => "density_ratio",
        WeightSpec::RandomizedLocal(_) => "randomized_local",
        WeightSpec::ShiftLocal(_, _) => "shift_local",
    };
    alloc::format!("{score}+{weight}")
}
