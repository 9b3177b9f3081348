//! Kernel evaluation, auxiliary-covariate sampling, and bandwidth selection
//! by effective sample size.
//!
//! All kernels are radial: K(x₁, x₂; h) = K₀(‖x₁−x₂‖₂ / h). The gaussian
//! profile is the default because the randomized-localization methods need
//! exact draws from the density proportional to K(·, x; h), which the
//! gaussian admits in closed form.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Result};

/// Radial kernel profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// K₀(u) = exp(−u²/2); strictly positive everywhere.
    Gaussian,
    /// K₀(u) = 1{u ≤ 1}; compactly supported.
    Boxcar,
}

impl KernelFamily {
    /// Profile value at a nonnegative scaled distance.
    #[must_use]
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * u * u).exp(),
            KernelFamily::Boxcar => {
                if u <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A kernel family together with a positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    bandwidth: f64,
}

impl KernelSpec {
    /// Validates the bandwidth.
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::invalid_config(
                "bandwidth",
                alloc::format!("must be a positive finite real, got {bandwidth}"),
            ));
        }
        Ok(KernelSpec { family, bandwidth })
    }

    /// Gaussian kernel with the given bandwidth.
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    /// Boxcar kernel with the given bandwidth.
    pub fn boxcar(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Boxcar, bandwidth)
    }

    /// The kernel family.
    #[must_use]
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// The bandwidth h.
    #[must_use]
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// K(x₁, x₂; h), validating dimensions.
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        if x1.len() != x2.len() {
            return Err(Error::invalid_config(
                "covariates",
                alloc::format!("dimension mismatch: {} vs {}", x1.len(), x2.len()),
            ));
        }
        Ok(self.eval_distance(euclidean_distance(x1, x2)))
    }

    /// Kernel value at a precomputed euclidean distance.
    #[must_use]
    pub fn eval_distance(&self, distance: f64) -> f64 {
        self.family.profile(distance / self.bandwidth)
    }

    /// Draws X̃ with density proportional to K(·, x_test; h): a gaussian
    /// perturbation x + h·Z, or a uniform point in the radius-h ball for the
    /// boxcar family.
    pub fn sample_auxiliary<R: Rng + ?Sized>(&self, x_test: &[f64], rng: &mut R) -> Vec<f64> {
        let d = x_test.len();
        match self.family {
            KernelFamily::Gaussian => x_test
                .iter()
                .map(|xi| xi + self.bandwidth * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            KernelFamily::Boxcar => {
                // Uniform ball: isotropic direction scaled by h·U^{1/d}.
                let mut z: Vec<f64> = (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let u: f64 = rng.random();
                    let radius = self.bandwidth * u.powf(1.0 / d as f64);
                    for v in &mut z {
                        *v *= radius / norm;
                    }
                }
                x_test.iter().zip(&z).map(|(xi, zi)| xi + zi).collect()
            }
        }
    }
}

/// Euclidean distance; assumes equal dimensions (validated by callers).
#[must_use]
pub fn euclidean_distance(x1: &[f64], x2: &[f64]) -> f64 {
    x1.iter()
        .zip(x2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Kernel values of one point against a set of rows.
pub fn kernel_row(spec: &KernelSpec, x: &[f64], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|r| spec.eval(x, r)).collect()
}

/// Upper-triangle pairwise distances in row-major order ((0,1), (0,2), ...).
fn pairwise_distances(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid_config(
            "covariates",
            "all rows must share one dimension",
        ));
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(euclidean_distance(&rows[i], &rows[j]));
        }
    }
    Ok(out)
}

/// Median of the pairwise euclidean distances between rows.
pub fn median_pairwise_distance(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::degenerate(
            "median pairwise distance needs at least 2 rows",
        ));
    }
    let mut dists = pairwise_distances(rows)?;
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    Ok(if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    })
}

/// Effective-sample-size estimate from precomputed upper-triangle distances.
fn neff_from_distances(family: KernelFamily, h: f64, dists: &[f64], n: usize) -> f64 {
    // Leave-one-out row means estimate E{K(X_i, X_j; h) | X_i}; their squared
    // average over i estimates the numerator, the off-diagonal mean of K² the
    // denominator.
    let mut row_sum = alloc::vec![0.0f64; n];
    let mut sq_sum = 0.0f64;
    let mut idx = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let k = family.profile(dists[idx] / h);
            row_sum[i] += k;
            row_sum[j] += k;
            sq_sum += 2.0 * k * k;
            idx += 1;
        }
    }
    let num = row_sum
        .iter()
        .map(|s| {
            let m = s / (n - 1) as f64;
            m * m
        })
        .sum::<f64>()
        / n as f64;
    let den = sq_sum / (n * (n - 1)) as f64;
    if den <= 0.0 {
        // Kernel support excludes every pair: one effective observation.
        return 1.0;
    }
    n as f64 * num / den
}

/// Plug-in estimate of the effective sample size
/// n·E[E{K(X₁,X₂;h)|X₁}²] / E{K²(X₁,X₂;h)}.
pub fn estimate_effective_sample_size(spec: &KernelSpec, covariates: &[Vec<f64>]) -> Result<f64> {
    let n = covariates.len();
    if n < 2 {
        return Err(Error::degenerate(
            "effective sample size needs at least 2 covariate rows",
        ));
    }
    let dists = pairwise_distances(covariates)?;
    Ok(neff_from_distances(
        spec.family(),
        spec.bandwidth(),
        &dists,
        n,
    ))
}

/// Maximum bisection steps for bandwidth matching.
const BANDWIDTH_MAX_ITERS: usize = 200;
/// Convergence tolerance in effective-sample-size units.
const BANDWIDTH_TOL: f64 = 0.5;

/// Finds h such that the estimated effective sample size matches `target`
/// within 0.5, by bisection on log h over
/// [1e−3, 1e3] × median pairwise distance.
pub fn bandwidth_for_target_neff(
    family: KernelFamily,
    target: f64,
    covariates: &[Vec<f64>],
) -> Result<f64> {
    let n = covariates.len();
    if n < 2 {
        return Err(Error::degenerate(
            "bandwidth matching needs at least 2 covariate rows",
        ));
    }
    if !(target > 1.0 && target <= n as f64) {
        return Err(Error::invalid_config(
            "target",
            alloc::format!("must lie in (1, {n}], got {target}"),
        ));
    }
    let median = median_pairwise_distance(covariates)?;
    if !(median > 0.0) {
        return Err(Error::degenerate(
            "all covariate rows coincide; bandwidth is unidentified",
        ));
    }
    let dists = pairwise_distances(covariates)?;
    let eval = |h: f64| neff_from_distances(family, h, &dists, n);

    let mut lo = 1e-3 * median;
    let mut hi = 1e3 * median;
    let f_lo = eval(lo);
    let f_hi = eval(hi);
    if (f_lo - target).abs() <= BANDWIDTH_TOL {
        return Ok(lo);
    }
    if (f_hi - target).abs() <= BANDWIDTH_TOL {
        return Ok(hi);
    }
    if f_lo > target || f_hi < target {
        return Err(Error::degenerate(alloc::format!(
            "target {target} is not bracketed: n_eff range [{f_lo}, {f_hi}]"
        )));
    }
    for _ in 0..BANDWIDTH_MAX_ITERS {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let f_mid = eval(mid);
        if (f_mid - target).abs() <= BANDWIDTH_TOL {
            return Ok(mid);
        }
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::degenerate(alloc::format!(
        "bandwidth bisection failed to reach n_eff {target} within {BANDWIDTH_MAX_ITERS} steps"
    )))
}
