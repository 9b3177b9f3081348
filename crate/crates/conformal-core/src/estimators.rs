//! Trainable components: penalized pinball quantile regression on a finite
//! basis, least-squares mean fitting, kernel conditional CDFs, and the
//! group-quantile adjustment used by batch group-conditional calibration.

use alloc::string::String;
use alloc::vec::Vec;

use crate::calib::Level;
use crate::kernels::KernelSpec;
use crate::{Error, Result};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// One named feature map x ↦ ℝ.
#[derive(Debug, Clone, Copy)]
pub enum Feature {
    /// Constant 1.
    Intercept,
    /// Coordinate projection x[i].
    Coordinate(usize),
    /// Arbitrary deterministic map with a stable name for reports.
    Named {
        /// Identifier shown in reports.
        name: &'static str,
        /// The feature map.
        map: fn(&[f64]) -> f64,
    },
}

impl Feature {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Feature::Intercept => 1.0,
            Feature::Coordinate(i) => x.get(*i).copied().unwrap_or(0.0),
            Feature::Named { map, .. } => map(x),
        }
    }

    fn name(&self) -> String {
        match self {
            Feature::Intercept => String::from("intercept"),
            Feature::Coordinate(i) => alloc::format!("x{i}"),
            Feature::Named { name, .. } => String::from(*name),
        }
    }
}

/// A finite sequence of deterministic feature maps.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    features: Vec<Feature>,
}

impl BasisSpec {
    /// Validates d₀ ≥ 1.
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid_config(
                "basis",
                "need at least one feature map",
            ));
        }
        Ok(BasisSpec { features })
    }

    /// Intercept plus all d coordinates (d₀ = d + 1), the default basis.
    #[must_use]
    pub fn linear(dim: usize) -> Self {
        let mut features = Vec::with_capacity(dim + 1);
        features.push(Feature::Intercept);
        features.extend((0..dim).map(Feature::Coordinate));
        BasisSpec { features }
    }

    /// Intercept only.
    #[must_use]
    pub fn intercept_only() -> Self {
        BasisSpec {
            features: alloc::vec![Feature::Intercept],
        }
    }

    /// Number of features d₀.
    #[must_use]
    pub fn d0(&self) -> usize {
        self.features.len()
    }

    /// Feature vector η(x).
    #[must_use]
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.features.iter().map(|f| f.eval(x)).collect()
    }

    /// Report-stable feature names.
    #[must_use]
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(Feature::name).collect()
    }
}

/// The pinball loss ℓ_{1−α}(s₁, s₂) = {1−α−1(s₂ ≥ s₁)}·(s₁−s₂):
/// (1−α)(s₁−s₂) when s₁ > s₂, α(s₂−s₁) otherwise.
#[must_use]
pub fn pinball_loss(s1: f64, s2: f64, alpha: Level) -> f64 {
    if s1 > s2 {
        (1.0 - alpha.alpha()) * (s1 - s2)
    } else {
        alpha.alpha() * (s2 - s1)
    }
}

/// Subgradient-solver configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Iteration budget.
    pub iterations: usize,
    /// Step scale c in the schedule c·range(target)/√t.
    pub step_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 2000,
            step_scale: 0.5,
        }
    }
}

/// A fitted linear quantile model f_κ(x) = κ·η(x) with ‖κ‖₂ ≤ B.
#[derive(Debug, Clone)]
pub struct PinballModel {
    basis: BasisSpec,
    kappa: Vec<f64>,
    lambda: f64,
    norm_bound: f64,
    alpha: Level,
}

impl PinballModel {
    /// Predicted conditional quantile at x.
    #[must_use]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.basis
            .evaluate(x)
            .iter()
            .zip(&self.kappa)
            .map(|(f, k)| f * k)
            .sum()
    }

    /// Fitted coefficients.
    #[must_use]
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// The basis the model was fit on.
    #[must_use]
    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    /// The quantile level the model targets.
    #[must_use]
    pub fn alpha(&self) -> Level {
        self.alpha
    }

    /// The feasibility bound B.
    #[must_use]
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// The ridge penalty the model was fit with.
    #[must_use]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Scales a vector strictly inside the B-ball when it pokes out; the small
/// shrink keeps the invariant ‖κ‖ ≤ B exact under floating-point rounding.
fn project_to_ball(v: &mut [f64], bound: f64) {
    let norm = l2_norm(v);
    if norm > bound {
        let f = bound / norm * (1.0 - 1e-12);
        for a in v.iter_mut() {
            *a *= f;
        }
    }
}

/// Solves (AᵀA + jitter·I)x = Aᵀb by gaussian elimination with partial
/// pivoting; used to seed the subgradient iterations at the least-squares
/// solution so degenerate targets (all equal) are exact from the start.
fn ridge_normal_equations(features: &[Vec<f64>], targets: &[f64], jitter: f64) -> Vec<f64> {
    let d = features[0].len();
    let n = features.len();
    let mut gram = alloc::vec![0.0f64; d * d];
    let mut rhs = alloc::vec![0.0f64; d];
    for (row, &t) in features.iter().zip(targets) {
        for i in 0..d {
            rhs[i] += row[i] * t;
            for j in 0..d {
                gram[i * d + j] += row[i] * row[j];
            }
        }
    }
    let scale = jitter * (n as f64).max(1.0);
    for i in 0..d {
        gram[i * d + i] += scale;
    }
    // Partial-pivot elimination; the jitter keeps pivots nonzero.
    let mut x = rhs;
    for col in 0..d {
        let mut pivot = col;
        for r in (col + 1)..d {
            if gram[r * d + col].abs() > gram[pivot * d + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..d {
                gram.swap(col * d + c, pivot * d + c);
            }
            x.swap(col, pivot);
        }
        let p = gram[col * d + col];
        if p == 0.0 {
            continue;
        }
        for r in (col + 1)..d {
            let f = gram[r * d + col] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..d {
                gram[r * d + c] -= f * gram[col * d + c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..d).rev() {
        let p = gram[col * d + col];
        if p == 0.0 {
            x[col] = 0.0;
            continue;
        }
        for c in (col + 1)..d {
            x[col] -= gram[col * d + c] * x[c];
        }
        x[col] /= p;
    }
    x
}

struct PinballProblem<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [f64],
    alpha: f64,
    lambda: f64,
}

impl PinballProblem<'_> {
    fn objective(&self, kappa: &[f64]) -> f64 {
        let n = self.targets.len() as f64;
        let mut loss = 0.0;
        for (row, &t) in self.features.iter().zip(self.targets) {
            let pred: f64 = row.iter().zip(kappa).map(|(f, k)| f * k).sum();
            loss += if t > pred {
                (1.0 - self.alpha) * (t - pred)
            } else {
                self.alpha * (pred - t)
            };
        }
        loss / n + self.lambda * kappa.iter().map(|k| k * k).sum::<f64>()
    }

    /// Subgradient of the mean pinball term only; the ridge part is handled
    /// by its exact proximal map in the update for unconditional stability.
    fn pinball_subgradient(&self, kappa: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (row, &t) in self.features.iter().zip(self.targets) {
            let pred: f64 = row.iter().zip(kappa).map(|(f, k)| f * k).sum();
            let slope = if pred >= t {
                self.alpha
            } else {
                -(1.0 - self.alpha)
            };
            for (g, f) in out.iter_mut().zip(row) {
                *g += slope * f;
            }
        }
        let n = self.targets.len() as f64;
        out.iter_mut().for_each(|g| *g /= n);
    }
}

/// Fits the penalized quantile regression
/// min_{‖κ‖ ≤ B} n⁻¹ Σᵢ ℓ_{1−α}(targetᵢ, κ·η(xᵢ)) + λ‖κ‖₂²
/// by projected subgradient steps c·range/√t with Polyak tail averaging,
/// returning the better (by objective) of the averaged and best iterates.
pub fn fit_pinball_qr(
    xs: &[Vec<f64>],
    targets: &[f64],
    basis: &BasisSpec,
    alpha: Level,
    lambda: f64,
    norm_bound: Option<f64>,
    config: SolverConfig,
) -> Result<PinballModel> {
    if xs.len() != targets.len() {
        return Err(Error::invalid_config(
            "targets",
            "covariates and targets must have equal length",
        ));
    }
    if xs.len() < basis.d0() {
        return Err(Error::degenerate(alloc::format!(
            "need at least d0 = {} points, got {}",
            basis.d0(),
            xs.len()
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid_config("targets", "targets must be finite"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid_config("lambda", "must be nonnegative"));
    }
    if config.iterations == 0 {
        return Err(Error::invalid_config("iterations", "must be positive"));
    }

    let max_abs = targets.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let bound = norm_bound.unwrap_or(10.0 * (1.0 + max_abs));
    if !(bound > 0.0) {
        return Err(Error::invalid_config("norm_bound", "must be positive"));
    }

    let features: Vec<Vec<f64>> = xs.iter().map(|x| basis.evaluate(x)).collect();
    if features
        .iter()
        .any(|row| row.iter().any(|f| !f.is_finite()))
    {
        return Err(Error::invalid_config(
            "basis",
            "a feature map produced a non-finite value",
        ));
    }
    let problem = PinballProblem {
        features: &features,
        targets,
        alpha: alpha.alpha(),
        lambda,
    };

    let lo = targets.iter().fold(f64::INFINITY, |m, t| m.min(*t));
    let hi = targets.iter().fold(f64::NEG_INFINITY, |m, t| m.max(*t));
    let step_base = config.step_scale * (hi - lo);

    let mut kappa = ridge_normal_equations(&features, targets, 1e-10);
    project_to_ball(&mut kappa, bound);

    let d = basis.d0();
    let mut best = kappa.clone();
    let mut best_obj = problem.objective(&kappa);
    let mut grad = alloc::vec![0.0f64; d];
    let tail_start = config.iterations / 2;
    let mut tail_sum = alloc::vec![0.0f64; d];
    let mut tail_count = 0usize;

    for t in 1..=config.iterations {
        problem.pinball_subgradient(&kappa, &mut grad);
        let step = step_base / (t as f64).sqrt();
        for (k, g) in kappa.iter_mut().zip(&grad) {
            *k -= step * g;
        }
        if lambda > 0.0 {
            // Exact proximal map of λ‖κ‖² — stable for any λ.
            let shrink = 1.0 / (1.0 + 2.0 * lambda * step);
            kappa.iter_mut().for_each(|k| *k *= shrink);
        }
        project_to_ball(&mut kappa, bound);

        let obj = problem.objective(&kappa);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&kappa);
        }
        if t > tail_start {
            for (s, k) in tail_sum.iter_mut().zip(&kappa) {
                *s += k;
            }
            tail_count += 1;
        }
    }

    let mut averaged: Vec<f64> = tail_sum.iter().map(|s| s / tail_count as f64).collect();
    project_to_ball(&mut averaged, bound);
    let avg_obj = problem.objective(&averaged);
    let (kappa, objective) = if avg_obj < best_obj {
        (averaged, avg_obj)
    } else {
        (best, best_obj)
    };
    if !objective.is_finite() {
        return Err(Error::degenerate(
            "pinball solver diverged to a non-finite objective",
        ));
    }

    Ok(PinballModel {
        basis: basis.clone(),
        kappa,
        lambda,
        norm_bound: bound,
        alpha,
    })
}

/// A least-squares linear model on a basis; the pre-trained mean estimate
/// behind residual base scores.
#[derive(Debug, Clone)]
pub struct LinearModel {
    basis: BasisSpec,
    coef: Vec<f64>,
}

impl LinearModel {
    /// Predicted mean at x.
    #[must_use]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.basis
            .evaluate(x)
            .iter()
            .zip(&self.coef)
            .map(|(f, c)| f * c)
            .sum()
    }

    /// Fitted coefficients.
    #[must_use]
    pub fn coef(&self) -> &[f64] {
        &self.coef
    }
}

/// Ordinary least squares on a basis (tiny ridge jitter for rank safety).
pub fn fit_least_squares(xs: &[Vec<f64>], ys: &[f64], basis: &BasisSpec) -> Result<LinearModel> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::degenerate(
            "least squares needs equal-length nonempty covariates and responses",
        ));
    }
    if xs.len() < basis.d0() {
        return Err(Error::degenerate(alloc::format!(
            "need at least d0 = {} points, got {}",
            basis.d0(),
            xs.len()
        )));
    }
    let features: Vec<Vec<f64>> = xs.iter().map(|x| basis.evaluate(x)).collect();
    let coef = ridge_normal_equations(&features, ys, 1e-10);
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::degenerate("least-squares system is singular"));
    }
    Ok(LinearModel {
        basis: basis.clone(),
        coef,
    })
}

/// The ridge scale λ = (d₀·log n / n)^{2/3} used for calibration-fitted
/// quantile thresholds.
#[must_use]
pub fn cc_ridge_lambda(d0: usize, n: usize) -> f64 {
    let n = n.max(2) as f64;
    (d0 as f64 * n.ln() / n).powf(2.0 / 3.0)
}

/// One evaluation of a localized CDF, with a degeneracy flag set when the
/// kernel neighborhood was empty and the global CDF was substituted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfValue {
    /// The CDF value in [0, 1].
    pub value: f64,
    /// True when the evaluation fell back to the unlocalized CDF.
    pub degenerate: bool,
}

/// Kernel-localized conditional CDF of a scalar v given x
/// (Nadaraya–Watson weighted empirical CDF).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCdf {
    kernel: KernelSpec,
    covariates: Vec<Vec<f64>>,
    values: Vec<f64>,
    /// Indices of `values` in ascending order.
    order: Vec<usize>,
}

impl ConditionalCdf {
    /// Validates a nonempty, finite training set.
    pub fn new(kernel: KernelSpec, covariates: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if covariates.is_empty() || covariates.len() != values.len() {
            return Err(Error::degenerate(
                "conditional CDF needs a nonempty training set with matching lengths",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_config(
                "values",
                "training values must be finite",
            ));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
        Ok(ConditionalCdf {
            kernel,
            covariates,
            values,
            order,
        })
    }

    /// The kernel in use.
    #[must_use]
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// F̂(v | x); errors when every kernel weight at x vanishes.
    pub fn eval(&self, v: f64, x: &[f64]) -> Result<f64> {
        let loc = self.localizer_at(x)?;
        if loc.degenerate {
            return Err(Error::degenerate(
                "kernel neighborhood of the query point carries no weight",
            ));
        }
        Ok(loc.eval(v))
    }

    /// F̂(v | x), substituting the global empirical CDF when the neighborhood
    /// is empty.
    pub fn eval_with_fallback(&self, v: f64, x: &[f64]) -> Result<CdfValue> {
        let loc = self.localizer_at(x)?;
        Ok(CdfValue {
            value: loc.eval(v),
            degenerate: loc.degenerate,
        })
    }

    /// Materializes the weighted CDF at a fixed query point for repeated
    /// evaluation and inversion. Falls back to uniform weights (the global
    /// CDF) on empty neighborhoods, with the flag set.
    pub fn localizer_at(&self, x: &[f64]) -> Result<WeightedCdf> {
        let mut weights = Vec::with_capacity(self.order.len());
        for &i in &self.order {
            weights.push(self.kernel.eval(x, &self.covariates[i])?);
        }
        let sorted: Vec<f64> = self.order.iter().map(|&i| self.values[i]).collect();
        Ok(WeightedCdf::from_sorted(sorted, weights))
    }
}

/// A weighted empirical CDF over sorted atoms, supporting evaluation and
/// both one-sided inversions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCdf {
    sorted_values: Vec<f64>,
    /// Normalized cumulative mass at each atom (last entry 1).
    cumulative: Vec<f64>,
    /// Raw (unnormalized) total weight before any fallback.
    total: f64,
    degenerate: bool,
}

impl WeightedCdf {
    /// Builds from atoms already in ascending order; zero total weight falls
    /// back to uniform weights and sets the degeneracy flag.
    #[must_use]
    pub fn from_sorted(sorted_values: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(sorted_values.len(), weights.len());
        let total: f64 = weights.iter().sum();
        let degenerate = !(total > 0.0);
        let n = sorted_values.len();
        let mut cumulative = Vec::with_capacity(n);
        let mut cum = 0.0;
        for i in 0..n {
            cum += if degenerate { 1.0 } else { weights[i] };
            cumulative.push(cum);
        }
        let denom = if degenerate { n as f64 } else { total };
        for c in &mut cumulative {
            *c /= denom;
        }
        WeightedCdf {
            sorted_values,
            cumulative,
            total,
            degenerate,
        }
    }

    /// True when the kernel neighborhood was empty and uniform weights were
    /// substituted.
    #[must_use]
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Raw total weight mass (zero when the neighborhood was empty, even
    /// though evaluation falls back to uniform weights).
    #[must_use]
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// F(v): total normalized mass of atoms ≤ v.
    #[must_use]
    pub fn eval(&self, v: f64) -> f64 {
        // partition_point gives the count of atoms ≤ v.
        let idx = self.sorted_values.partition_point(|&a| a <= v);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Smallest atom with F(atom) ≥ p; −∞ when p ≤ 0, +∞ when no atom
    /// reaches p.
    #[must_use]
    pub fn lower_inverse(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let idx = self.cumulative.partition_point(|&c| c < p);
        if idx == self.sorted_values.len() {
            f64::INFINITY
        } else {
            self.sorted_values[idx]
        }
    }

    /// Smallest atom where F jumps strictly above p; +∞ when none does.
    /// The set {v : F(v) ≤ p} is exactly (−∞, that atom).
    #[must_use]
    pub fn upper_jump(&self, p: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c <= p);
        if idx == self.sorted_values.len() {
            f64::INFINITY
        } else {
            self.sorted_values[idx]
        }
    }
}

/// A named boolean group indicator over covariates.
#[derive(Debug, Clone, Copy)]
pub enum Group {
    /// Always true.
    All,
    /// x[i] > 0.
    CoordinatePositive(usize),
    /// Arbitrary deterministic indicator with a stable name.
    Named {
        /// Identifier shown in reports.
        name: &'static str,
        /// The indicator.
        indicator: fn(&[f64]) -> bool,
    },
}

impl Group {
    /// Evaluates the indicator.
    #[must_use]
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Group::All => true,
            Group::CoordinatePositive(i) => x.get(*i).copied().unwrap_or(0.0) > 0.0,
            Group::Named { indicator, .. } => indicator(x),
        }
    }

    /// Report-stable name.
    #[must_use]
    pub fn name(&self) -> String {
        match self {
            Group::All => String::from("all"),
            Group::CoordinatePositive(i) => alloc::format!("x{i}_positive"),
            Group::Named { name, .. } => String::from(*name),
        }
    }
}

/// The fitted group adjustment g(x; a) = a₀ + Σ_h a_h·h(x).
#[derive(Debug, Clone)]
pub struct GroupAdjustment {
    groups: Vec<Group>,
    /// a₀ followed by one coefficient per group.
    coef: Vec<f64>,
}

impl GroupAdjustment {
    /// g(x; a).
    #[must_use]
    pub fn adjust(&self, x: &[f64]) -> f64 {
        let mut g = self.coef[0];
        for (group, a) in self.groups.iter().zip(&self.coef[1..]) {
            if group.contains(x) {
                g += a;
            }
        }
        g
    }

    /// Coefficients (a₀, a_h...).
    #[must_use]
    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    /// The group indicators.
    #[must_use]
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }
}

/// Fits the group adjustment by pinball regression of the base scores on the
/// intercept-plus-indicators basis.
pub fn fit_batchgcp(
    xs: &[Vec<f64>],
    scores: &[f64],
    groups: &[Group],
    alpha: Level,
    config: SolverConfig,
) -> Result<GroupAdjustment> {
    if xs.len() != scores.len() || xs.is_empty() {
        return Err(Error::degenerate(
            "group adjustment needs equal-length nonempty covariates and scores",
        ));
    }
    for group in groups {
        if !xs.iter().any(|x| group.contains(x)) {
            return Err(Error::invalid_config(
                "groups",
                alloc::format!("group `{}` is empty on the data", group.name()),
            ));
        }
    }
    // Indicator features, evaluated once; fed through the shared solver.
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut row = Vec::with_capacity(groups.len() + 1);
            row.push(1.0);
            row.extend(
                groups
                    .iter()
                    .map(|g| if g.contains(x) { 1.0 } else { 0.0 }),
            );
            row
        })
        .collect();
    let identity_basis = BasisSpec::new(
        (0..groups.len() + 1)
            .map(Feature::Coordinate)
            .collect::<Vec<_>>(),
    )?;
    let model = fit_pinball_qr(&rows, scores, &identity_basis, alpha, 0.0, None, config)?;
    Ok(GroupAdjustment {
        groups: groups.to_vec(),
        coef: model.kappa().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn level(alpha: f64) -> Level {
        Level::new(alpha).unwrap()
    }

    #[test]
    fn pinball_loss_matches_closed_form() {
        let a = level(0.1);
        assert_eq!(pinball_loss(1.0, 1.0, a), 0.0);
        assert!((pinball_loss(1.0, 0.0, a) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.0, 1.0, a) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_targets_are_fit_exactly() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let targets = vec![3.25; 20];
        let model = fit_pinball_qr(
            &xs,
            &targets,
            &BasisSpec::intercept_only(),
            level(0.1),
            0.0,
            None,
            SolverConfig::default(),
        )
        .unwrap();
        assert!((model.predict(&[99.0]) - 3.25).abs() < 1e-3);
    }

    #[test]
    fn intercept_only_fit_recovers_the_normal_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 5000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![0.0]).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let model = fit_pinball_qr(
            &xs,
            &targets,
            &BasisSpec::intercept_only(),
            level(0.1),
            0.0,
            None,
            SolverConfig::default(),
        )
        .unwrap();
        let q = model.predict(&[0.0]);
        assert!((q - 1.2816).abs() < 0.05, "0.9-quantile estimate {q}");
    }

    #[test]
    fn huge_ridge_penalty_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let targets: Vec<f64> = xs.iter().map(|x| 2.0 + x[0]).collect();
        let model = fit_pinball_qr(
            &xs,
            &targets,
            &BasisSpec::linear(1),
            level(0.1),
            1e9,
            None,
            SolverConfig::default(),
        )
        .unwrap();
        assert!(l2_norm(model.kappa()) < 1e-3, "kappa = {:?}", model.kappa());
    }

    #[test]
    fn coefficients_respect_the_norm_bound_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let targets: Vec<f64> = xs.iter().map(|x| 50.0 * x[0] + 100.0).collect();
        let bound = 0.5;
        let model = fit_pinball_qr(
            &xs,
            &targets,
            &BasisSpec::linear(1),
            level(0.2),
            0.0,
            Some(bound),
            SolverConfig::default(),
        )
        .unwrap();
        assert!(l2_norm(model.kappa()) <= bound);
    }

    #[test]
    fn prediction_is_the_basis_inner_product() {
        let model = PinballModel {
            basis: BasisSpec::linear(2),
            kappa: vec![0.0, 1.0, 0.0],
            lambda: 0.0,
            norm_bound: 10.0,
            alpha: level(0.1),
        };
        assert_eq!(model.predict(&[2.0, 5.0]), 2.0);
        let zero = PinballModel {
            basis: BasisSpec::linear(2),
            kappa: vec![0.0, 0.0, 0.0],
            lambda: 0.0,
            norm_bound: 10.0,
            alpha: level(0.1),
        };
        assert_eq!(zero.predict(&[2.0, 5.0]), 0.0);
    }

    #[test]
    fn cc_identity_holds_at_the_fit() {
        // With an intercept and no penalty, the fraction of nonpositive
        // residuals sits at 1-alpha up to (d0+1)/n plus solver slack.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 800;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let targets: Vec<f64> = xs
            .iter()
            .map(|x| x[0] - 0.5 * x[1] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let alpha = 0.1;
        let model = fit_pinball_qr(
            &xs,
            &targets,
            &BasisSpec::linear(2),
            level(alpha),
            0.0,
            None,
            SolverConfig::default(),
        )
        .unwrap();
        let frac = xs
            .iter()
            .zip(&targets)
            .filter(|(x, t)| **t - model.predict(x) <= 0.0)
            .count() as f64
            / n as f64;
        let slack = 4.0 / n as f64 + 0.01;
        assert!(
            (frac - (1.0 - alpha)).abs() <= slack,
            "fraction {frac}, slack {slack}"
        );
    }

    #[test]
    fn least_squares_recovers_a_linear_mean() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x[0]).collect();
        let model = fit_least_squares(&xs, &ys, &BasisSpec::linear(1)).unwrap();
        assert!((model.predict(&[4.0]) - (1.5 - 8.0)).abs() < 1e-8);
    }

    #[test]
    fn conditional_cdf_matches_hand_computation() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let cdf = ConditionalCdf::new(
            kernel,
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        // Below every value.
        assert_eq!(cdf.eval(0.5, &[0.0]).unwrap(), 0.0);
        // At or above the maximum.
        assert_eq!(cdf.eval(3.0, &[5.0]).unwrap(), 1.0);
        // Middle value at x=0: weights e^0, e^-1/2, e^-2.
        let w = [1.0f64, (-0.5f64).exp(), (-2.0f64).exp()];
        let want = (w[0] + w[1]) / (w[0] + w[1] + w[2]);
        assert!((cdf.eval(2.0, &[0.0]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn single_point_cdf_is_a_step() {
        let kernel = KernelSpec::gaussian(0.5).unwrap();
        let cdf = ConditionalCdf::new(kernel, vec![vec![0.3]], vec![2.0]).unwrap();
        assert_eq!(cdf.eval(1.9, &[10.0]).unwrap(), 0.0);
        assert_eq!(cdf.eval(2.0, &[10.0]).unwrap(), 1.0);
    }

    #[test]
    fn infinite_bandwidth_reduces_to_the_empirical_cdf() {
        let kernel = KernelSpec::gaussian(1e12).unwrap();
        let values = vec![3.0, 1.0, 2.0, 4.0];
        let cdf =
            ConditionalCdf::new(kernel, vec![vec![0.0]; 4], values).unwrap();
        assert!((cdf.eval(2.5, &[123.0]).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_boxcar_neighborhood_errors_strictly_and_falls_back() {
        let kernel = KernelSpec::boxcar(0.1).unwrap();
        let cdf = ConditionalCdf::new(
            kernel,
            vec![vec![0.0], vec![0.01]],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert!(cdf.eval(1.5, &[50.0]).is_err());
        let fallback = cdf.eval_with_fallback(1.5, &[50.0]).unwrap();
        assert!(fallback.degenerate);
        assert_eq!(fallback.value, 0.5);
    }

    #[test]
    fn weighted_cdf_inversions_bracket_the_band() {
        let cdf = WeightedCdf::from_sorted(vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4]);
        assert_eq!(cdf.lower_inverse(0.3), 2.0);
        assert_eq!(cdf.lower_inverse(0.25), 1.0);
        assert_eq!(cdf.lower_inverse(0.0), f64::NEG_INFINITY);
        assert_eq!(cdf.lower_inverse(1.01), f64::INFINITY);
        assert_eq!(cdf.upper_jump(0.5), 3.0);
        assert_eq!(cdf.upper_jump(0.49), 2.0);
        assert_eq!(cdf.upper_jump(1.0), f64::INFINITY);
    }

    #[test]
    fn batchgcp_single_group_is_the_empirical_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 600;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let alpha = 0.1;
        let fit = fit_batchgcp(&xs, &scores, &[], level(alpha), SolverConfig::default()).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let k = ((1.0 - alpha) * n as f64).ceil() as usize - 1;
        assert!(
            (fit.adjust(&[0.0]) - sorted[k]).abs() < 0.05,
            "a0 = {}, sample quantile = {}",
            fit.adjust(&[0.0]),
            sorted[k]
        );
    }

    #[test]
    fn batchgcp_disjoint_groups_recover_the_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let n = 2000;
        let delta = 2.5;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
        let scores: Vec<f64> = xs
            .iter()
            .map(|x| {
                let base = 0.3 * rng.sample::<f64, _>(StandardNormal);
                if x[0] > 0.0 {
                    base + delta
                } else {
                    base
                }
            })
            .collect();
        fn negative(x: &[f64]) -> bool {
            x[0] <= 0.0
        }
        let groups = [
            Group::CoordinatePositive(0),
            Group::Named {
                name: "x0_nonpositive",
                indicator: negative,
            },
        ];
        let fit =
            fit_batchgcp(&xs, &scores, &groups, level(0.5), SolverConfig::default()).unwrap();
        let diff = fit.adjust(&[1.0]) - fit.adjust(&[-1.0]);
        assert!((diff - delta).abs() < 0.05, "group shift estimate {diff}");
    }

    #[test]
    fn batchgcp_median_of_symmetric_scores_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let fit = fit_batchgcp(&xs, &scores, &[], level(0.5), SolverConfig::default()).unwrap();
        assert!(fit.adjust(&[0.0]).abs() < 0.05);
    }

    #[test]
    fn batchgcp_rejects_empty_groups() {
        let xs = vec![vec![-1.0], vec![-2.0]];
        let scores = vec![0.0, 1.0];
        let err = fit_batchgcp(
            &xs,
            &scores,
            &[Group::CoordinatePositive(0)],
            level(0.1),
            SolverConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn cc_lambda_follows_the_rate() {
        let l = cc_ridge_lambda(3, 500);
        assert!((l - (3.0 * (500.0f64).ln() / 500.0).powf(2.0 / 3.0)).abs() < 1e-15);
    }
}
