//! Maximum-entropy constrained Gaussians over angular deviations.
//!
//! Starting from a diagonal κ-prior `N(0, diag(σ²/a))`, the distribution
//! closest in KL divergence that satisfies `E|Δx_m|² = C_m` for every atom is,
//! to first order in the displacements, Gaussian with precision
//!
//! ```text
//! Σ̃⁻¹ = a·diag(σ⁻²) + 2 Σ_m λ_m G_m
//! ```
//!
//! and the fluctuations it induces are `C_m = tr(Σ̃ G_m)`. Choosing `λ` for
//! given targets has no closed form; [`fit_lambda`] solves it iteratively.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::PrecisionGaussian;
use crate::geometry::InternalCoords;
use crate::jacobian::GramSet;

/// Floor on per-coordinate data variances, rad².
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Floor on fluctuation targets, Å².
pub const TARGET_FLOOR: f64 = 1e-4;

/// Prior strength used for 1pga and 1unc.
pub const PRIOR_STRENGTH_LARGE: f64 = 50.0;
/// Prior strength used for 1fsd and chignolin.
pub const PRIOR_STRENGTH_SMALL: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KappaPrior {
    strength: f64,
    data_variances: DVector<f64>,
}

impl KappaPrior {
    pub fn new(strength: f64, data_variances: DVector<f64>) -> Result<Self> {
        if !(strength.is_finite() && strength > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior strength must be positive, got {strength}"
            )));
        }
        if data_variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "data variances must be finite and non-negative".into(),
            ));
        }
        let data_variances = data_variances.map(|v| v.max(VARIANCE_FLOOR));
        Ok(Self {
            strength,
            data_variances,
        })
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn data_variances(&self) -> &DVector<f64> {
        &self.data_variances
    }

    pub fn dof(&self) -> usize {
        self.data_variances.len()
    }

    /// Diagonal of the prior precision, `a / σ²`.
    pub fn precision_diagonal(&self) -> DVector<f64> {
        self.data_variances.map(|v| self.strength / v)
    }

    pub fn precision(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.precision_diagonal())
    }
}

/// Per-coordinate variance of the rows of `deviations` (`N × D`), `N - 1`
/// denominator, floored at [`VARIANCE_FLOOR`].
pub fn build_prior(deviations: &DMatrix<f64>, strength: f64) -> Result<KappaPrior> {
    let n = deviations.nrows();
    if n < 2 {
        return Err(Error::TooFewConformations { need: 2, got: n });
    }
    let variances = DVector::from_iterator(
        deviations.ncols(),
        deviations.column_iter().map(|col| {
            let mean = col.mean();
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        }),
    );
    KappaPrior::new(strength, variances)
}

/// Expected squared 3D displacement per atom, Å².
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    values: Vec<f64>,
}

impl ConstraintSet {
    /// Targets for fitting: non-finite or negative values are rejected, small
    /// values are raised to [`TARGET_FLOOR`].
    pub fn targets(values: Vec<f64>) -> Result<Self> {
        if let Some(m) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target for atom {m} must be finite and non-negative"
            )));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v.max(TARGET_FLOOR)).collect(),
        })
    }

    /// Targets from per-axis variances (the mean over x, y, z): `C = 3σ²`.
    pub fn from_axis_variances(per_axis: &[f64]) -> Result<Self> {
        Self::targets(per_axis.iter().map(|v| 3.0 * v).collect())
    }

    pub fn uniform(value: f64, n_atoms: usize) -> Result<Self> {
        Self::targets(vec![value; n_atoms])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Assembled constrained precision and its factorisation.
#[derive(Debug, Clone)]
pub struct PrecisionModel {
    lambda: Vec<f64>,
    gaussian: PrecisionGaussian,
}

impl PrecisionModel {
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn gaussian(&self) -> &PrecisionGaussian {
        &self.gaussian
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        self.gaussian.precision()
    }

    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.gaussian.cholesky_l()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.gaussian.covariance()
    }

    pub fn log_density(&self, delta: &DVector<f64>) -> f64 {
        self.gaussian.log_density(delta)
    }
}

pub fn assemble_precision(prior: &KappaPrior, lambda: &[f64], grams: &GramSet) -> Result<PrecisionModel> {
    if lambda.len() != grams.n_atoms() {
        return Err(Error::DimensionMismatch {
            what: "lambda",
            expected: grams.n_atoms(),
            got: lambda.len(),
        });
    }
    if prior.dof() != grams.dof() {
        return Err(Error::DimensionMismatch {
            what: "prior degrees of freedom",
            expected: grams.dof(),
            got: prior.dof(),
        });
    }
    if let Some(m) = lambda.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "lambda[{m}] = {} must be finite and non-negative",
            lambda[m]
        )));
    }
    let weights: Vec<f64> = lambda.iter().map(|l| 2.0 * l).collect();
    let mut precision = if lambda.iter().all(|l| *l == 0.0) {
        DMatrix::zeros(prior.dof(), prior.dof())
    } else {
        grams.weighted_sum(&weights)
    };
    for (i, p) in prior.precision_diagonal().iter().enumerate() {
        precision[(i, i)] += p;
    }
    let gaussian = PrecisionGaussian::new(precision).map_err(|e| {
        let (lo, hi) = lambda
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), l| (lo.min(*l), hi.max(*l)));
        Error::Factorization(format!("{e}; lambda range [{lo:.3e}, {hi:.3e}]"))
    })?;
    Ok(PrecisionModel {
        lambda: lambda.to_vec(),
        gaussian,
    })
}

/// `C_m = tr(Σ̃ G_m)`, evaluated as `‖L⁻¹ J_mᵀ‖²_F` without forming `Σ̃`.
pub fn induced_fluctuations(model: &PrecisionModel, grams: &GramSet) -> ConstraintSet {
    let y = whitened_jacobian(model, grams);
    let values = (0..grams.n_atoms())
        .map(|m| y.columns(3 * m, 3).norm_squared())
        .collect();
    ConstraintSet { values }
}

/// `S[m][k] = tr(Σ̃ G_m Σ̃ G_k)`, so that `∂C_m/∂λ_k = -2 S[m][k]`.
pub fn fluctuation_sensitivity(model: &PrecisionModel, grams: &GramSet) -> DMatrix<f64> {
    let y = whitened_jacobian(model, grams);
    let z = y.transpose() * &y;
    let n = grams.n_atoms();
    DMatrix::from_fn(n, n, |m, k| z.view((3 * m, 3 * k), (3, 3)).norm_squared())
}

/// `L⁻¹ Jᵀ`, a `D × 3M` matrix whose atom blocks give `tr(Σ̃ G_m)` as squared
/// Frobenius norms.
fn whitened_jacobian(model: &PrecisionModel, grams: &GramSet) -> DMatrix<f64> {
    model
        .gaussian
        .cholesky()
        .l_dirty()
        .solve_lower_triangular(&grams.jacobian().as_matrix().transpose())
        .expect("cholesky factor has a positive diagonal")
}

/// Concave dual of the constrained KL problem,
/// `½ log det Σ̃⁻¹(λ) - Σ_m λ_m C_m`. Its gradient is `C(λ) - targets`, so its
/// maximiser over `λ ≥ 0` is exactly the set of multipliers meeting the
/// targets (with `λ_m = 0` wherever the target is slack).
pub fn dual_objective(model: &PrecisionModel, targets: &ConstraintSet) -> f64 {
    0.5 * model.gaussian.log_det_precision()
        - model
            .lambda
            .iter()
            .zip(targets.values())
            .map(|(l, t)| l * t)
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSolver {
    /// Projected Newton ascent on [`dual_objective`] with backtracking.
    #[default]
    Newton,
    /// Damped multiplicative updates `λ_m ← λ_m (C_m / target_m)^η`.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Maximum relative residual `|C_m / target_m - 1|` accepted.
    pub tol: f64,
    pub max_iters: usize,
    /// Exponent `η` of the multiplicative update.
    pub damping: f64,
    pub solver: LambdaSolver,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-2,
            max_iters: 500,
            damping: 0.5,
            solver: LambdaSolver::Newton,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaFit {
    pub model: PrecisionModel,
    pub achieved: ConstraintSet,
    /// Signed relative residuals; zero-λ atoms only count overshoot.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Atoms whose target is at or above their unconstrained fluctuation.
    pub unconstrained_atoms: Vec<usize>,
}

fn residuals(lambda: &[f64], achieved: &[f64], targets: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(achieved.iter().zip(targets))
        .map(|(l, (c, t))| {
            let r = c / t - 1.0;
            if *l > 0.0 {
                r
            } else {
                r.max(0.0)
            }
        })
        .collect()
}

fn max_abs(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
}

/// Current iterate of the solver.
struct Iterate {
    model: PrecisionModel,
    achieved: ConstraintSet,
    max_residual: f64,
}

impl Iterate {
    fn at(prior: &KappaPrior, grams: &GramSet, lambda: &[f64], t: &[f64]) -> Result<Self> {
        let model = assemble_precision(prior, lambda, grams)?;
        let achieved = induced_fluctuations(&model, grams);
        let (_, max_residual) = max_abs(&residuals(lambda, achieved.values(), t));
        Ok(Self {
            model,
            achieved,
            max_residual,
        })
    }
}

/// Solve for non-negative multipliers reproducing `targets`, and report the
/// outcome whether or not the tolerance was reached.
pub fn fit_lambda_report(
    prior: &KappaPrior,
    grams: &GramSet,
    targets: &ConstraintSet,
    opts: &FitOptions,
) -> Result<LambdaFit> {
    let n = grams.n_atoms();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            what: "targets",
            expected: n,
            got: targets.len(),
        });
    }
    if !(opts.tol > 0.0 && opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid solver options {opts:?}: need tol > 0 and damping in (0, 1]"
        )));
    }
    let t = targets.values();

    let free = Iterate::at(prior, grams, &vec![0.0; n], t)?;
    let pinned: Vec<bool> = (0..n).map(|m| free.achieved.values[m] <= t[m]).collect();
    let unconstrained: Vec<usize> = (0..n).filter(|&m| pinned[m]).collect();
    let undershoot: Vec<usize> = unconstrained
        .iter()
        .copied()
        .filter(|&m| free.achieved.values[m] < t[m] * (1.0 - opts.tol))
        .collect();
    if !undershoot.is_empty() {
        warn!(
            "{} atoms cannot reach their targets even with lambda = 0 (first: atom {}, target {:.4e}, unconstrained {:.4e})",
            undershoot.len(),
            undershoot[0],
            t[undershoot[0]],
            free.achieved.values[undershoot[0]]
        );
    }

    let (state, iterations) = if free.max_residual <= opts.tol {
        (free, 0)
    } else {
        let lambda: Vec<f64> = (0..n)
            .map(|m| if pinned[m] { 0.0 } else { 1.0 / (2.0 * n as f64 * t[m]) })
            .collect();
        match opts.solver {
            LambdaSolver::Newton => newton(prior, grams, targets, &pinned, lambda, opts)?,
            LambdaSolver::FixedPoint => fixed_point(prior, grams, t, &pinned, lambda, opts)?,
        }
    };

    let res = residuals(state.model.lambda(), state.achieved.values(), t);
    Ok(LambdaFit {
        converged: state.max_residual <= opts.tol,
        max_residual: state.max_residual,
        model: state.model,
        achieved: state.achieved,
        residuals: res,
        iterations,
        unconstrained_atoms: unconstrained,
    })
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn newton(
    prior: &KappaPrior,
    grams: &GramSet,
    targets: &ConstraintSet,
    pinned: &[bool],
    lambda: Vec<f64>,
    opts: &FitOptions,
) -> Result<(Iterate, usize)> {
    let t = targets.values();
    let n = t.len();
    let mut state = Iterate::at(prior, grams, &lambda, t)?;
    let mut iterations = 0;
    while iterations < opts.max_iters && state.max_residual > opts.tol {
        iterations += 1;
        let lambda = state.model.lambda().to_vec();
        let c = state.achieved.values();
        let grad: Vec<f64> = (0..n).map(|m| c[m] - t[m]).collect();
        // Coordinates at the bound whose gradient pushes outward stay fixed.
        let active: Vec<usize> = (0..n)
            .filter(|&m| !pinned[m] && (lambda[m] > 0.0 || grad[m] > 0.0))
            .collect();
        let sens = fluctuation_sensitivity(&state.model, grams);
        let mut hess = DMatrix::from_fn(active.len(), active.len(), |a, b| {
            2.0 * sens[(active[a], active[b])]
        });
        let rhs = DVector::from_iterator(active.len(), active.iter().map(|&m| grad[m]));
        let step = solve_regularised(&mut hess, &rhs);

        let f0 = dual_objective(&state.model, targets);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = lambda.clone();
            for (a, &m) in active.iter().enumerate() {
                trial[m] = (lambda[m] + alpha * step[a]).max(0.0);
            }
            if let Ok(next) = Iterate::at(prior, grams, &trial, t) {
                let gain: f64 = (0..n).map(|m| grad[m] * (trial[m] - lambda[m])).sum();
                if dual_objective(&next.model, targets) >= f0 + ARMIJO * gain {
                    accepted = Some(next);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => state = next,
            None => {
                debug!("fit_lambda: line search failed at iteration {iterations}");
                break;
            }
        }
        debug!(
            "fit_lambda newton iter {iterations}: step {alpha:.3e}, max residual {:.3e}",
            state.max_residual
        );
    }
    Ok((state, iterations))
}

/// Solve `hess · x = rhs` for a symmetric positive semi-definite `hess`,
/// adding a growing ridge if the factorisation fails.
fn solve_regularised(hess: &mut DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    loop {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = nalgebra::Cholesky::new(h) {
            return ch.solve(rhs);
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
    }
}

const STAGNATION_ITERS: usize = 25;
const MIN_DAMPING: f64 = 0.05;
const DROP_FRACTION: f64 = 1e-10;

fn fixed_point(
    prior: &KappaPrior,
    grams: &GramSet,
    t: &[f64],
    pinned: &[bool],
    mut lambda: Vec<f64>,
    opts: &FitOptions,
) -> Result<(Iterate, usize)> {
    let n = t.len();
    let initial = lambda.clone();
    let mut eta = opts.damping;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut iterations = 0;
    let mut state = Iterate::at(prior, grams, &lambda, t)?;
    while iterations < opts.max_iters {
        iterations += 1;
        state = Iterate::at(prior, grams, &lambda, t)?;
        debug!(
            "fit_lambda fixed-point iter {iterations}: max residual {:.3e}",
            state.max_residual
        );
        if state.max_residual <= opts.tol {
            break;
        }
        if state.max_residual < 0.99 * best {
            best = state.max_residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= STAGNATION_ITERS {
            rescale_globally(prior, grams, t, &mut lambda)?;
            eta = (0.5 * eta).max(MIN_DAMPING);
            since_best = 0;
            best = f64::INFINITY;
            continue;
        }
        let c = state.achieved.values();
        for m in 0..n {
            if pinned[m] {
                continue;
            }
            if lambda[m] > 0.0 {
                lambda[m] *= (c[m] / t[m]).powf(eta);
                if c[m] < t[m] && lambda[m] < DROP_FRACTION * initial[m] {
                    lambda[m] = 0.0;
                }
            } else if c[m] > t[m] * (1.0 + opts.tol) {
                lambda[m] = initial[m];
            }
        }
    }
    if state.model.lambda() != lambda.as_slice() && state.max_residual > opts.tol {
        state = Iterate::at(prior, grams, &lambda, t)?;
    }
    Ok((state, iterations))
}

/// Multiply every active multiplier by one factor `s`, chosen by bisection in
/// log space so that the mean log-ratio `log(C_m / t_m)` over active atoms is
/// zero. `C_m` decreases monotonically in `s`.
fn rescale_globally(
    prior: &KappaPrior,
    grams: &GramSet,
    t: &[f64],
    lambda: &mut [f64],
) -> Result<()> {
    let active: Vec<usize> = (0..lambda.len()).filter(|&m| lambda[m] > 0.0).collect();
    if active.is_empty() {
        return Ok(());
    }
    let mean_log_ratio = |s: f64| -> Result<f64> {
        let scaled: Vec<f64> = lambda.iter().map(|l| l * s).collect();
        let model = assemble_precision(prior, &scaled, grams)?;
        let c = induced_fluctuations(&model, grams);
        Ok(active
            .iter()
            .map(|&m| (c.values[m] / t[m]).ln())
            .sum::<f64>()
            / active.len() as f64)
    };
    let (mut lo, mut hi) = (-8.0f64, 8.0f64);
    if mean_log_ratio(lo.exp())? < 0.0 || mean_log_ratio(hi.exp())? > 0.0 {
        return Ok(());
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mean_log_ratio(mid.exp())? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (0.5 * (lo + hi)).exp();
    debug!("fit_lambda: global rescale by {s:.4e}");
    for l in lambda.iter_mut() {
        *l *= s;
    }
    Ok(())
}

/// Like [`fit_lambda_report`], but non-convergence is an error carrying the
/// per-atom residuals.
pub fn fit_lambda(
    prior: &KappaPrior,
    grams: &GramSet,
    targets: &ConstraintSet,
    opts: &FitOptions,
) -> Result<PrecisionModel> {
    let fit = fit_lambda_report(prior, grams, targets, opts)?;
    if fit.converged {
        Ok(fit.model)
    } else {
        let (worst_atom, max_residual) = max_abs(&fit.residuals);
        Err(Error::NotConverged {
            iterations: fit.iterations,
            max_residual,
            worst_atom,
            residuals: fit.residuals,
        })
    }
}

/// Draw `n` conformations from `N(mean, Σ̃)`; dihedrals are wrapped and bond
/// angles clamped into `(0, π)`. Deterministic for a given seed.
pub fn sample(
    model: &PrecisionModel,
    mean: &InternalCoords,
    n: usize,
    seed: u64,
) -> Result<Vec<InternalCoords>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    model.gaussian.sample_conformations(mean, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KappaLayout;
    use crate::jacobian::{compute_gram_set, jacobian_from_positions};

    #[test]
    fn identical_conformations_hit_the_floor() {
        let dev = DMatrix::zeros(5, 7);
        let prior = build_prior(&dev, 50.0).unwrap();
        assert!(prior.data_variances().iter().all(|v| *v == VARIANCE_FLOOR));
        assert!(prior.precision_diagonal().iter().all(|p| (*p - 5e7).abs() < 1e-6));
    }

    #[test]
    fn single_conformation_rejected() {
        let dev = DMatrix::zeros(1, 7);
        assert!(matches!(
            build_prior(&dev, 1.0),
            Err(Error::TooFewConformations { need: 2, got: 1 })
        ));
        assert!(KappaPrior::new(0.0, DVector::from_element(3, 1.0)).is_err());
    }

    #[test]
    fn targets_are_floored() {
        let c = ConstraintSet::targets(vec![0.0, 1e-6, 2.0]).unwrap();
        assert_eq!(c.values(), &[TARGET_FLOOR, TARGET_FLOOR, 2.0]);
        assert!(ConstraintSet::targets(vec![-1.0]).is_err());
        let c = ConstraintSet::from_axis_variances(&[0.5]).unwrap();
        assert_eq!(c.values(), &[1.5]);
    }

    fn small_grams() -> GramSet {
        use crate::geometry::Vec3;
        let p = vec![
            Vec3::new(0., 0., 0.),
            Vec3::new(1.4, 0., 0.),
            Vec3::new(2.0, 1.3, 0.),
            Vec3::new(3.2, 1.5, 0.8),
            Vec3::new(3.9, 2.7, 0.5),
            Vec3::new(5.1, 2.9, 1.4),
        ];
        compute_gram_set(jacobian_from_positions(&p, KappaLayout::new(6)).unwrap())
    }

    #[test]
    fn zero_lambda_is_the_prior() {
        let grams = small_grams();
        let prior = KappaPrior::new(2.0, DVector::from_fn(grams.dof(), |i, _| 0.01 * (i + 1) as f64)).unwrap();
        let model = assemble_precision(&prior, &[0.0; 6], &grams).unwrap();
        assert_eq!(model.precision(), &prior.precision());
        let c = induced_fluctuations(&model, &grams);
        assert_eq!(c.values()[0], 0.0);
        assert_eq!(c.values()[1], 0.0);
        let cov = prior.precision().map(|p| if p > 0.0 { 1.0 / p } else { 0.0 });
        for m in 0..6 {
            let expect = (&cov * grams.matrix(m)).trace();
            assert!((c.values()[m] - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn commuting_diagonal_closed_form() {
        // One moving atom whose Gram matrix is diag(g1, g2, 0).
        let (g1, g2, p1, p2, l): (f64, f64, f64, f64, f64) = (0.7, 2.5, 3.0, 0.4, 1.3);
        let layout = KappaLayout::new(4);
        let mut j = DMatrix::zeros(12, 3);
        j[(9, 0)] = g1.sqrt();
        j[(10, 1)] = g2.sqrt();
        let grams = compute_gram_set(crate::jacobian::JacobianTable::from_matrix(layout, j));
        let prior = KappaPrior::new(1.0, DVector::from_vec(vec![1.0 / p1, 1.0 / p2, 1.0])).unwrap();
        let model = assemble_precision(&prior, &[0.0, 0.0, 0.0, l], &grams).unwrap();
        let c = induced_fluctuations(&model, &grams).values()[3];
        let expect = g1 / (p1 + 2.0 * l * g1) + g2 / (p2 + 2.0 * l * g2);
        assert!((c - expect).abs() < 1e-12, "{c} vs {expect}");
    }

    #[test]
    fn negative_lambda_rejected() {
        let grams = small_grams();
        let prior = KappaPrior::new(1.0, DVector::from_element(grams.dof(), 0.1)).unwrap();
        let mut lambda = vec![0.0; 6];
        lambda[3] = -1.0;
        assert!(assemble_precision(&prior, &lambda, &grams).is_err());
        assert!(assemble_precision(&prior, &[0.0; 5], &grams).is_err());
    }

    #[test]
    fn already_satisfied_targets_return_zero_lambda() {
        let grams = small_grams();
        let prior = KappaPrior::new(1.0, DVector::from_element(grams.dof(), 0.1)).unwrap();
        let free = induced_fluctuations(&assemble_precision(&prior, &[0.0; 6], &grams).unwrap(), &grams);
        let targets = ConstraintSet::targets(free.values().to_vec()).unwrap();
        let fit = fit_lambda_report(&prior, &grams, &targets, &FitOptions::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert!(fit.model.lambda().iter().all(|l| *l == 0.0));
    }

    #[test]
    fn zero_samples_rejected() {
        let grams = small_grams();
        let prior = KappaPrior::new(1.0, DVector::from_element(grams.dof(), 0.1)).unwrap();
        let model = assemble_precision(&prior, &[0.0; 6], &grams).unwrap();
        let mean = InternalCoords {
            dihedrals: vec![0.5; 3],
            bond_angles: vec![2.0; 4],
            bond_lengths: vec![1.4; 5],
        };
        assert!(sample(&model, &mean, 0, 1).is_err());
    }
}
