//! Zero-mean Gaussians parameterised by a precision matrix and its Cholesky
//! factor, shared by the constrained model and the baselines.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, InternalCoords, KappaVector};

/// Bond angles drawn outside `(0, π)` are clamped to this margin.
pub const BOND_ANGLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PrecisionGaussian {
    precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PrecisionGaussian {
    pub fn new(precision: DMatrix<f64>) -> Result<Self> {
        if !precision.is_square() {
            return Err(Error::Factorization("precision is not square".into()));
        }
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            let diag = precision.diagonal();
            Error::Factorization(format!(
                "matrix of size {} is not positive definite (diagonal range [{:.3e}, {:.3e}])",
                precision.nrows(),
                diag.min(),
                diag.max()
            ))
        })?;
        Ok(Self { precision, chol })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Lower-triangular `L` with `precision = L Lᵀ`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub(crate) fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Dense covariance. Prefer the factor-based methods where possible.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det_precision(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn log_density(&self, delta: &DVector<f64>) -> f64 {
        let quad = delta.dot(&(&self.precision * delta));
        0.5 * (self.log_det_precision() - quad - self.dim() as f64 * (2.0 * PI).ln())
    }

    /// Map standard-normal draws `z` to `Lᵀ⁻¹ z ~ N(0, precision⁻¹)`.
    pub fn transform(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(z)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn sample_deviations(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        (0..n)
            .map(|_| {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                self.transform(&z)
            })
            .collect()
    }

    /// Draw `n` conformations around `mean`, reusing its bond lengths.
    pub fn sample_conformations(
        &self,
        mean: &InternalCoords,
        n: usize,
        seed: u64,
    ) -> Result<Vec<InternalCoords>> {
        let base = mean.kappa();
        if base.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "sampling mean",
                expected: self.dim(),
                got: base.len(),
            });
        }
        self.sample_deviations(n, seed)
            .into_iter()
            .map(|delta| displace(mean, &base, &delta))
            .collect()
    }
}

/// Add a deviation to a mean conformation, wrapping dihedrals and clamping
/// bond angles into the open interval.
pub fn displace(
    mean: &InternalCoords,
    base: &KappaVector,
    delta: &DVector<f64>,
) -> Result<InternalCoords> {
    let layout = base.layout;
    let mut values = &base.values + delta;
    for (i, v) in values.iter_mut().enumerate() {
        *v = if layout.is_dihedral(i) {
            wrap_angle(*v)
        } else {
            v.clamp(BOND_ANGLE_MARGIN, PI - BOND_ANGLE_MARGIN)
        };
    }
    let kappa = KappaVector::new(values, layout)?;
    InternalCoords::from_kappa(&kappa, mean.bond_lengths.clone())
}
