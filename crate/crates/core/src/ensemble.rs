//! Ensembles of conformations, their circular statistics, and the baseline
//! Gaussian density models (empirical precision, OAS shrinkage, diagonal
//! κ-prior).

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::constraint::{build_prior, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::gaussian::PrecisionGaussian;
use crate::geometry::{wrap_angle, InternalCoords, KappaLayout, KappaVector};
use crate::jacobian::symmetrize;

/// Resultant length below which a circular mean is considered undefined.
pub const RESULTANT_TOL: f64 = 1e-9;
/// Ridge added to the empirical covariance before inversion.
pub const EMPIRICAL_RIDGE: f64 = 1e-10;

const RECENTER_ITERS: usize = 100;
const RECENTER_TOL: f64 = 1e-13;

/// Per-coordinate circular mean, `atan2(mean sin, mean cos)`.
pub fn circular_mean(conformations: &[InternalCoords]) -> Result<KappaVector> {
    let first = conformations.first().ok_or(Error::EmptyEnsemble)?;
    let layout = first.layout();
    let kappas = kappas_checked(conformations, layout)?;
    let d = layout.dof();
    let mut values = DVector::zeros(d);
    for i in 0..d {
        let (s, c) = kappas.iter().fold((0.0, 0.0), |(s, c), k| {
            let (si, ci) = k.values[i].sin_cos();
            (s + si, c + ci)
        });
        let n = kappas.len() as f64;
        let (s, c) = (s / n, c / n);
        values[i] = if s.hypot(c) < RESULTANT_TOL {
            warn!("coordinate {i}: circular mean undefined, using the first conformation");
            kappas[0].values[i]
        } else {
            wrap_angle(s.atan2(c))
        };
    }
    KappaVector::new(values, layout)
}

fn kappas_checked(conformations: &[InternalCoords], layout: KappaLayout) -> Result<Vec<KappaVector>> {
    conformations
        .iter()
        .map(|ic| {
            if ic.n_atoms() != layout.n_atoms() {
                Err(Error::DimensionMismatch {
                    what: "conformation atoms",
                    expected: layout.n_atoms(),
                    got: ic.n_atoms(),
                })
            } else {
                Ok(ic.kappa())
            }
        })
        .collect()
}

/// Conformations with a common mean and their wrapped deviations.
#[derive(Debug, Clone)]
pub struct EnsembleDataset {
    conformations: Vec<InternalCoords>,
    layout: KappaLayout,
    mean: KappaVector,
    mean_bond_lengths: Vec<f64>,
    /// `N × D`, row `n` is the wrapped deviation of conformation `n`.
    deviations: DMatrix<f64>,
}

impl EnsembleDataset {
    /// Starts from the circular mean and shifts it by the mean wrapped
    /// deviation until the deviations average to zero.
    pub fn new(conformations: Vec<InternalCoords>) -> Result<Self> {
        let mut mean = circular_mean(&conformations)?;
        let layout = mean.layout;
        let kappas = kappas_checked(&conformations, layout)?;
        let n = kappas.len();
        let d = layout.dof();

        let deviations_from = |mean: &KappaVector| {
            DMatrix::from_fn(n, d, |r, c| wrap_angle(kappas[r].values[c] - mean.values[c]))
        };
        let mut deviations = deviations_from(&mean);
        for _ in 0..RECENTER_ITERS {
            let shift = deviations.row_mean();
            if shift.amax() < RECENTER_TOL {
                break;
            }
            for i in 0..d {
                mean.values[i] = wrap_angle(mean.values[i] + shift[i]);
            }
            deviations = deviations_from(&mean);
        }

        let mut mean_bond_lengths = vec![0.0; layout.n_atoms() - 1];
        for ic in &conformations {
            for (acc, r) in mean_bond_lengths.iter_mut().zip(&ic.bond_lengths) {
                *acc += r / n as f64;
            }
        }
        Ok(Self {
            conformations,
            layout,
            mean,
            mean_bond_lengths,
            deviations,
        })
    }

    pub fn len(&self) -> usize {
        self.conformations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conformations.is_empty()
    }

    pub fn layout(&self) -> KappaLayout {
        self.layout
    }

    pub fn conformations(&self) -> &[InternalCoords] {
        &self.conformations
    }

    pub fn mean(&self) -> &KappaVector {
        &self.mean
    }

    pub fn mean_bond_lengths(&self) -> &[f64] {
        &self.mean_bond_lengths
    }

    /// The mean angles with the mean bond lengths.
    pub fn mean_conformation(&self) -> InternalCoords {
        let (dihedrals, bond_angles) = self.mean.split();
        InternalCoords {
            dihedrals,
            bond_angles,
            bond_lengths: self.mean_bond_lengths.clone(),
        }
    }

    pub fn deviations(&self) -> &DMatrix<f64> {
        &self.deviations
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    /// Inverse of the sample covariance.
    Empirical,
    /// Inverse of the Oracle Approximating Shrinkage covariance.
    Oas,
    /// Fixed κ-prior: `diag(a / σ²)`.
    Diagonal { strength: f64 },
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Empirical => "empirical",
            BaselineKind::Oas => "oas",
            BaselineKind::Diagonal { .. } => "diagonal",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Diagonal { strength } => write!(f, "diagonal:{strength}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `empirical`, `oas`, `diagonal` (strength 1) or `diagonal:<a>`.
impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(BaselineKind::Empirical),
            "oas" => Ok(BaselineKind::Oas),
            "diagonal" => Ok(BaselineKind::Diagonal { strength: 1.0 }),
            other => match other.strip_prefix("diagonal:").map(str::parse::<f64>) {
                Some(Ok(strength)) if strength > 0.0 => Ok(BaselineKind::Diagonal { strength }),
                _ => Err(Error::InvalidParameter(format!("unknown baseline '{s}'"))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    mean: InternalCoords,
    gaussian: PrecisionGaussian,
    /// OAS shrinkage coefficient, when applicable.
    pub shrinkage: Option<f64>,
}

impl BaselineModel {
    pub fn mean(&self) -> &InternalCoords {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        self.gaussian.precision()
    }

    pub fn gaussian(&self) -> &PrecisionGaussian {
        &self.gaussian
    }

    /// Same covariance around a different mean conformation.
    pub fn with_mean(self, mean: InternalCoords) -> Self {
        Self { mean, ..self }
    }
}

/// Centred scatter matrix `(X - x̄)ᵀ(X - x̄)` of the rows of `x`.
fn scatter(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = x.row_mean();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let mut s = centred.transpose() * &centred;
    symmetrize(&mut s);
    s
}

/// Closed-form OAS shrinkage coefficient for a maximum-likelihood covariance
/// `s` estimated from `n` samples, clipped to `[0, 1]`.
pub fn oas_shrinkage(s: &DMatrix<f64>, n: usize) -> f64 {
    let p = s.nrows() as f64;
    let n = n as f64;
    let tr = s.trace();
    let tr_sq = s.iter().map(|v| v * v).sum::<f64>(); // tr(S²) for symmetric S
    let num = (1.0 - 2.0 / p) * tr_sq + tr * tr;
    let den = (n + 1.0 - 2.0 / p) * (tr_sq - tr * tr / p);
    if den <= 0.0 {
        1.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// OAS covariance of the rows of `x` and its shrinkage coefficient.
pub fn oas_covariance(x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = x.nrows();
    let s = scatter(x) / n as f64;
    let rho = oas_shrinkage(&s, n);
    let mu = (s.trace() / s.nrows() as f64).max(VARIANCE_FLOOR);
    let mut cov = s * (1.0 - rho);
    for i in 0..cov.nrows() {
        cov[(i, i)] += rho * mu;
    }
    (cov, rho)
}

fn invert_spd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| Error::Factorization("covariance is not positive definite".into()))?;
    let mut p = chol.inverse();
    symmetrize(&mut p);
    Ok(p)
}

pub fn fit_baseline(ds: &EnsembleDataset, kind: BaselineKind) -> Result<BaselineModel> {
    let n = ds.len();
    let d = ds.layout().dof();
    if n < 2 {
        return Err(Error::TooFewConformations { need: 2, got: n });
    }
    let x = ds.deviations();
    let (precision, shrinkage) = match kind {
        BaselineKind::Empirical => {
            if n <= d {
                return Err(Error::SingularCovariance { samples: n, dof: d });
            }
            let mut cov = scatter(x) / (n - 1) as f64;
            for i in 0..d {
                cov[(i, i)] += EMPIRICAL_RIDGE;
            }
            (invert_spd(cov)?, None)
        }
        BaselineKind::Oas => {
            let (cov, rho) = oas_covariance(x);
            (invert_spd(cov)?, Some(rho))
        }
        BaselineKind::Diagonal { strength } => (build_prior(x, strength)?.precision(), None),
    };
    Ok(BaselineModel {
        kind,
        mean: ds.mean_conformation(),
        gaussian: PrecisionGaussian::new(precision)?,
        shrinkage,
    })
}

pub fn sample_baseline(model: &BaselineModel, n: usize, seed: u64) -> Result<Vec<InternalCoords>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    model.gaussian.sample_conformations(&model.mean, n, seed)
}
