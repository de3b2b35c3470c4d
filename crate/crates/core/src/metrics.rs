//! Ensemble evaluation: superposition, per-atom fluctuation profiles,
//! Ramachandran histograms, Jensen-Shannon distance and TICA.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{internal_to_cartesian, BackboneChain, InternalCoords, Vec3};

pub const DEFAULT_RAMACHANDRAN_BINS: usize = 60;
pub const DEFAULT_TICA_BINS: usize = 100;

/// Rigid transform `x -> rotation * x + translation` and the RMSD it achieves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superposition {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub rmsd: f64,
}

impl Superposition {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

pub fn rmsd(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (ss / a.len() as f64).sqrt()
}

/// Optimal proper rotation (Kabsch) moving `target` onto `reference`.
pub fn superpose_positions(reference: &[Vec3], target: &[Vec3]) -> Result<Superposition> {
    if reference.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "superposition atoms",
            expected: reference.len(),
            got: target.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let rc = centroid(reference);
    let tc = centroid(target);
    let spread = |pts: &[Vec3], c: &Vec3| pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>();
    if spread(reference, &rc) < 1e-20 || spread(target, &tc) < 1e-20 {
        return Err(Error::DegenerateGeometry {
            atom: 0,
            reason: "all atoms coincide; superposition undefined",
        });
    }
    let mut h = Matrix3::zeros();
    for (r, t) in reference.iter().zip(target) {
        h += (t - tc) * (r - rc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = rc - rotation * tc;
    let moved: Vec<Vec3> = target.iter().map(|p| rotation * p + translation).collect();
    Ok(Superposition {
        rotation,
        translation,
        rmsd: rmsd(reference, &moved),
    })
}

/// `target` moved onto `reference` by the RMSD-optimal rigid motion.
pub fn kabsch_superpose(reference: &BackboneChain, target: &BackboneChain) -> Result<BackboneChain> {
    let s = superpose_positions(reference.positions(), target.positions())?;
    Ok(target.transformed(&s.rotation, &s.translation))
}

/// Reconstruct every conformation in the canonical frame.
pub fn chains_from_internal(ensemble: &[InternalCoords]) -> Result<Vec<BackboneChain>> {
    ensemble.iter().map(internal_to_cartesian).collect()
}

/// Per-atom positional variance, averaged over x, y and z (Å²).
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationProfile {
    pub per_atom_variance: Vec<f64>,
    pub superposed: bool,
}

/// Index of the conformation with the smallest summed RMSD to all others
/// after superposition.
pub fn medoid(ensemble: &[BackboneChain]) -> Result<usize> {
    let n = ensemble.len();
    let mut totals = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r = superpose_positions(ensemble[i].positions(), ensemble[j].positions())?.rmsd;
            totals[i] += r;
            totals[j] += r;
        }
    }
    Ok(totals
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) })
        .0)
}

/// Variance profile of an ensemble. With `superpose`, every conformation is
/// first aligned onto the medoid; otherwise coordinates are used as given
/// (the canonical reconstruction frame for sampled structures).
pub fn fluctuation_profile(ensemble: &[BackboneChain], superpose: bool) -> Result<FluctuationProfile> {
    let n = ensemble.len();
    if n < 2 {
        return Err(Error::TooFewConformations { need: 2, got: n });
    }
    let m = ensemble[0].n_atoms();
    if let Some(bad) = ensemble.iter().find(|c| c.n_atoms() != m) {
        return Err(Error::DimensionMismatch {
            what: "ensemble atoms",
            expected: m,
            got: bad.n_atoms(),
        });
    }
    let aligned: Vec<Vec<Vec3>> = if superpose {
        let reference = &ensemble[medoid(ensemble)?];
        ensemble
            .iter()
            .map(|c| kabsch_superpose(reference, c).map(BackboneChain::into_positions))
            .collect::<Result<_>>()?
    } else {
        ensemble.iter().map(|c| c.positions().to_vec()).collect()
    };
    let per_atom_variance = (0..m)
        .map(|a| {
            let mean = aligned.iter().map(|p| p[a]).sum::<Vec3>() / n as f64;
            let ss: f64 = aligned.iter().map(|p| (p[a] - mean).norm_squared()).sum();
            ss / (3.0 * (n - 1) as f64)
        })
        .collect();
    Ok(FluctuationProfile {
        per_atom_variance,
        superposed: superpose,
    })
}

/// Mean squared difference between two profiles (Å⁴).
pub fn profile_mse(a: &FluctuationProfile, b: &FluctuationProfile) -> Result<f64> {
    if a.superposed != b.superposed {
        return Err(Error::ModeMismatch);
    }
    if a.per_atom_variance.len() != b.per_atom_variance.len() {
        return Err(Error::DimensionMismatch {
            what: "profile length",
            expected: a.per_atom_variance.len(),
            got: b.per_atom_variance.len(),
        });
    }
    let n = a.per_atom_variance.len() as f64;
    Ok(a.per_atom_variance
        .iter()
        .zip(&b.per_atom_variance)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Uniform bins over `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo && bins > 0) {
            return Err(Error::InvalidParameter(format!(
                "invalid binning [{lo}, {hi}) with {bins} bins"
            )));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn angular(bins: usize) -> Result<Self> {
        Self::new(-PI, PI, bins)
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|k| self.lo + w * k as f64).collect()
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        let k = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64).floor() as usize;
        Some(k.min(self.bins - 1))
    }
}

/// Dense 2D histogram, row-major over (x bin, y bin).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x: Binning,
    pub y: Binning,
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    /// Points that fell outside the binned range.
    pub outside: u64,
}

impl Histogram2D {
    pub fn from_points(points: &[(f64, f64)], x: Binning, y: Binning) -> Result<Self> {
        let mut counts = vec![0u64; x.bins * y.bins];
        let mut outside = 0;
        for &(px, py) in points {
            match (x.index(px), y.index(py)) {
                (Some(i), Some(j)) => counts[i * y.bins + j] += 1,
                _ => outside += 1,
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidParameter(
                "no points inside the histogram range".into(),
            ));
        }
        let probabilities = counts.iter().map(|c| *c as f64 / total as f64).collect();
        Ok(Self {
            x,
            y,
            counts,
            probabilities,
            outside,
        })
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.probabilities[i * self.y.bins + j]
    }

    /// `-ln p` shifted so the most populated bin is zero (kT = 1); empty bins
    /// are `+inf`.
    pub fn free_energy(&self) -> Vec<f64> {
        let pmax = self.probabilities.iter().cloned().fold(0.0, f64::max);
        self.probabilities
            .iter()
            .map(|p| if *p > 0.0 { -(p / pmax).ln() } else { f64::INFINITY })
            .collect()
    }

    /// Fraction of this histogram's mass lying in bins of `reference` that
    /// are occupied after dilating its support by `radius` bins. With
    /// `periodic`, dilation wraps around both axes.
    pub fn mass_within_support(&self, reference: &Histogram2D, radius: usize, periodic: bool) -> Result<f64> {
        if self.x != reference.x || self.y != reference.y {
            return Err(Error::BinningMismatch);
        }
        let (nx, ny) = (self.x.bins as isize, self.y.bins as isize);
        let r = radius as isize;
        let mut support = vec![false; self.counts.len()];
        for i in 0..nx {
            for j in 0..ny {
                if reference.counts[(i * ny + j) as usize] == 0 {
                    continue;
                }
                for di in -r..=r {
                    for dj in -r..=r {
                        let (mut a, mut b) = (i + di, j + dj);
                        if periodic {
                            a = a.rem_euclid(nx);
                            b = b.rem_euclid(ny);
                        } else if a < 0 || b < 0 || a >= nx || b >= ny {
                            continue;
                        }
                        support[(a * ny + b) as usize] = true;
                    }
                }
            }
        }
        Ok(self
            .probabilities
            .iter()
            .zip(&support)
            .filter(|(_, s)| **s)
            .map(|(p, _)| p)
            .sum())
    }
}

/// Backbone φ and ψ for one conformation. φ exists for residues `1..L`
/// (C₋₁-N-CA-C), ψ for residues `0..L-1` (N-CA-C-N₊₁).
pub fn phi_psi(ic: &InternalCoords) -> (Vec<f64>, Vec<f64>) {
    let l = ic.n_atoms() / 3;
    let phi = (1..l).map(|r| ic.dihedrals[3 * r - 1]).collect();
    let psi = (0..l - 1).map(|r| ic.dihedrals[3 * r]).collect();
    (phi, psi)
}

/// (φ, ψ) pairs of all interior residues of every conformation.
pub fn ramachandran_points(ensemble: &[InternalCoords]) -> Vec<(f64, f64)> {
    ensemble
        .iter()
        .flat_map(|ic| {
            let l = ic.n_atoms() / 3;
            (1..l - 1).map(move |r| (ic.dihedrals[3 * r - 1], ic.dihedrals[3 * r]))
        })
        .collect()
}

pub fn ramachandran(ensemble: &[InternalCoords], bins: usize) -> Result<Histogram2D> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let b = Binning::angular(bins)?;
    Histogram2D::from_points(&ramachandran_points(ensemble), b, b)
}

/// Square root of the base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn js_distance(p: &Histogram2D, q: &Histogram2D) -> Result<f64> {
    if p.x != q.x || p.y != q.y {
        return Err(Error::BinningMismatch);
    }
    let mut div = 0.0;
    for (a, b) in p.probabilities.iter().zip(&q.probabilities) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            div += 0.5 * a * (a / m).log2();
        }
        if *b > 0.0 {
            div += 0.5 * b * (b / m).log2();
        }
    }
    Ok(div.clamp(0.0, 1.0).sqrt())
}

/// Periodicity-safe TICA input: `(sin κ_i, cos κ_i)` for every angle.
pub fn tica_features(ic: &InternalCoords) -> DVector<f64> {
    let k = ic.kappa();
    DVector::from_iterator(
        2 * k.len(),
        k.values.iter().flat_map(|v| {
            let (s, c) = v.sin_cos();
            [s, c]
        }),
    )
}

/// Stack per-frame features into a `T × F` matrix.
pub fn feature_matrix(frames: &[InternalCoords]) -> DMatrix<f64> {
    let rows: Vec<_> = frames.iter().map(|f| tica_features(f).transpose()).collect();
    DMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TicaModel {
    pub lag: usize,
    pub mean: DVector<f64>,
    /// `F × 2`; columns are the two slowest components, `C₀`-normalised.
    pub components: DMatrix<f64>,
    /// All retained autocorrelation eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Relative eigenvalue floor used when whitening `C₀`.
pub const TICA_EIGEN_FLOOR: f64 = 1e-10;

pub fn tica_fit(series: &DMatrix<f64>, lag: usize) -> Result<TicaModel> {
    let t = series.nrows();
    let f = series.ncols();
    if lag == 0 || t <= lag + 2 {
        return Err(Error::InvalidParameter(format!(
            "TICA needs lag >= 1 and more than lag + 2 frames (got {t} frames, lag {lag})"
        )));
    }
    let pairs = t - lag;
    let x0 = series.rows(0, pairs);
    let xt = series.rows(lag, pairs);
    let mean = (x0.row_sum() + xt.row_sum()).transpose() / (2 * pairs) as f64;
    let mut a = x0.into_owned();
    let mut b = xt.into_owned();
    for mut row in a.row_iter_mut() {
        row -= mean.transpose();
    }
    for mut row in b.row_iter_mut() {
        row -= mean.transpose();
    }
    let norm = 1.0 / (2 * pairs) as f64;
    let c0 = (a.transpose() * &a + b.transpose() * &b) * norm;
    let ab = a.transpose() * &b;
    let ctau = (&ab + ab.transpose()) * norm;

    let eig0 = SymmetricEigen::new(c0);
    let top = eig0.eigenvalues.max();
    let keep: Vec<usize> = (0..f)
        .filter(|&k| eig0.eigenvalues[k] > TICA_EIGEN_FLOOR * top.max(0.0) && eig0.eigenvalues[k] > 0.0)
        .collect();
    if keep.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "TICA input has rank {} after flooring; need at least 2",
            keep.len()
        )));
    }
    let whiten = DMatrix::from_columns(
        &keep
            .iter()
            .map(|&k| eig0.eigenvectors.column(k) / eig0.eigenvalues[k].sqrt())
            .collect::<Vec<_>>(),
    );
    let mut m = whiten.transpose() * ctau * &whiten;
    crate::jacobian::symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut components = DMatrix::zeros(f, 2);
    for (slot, &k) in order.iter().take(2).enumerate() {
        let mut v = &whiten * eig.eigenvectors.column(k);
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        components.set_column(slot, &v);
    }
    Ok(TicaModel {
        lag,
        mean,
        components,
        eigenvalues,
    })
}

/// Project frames (`T × F`) onto the two slowest components.
pub fn tica_project(model: &TicaModel, features: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if features.ncols() != model.mean.len() {
        return Err(Error::DimensionMismatch {
            what: "TICA features",
            expected: model.mean.len(),
            got: features.ncols(),
        });
    }
    Ok(features
        .row_iter()
        .map(|row| {
            let centred = row.transpose() - &model.mean;
            (
                centred.dot(&model.components.column(0)),
                centred.dot(&model.components.column(1)),
            )
        })
        .collect())
}
