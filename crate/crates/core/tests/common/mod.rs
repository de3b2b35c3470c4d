#![allow(dead_code)]

use icdens::geometry::{internal_to_cartesian, InternalCoords, Vec3};
use icdens::synth;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn positions(ic: &InternalCoords) -> Vec<Vec3> {
    internal_to_cartesian(ic).unwrap().into_positions()
}

/// Central differences of every atom position with respect to every angle,
/// laid out like the analytic Jacobian (3M × D).
pub fn finite_difference_jacobian(ic: &InternalCoords, h: f64) -> DMatrix<f64> {
    let kappa = ic.kappa();
    let d = kappa.len();
    let m = ic.n_atoms();
    let mut out = DMatrix::zeros(3 * m, d);
    for i in 0..d {
        let mut plus = kappa.clone();
        let mut minus = kappa.clone();
        plus.values[i] += h;
        minus.values[i] -= h;
        let xp = positions(&InternalCoords::from_kappa(&plus, ic.bond_lengths.clone()).unwrap());
        let xm = positions(&InternalCoords::from_kappa(&minus, ic.bond_lengths.clone()).unwrap());
        for a in 0..m {
            let g = (xp[a] - xm[a]) / (2.0 * h);
            for c in 0..3 {
                out[(3 * a + c, i)] = g[c];
            }
        }
    }
    out
}

/// All pairwise distances; equal for two chains exactly when they agree up
/// to a rigid motion or reflection.
pub fn distance_matrix(p: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(p.len(), p.len(), |i, j| (p[i] - p[j]).norm())
}

pub fn random_internal(residues: usize, seed: u64) -> InternalCoords {
    synth::random_internal(residues, &mut rng(seed))
}
