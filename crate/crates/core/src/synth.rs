//! Synthetic backbones and ensembles for tests, benchmarks and smoke runs.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constraint::{assemble_precision, sample, KappaPrior};
use crate::error::Result;
use crate::geometry::{
    ideal_bond_lengths, internal_to_cartesian, BackboneChain, InternalCoords, Vec3,
};
use crate::jacobian::{compute_gram_set, compute_jacobian};

pub const HELIX_PHI_DEG: f64 = -57.8;
pub const HELIX_PSI_DEG: f64 = -47.0;
pub const OMEGA_DEG: f64 = 180.0;
/// N-CA-C, CA-C-N, C-N-CA.
pub const IDEAL_BOND_ANGLES_DEG: [f64; 3] = [111.2, 116.2, 121.7];

/// Regular backbone with the given φ/ψ on every residue, trans peptides and
/// ideal bond geometry.
pub fn regular_backbone(residues: usize, phi_deg: f64, psi_deg: f64) -> InternalCoords {
    let m = 3 * residues;
    let dihedrals = (0..m - 3)
        .map(|k| match k % 3 {
            0 => psi_deg,
            1 => OMEGA_DEG,
            _ => phi_deg,
        })
        .map(|d| crate::geometry::wrap_angle(d.to_radians()))
        .collect();
    let bond_angles = (0..m - 2)
        .map(|j| IDEAL_BOND_ANGLES_DEG[j % 3].to_radians())
        .collect();
    InternalCoords {
        dihedrals,
        bond_angles,
        bond_lengths: ideal_bond_lengths(m),
    }
}

pub fn ideal_helix(residues: usize) -> InternalCoords {
    regular_backbone(residues, HELIX_PHI_DEG, HELIX_PSI_DEG)
}

/// Random but chemically plausible internal coordinates: uniform torsions,
/// bond angles in 100-125°, bond lengths within 0.02 Å of ideal.
pub fn random_internal<R: Rng + ?Sized>(residues: usize, rng: &mut R) -> InternalCoords {
    let m = 3 * residues;
    InternalCoords {
        dihedrals: (0..m - 3).map(|_| rng.gen_range(-PI..PI)).collect(),
        bond_angles: (0..m - 2)
            .map(|_| rng.gen_range(100f64.to_radians()..125f64.to_radians()))
            .collect(),
        bond_lengths: ideal_bond_lengths(m)
            .into_iter()
            .map(|r| r + rng.gen_range(-0.02..0.02))
            .collect(),
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q))
        .to_rotation_matrix()
        .into_inner()
}

/// Random chain placed at a random orientation and offset.
pub fn random_chain<R: Rng + ?Sized>(residues: usize, rng: &mut R) -> BackboneChain {
    let ic = random_internal(residues, rng);
    let chain = internal_to_cartesian(&ic).expect("random internal coordinates are valid");
    let t = Vec3::from_fn(|_, _| rng.gen_range(-20.0..20.0));
    chain.transformed(&random_rotation(rng), &t)
}

/// Ensemble drawn from a constrained Gaussian around `mean`: prior strength
/// `strength`, per-coordinate variance `variance`, and the same multiplier
/// `lambda` on every atom. Such ensembles have strongly correlated angles
/// with small 3D fluctuations.
pub fn constrained_ensemble(
    mean: &InternalCoords,
    strength: f64,
    variance: f64,
    lambda: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<InternalCoords>> {
    let chain = internal_to_cartesian(mean)?;
    let layout = mean.layout();
    let grams = compute_gram_set(compute_jacobian(&chain, layout)?);
    let prior = KappaPrior::new(strength, DVector::from_element(layout.dof(), variance))?;
    let model = assemble_precision(&prior, &vec![lambda; layout.n_atoms()], &grams)?;
    sample(&model, mean, n, seed)
}
