//! Backbone geometry: Cartesian chains, internal coordinates and sequential
//! (NeRF) reconstruction.
//!
//! Atoms are ordered N, CA, C per residue. For a chain of `M` atoms there are
//! `M - 3` dihedrals, `M - 2` bond angles and `M - 1` bond lengths. Dihedral
//! `i` is the torsion of atoms `i..=i+3`, bond angle `j` is the interior angle
//! at atom `j + 1`, and bond length `k` is the distance between atoms `k` and
//! `k + 1`.
//!
//! Torsions follow the IUPAC right-handed convention: looking down the central
//! bond from its first atom, a positive torsion turns the near bond clockwise
//! onto the far bond. The chain `(0,0,0), (1,0,0), (1,1,0), (1,1,1)` has a
//! torsion of `+π/2`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Ideal backbone bond lengths in Å: N-CA, CA-C, C-N.
pub const IDEAL_BOND_LENGTHS: [f64; 3] = [1.458, 1.525, 1.329];

/// Minimum number of backbone atoms accepted for a chain.
pub const MIN_ATOMS: usize = 9;

const COLLINEAR_SIN_TOL: f64 = 1e-8;
const COINCIDENT_TOL: f64 = 1e-10;

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut r = x - TAU * ((x + PI) / TAU).floor();
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r += TAU;
    }
    r
}

/// Signed torsion of four points, in `[-π, π)`.
pub fn dihedral(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    let b1 = b - a;
    let b2 = c - b;
    let b3 = d - c;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let y = b2.norm() * b1.dot(&n2);
    let x = n1.dot(&n2);
    wrap_angle(y.atan2(x))
}

/// Interior angle at `b` of the triple `a-b-c`.
pub fn bond_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let u = a - b;
    let v = c - b;
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Ordered N/CA/C positions of one conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneChain {
    positions: Vec<Vec3>,
}

impl BackboneChain {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        let atoms = positions.len();
        if !atoms.is_multiple_of(3) {
            return Err(Error::NotBackbone { atoms });
        }
        if atoms < MIN_ATOMS {
            return Err(Error::ChainTooShort { atoms });
        }
        check_positions(&positions)?;
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Vec3> {
        self.positions
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn n_residues(&self) -> usize {
        self.positions.len() / 3
    }

    /// Apply `x -> rotation * x + translation` to every atom.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vec3) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
        }
    }
}

/// Reject coincident neighbours and collinear consecutive triples.
fn check_positions(positions: &[Vec3]) -> Result<()> {
    for (m, p) in positions.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::NonFinite { atom: m });
        }
    }
    for m in 1..positions.len() {
        if (positions[m] - positions[m - 1]).norm() <= COINCIDENT_TOL {
            return Err(Error::DegenerateGeometry {
                atom: m,
                reason: "coincident with previous atom",
            });
        }
    }
    for m in 1..positions.len().saturating_sub(1) {
        let u = (positions[m - 1] - positions[m]).normalize();
        let v = (positions[m + 1] - positions[m]).normalize();
        if u.cross(&v).norm() <= COLLINEAR_SIN_TOL {
            return Err(Error::DegenerateGeometry {
                atom: m,
                reason: "collinear with its neighbours",
            });
        }
    }
    Ok(())
}

/// Dihedrals, bond angles and bond lengths of one conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalCoords {
    pub dihedrals: Vec<f64>,
    pub bond_angles: Vec<f64>,
    pub bond_lengths: Vec<f64>,
}

impl InternalCoords {
    pub fn new(dihedrals: Vec<f64>, bond_angles: Vec<f64>, bond_lengths: Vec<f64>) -> Result<Self> {
        let ic = Self {
            dihedrals,
            bond_angles,
            bond_lengths,
        };
        ic.validate()?;
        Ok(ic)
    }

    /// Build from a flat `[dihedrals | bond angles]` vector plus bond lengths.
    pub fn from_kappa(kappa: &KappaVector, bond_lengths: Vec<f64>) -> Result<Self> {
        let (dihedrals, bond_angles) = kappa.split();
        Self::new(dihedrals, bond_angles, bond_lengths)
    }

    pub fn n_atoms(&self) -> usize {
        self.bond_lengths.len() + 1
    }

    pub fn layout(&self) -> KappaLayout {
        KappaLayout::new(self.n_atoms())
    }

    pub fn kappa(&self) -> KappaVector {
        let values = DVector::from_iterator(
            self.dihedrals.len() + self.bond_angles.len(),
            self.dihedrals.iter().chain(&self.bond_angles).copied(),
        );
        KappaVector {
            values,
            layout: self.layout(),
        }
    }

    /// Same angles with ideal N-CA / CA-C / C-N bond lengths.
    pub fn with_ideal_bond_lengths(&self) -> Self {
        Self {
            dihedrals: self.dihedrals.clone(),
            bond_angles: self.bond_angles.clone(),
            bond_lengths: ideal_bond_lengths(self.n_atoms()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let atoms = self.bond_lengths.len() + 1;
        if !atoms.is_multiple_of(3) {
            return Err(Error::NotBackbone { atoms });
        }
        if atoms < MIN_ATOMS {
            return Err(Error::ChainTooShort { atoms });
        }
        if self.bond_angles.len() != atoms - 2 {
            return Err(Error::DimensionMismatch {
                what: "bond angles",
                expected: atoms - 2,
                got: self.bond_angles.len(),
            });
        }
        if self.dihedrals.len() != atoms - 3 {
            return Err(Error::DimensionMismatch {
                what: "dihedrals",
                expected: atoms - 3,
                got: self.dihedrals.len(),
            });
        }
        if let Some(k) = self
            .bond_lengths
            .iter()
            .position(|r| !(r.is_finite() && *r > 0.0))
        {
            return Err(Error::InvalidInternal(format!(
                "bond length {k} must be positive and finite"
            )));
        }
        if let Some(j) = self
            .bond_angles
            .iter()
            .position(|t| !(t.is_finite() && *t > 0.0 && *t < PI))
        {
            return Err(Error::InvalidInternal(format!(
                "bond angle {j} must lie strictly inside (0, pi)"
            )));
        }
        if let Some(i) = self.dihedrals.iter().position(|d| !d.is_finite()) {
            return Err(Error::InvalidInternal(format!("dihedral {i} is not finite")));
        }
        Ok(())
    }
}

pub fn ideal_bond_lengths(n_atoms: usize) -> Vec<f64> {
    (0..n_atoms.saturating_sub(1))
        .map(|k| IDEAL_BOND_LENGTHS[k % 3])
        .collect()
}

/// Which kind of internal degree of freedom a flat index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DofKind {
    Dihedral,
    BondAngle,
}

/// One internal degree of freedom: its kind and its position in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dof {
    pub kind: DofKind,
    /// Dihedral `k` spans atoms `k..=k+3`; bond angle `k` spans `k..=k+2`.
    pub index: usize,
}

impl Dof {
    /// First atom that moves when this coordinate changes. Every atom from
    /// here to the end of the chain is post-rotational.
    pub fn first_moving_atom(&self) -> usize {
        match self.kind {
            DofKind::Dihedral => self.index + 3,
            DofKind::BondAngle => self.index + 2,
        }
    }

    /// Atom the rotation axis passes through.
    pub fn pivot_atom(&self) -> usize {
        self.index + 1 + usize::from(self.kind == DofKind::Dihedral)
    }
}

/// Flat layout of the `2M - 5` angular coordinates: all dihedrals first,
/// then all bond angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KappaLayout {
    n_atoms: usize,
}

impl KappaLayout {
    pub fn new(n_atoms: usize) -> Self {
        assert!(n_atoms >= 3, "layout needs at least 3 atoms");
        Self { n_atoms }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_dihedrals(&self) -> usize {
        self.n_atoms - 3
    }

    pub fn n_bond_angles(&self) -> usize {
        self.n_atoms - 2
    }

    /// Number of internal degrees of freedom, `2M - 5`.
    pub fn dof(&self) -> usize {
        2 * self.n_atoms - 5
    }

    pub fn entry(&self, i: usize) -> Dof {
        assert!(i < self.dof(), "flat index {i} out of range");
        let nd = self.n_dihedrals();
        if i < nd {
            Dof {
                kind: DofKind::Dihedral,
                index: i,
            }
        } else {
            Dof {
                kind: DofKind::BondAngle,
                index: i - nd,
            }
        }
    }

    pub fn flat_index(&self, dof: Dof) -> usize {
        match dof.kind {
            DofKind::Dihedral => dof.index,
            DofKind::BondAngle => self.n_dihedrals() + dof.index,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Dof> + '_ {
        (0..self.dof()).map(|i| self.entry(i))
    }

    pub fn is_dihedral(&self, i: usize) -> bool {
        i < self.n_dihedrals()
    }
}

/// Flat angular coordinate vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaVector {
    pub values: DVector<f64>,
    pub layout: KappaLayout,
}

impl KappaVector {
    pub fn new(values: DVector<f64>, layout: KappaLayout) -> Result<Self> {
        if values.len() != layout.dof() {
            return Err(Error::DimensionMismatch {
                what: "kappa vector",
                expected: layout.dof(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let nd = self.layout.n_dihedrals();
        let s = self.values.as_slice();
        (s[..nd].to_vec(), s[nd..].to_vec())
    }
}

/// Internal coordinates from raw positions (any length ≥ 3).
pub fn internal_from_positions(positions: &[Vec3]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if positions.len() < 3 {
        return Err(Error::InvalidInternal(format!(
            "need at least 3 atoms, got {}",
            positions.len()
        )));
    }
    check_positions(positions)?;
    let dihedrals = positions
        .windows(4)
        .map(|w| dihedral(&w[0], &w[1], &w[2], &w[3]))
        .collect();
    let bond_angles = positions
        .windows(3)
        .map(|w| bond_angle(&w[0], &w[1], &w[2]))
        .collect();
    let bond_lengths = positions.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    Ok((dihedrals, bond_angles, bond_lengths))
}

pub fn cartesian_to_internal(chain: &BackboneChain) -> Result<InternalCoords> {
    let (dihedrals, bond_angles, bond_lengths) = internal_from_positions(chain.positions())?;
    InternalCoords::new(dihedrals, bond_angles, bond_lengths)
}

/// Place atom `d` given the three preceding atoms, the bond length `c-d`,
/// the bond angle `b-c-d` and the torsion `a-b-c-d`.
pub fn place_atom(a: &Vec3, b: &Vec3, c: &Vec3, length: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = Matrix3::from_columns(&[bc, n.cross(&bc), n]);
    let (st, ct) = angle.sin_cos();
    let (sp, cp) = torsion.sin_cos();
    let local = Vec3::new(-length * ct, length * st * cp, length * st * sp);
    c + m * local
}

/// Sequential reconstruction in the canonical frame: atom 0 at the origin,
/// atom 1 on +x, atom 2 in the xy-plane with positive y.
///
/// Slices must satisfy `lengths.len() = angles.len() + 1 = dihedrals.len() + 2`.
pub fn reconstruct_positions(dihedrals: &[f64], angles: &[f64], lengths: &[f64]) -> Vec<Vec3> {
    let n = lengths.len() + 1;
    assert!(n >= 3, "reconstruction needs at least 3 atoms");
    assert_eq!(angles.len(), n - 2);
    assert_eq!(dihedrals.len(), n - 3);

    let mut out = Vec::with_capacity(n);
    out.push(Vec3::zeros());
    out.push(Vec3::new(lengths[0], 0.0, 0.0));
    let (st, ct) = angles[0].sin_cos();
    out.push(out[1] + lengths[1] * Vec3::new(-ct, st, 0.0));
    for m in 3..n {
        let p = place_atom(
            &out[m - 3],
            &out[m - 2],
            &out[m - 1],
            lengths[m - 1],
            angles[m - 2],
            dihedrals[m - 3],
        );
        out.push(p);
    }
    out
}

pub fn internal_to_cartesian(ic: &InternalCoords) -> Result<BackboneChain> {
    ic.validate()?;
    let positions = reconstruct_positions(&ic.dihedrals, &ic.bond_angles, &ic.bond_lengths);
    BackboneChain::new(positions)
}
