//! Analytic position derivatives with respect to the angular coordinates, and
//! the per-atom Gram matrices built from them.
//!
//! Changing coordinate `i` rotates every post-rotational atom rigidly about an
//! axis through the coordinate's pivot atom. For a dihedral about bond
//! `(a, b)` the axis is the bond direction; for a bond angle at `b` in the
//! triple `(a, b, c)` it is the normal of the plane `a-b-c`. The derivative of
//! a downstream atom is then `axis × (x_m - x_pivot)`.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::geometry::{BackboneChain, DofKind, KappaLayout, Vec3};

/// Orientation of the bond-angle rotation relative to the plane normal
/// `(x_b - x_a) × (x_c - x_b)`. Opening the angle rotates downstream atoms
/// clockwise about that normal; pinned by a finite-difference test.
pub const BOND_ANGLE_AXIS_SIGN: f64 = -1.0;

const AXIS_TOL: f64 = 1e-10;

/// Dense table of `∂x_m/∂κ_i`, stored as a `3M × D` matrix where rows
/// `3m..3m+3` hold atom `m`.
#[derive(Debug, Clone)]
pub struct JacobianTable {
    layout: KappaLayout,
    data: DMatrix<f64>,
}

impl JacobianTable {
    #[cfg(test)]
    pub(crate) fn from_matrix(layout: KappaLayout, data: DMatrix<f64>) -> Self {
        assert_eq!(data.shape(), (3 * layout.n_atoms(), layout.dof()));
        Self { layout, data }
    }

    pub fn layout(&self) -> KappaLayout {
        self.layout
    }

    pub fn n_atoms(&self) -> usize {
        self.layout.n_atoms()
    }

    pub fn dof(&self) -> usize {
        self.layout.dof()
    }

    pub fn get(&self, atom: usize, coord: usize) -> Vec3 {
        Vec3::new(
            self.data[(3 * atom, coord)],
            self.data[(3 * atom + 1, coord)],
            self.data[(3 * atom + 2, coord)],
        )
    }

    /// The `3 × D` block of atom `m`.
    pub fn atom_block(&self, atom: usize) -> DMatrixView<'_, f64> {
        self.data.rows(3 * atom, 3)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Jacobian of a raw position list. Accepts short chains (≥ 4 atoms) that a
/// [`BackboneChain`] would reject.
pub fn jacobian_from_positions(positions: &[Vec3], layout: KappaLayout) -> Result<JacobianTable> {
    let n = positions.len();
    if layout.n_atoms() != n {
        return Err(Error::DimensionMismatch {
            what: "jacobian layout atoms",
            expected: n,
            got: layout.n_atoms(),
        });
    }
    let mut data = DMatrix::zeros(3 * n, layout.dof());
    for (i, dof) in layout.iter().enumerate() {
        let k = dof.index;
        let (axis, pivot) = match dof.kind {
            DofKind::Dihedral => {
                let bond = positions[k + 2] - positions[k + 1];
                let len = bond.norm();
                if len <= AXIS_TOL {
                    return Err(Error::DegenerateGeometry {
                        atom: k + 2,
                        reason: "zero-length rotation bond",
                    });
                }
                (bond / len, positions[k + 2])
            }
            DofKind::BondAngle => {
                let normal =
                    (positions[k + 1] - positions[k]).cross(&(positions[k + 2] - positions[k + 1]));
                let len = normal.norm();
                if len <= AXIS_TOL {
                    return Err(Error::DegenerateGeometry {
                        atom: k + 1,
                        reason: "collinear bond-angle triple",
                    });
                }
                (BOND_ANGLE_AXIS_SIGN * normal / len, positions[k + 1])
            }
        };
        for m in dof.first_moving_atom()..n {
            let d = axis.cross(&(positions[m] - pivot));
            data[(3 * m, i)] = d.x;
            data[(3 * m + 1, i)] = d.y;
            data[(3 * m + 2, i)] = d.z;
        }
    }
    Ok(JacobianTable { layout, data })
}

pub fn compute_jacobian(chain: &BackboneChain, layout: KappaLayout) -> Result<JacobianTable> {
    jacobian_from_positions(chain.positions(), layout)
}

/// The per-atom Gram matrices `G_m = J_mᵀ J_m`.
///
/// Only the Jacobian factor is stored; `M` dense `D × D` matrices are
/// materialised on request. Every operation that only needs quadratic forms
/// or weighted sums goes through the factor.
#[derive(Debug, Clone)]
pub struct GramSet {
    jacobian: JacobianTable,
}

pub fn compute_gram_set(jacobian: JacobianTable) -> GramSet {
    GramSet { jacobian }
}

impl GramSet {
    pub fn jacobian(&self) -> &JacobianTable {
        &self.jacobian
    }

    pub fn layout(&self) -> KappaLayout {
        self.jacobian.layout
    }

    pub fn n_atoms(&self) -> usize {
        self.jacobian.n_atoms()
    }

    pub fn dof(&self) -> usize {
        self.jacobian.dof()
    }

    /// Dense `G_m`.
    pub fn matrix(&self, atom: usize) -> DMatrix<f64> {
        let block = self.jacobian.atom_block(atom);
        block.transpose() * block
    }

    /// `Δκᵀ G_m Δκ = |J_m Δκ|²`.
    pub fn quadratic_form(&self, atom: usize, delta: &DVector<f64>) -> f64 {
        (self.jacobian.atom_block(atom) * delta).norm_squared()
    }

    /// First-order displacement of every atom for a coordinate step.
    pub fn displacements(&self, delta: &DVector<f64>) -> Vec<Vec3> {
        let flat = &self.jacobian.data * delta;
        (0..self.n_atoms())
            .map(|m| Vec3::new(flat[3 * m], flat[3 * m + 1], flat[3 * m + 2]))
            .collect()
    }

    /// `Σ_m w_m G_m`, computed as `Jᵀ W J`.
    pub fn weighted_sum(&self, weights: &[f64]) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.n_atoms());
        let j = &self.jacobian.data;
        let mut scaled = j.clone();
        for (m, w) in weights.iter().enumerate() {
            scaled.rows_mut(3 * m, 3).scale_mut(*w);
        }
        let mut out = j.transpose() * scaled;
        symmetrize(&mut out);
        out
    }

    pub fn sum(&self) -> DMatrix<f64> {
        self.weighted_sum(&vec![1.0; self.n_atoms()])
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
