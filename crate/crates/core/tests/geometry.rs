mod common;

use std::f64::consts::PI;

use icdens::geometry::{
    bond_angle, cartesian_to_internal, dihedral, internal_to_cartesian, wrap_angle, BackboneChain, Vec3,
};
use icdens::metrics::superpose_positions;
use icdens::synth;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

use common::{distance_matrix, positions, random_internal, rng};

#[test]
fn round_trip_random_chains() {
    let mut r = rng(1);
    for trial in 0..100 {
        let residues = 5 + trial % 26;
        let chain = synth::random_chain(residues, &mut r);
        let ic = cartesian_to_internal(&chain).unwrap();
        let rebuilt = internal_to_cartesian(&ic).unwrap();
        let fit = superpose_positions(chain.positions(), rebuilt.positions()).unwrap();
        assert!(fit.rmsd < 1e-8, "trial {trial}: rmsd {}", fit.rmsd);
        // Rigid-motion oracle independent of the superposition code.
        let d = distance_matrix(chain.positions()) - distance_matrix(rebuilt.positions());
        assert!(d.amax() < 1e-9, "trial {trial}: distance error {}", d.amax());
    }
}

#[test]
fn round_trip_is_exact_in_internal_space() {
    let ic = random_internal(20, 2);
    let back = cartesian_to_internal(&internal_to_cartesian(&ic).unwrap()).unwrap();
    for (a, b) in ic.dihedrals.iter().zip(&back.dihedrals) {
        assert!(wrap_angle(a - b).abs() < 1e-10);
    }
    for (a, b) in ic.bond_angles.iter().zip(&back.bond_angles) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in ic.bond_lengths.iter().zip(&back.bond_lengths) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dihedral_perturbation_moves_downstream_rigidly() {
    let ic = random_internal(12, 3);
    let x0 = positions(&ic);
    let k = 15;
    let delta = 1e-3;
    let mut moved = ic.clone();
    moved.dihedrals[k] += delta;
    let x1 = positions(&moved);

    // Explicit rotation about the bond k+1 → k+2 passing through atom k+2.
    let axis = Unit::new_normalize(x0[k + 2] - x0[k + 1]);
    let rot = Rotation3::from_axis_angle(&axis, delta);
    for m in 0..x0.len() {
        if m < k + 3 {
            assert_eq!(x0[m], x1[m], "upstream atom {m} moved");
        } else {
            let expected = x0[k + 2] + rot * (x0[m] - x0[k + 2]);
            assert!((expected - x1[m]).norm() < 1e-10, "atom {m}");
        }
    }
}

#[test]
fn bond_angle_perturbation_moves_downstream_rigidly() {
    let ic = random_internal(12, 4);
    let x0 = positions(&ic);
    let j = 10;
    let delta = 1e-3;
    let mut moved = ic.clone();
    moved.bond_angles[j] += delta;
    let x1 = positions(&moved);

    // Opening the angle at atom j+1 rotates everything from j+2 on about the
    // normal of the plane (j, j+1, j+2).
    let vertex = x0[j + 1];
    let n = (x0[j] - vertex).cross(&(x0[j + 2] - vertex));
    let axis = Unit::new_normalize(n);
    let rot = Rotation3::from_axis_angle(&axis, delta);
    for m in 0..x0.len() {
        if m < j + 2 {
            assert_eq!(x0[m], x1[m]);
        } else {
            let expected = vertex + rot * (x0[m] - vertex);
            assert!((expected - x1[m]).norm() < 1e-10, "atom {m}");
        }
    }
    assert!((bond_angle(&x1[j], &x1[j + 1], &x1[j + 2]) - ic.bond_angles[j] - delta).abs() < 1e-12);
}

#[test]
fn size_from_residue_count() {
    let ic = synth::ideal_helix(56);
    assert_eq!(ic.n_atoms(), 168);
    assert_eq!(ic.layout().dof(), 331);
    let ic = synth::ideal_helix(36);
    assert_eq!(ic.n_atoms(), 108);
}

#[test]
fn degenerate_chain_reports_atom() {
    let mut p: Vec<Vec3> = positions(&random_internal(4, 5));
    p[7] = p[6];
    match BackboneChain::new(p) {
        Err(icdens::Error::DegenerateGeometry { atom, .. }) => assert_eq!(atom, 7),
        other => panic!("unexpected {other:?}"),
    }
}

fn rotation_strategy() -> impl Strategy<Value = Rotation3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..PI).prop_filter_map("axis", |(x, y, z, a)| {
        let v = Vec3::new(x, y, z);
        (v.norm() > 1e-3).then(|| Rotation3::from_axis_angle(&Unit::new_normalize(v), a))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn internal_coordinates_are_rigid_invariant(
        seed in any::<u64>(),
        rot in rotation_strategy(),
        t in prop::array::uniform3(-50.0..50.0f64),
    ) {
        let chain = internal_to_cartesian(&random_internal(8, seed)).unwrap();
        let moved = chain.transformed(rot.matrix(), &Vec3::from(t));
        let a = cartesian_to_internal(&chain).unwrap();
        let b = cartesian_to_internal(&moved).unwrap();
        for (x, y) in a.dihedrals.iter().zip(&b.dihedrals) {
            prop_assert!(wrap_angle(x - y).abs() < 1e-10);
        }
        for (x, y) in a.bond_angles.iter().zip(&b.bond_angles) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.bond_lengths.iter().zip(&b.bond_lengths) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn wrap_is_a_periodic_projection(x in -100.0..100.0f64) {
        let w = wrap_angle(x);
        prop_assert!((-PI..PI).contains(&w));
        prop_assert!((w.sin() - x.sin()).abs() < 1e-9);
        prop_assert!((w.cos() - x.cos()).abs() < 1e-9);
        prop_assert_eq!(wrap_angle(w), w);
    }

    #[test]
    fn dihedral_flips_sign_under_reflection(
        p in prop::array::uniform4(prop::array::uniform3(-5.0..5.0f64)),
    ) {
        let v: Vec<Vec3> = p.iter().map(|a| Vec3::from(*a)).collect();
        let mirrored: Vec<Vec3> = v.iter().map(|a| Vec3::new(a.x, a.y, -a.z)).collect();
        let d = dihedral(&v[0], &v[1], &v[2], &v[3]);
        let e = dihedral(&mirrored[0], &mirrored[1], &mirrored[2], &mirrored[3]);
        prop_assume!(d.abs() > 1e-6 && d.abs() < PI - 1e-6);
        prop_assert!((d + e).abs() < 1e-9);
    }
}
