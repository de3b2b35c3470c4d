mod common;

use std::fs;

use icdens::geometry::wrap_angle;
use icdens::io::{export, ingest, read_pdb, sidecar_path, Topology};
use icdens::synth;

use common::rng;

fn three_models() -> Vec<icdens::geometry::InternalCoords> {
    let mut r = rng(61);
    (0..3).map(|_| synth::random_internal(5, &mut r)).collect()
}

#[test]
fn exported_ensemble_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.pdb");
    let ens = three_models();
    export(&ens, &Topology::generic(5), &path).unwrap();
    let back = ingest(&path).unwrap();
    assert!(back.from_sidecar);
    assert_eq!(back.conformations, ens);
    assert_eq!(back.topology, Topology::generic(5));
}

#[test]
fn sidecar_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.pdb");
    let second = dir.path().join("b.pdb");
    let ens = three_models();
    export(&ens, &Topology::generic(5), &first).unwrap();
    let back = ingest(&first).unwrap();
    export(&back.conformations, &back.topology, &second).unwrap();
    assert_eq!(fs::read(sidecar_path(&first)).unwrap(), fs::read(sidecar_path(&second)).unwrap());
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn pdb_alone_reproduces_angles_to_coordinate_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.pdb");
    let ens = three_models();
    export(&ens, &Topology::generic(5), &path).unwrap();
    fs::remove_file(sidecar_path(&path)).unwrap();
    let back = ingest(&path).unwrap();
    assert!(!back.from_sidecar);
    assert_eq!(back.conformations.len(), 3);
    for (a, b) in back.conformations.iter().zip(&ens) {
        for (x, y) in a.dihedrals.iter().zip(&b.dihedrals) {
            assert!(wrap_angle(x - y).abs() < 5e-3);
        }
        for (x, y) in a.bond_lengths.iter().zip(&b.bond_lengths) {
            assert!((x - y).abs() < 2e-3);
        }
    }
}

#[test]
fn fixed_width_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.pdb");
    export(&three_models(), &Topology::generic(5), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "MODEL        1");
    let atom = lines[2];
    assert_eq!(&atom[0..6], "ATOM  ");
    assert_eq!(&atom[12..16], " CA ");
    assert_eq!(&atom[17..20], "GLY");
    assert_eq!(&atom[21..22], "A");
    for range in [30..38, 38..46, 46..54] {
        let field = &atom[range];
        assert_eq!(field.len(), 8);
        let decimals = field.trim().split('.').nth(1).unwrap();
        assert_eq!(decimals.len(), 3, "{field}");
    }
    assert_eq!(text.matches("ENDMDL").count(), 3);
    assert!(text.ends_with("END\n"));
    assert_eq!(read_pdb(&path).unwrap().chains.len(), 3);
}

#[test]
fn stale_sidecar_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.pdb");
    let ens = three_models();
    export(&ens, &Topology::generic(5), &path).unwrap();
    let mut other = ens.clone();
    other[1].dihedrals[4] += 0.5;
    let elsewhere = dir.path().join("other.pdb");
    export(&other, &Topology::generic(5), &elsewhere).unwrap();
    fs::copy(sidecar_path(&elsewhere), sidecar_path(&path)).unwrap();
    assert!(ingest(&path).is_err());
}

#[test]
fn empty_and_unwritable_exports_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        export(&[], &Topology::generic(5), &dir.path().join("e.pdb")),
        Err(icdens::Error::EmptyEnsemble)
    ));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let bad = blocker.join("sub").join("x.pdb");
    assert!(export(&three_models(), &Topology::generic(5), &bad).is_err());
}

#[test]
fn topology_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(export(&three_models(), &Topology::generic(4), &dir.path().join("x.pdb")).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = ingest(std::path::Path::new("/nonexistent/none.pdb")).unwrap_err();
    assert!(matches!(err, icdens::Error::Io { .. }));
}
