//! Multi-model PDB reading and writing, the internal-coordinate sidecar, and
//! CSV table output.
//!
//! Only N, CA and C atoms of the first chain of each model are read. HETATM
//! records are skipped, and for atoms with alternate locations the first
//! location seen is kept. Exported files place every model in the canonical
//! reconstruction frame and are accompanied by a sidecar
//! (`<stem>.ic.csv`) holding the exact internal coordinates, which takes
//! precedence over the 3-decimal PDB coordinates on re-ingestion.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::ensemble::EnsembleDataset;
use crate::geometry::{cartesian_to_internal, internal_to_cartesian, BackboneChain, InternalCoords, Vec3};

const BACKBONE: [&str; 3] = ["N", "CA", "C"];
/// Largest coordinate deviation tolerated between a sidecar reconstruction
/// and the rounded PDB coordinates.
const SIDECAR_TOL: f64 = 1.5e-3;

/// Residue naming carried from input to output files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub chain_id: char,
    pub residues: Vec<ResidueId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueId {
    pub name: String,
    pub seq: i32,
    pub insertion: char,
}

impl std::fmt::Display for ResidueId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.name, self.seq)?;
        if self.insertion != ' ' {
            write!(f, "{}", self.insertion)?;
        }
        Ok(())
    }
}

impl Topology {
    /// Glycine residues numbered from 1 on chain A.
    pub fn generic(residues: usize) -> Self {
        Self {
            chain_id: 'A',
            residues: (0..residues)
                .map(|i| ResidueId {
                    name: "GLY".into(),
                    seq: i as i32 + 1,
                    insertion: ' ',
                })
                .collect(),
        }
    }
}

/// Backbone models read from a PDB file.
#[derive(Debug, Clone)]
pub struct PdbEnsemble {
    pub topology: Topology,
    pub chains: Vec<BackboneChain>,
}

#[derive(Default)]
struct ModelAtoms {
    chain_id: Option<char>,
    residues: Vec<(ResidueId, [Option<Vec3>; 3])>,
    index: HashMap<(i32, char), usize>,
    other_chains: bool,
}

fn field(line: &str, range: std::ops::Range<usize>) -> &str {
    line.get(range.start.min(line.len())..range.end.min(line.len()))
        .unwrap_or("")
}

fn char_at(line: &str, i: usize) -> char {
    line.as_bytes().get(i).map_or(' ', |b| *b as char)
}

/// Parse the backbone of every model in PDB text.
pub fn parse_pdb(text: &str, path: &Path) -> Result<PdbEnsemble> {
    let parse_err = |line: usize, message: String| Error::PdbParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut models: Vec<ModelAtoms> = Vec::new();
    let mut current: Option<ModelAtoms> = None;
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let record = field(line, 0..6);
        match record.trim_end() {
            "MODEL" => {
                if let Some(m) = current.take() {
                    models.push(m);
                }
                current = Some(ModelAtoms::default());
            }
            "ENDMDL" => {
                if let Some(m) = current.take() {
                    models.push(m);
                }
            }
            "ATOM" => {
                let model = current.get_or_insert_with(ModelAtoms::default);
                let name = field(line, 12..16).trim();
                let Some(slot) = BACKBONE.iter().position(|b| *b == name) else {
                    continue;
                };
                let chain = char_at(line, 21);
                match model.chain_id {
                    None => model.chain_id = Some(chain),
                    Some(c) if c != chain => {
                        model.other_chains = true;
                        continue;
                    }
                    _ => {}
                }
                let seq: i32 = field(line, 22..26)
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(ln, "invalid residue number".into()))?;
                let insertion = char_at(line, 26);
                let coord = |r: std::ops::Range<usize>| -> Result<f64> {
                    field(line, r)
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(ln, "invalid coordinate".into()))
                };
                let pos = Vec3::new(coord(30..38)?, coord(38..46)?, coord(46..54)?);
                let key = (seq, insertion);
                let idx = match model.index.get(&key) {
                    Some(i) => *i,
                    None => {
                        model.residues.push((
                            ResidueId {
                                name: field(line, 17..20).trim().to_string(),
                                seq,
                                insertion,
                            },
                            [None; 3],
                        ));
                        model.index.insert(key, model.residues.len() - 1);
                        model.residues.len() - 1
                    }
                };
                // First alternate location wins.
                model.residues[idx].1[slot].get_or_insert(pos);
            }
            _ => {}
        }
    }
    if let Some(m) = current.take() {
        models.push(m);
    }
    models.retain(|m| !m.residues.is_empty());
    if models.is_empty() {
        return Err(parse_err(0, "no models with backbone ATOM records".into()));
    }

    let mut topology: Option<Topology> = None;
    let mut chains = Vec::with_capacity(models.len());
    for (mi, model) in models.into_iter().enumerate() {
        if model.other_chains {
            warn!("model {}: only chain {:?} is used", mi + 1, model.chain_id.unwrap_or(' '));
        }
        let mut positions = Vec::with_capacity(3 * model.residues.len());
        for (res, atoms) in &model.residues {
            for (slot, atom) in atoms.iter().enumerate() {
                let p = atom.ok_or_else(|| Error::Backbone {
                    model: mi + 1,
                    residue: res.to_string(),
                    message: format!("missing backbone atom {}", BACKBONE[slot]),
                })?;
                positions.push(p);
            }
        }
        let topo = Topology {
            chain_id: model.chain_id.unwrap_or('A'),
            residues: model.residues.into_iter().map(|(r, _)| r).collect(),
        };
        match &topology {
            None => topology = Some(topo),
            Some(t) if t.residues.len() != topo.residues.len() => {
                return Err(Error::Backbone {
                    model: mi + 1,
                    residue: "-".into(),
                    message: format!(
                        "{} backbone atoms, but model 1 has {}",
                        3 * topo.residues.len(),
                        3 * t.residues.len()
                    ),
                });
            }
            _ => {}
        }
        let chain = BackboneChain::new(positions).map_err(|e| Error::Backbone {
            model: mi + 1,
            residue: "-".into(),
            message: e.to_string(),
        })?;
        chains.push(chain);
    }
    Ok(PdbEnsemble {
        topology: topology.expect("at least one model"),
        chains,
    })
}

pub fn read_pdb(path: &Path) -> Result<PdbEnsemble> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pdb(&text, path)
}

/// Sidecar path for a PDB file: `x.pdb` → `x.ic.csv`.
pub fn sidecar_path(pdb: &Path) -> PathBuf {
    pdb.with_extension("ic.csv")
}

/// Conformations and naming read from a PDB file (and its sidecar, if any).
#[derive(Debug, Clone)]
pub struct Ingested {
    pub topology: Topology,
    pub conformations: Vec<InternalCoords>,
    pub from_sidecar: bool,
}

/// Read an ensemble. When a sidecar sits next to the PDB file its exact
/// internal coordinates are used, after checking them against the PDB.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let pdb = read_pdb(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let conformations = read_sidecar(&sidecar)?;
        check_sidecar(&pdb, &conformations, &sidecar)?;
        return Ok(Ingested {
            topology: pdb.topology,
            conformations,
            from_sidecar: true,
        });
    }
    let conformations = pdb
        .chains
        .iter()
        .map(cartesian_to_internal)
        .collect::<Result<Vec<_>>>()?;
    Ok(Ingested {
        topology: pdb.topology,
        conformations,
        from_sidecar: false,
    })
}

pub fn ingest_dataset(path: &Path) -> Result<(EnsembleDataset, Topology)> {
    let ing = ingest(path)?;
    Ok((EnsembleDataset::new(ing.conformations)?, ing.topology))
}

fn check_sidecar(pdb: &PdbEnsemble, conformations: &[InternalCoords], path: &Path) -> Result<()> {
    let stale = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if conformations.len() != pdb.chains.len() {
        return Err(stale(format!(
            "sidecar has {} models, PDB has {}",
            conformations.len(),
            pdb.chains.len()
        )));
    }
    for (i, (ic, chain)) in conformations.iter().zip(&pdb.chains).enumerate() {
        let rebuilt = internal_to_cartesian(ic)?;
        if rebuilt.n_atoms() != chain.n_atoms() {
            return Err(stale(format!("model {}: atom count differs from PDB", i + 1)));
        }
        let worst = rebuilt
            .positions()
            .iter()
            .zip(chain.positions())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        if worst > SIDECAR_TOL {
            return Err(stale(format!(
                "model {}: sidecar disagrees with PDB coordinates by {worst:.4} Å",
                i + 1
            )));
        }
    }
    Ok(())
}

fn format_pdb(ensemble: &[InternalCoords], topology: &Topology) -> Result<String> {
    let mut out = String::new();
    for (mi, ic) in ensemble.iter().enumerate() {
        let chain = internal_to_cartesian(ic)?;
        if chain.n_residues() != topology.residues.len() {
            return Err(Error::DimensionMismatch {
                what: "topology residues",
                expected: chain.n_residues(),
                got: topology.residues.len(),
            });
        }
        writeln!(out, "MODEL     {:>4}", mi + 1).unwrap();
        for (a, p) in chain.positions().iter().enumerate() {
            let res = &topology.residues[a / 3];
            let name = BACKBONE[a % 3];
            let element = &name[..1];
            writeln!(
                out,
                "ATOM  {:>5} {:<4} {:>3} {}{:>4}{}   {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                a + 1,
                format!(" {name}"),
                res.name,
                topology.chain_id,
                res.seq,
                res.insertion,
                p.x,
                p.y,
                p.z,
                1.0,
                0.0,
                element
            )
            .unwrap();
        }
        writeln!(out, "ENDMDL").unwrap();
    }
    writeln!(out, "END").unwrap();
    Ok(out)
}

fn format_sidecar(ensemble: &[InternalCoords]) -> String {
    let mut out = String::from("model,kind,index,value\n");
    for (mi, ic) in ensemble.iter().enumerate() {
        for (kind, values) in [
            ("dihedral", &ic.dihedrals),
            ("bond_angle", &ic.bond_angles),
            ("bond_length", &ic.bond_lengths),
        ] {
            for (k, v) in values.iter().enumerate() {
                writeln!(out, "{},{kind},{k},{v:?}", mi + 1).unwrap();
            }
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write a multi-model PDB in the canonical frame plus its sidecar.
pub fn export(ensemble: &[InternalCoords], topology: &Topology, path: &Path) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let pdb = format_pdb(ensemble, topology)?;
    write_file(path, &pdb)?;
    write_file(&sidecar_path(path), &format_sidecar(ensemble))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<InternalCoords>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some("model,kind,index,value") {
        return Err(bad("missing sidecar header".into()));
    }
    let mut models: Vec<InternalCoords> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(format!("line {}: expected 4 columns", ln + 2)));
        }
        let model: usize = cols[0]
            .parse()
            .map_err(|_| bad(format!("line {}: invalid model", ln + 2)))?;
        let index: usize = cols[2]
            .parse()
            .map_err(|_| bad(format!("line {}: invalid index", ln + 2)))?;
        let value: f64 = cols[3]
            .parse()
            .map_err(|_| bad(format!("line {}: invalid value", ln + 2)))?;
        if model == 0 || model > models.len() + 1 {
            return Err(bad(format!("line {}: models must be numbered consecutively", ln + 2)));
        }
        if model > models.len() {
            models.push(InternalCoords {
                dihedrals: vec![],
                bond_angles: vec![],
                bond_lengths: vec![],
            });
        }
        let ic = &mut models[model - 1];
        let target = match cols[1] {
            "dihedral" => &mut ic.dihedrals,
            "bond_angle" => &mut ic.bond_angles,
            "bond_length" => &mut ic.bond_lengths,
            other => return Err(bad(format!("line {}: unknown kind '{other}'", ln + 2))),
        };
        if index != target.len() {
            return Err(bad(format!("line {}: indices must be consecutive", ln + 2)));
        }
        target.push(value);
    }
    if models.is_empty() {
        return Err(bad("sidecar contains no models".into()));
    }
    for ic in &models {
        ic.validate()?;
    }
    Ok(models)
}

/// Comma-separated table with a `# config_hash=` line and a one-line header.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\n{}\n", self.header.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        write_file(path, &self.render(config_hash))
    }
}

/// Shortest round-trip decimal form; `inf`/`NaN` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Read a `atom,target` CSV (extra columns ignored, `#` lines skipped).
pub fn read_targets(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty targets file".into()))?
        .split(',')
        .collect();
    let col = header
        .iter()
        .position(|h| h.trim() == "target")
        .ok_or_else(|| bad("no 'target' column".into()))?;
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("row {}: invalid target", i + 1)))
        })
        .collect()
}

/// Read one numeric column of a table written by [`CsvTable`].
pub fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty table".into()))?
        .split(',')
        .collect();
    let col = header
        .iter()
        .position(|h| *h == name)
        .ok_or_else(|| bad(format!("no '{name}' column")))?;
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("row {}: invalid {name}", i + 1)))
        })
        .collect()
}
