//! Run configuration: a flat TOML file whose keys mirror the CLI flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraint::{FitOptions, LambdaSolver, PRIOR_STRENGTH_LARGE};
use crate::ensemble::BaselineKind;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_RAMACHANDRAN_BINS, DEFAULT_TICA_BINS};

/// Where per-atom fluctuation targets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TargetSource {
    /// Three times the per-axis positional variance of the input ensemble.
    FromData,
    /// The same target (Å²) for every atom.
    Uniform(f64),
    /// A CSV file with a `target` column, one row per atom.
    File(PathBuf),
}

impl fmt::Display for TargetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSource::FromData => f.write_str("from-data"),
            TargetSource::Uniform(v) => write!(f, "uniform:{v}"),
            TargetSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for TargetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "from-data" {
            return Ok(TargetSource::FromData);
        }
        if let Some(v) = s.strip_prefix("uniform:") {
            return match v.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(TargetSource::Uniform(v)),
                _ => Err(Error::Config(format!("uniform target must be positive, got '{v}'"))),
            };
        }
        if let Some(p) = s.strip_prefix("file:") {
            if !p.is_empty() {
                return Ok(TargetSource::File(PathBuf::from(p)));
            }
        }
        Err(Error::Config(format!(
            "targets must be 'from-data', 'uniform:<value>' or 'file:<path>', got '{s}'"
        )))
    }
}

impl TryFrom<String> for TargetSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TargetSource> for String {
    fn from(t: TargetSource) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
struct BaselineField(BaselineKind);

impl TryFrom<String> for BaselineField {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse().map(BaselineField)
    }
}

impl From<BaselineField> for String {
    fn from(b: BaselineField) -> String {
        b.0.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Multi-model PDB file holding the reference ensemble.
    pub input: PathBuf,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// κ-prior strength `a`.
    #[serde(default = "defaults::prior_strength")]
    pub prior_strength: f64,
    #[serde(default = "defaults::targets")]
    pub targets: TargetSource,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    #[serde(default)]
    pub solver: LambdaSolver,
    /// Number of conformations drawn from each fitted model.
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    pub seed: u64,
    /// Superpose onto the medoid before computing fluctuation profiles.
    #[serde(default)]
    pub superpose: bool,
    #[serde(default = "defaults::rama_bins")]
    pub rama_bins: usize,
    #[serde(default = "defaults::tica_bins")]
    pub tica_bins: usize,
    #[serde(default = "defaults::tica_lag")]
    pub tica_lag: usize,
    #[serde(default)]
    baselines: Vec<BaselineField>,
    /// Replace bond lengths by ideal values instead of the ensemble mean.
    #[serde(default)]
    pub ideal_bond_lengths: bool,
}

mod defaults {
    use super::*;

    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn prior_strength() -> f64 {
        PRIOR_STRENGTH_LARGE
    }
    pub fn targets() -> TargetSource {
        TargetSource::FromData
    }
    pub fn tol() -> f64 {
        FitOptions::default().tol
    }
    pub fn max_iters() -> usize {
        FitOptions::default().max_iters
    }
    pub fn damping() -> f64 {
        FitOptions::default().damping
    }
    pub fn samples() -> usize {
        1000
    }
    pub fn rama_bins() -> usize {
        DEFAULT_RAMACHANDRAN_BINS
    }
    pub fn tica_bins() -> usize {
        DEFAULT_TICA_BINS
    }
    pub fn tica_lag() -> usize {
        1
    }
}

impl RunConfig {
    /// Configuration with defaults for everything but input and seed.
    pub fn new(input: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            input: input.into(),
            output_dir: defaults::output_dir(),
            prior_strength: defaults::prior_strength(),
            targets: defaults::targets(),
            tol: defaults::tol(),
            max_iters: defaults::max_iters(),
            damping: defaults::damping(),
            solver: LambdaSolver::default(),
            samples: defaults::samples(),
            seed,
            superpose: false,
            rama_bins: defaults::rama_bins(),
            tica_bins: defaults::tica_bins(),
            tica_lag: defaults::tica_lag(),
            baselines: Vec::new(),
            ideal_bond_lengths: false,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Build from an already merged key table (file values plus overrides).
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_table(path: &Path) -> Result<toml::Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse::<toml::Table>()
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_table(Self::read_table(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("prior_strength", self.prior_strength)?;
        positive("tol", self.tol)?;
        positive("damping", self.damping)?;
        if self.damping > 1.0 {
            return Err(Error::Config(format!("damping must be at most 1, got {}", self.damping)));
        }
        for (name, v) in [
            ("max_iters", self.max_iters),
            ("samples", self.samples),
            ("rama_bins", self.rama_bins),
            ("tica_bins", self.tica_bins),
            ("tica_lag", self.tica_lag),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.samples < 2 {
            return Err(Error::Config("samples must be at least 2".into()));
        }
        Ok(())
    }

    pub fn baselines(&self) -> Vec<BaselineKind> {
        self.baselines.iter().map(|b| b.0).collect()
    }

    pub fn set_baselines(&mut self, baselines: &[BaselineKind]) {
        self.baselines = baselines.iter().copied().map(BaselineField).collect();
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            damping: self.damping,
            solver: self.solver,
        }
    }

    /// SHA-256 of the canonical serialisation, excluding `output_dir` so that
    /// identical runs written to different places share a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
