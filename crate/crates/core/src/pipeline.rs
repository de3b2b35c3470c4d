//! End-to-end orchestration: ingest, fit, sample, evaluate, baselines, TICA.
//!
//! Each stage is a public function so the CLI can run them one at a time;
//! stages that consume an earlier artifact read it from the output directory.
//! All randomness is derived from the configured seed.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, TargetSource};
use crate::constraint::{
    assemble_precision, build_prior, fit_lambda_report, sample, ConstraintSet, KappaPrior, LambdaFit,
    PrecisionModel, TARGET_FLOOR,
};
use crate::ensemble::{fit_baseline, sample_baseline, BaselineKind, EnsembleDataset};
use crate::error::{Error, Result};
use crate::geometry::{internal_to_cartesian, BackboneChain, InternalCoords};
use crate::io::{self, fmt_f64, CsvTable, Topology};
use crate::jacobian::{compute_gram_set, compute_jacobian, GramSet};
use crate::metrics::{
    chains_from_internal, feature_matrix, fluctuation_profile, js_distance, profile_mse, ramachandran,
    tica_fit, tica_project, Binning, FluctuationProfile, Histogram2D, TicaModel,
};

pub const LAMBDA_FILE: &str = "lambda.csv";
pub const SAMPLES_FILE: &str = "samples.pdb";
pub const REFERENCE_FILE: &str = "reference.pdb";
pub const MEAN_FILE: &str = "mean.pdb";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TICA_METRICS_FILE: &str = "tica_metrics.csv";
pub const TICA_EIGENVALUES_FILE: &str = "tica_eigenvalues.csv";
pub const REPORT_FILE: &str = "run_report.json";
/// Label of the constrained model's samples in output tables.
pub const MODEL_SOURCE: &str = "constrained";
pub const REFERENCE_SOURCE: &str = "reference";
/// Dilation (in bins) used for the Ramachandran support metric.
pub const SUPPORT_RADIUS: usize = 1;

/// Independent seed for stream `stream` derived from the run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const MODEL_STREAM: u64 = 0;

fn baseline_stream(kind: BaselineKind) -> u64 {
    match kind {
        BaselineKind::Empirical => 1,
        BaselineKind::Oas => 2,
        BaselineKind::Diagonal { .. } => 3,
    }
}

pub fn baseline_file(kind: BaselineKind) -> String {
    format!("baseline_{}.pdb", kind.name())
}

/// The ingested reference ensemble and its mean structure.
#[derive(Debug, Clone)]
pub struct Reference {
    pub dataset: EnsembleDataset,
    pub topology: Topology,
    /// Mean angles with mean (or ideal) bond lengths.
    pub mean: InternalCoords,
    /// Reference conformations rebuilt in the canonical frame.
    pub chains: Vec<BackboneChain>,
    pub from_sidecar: bool,
}

pub fn load_reference(cfg: &RunConfig) -> Result<Reference> {
    let ingested = io::ingest(&cfg.input).map_err(|e| e.at_stage("ingest"))?;
    let conformations: Vec<InternalCoords> = if cfg.ideal_bond_lengths {
        ingested.conformations.iter().map(InternalCoords::with_ideal_bond_lengths).collect()
    } else {
        ingested.conformations
    };
    let dataset = EnsembleDataset::new(conformations).map_err(|e| e.at_stage("circular_mean"))?;
    let mean = if cfg.ideal_bond_lengths {
        dataset.mean_conformation().with_ideal_bond_lengths()
    } else {
        dataset.mean_conformation()
    };
    let chains = chains_from_internal(dataset.conformations()).map_err(|e| e.at_stage("ingest"))?;
    info!(
        "ingested {} conformations of {} residues from {}",
        dataset.len(),
        ingested.topology.residues.len(),
        cfg.input.display()
    );
    Ok(Reference {
        dataset,
        topology: ingested.topology,
        mean,
        chains,
        from_sidecar: ingested.from_sidecar,
    })
}

/// Everything the multiplier fit needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub reference: Reference,
    pub grams: GramSet,
    pub prior: KappaPrior,
    pub targets: ConstraintSet,
}

pub fn reference_profile(reference: &Reference, superpose: bool) -> Result<FluctuationProfile> {
    fluctuation_profile(&reference.chains, superpose)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let reference = load_reference(cfg)?;
    let chain = internal_to_cartesian(&reference.mean).map_err(|e| e.at_stage("internal_to_cartesian"))?;
    let grams = compute_jacobian(&chain, reference.mean.layout())
        .map(compute_gram_set)
        .map_err(|e| e.at_stage("jacobian"))?;
    let prior = build_prior(reference.dataset.deviations(), cfg.prior_strength)
        .map_err(|e| e.at_stage("prior"))?;
    let n_atoms = reference.mean.n_atoms();
    let targets = match &cfg.targets {
        TargetSource::FromData => reference_profile(&reference, cfg.superpose)
            .and_then(|p| ConstraintSet::from_axis_variances(&p.per_atom_variance)),
        TargetSource::Uniform(v) => ConstraintSet::uniform(*v, n_atoms),
        TargetSource::File(path) => io::read_targets(path).and_then(|t| {
            if t.len() == n_atoms {
                ConstraintSet::targets(t)
            } else {
                Err(Error::DimensionMismatch {
                    what: "targets file rows",
                    expected: n_atoms,
                    got: t.len(),
                })
            }
        }),
    }
    .map_err(|e| e.at_stage("targets"))?;
    Ok(Prepared {
        reference,
        grams,
        prior,
        targets,
    })
}

pub fn fit(prep: &Prepared, cfg: &RunConfig) -> Result<LambdaFit> {
    let fit = fit_lambda_report(&prep.prior, &prep.grams, &prep.targets, &cfg.fit_options())
        .map_err(|e| e.at_stage("fit_lambda"))?;
    if fit.converged {
        info!("fit converged in {} iterations", fit.iterations);
    } else {
        warn!(
            "fit did not converge after {} iterations (max residual {:.3e})",
            fit.iterations, fit.max_residual
        );
    }
    Ok(fit)
}

pub fn write_lambda(fit: &LambdaFit, targets: &ConstraintSet, path: &Path, hash: &str) -> Result<()> {
    let mut t = CsvTable::new(["atom", "lambda", "target", "achieved", "residual"]);
    for m in 0..targets.len() {
        t.push(vec![
            m.to_string(),
            fmt_f64(fit.model.lambda()[m]),
            fmt_f64(targets.values()[m]),
            fmt_f64(fit.achieved.values()[m]),
            fmt_f64(fit.residuals[m]),
        ]);
    }
    t.write(path, hash)
}

/// Rebuild the constrained model from multipliers written by [`write_lambda`].
pub fn model_from_lambda_file(prep: &Prepared, path: &Path) -> Result<PrecisionModel> {
    let lambda = io::read_column(path, "lambda")?;
    if lambda.len() != prep.grams.n_atoms() {
        return Err(Error::DimensionMismatch {
            what: "lambda rows",
            expected: prep.grams.n_atoms(),
            got: lambda.len(),
        });
    }
    assemble_precision(&prep.prior, &lambda, &prep.grams)
}

pub fn draw_samples(model: &PrecisionModel, mean: &InternalCoords, cfg: &RunConfig) -> Result<Vec<InternalCoords>> {
    sample(model, mean, cfg.samples, sub_seed(cfg.seed, MODEL_STREAM)).map_err(|e| e.at_stage("sample"))
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineRecord {
    pub requested: String,
    pub used: String,
    pub shrinkage: Option<f64>,
    pub file: String,
}

/// Fit and sample the requested baselines. An empirical baseline with no
/// more conformations than degrees of freedom is replaced by OAS.
pub fn run_baselines(
    reference: &Reference,
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<(BaselineRecord, Vec<InternalCoords>)>> {
    let ds = &reference.dataset;
    let mut out: Vec<(BaselineRecord, Vec<InternalCoords>)> = Vec::new();
    for requested in cfg.baselines() {
        let mut kind = requested;
        if kind == BaselineKind::Empirical && ds.len() <= ds.layout().dof() {
            let msg = format!(
                "empirical baseline needs more than {} conformations (got {}); using OAS instead",
                ds.layout().dof(),
                ds.len()
            );
            warn!("{msg}");
            warnings.push(msg);
            kind = BaselineKind::Oas;
        }
        let file = baseline_file(kind);
        if out.iter().any(|(r, _)| r.file == file) {
            continue;
        }
        let mut model = fit_baseline(ds, kind).map_err(|e| e.at_stage("baseline"))?;
        if cfg.ideal_bond_lengths {
            model = model.with_mean(reference.mean.clone());
        }
        let samples = sample_baseline(&model, cfg.samples, sub_seed(cfg.seed, baseline_stream(kind)))
            .map_err(|e| e.at_stage("baseline"))?;
        out.push((
            BaselineRecord {
                requested: requested.to_string(),
                used: kind.to_string(),
                shrinkage: model.shrinkage,
                file,
            },
            samples,
        ));
    }
    Ok(out)
}

/// A sampled ensemble to compare against the reference.
pub struct Source {
    pub label: String,
    pub conformations: Vec<InternalCoords>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub source: String,
    pub metric: String,
    pub value: f64,
}

/// Mean of `|s / r - 1|` over atoms whose reference fluctuation is above
/// the target floor.
pub fn mean_relative_error(sampled: &[f64], reference: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = sampled
        .iter()
        .zip(reference)
        .filter(|(_, r)| 3.0 * **r > TARGET_FLOOR)
        .map(|(s, r)| (*s, *r))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(s, r)| (s / r - 1.0).abs()).sum::<f64>() / pairs.len() as f64
}

/// Fraction of atoms whose sampled variance is at least `factor` times the
/// reference.
pub fn fraction_inflated(sampled: &[f64], reference: &[f64], factor: f64) -> f64 {
    let n = reference.len();
    sampled.iter().zip(reference).filter(|(s, r)| **s >= factor * **r).count() as f64 / n as f64
}

pub struct Evaluation {
    pub metrics: Vec<MetricRow>,
    pub profiles: CsvTable,
    pub ramachandran: Vec<(String, Histogram2D)>,
}

/// Profiles in both superposition modes, profile errors, and Ramachandran
/// comparisons of every source against the reference.
pub fn evaluate(reference: &Reference, sources: &[Source], cfg: &RunConfig) -> Result<Evaluation> {
    let stage = |e: Error| e.at_stage("metrics");
    let ref_non = reference_profile(reference, false).map_err(stage)?;
    let ref_sup = reference_profile(reference, true).map_err(stage)?;
    let ref_rama = ramachandran(reference.dataset.conformations(), cfg.rama_bins).map_err(stage)?;

    let mut profiles = CsvTable::new(["atom", "source", "non_superposed", "superposed"]);
    let mut push_profile = |label: &str, non: &FluctuationProfile, sup: &FluctuationProfile| {
        for (a, (x, y)) in non.per_atom_variance.iter().zip(&sup.per_atom_variance).enumerate() {
            profiles.push(vec![a.to_string(), label.to_string(), fmt_f64(*x), fmt_f64(*y)]);
        }
    };
    push_profile(REFERENCE_SOURCE, &ref_non, &ref_sup);

    let mut metrics = Vec::new();
    let mut hists = vec![(REFERENCE_SOURCE.to_string(), ref_rama.clone())];
    for src in sources {
        let chains = chains_from_internal(&src.conformations).map_err(stage)?;
        let non = fluctuation_profile(&chains, false).map_err(stage)?;
        let sup = fluctuation_profile(&chains, true).map_err(stage)?;
        push_profile(&src.label, &non, &sup);
        let (mode_s, mode_r) = if cfg.superpose { (&sup, &ref_sup) } else { (&non, &ref_non) };
        let rama = ramachandran(&src.conformations, cfg.rama_bins).map_err(stage)?;
        let mut add = |metric: &str, value: f64| {
            metrics.push(MetricRow {
                source: src.label.clone(),
                metric: metric.to_string(),
                value,
            })
        };
        add("profile_mse_non_superposed", profile_mse(&non, &ref_non).map_err(stage)?);
        add("profile_mse_superposed", profile_mse(&sup, &ref_sup).map_err(stage)?);
        add(
            "profile_mean_relative_error",
            mean_relative_error(&mode_s.per_atom_variance, &mode_r.per_atom_variance),
        );
        add(
            "fraction_atoms_inflated_3x",
            fraction_inflated(&mode_s.per_atom_variance, &mode_r.per_atom_variance, 3.0),
        );
        add("ramachandran_js", js_distance(&rama, &ref_rama).map_err(stage)?);
        add(
            "ramachandran_mass_in_support",
            rama.mass_within_support(&ref_rama, SUPPORT_RADIUS, true).map_err(stage)?,
        );
        hists.push((src.label.clone(), rama));
    }
    Ok(Evaluation {
        metrics,
        profiles,
        ramachandran: hists,
    })
}

pub fn metrics_table(rows: &[MetricRow]) -> CsvTable {
    let mut t = CsvTable::new(["source", "metric", "value"]);
    for r in rows {
        t.push(vec![r.source.clone(), r.metric.clone(), fmt_f64(r.value)]);
    }
    t
}

/// Dense grid: one row per bin with its edges, count, probability and
/// free energy.
pub fn histogram_table(h: &Histogram2D) -> CsvTable {
    let mut t = CsvTable::new([
        "i",
        "j",
        "x_lo",
        "x_hi",
        "y_lo",
        "y_hi",
        "count",
        "probability",
        "free_energy",
    ]);
    let (xe, ye) = (h.x.edges(), h.y.edges());
    let fe = h.free_energy();
    for i in 0..h.x.bins {
        for j in 0..h.y.bins {
            let k = i * h.y.bins + j;
            t.push(vec![
                i.to_string(),
                j.to_string(),
                fmt_f64(xe[i]),
                fmt_f64(xe[i + 1]),
                fmt_f64(ye[j]),
                fmt_f64(ye[j + 1]),
                h.counts[k].to_string(),
                fmt_f64(h.probabilities[k]),
                fmt_f64(fe[k]),
            ]);
        }
    }
    t
}

pub struct TicaResult {
    pub model: TicaModel,
    pub histograms: Vec<(String, Histogram2D)>,
    pub metrics: Vec<MetricRow>,
}

fn span_binning(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Result<Binning> {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 1e-9).max(1e-12);
    Binning::new(lo, hi + pad, bins)
}

/// Fit TICA on the reference (models taken in file order as a time series)
/// and histogram every source on the two slowest components, over a common
/// range.
pub fn tica_stage(reference: &Reference, sources: &[Source], cfg: &RunConfig) -> Result<TicaResult> {
    let stage = |e: Error| e.at_stage("tica");
    let ref_features = feature_matrix(reference.dataset.conformations());
    let model = tica_fit(&ref_features, cfg.tica_lag).map_err(stage)?;
    let mut projected = vec![(
        REFERENCE_SOURCE.to_string(),
        tica_project(&model, &ref_features).map_err(stage)?,
    )];
    for src in sources {
        let p = tica_project(&model, &feature_matrix(&src.conformations)).map_err(stage)?;
        projected.push((src.label.clone(), p));
    }
    let all = projected.iter().flat_map(|(_, p)| p.iter());
    let bx = span_binning(all.clone().map(|p| p.0), cfg.tica_bins).map_err(stage)?;
    let by = span_binning(all.map(|p| p.1), cfg.tica_bins).map_err(stage)?;
    let histograms = projected
        .iter()
        .map(|(label, p)| Histogram2D::from_points(p, bx, by).map(|h| (label.clone(), h)))
        .collect::<Result<Vec<_>>>()
        .map_err(stage)?;
    let mut metrics = Vec::new();
    for (label, h) in histograms.iter().skip(1) {
        metrics.push(MetricRow {
            source: label.clone(),
            metric: "tica_js".into(),
            value: js_distance(h, &histograms[0].1).map_err(stage)?,
        });
    }
    Ok(TicaResult {
        model,
        histograms,
        metrics,
    })
}

pub fn write_tica(result: &TicaResult, dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (label, h) in &result.histograms {
        let path = dir.join(format!("tica_{label}.csv"));
        histogram_table(h).write(&path, hash)?;
        written.push(path);
    }
    let mut eig = CsvTable::new(["rank", "eigenvalue"]);
    for (k, v) in result.model.eigenvalues.iter().enumerate() {
        eig.push(vec![k.to_string(), fmt_f64(*v)]);
    }
    let path = dir.join(TICA_EIGENVALUES_FILE);
    eig.write(&path, hash)?;
    written.push(path);
    let path = dir.join(TICA_METRICS_FILE);
    metrics_table(&result.metrics).write(&path, hash)?;
    written.push(path);
    Ok(written)
}

pub fn write_evaluation(eval: &Evaluation, dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let path = dir.join(PROFILES_FILE);
    eval.profiles.write(&path, hash)?;
    written.push(path);
    let path = dir.join(METRICS_FILE);
    metrics_table(&eval.metrics).write(&path, hash)?;
    written.push(path);
    for (label, h) in &eval.ramachandran {
        let path = dir.join(format!("rama_{label}.csv"));
        histogram_table(h).write(&path, hash)?;
        written.push(path);
    }
    Ok(written)
}

/// Sampled ensembles already present in the output directory: the
/// constrained model's samples and any configured baselines.
pub fn collect_sources(cfg: &RunConfig) -> Result<Vec<Source>> {
    let mut sources = Vec::new();
    let mut files = vec![(MODEL_SOURCE.to_string(), cfg.output_dir.join(SAMPLES_FILE))];
    for kind in cfg.baselines() {
        for k in [kind, BaselineKind::Oas] {
            let path = cfg.output_dir.join(baseline_file(k));
            if path.exists() && !files.iter().any(|(_, p)| *p == path) {
                files.push((k.name().to_string(), path));
                break;
            }
        }
    }
    for (label, path) in files {
        if path.exists() {
            let ing = io::ingest(&path).map_err(|e| e.at_stage("metrics"))?;
            sources.push(Source {
                label,
                conformations: ing.conformations,
            });
        }
    }
    Ok(sources)
}

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub path: PathBuf,
    pub conformations: usize,
    pub residues: usize,
    pub atoms: usize,
    pub degrees_of_freedom: usize,
    pub from_sidecar: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub worst_atom: usize,
    pub unconstrained_atoms: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: RunConfig,
    pub input: InputSummary,
    pub fit: FitSummary,
    pub baselines: Vec<BaselineRecord>,
    pub metrics: Vec<MetricRow>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        self.fit.converged
    }
}

pub fn summarize_fit(fit: &LambdaFit) -> FitSummary {
    let (worst_atom, max_residual) = fit
        .residuals
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
    FitSummary {
        converged: fit.converged,
        iterations: fit.iterations,
        max_residual,
        worst_atom,
        unconstrained_atoms: fit.unconstrained_atoms.clone(),
    }
}

/// Run every stage and write all artifacts to `cfg.output_dir`. Returns an
/// error only when a stage fails; an unconverged fit is reported, not fatal.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = &cfg.output_dir;
    let mut warnings = Vec::new();
    let mut outputs = Vec::new();

    let prep = prepare(cfg)?;
    let reference = &prep.reference;
    let ds = &reference.dataset;
    let input = InputSummary {
        path: cfg.input.clone(),
        conformations: ds.len(),
        residues: reference.topology.residues.len(),
        atoms: reference.mean.n_atoms(),
        degrees_of_freedom: ds.layout().dof(),
        from_sidecar: reference.from_sidecar,
    };

    let fit = fit(&prep, cfg)?;
    let fit_summary = summarize_fit(&fit);
    if !fit.converged {
        warnings.push(format!(
            "fit did not converge after {} iterations (max residual {:.3e} at atom {})",
            fit.iterations, fit_summary.max_residual, fit_summary.worst_atom
        ));
    }
    if !fit.unconstrained_atoms.is_empty() {
        warnings.push(format!(
            "{} atoms have targets at or above their unconstrained fluctuation; their multipliers are zero",
            fit.unconstrained_atoms.len()
        ));
    }
    let path = dir.join(LAMBDA_FILE);
    write_lambda(&fit, &prep.targets, &path, &hash)?;
    outputs.push(path);

    let export = |ens: &[InternalCoords], name: &str, outputs: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join(name);
        io::export(ens, &reference.topology, &path)?;
        outputs.push(io::sidecar_path(&path));
        outputs.push(path);
        Ok(())
    };
    export(std::slice::from_ref(&reference.mean), MEAN_FILE, &mut outputs)?;

    let samples = draw_samples(&fit.model, &reference.mean, cfg)?;
    export(&samples, SAMPLES_FILE, &mut outputs)?;
    let mut sources = vec![Source {
        label: MODEL_SOURCE.to_string(),
        conformations: samples,
    }];

    let baselines = run_baselines(reference, cfg, &mut warnings)?;
    let mut records = Vec::new();
    for (record, ens) in baselines {
        export(&ens, &record.file, &mut outputs)?;
        sources.push(Source {
            label: record.used.split(':').next().unwrap_or_default().to_string(),
            conformations: ens,
        });
        records.push(record);
    }

    let eval = evaluate(reference, &sources, cfg)?;
    outputs.extend(write_evaluation(&eval, dir, &hash)?);
    let mut metrics = eval.metrics;

    match tica_stage(reference, &sources, cfg) {
        Ok(t) => {
            outputs.extend(write_tica(&t, dir, &hash)?);
            metrics.extend(t.metrics);
        }
        Err(e) => {
            let msg = format!("TICA skipped: {e}");
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut report = RunReport {
        config_hash: hash,
        config: cfg.clone(),
        input,
        fit: fit_summary,
        baselines: records,
        metrics,
        warnings,
        outputs: Vec::new(),
    };
    let report_path = dir.join(REPORT_FILE);
    outputs.push(report_path.clone());
    report.outputs = outputs
        .iter()
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    write_report(&report, &report_path)?;
    Ok(report)
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
