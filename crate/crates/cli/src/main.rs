use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use icdens::config::RunConfig;
use icdens::io::{self, Topology};
use icdens::pipeline::{self, Source};
use icdens::synth;

#[derive(Parser)]
#[command(name = "icdens", version, about = "Constrained internal-coordinate Gaussian models of backbone ensembles")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the input ensemble and write it, and its mean, in the canonical frame.
    Ingest(ConfigArgs),
    /// Fit the per-atom multipliers and write lambda.csv.
    Fit(ConfigArgs),
    /// Draw samples from the model given by lambda.csv.
    Sample(ConfigArgs),
    /// Compare sampled ensembles in the output directory with the reference.
    Eval(ConfigArgs),
    /// Fit and sample the configured baseline models.
    Baseline(ConfigArgs),
    /// TICA on the reference series, projecting every sampled ensemble.
    Tica(ConfigArgs),
    /// All stages in order, plus run_report.json.
    Run(ConfigArgs),
    /// Write a synthetic constrained ensemble around an ideal helix.
    Synth(SynthArgs),
}

/// Every flag overrides the same key of the `--config` file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// κ-prior strength a.
    #[arg(long)]
    prior_strength: Option<f64>,
    /// from-data, uniform:<Å²> or file:<csv>.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<i64>,
    #[arg(long)]
    damping: Option<f64>,
    /// newton or fixed-point.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    samples: Option<i64>,
    #[arg(long)]
    seed: Option<i64>,
    #[arg(long)]
    superpose: Option<bool>,
    #[arg(long)]
    rama_bins: Option<i64>,
    #[arg(long)]
    tica_bins: Option<i64>,
    #[arg(long)]
    tica_lag: Option<i64>,
    /// Comma-separated: empirical, oas, diagonal[:a].
    #[arg(long, value_delimiter = ',')]
    baselines: Option<Vec<String>>,
    #[arg(long)]
    ideal_bond_lengths: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut table = match &self.config {
            Some(path) => RunConfig::read_table(path)?,
            None => toml::Table::new(),
        };
        let mut set = |key: &str, value: Option<toml::Value>| {
            if let Some(v) = value {
                table.insert(key.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| toml::Value::String(p.display().to_string()));
        set("input", path(&self.input));
        set("output_dir", path(&self.output_dir));
        set("prior_strength", self.prior_strength.map(toml::Value::Float));
        set("targets", self.targets.clone().map(toml::Value::String));
        set("tol", self.tol.map(toml::Value::Float));
        set("max_iters", self.max_iters.map(toml::Value::Integer));
        set("damping", self.damping.map(toml::Value::Float));
        set("solver", self.solver.clone().map(toml::Value::String));
        set("samples", self.samples.map(toml::Value::Integer));
        set("seed", self.seed.map(toml::Value::Integer));
        set("superpose", self.superpose.map(toml::Value::Boolean));
        set("rama_bins", self.rama_bins.map(toml::Value::Integer));
        set("tica_bins", self.tica_bins.map(toml::Value::Integer));
        set("tica_lag", self.tica_lag.map(toml::Value::Integer));
        set(
            "baselines",
            self.baselines
                .clone()
                .map(|b| toml::Value::Array(b.into_iter().map(toml::Value::String).collect())),
        );
        set("ideal_bond_lengths", self.ideal_bond_lengths.map(toml::Value::Boolean));
        Ok(RunConfig::from_table(table)?)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    residues: usize,
    #[arg(long, default_value_t = 100)]
    models: usize,
    #[arg(long)]
    seed: u64,
    /// Prior strength of the generating model.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Per-angle variance of the generating prior, rad².
    #[arg(long, default_value_t = 1e-4)]
    variance: f64,
    /// Multiplier applied to every atom.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    stderrlog::new()
        .module("icdens")
        .quiet(cli.quiet)
        .verbosity(1 + cli.verbose as usize)
        .init()
        .expect("logger initialises once");
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether the multiplier fit (if any) converged.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Synth(a) => {
            let mean = synth::ideal_helix(a.residues);
            let ens = synth::constrained_ensemble(&mean, a.strength, a.variance, a.lambda, a.models, a.seed)?;
            io::export(&ens, &Topology::generic(a.residues), &a.out)?;
            println!("wrote {} models to {}", ens.len(), a.out.display());
            Ok(true)
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let report = pipeline::run_pipeline(&cfg)?;
            println!(
                "fit {} in {} iterations (max residual {:.3e}); outputs in {}",
                if report.converged() { "converged" } else { "did not converge" },
                report.fit.iterations,
                report.fit.max_residual,
                cfg.output_dir.display()
            );
            Ok(report.converged())
        }
        Command::Ingest(args) => {
            let cfg = args.resolve()?;
            let reference = pipeline::load_reference(&cfg)?;
            let dir = &cfg.output_dir;
            io::export(reference.dataset.conformations(), &reference.topology, &dir.join(pipeline::REFERENCE_FILE))?;
            io::export(
                std::slice::from_ref(&reference.mean),
                &reference.topology,
                &dir.join(pipeline::MEAN_FILE),
            )?;
            println!(
                "{} conformations, {} residues, {} degrees of freedom",
                reference.dataset.len(),
                reference.topology.residues.len(),
                reference.dataset.layout().dof()
            );
            Ok(true)
        }
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            let prep = pipeline::prepare(&cfg)?;
            let fit = pipeline::fit(&prep, &cfg)?;
            let path = cfg.output_dir.join(pipeline::LAMBDA_FILE);
            pipeline::write_lambda(&fit, &prep.targets, &path, &cfg.hash())?;
            let s = pipeline::summarize_fit(&fit);
            println!(
                "fit {} in {} iterations (max residual {:.3e} at atom {})",
                if s.converged { "converged" } else { "did not converge" },
                s.iterations,
                s.max_residual,
                s.worst_atom
            );
            Ok(s.converged)
        }
        Command::Sample(args) => {
            let cfg = args.resolve()?;
            let prep = pipeline::prepare(&cfg)?;
            let lambda = cfg.output_dir.join(pipeline::LAMBDA_FILE);
            if !lambda.exists() {
                bail!("{} not found; run `icdens fit` first", lambda.display());
            }
            let model = pipeline::model_from_lambda_file(&prep, &lambda)
                .with_context(|| format!("rebuilding the model from {}", lambda.display()))?;
            let samples = pipeline::draw_samples(&model, &prep.reference.mean, &cfg)?;
            let out = cfg.output_dir.join(pipeline::SAMPLES_FILE);
            io::export(&samples, &prep.reference.topology, &out)?;
            info!("wrote {}", out.display());
            Ok(true)
        }
        Command::Baseline(args) => {
            let cfg = args.resolve()?;
            if cfg.baselines().is_empty() {
                bail!("no baselines configured; pass --baselines");
            }
            let reference = pipeline::load_reference(&cfg)?;
            let mut warnings = Vec::new();
            for (record, ens) in pipeline::run_baselines(&reference, &cfg, &mut warnings)? {
                io::export(&ens, &reference.topology, &cfg.output_dir.join(&record.file))?;
                println!("{} -> {} ({})", record.requested, record.used, record.file);
            }
            Ok(true)
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let reference = pipeline::load_reference(&cfg)?;
            let sources = pipeline::collect_sources(&cfg)?;
            if sources.is_empty() {
                bail!("no sampled ensembles in {}", cfg.output_dir.display());
            }
            let eval = pipeline::evaluate(&reference, &sources, &cfg)?;
            pipeline::write_evaluation(&eval, &cfg.output_dir, &cfg.hash())?;
            print_sources(&sources);
            Ok(true)
        }
        Command::Tica(args) => {
            let cfg = args.resolve()?;
            let reference = pipeline::load_reference(&cfg)?;
            let sources = pipeline::collect_sources(&cfg)?;
            let result = pipeline::tica_stage(&reference, &sources, &cfg)?;
            pipeline::write_tica(&result, &cfg.output_dir, &cfg.hash())?;
            println!(
                "top autocorrelation eigenvalues: {:?}",
                &result.model.eigenvalues[..result.model.eigenvalues.len().min(3)]
            );
            Ok(true)
        }
    }
}

fn print_sources(sources: &[Source]) {
    for s in sources {
        println!("evaluated {} ({} conformations)", s.label, s.conformations.len());
    }
}
