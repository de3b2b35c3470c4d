//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed; exits non-zero if any
//! criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use icdens::config::{RunConfig, TargetSource};
use icdens::constraint::{
    assemble_precision, fit_lambda_report, induced_fluctuations, ConstraintSet, FitOptions, KappaPrior,
    PrecisionModel, PRIOR_STRENGTH_LARGE,
};
use icdens::ensemble::BaselineKind;
use icdens::geometry::{cartesian_to_internal, internal_to_cartesian, InternalCoords};
use icdens::io::{self, Topology};
use icdens::jacobian::{compute_gram_set, compute_jacobian, GramSet};
use icdens::metrics::{superpose_positions, tica_fit, tica_project};
use icdens::pipeline::{run_pipeline, MetricRow, RunReport, MODEL_SOURCE};
use icdens::synth;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn grams(ic: &InternalCoords) -> GramSet {
    let chain = internal_to_cartesian(ic).unwrap();
    compute_gram_set(compute_jacobian(&chain, ic.layout()).unwrap())
}

fn positions(ic: &InternalCoords) -> Vec<icdens::geometry::Vec3> {
    internal_to_cartesian(ic).unwrap().into_positions()
}

fn with_kappa(ic: &InternalCoords, kappa: &icdens::geometry::KappaVector) -> InternalCoords {
    InternalCoords::from_kappa(kappa, ic.bond_lengths.clone()).unwrap()
}

fn jacobian_finite_differences() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let residues = r.gen_range(10..=30);
        let ic = synth::random_internal(residues, &mut r);
        let analytic = grams(&ic);
        let j = analytic.jacobian().as_matrix();
        let kappa = ic.kappa();
        let h = 1e-6;
        for i in 0..kappa.len() {
            let mut plus = kappa.clone();
            let mut minus = kappa.clone();
            plus.values[i] += h;
            minus.values[i] -= h;
            let xp = positions(&with_kappa(&ic, &plus));
            let xm = positions(&with_kappa(&ic, &minus));
            for (a, (p, m)) in xp.iter().zip(&xm).enumerate() {
                let fd = (p - m) / (2.0 * h);
                for c in 0..3 {
                    worst = worst.max((fd[c] - j[(3 * a + c, i)]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(60),
        format!("max |J - FD| = {worst:.2e} Å/rad over 50 chains in {:.1} s", elapsed.as_secs_f64()),
    )
}

fn round_trip_geometry() -> Outcome {
    let mut r = rng(1002);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let residues = r.gen_range(3..=40);
        let chain = synth::random_chain(residues, &mut r);
        let rebuilt = internal_to_cartesian(&cartesian_to_internal(&chain).unwrap()).unwrap();
        worst = worst.max(superpose_positions(chain.positions(), rebuilt.positions()).unwrap().rmsd);
    }
    outcome(worst < 1e-8, format!("max RMSD after superposition {worst:.2e} Å over 100 chains"))
}

fn ten_residue_model(seed: u64) -> (GramSet, PrecisionModel) {
    let mut r = rng(seed);
    let ic = synth::random_internal(10, &mut r);
    let g = grams(&ic);
    let prior = KappaPrior::new(1.0, DVector::from_element(g.dof(), 0.01)).unwrap();
    let lambda: Vec<f64> = (0..g.n_atoms()).map(|_| r.gen_range(0.5..5.0)).collect();
    let model = assemble_precision(&prior, &lambda, &g).unwrap();
    (g, model)
}

fn monte_carlo(model: &PrecisionModel, g: &GramSet, n: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0; g.n_atoms()];
    for delta in model.gaussian().sample_deviations(n, seed) {
        for (a, d) in acc.iter_mut().zip(g.displacements(&delta)) {
            *a += d.norm_squared();
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}

fn trace_identity() -> Outcome {
    let (g, model) = ten_residue_model(1003);
    let exact = induced_fluctuations(&model, &g);
    let rel = |mc: &[f64]| -> Vec<f64> {
        mc.iter()
            .zip(exact.values())
            .filter(|(_, c)| **c > 0.0)
            .map(|(e, c)| (e - c).abs() / c)
            .collect()
    };
    let max_rel = rel(&monte_carlo(&model, &g, 100_000, 1)).into_iter().fold(0.0, f64::max);
    let rms = |n: usize| -> f64 {
        let seeds = 8;
        (0..seeds)
            .map(|s| {
                let e = rel(&monte_carlo(&model, &g, n, 10 + s));
                (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
            })
            .sum::<f64>()
            / seeds as f64
    };
    let ratio = rms(25_000) / rms(100_000);
    outcome(
        max_rel < 0.015 && (1.5..2.7).contains(&ratio),
        format!("max relative error {max_rel:.4} at 1e5 samples; RMS error ratio for 4x samples {ratio:.2} (ideal 2)"),
    )
}

fn first_order_approximation() -> Outcome {
    let ic = synth::random_internal(10, &mut rng(1004));
    let g = grams(&ic);
    let base = positions(&ic);
    let error = |step: f64, seed: u64| -> f64 {
        let mut r = rng(seed);
        let mut delta = DVector::from_fn(g.dof(), |_, _| r.gen_range(-1.0..1.0));
        delta *= step / delta.amax();
        let mut kappa = ic.kappa();
        kappa.values += &delta;
        let moved = positions(&with_kappa(&ic, &kappa));
        (3..ic.n_atoms())
            .map(|m| {
                let exact = (moved[m] - base[m]).norm_squared();
                (g.quadratic_form(m, &delta) - exact).abs() / exact
            })
            .fold(0.0, f64::max)
    };
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let coarse = error(1e-4, seed);
        worst = worst.max(coarse);
        ratios.push(coarse / error(1e-5, seed));
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst < 1e-3 && lo > 5.0 && hi < 20.0,
        format!("max relative error {worst:.2e} at |Δκ|∞ = 1e-4; shrink ratio for 10x smaller step in [{lo:.2}, {hi:.2}]"),
    )
}

fn solver_self_consistency() -> Outcome {
    let mut r = rng(1005);
    let ic = synth::random_internal(10, &mut r);
    let g = grams(&ic);
    let prior = KappaPrior::new(1.0, DVector::from_element(g.dof(), 0.01)).unwrap();
    let truth: Vec<f64> = (0..g.n_atoms()).map(|_| r.gen_range(0.1..10.0)).collect();
    let targets = induced_fluctuations(&assemble_precision(&prior, &truth, &g).unwrap(), &g);
    let targets = ConstraintSet::targets(targets.values().to_vec()).unwrap();
    let fit = fit_lambda_report(&prior, &g, &targets, &FitOptions::default()).unwrap();
    outcome(
        fit.converged && fit.max_residual <= 1e-2 && fit.iterations <= 500,
        format!("max relative residual {:.2e} after {} iterations", fit.max_residual, fit.iterations),
    )
}

fn monotonicity() -> Outcome {
    let mut r = rng(1006);
    let mut violations = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let ic = synth::random_internal(r.gen_range(3..=8), &mut r);
        let g = grams(&ic);
        let prior = KappaPrior::new(r.gen_range(0.1..10.0), DVector::from_element(g.dof(), 0.01)).unwrap();
        let lambda: Vec<f64> = (0..g.n_atoms()).map(|_| r.gen_range(0.0..5.0)).collect();
        let raised: Vec<f64> = lambda.iter().map(|l| l + r.gen_range(0.0..5.0)).collect();
        let c = induced_fluctuations(&assemble_precision(&prior, &lambda, &g).unwrap(), &g);
        let c2 = induced_fluctuations(&assemble_precision(&prior, &raised, &g).unwrap(), &g);
        for (a, b) in c.values().iter().zip(c2.values()) {
            checks += 1;
            if *b > a + 1e-12 {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {checks} atom checks over 100 pairs"))
}

fn metric(report: &RunReport, source: &str, name: &str) -> Option<f64> {
    report
        .metrics
        .iter()
        .find(|m: &&MetricRow| m.source == source && m.metric == name)
        .map(|m| m.value)
}

fn baseline_inflation(work: &Path) -> Outcome {
    let residues = 20;
    let mean = synth::ideal_helix(residues);
    let d = mean.layout().dof();
    // N = D: the sample covariance is singular, so the empirical request
    // falls back to OAS exactly as for a small NMR ensemble.
    let ens = synth::constrained_ensemble(&mean, 1.0, 1e-4, 10.0, d, 1007).unwrap();
    let input = work.join("c7_input.pdb");
    io::export(&ens, &Topology::generic(residues), &input).unwrap();
    let mut cfg = RunConfig::new(&input, 1007);
    cfg.output_dir = work.join("c7");
    cfg.prior_strength = 1.0;
    cfg.samples = 2000;
    cfg.set_baselines(&[BaselineKind::Empirical]);
    let report = run_pipeline(&cfg).unwrap();
    let used = report.baselines[0].used.clone();
    let inflated = metric(&report, &used, "fraction_atoms_inflated_3x").unwrap();
    let rel = metric(&report, MODEL_SOURCE, "profile_mean_relative_error").unwrap();
    outcome(
        report.converged() && inflated >= 0.2 && rel < 0.1,
        format!(
            "N = D = {d}; {used} baseline ≥3x reference on {:.0}% of atoms; constrained model mean relative error {:.1}%",
            100.0 * inflated,
            100.0 * rel
        ),
    )
}

fn public_data_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/1unc.pdb")
}

fn nmr_smoke(input: &Path, out: &Path) -> (RunReport, Duration) {
    let start = Instant::now();
    let mut cfg = RunConfig::new(input, 1008);
    cfg.output_dir = out.to_path_buf();
    cfg.prior_strength = PRIOR_STRENGTH_LARGE;
    cfg.targets = TargetSource::FromData;
    cfg.samples = 1000;
    let report = run_pipeline(&cfg).unwrap();
    (report, start.elapsed())
}

fn smoke_outcome(report: &RunReport, elapsed: Duration) -> Outcome {
    let mass = metric(report, MODEL_SOURCE, "ramachandran_mass_in_support").unwrap();
    outcome(
        report.converged() && mass >= 0.95 && elapsed < Duration::from_secs(600),
        format!(
            "{} models x {} residues; fit converged: {}; Ramachandran mass in dilated support {:.3}; {:.1} s",
            report.input.conformations,
            report.input.residues,
            report.converged(),
            mass,
            elapsed.as_secs_f64()
        ),
    )
}

fn public_data(work: &Path) -> Option<Outcome> {
    let path = public_data_path();
    if !path.exists() {
        return None;
    }
    let (report, elapsed) = nmr_smoke(&path, &work.join("c8"));
    let shape_ok = report.input.conformations == 25 && report.input.atoms == 108;
    let mut o = smoke_outcome(&report, elapsed);
    o.pass &= shape_ok;
    Some(o)
}

/// 25 models of a 36-residue chain with NMR-like spread, standing in for
/// the public entry when it is not available locally.
fn nmr_surrogate(work: &Path) -> Outcome {
    let residues = 36;
    let mean = synth::regular_backbone(residues, -65.0, -40.0);
    let ens = synth::constrained_ensemble(&mean, 1.0, 2e-3, 2.0, 25, 1009).unwrap();
    let input = work.join("c8s_input.pdb");
    io::export(&ens, &Topology::generic(residues), &input).unwrap();
    let (report, elapsed) = nmr_smoke(&input, &work.join("c8s"));
    smoke_outcome(&report, elapsed)
}

fn two_state_series(t: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut state = 1.0;
    let mut switching = Vec::with_capacity(t);
    let mut latent = DMatrix::zeros(t, 10);
    for i in 0..t {
        if r.gen::<f64>() < 0.01 {
            state = -state;
        }
        switching.push(state);
        latent[(i, 0)] = state + 0.3 * normal(&mut r);
        for c in 1..10 {
            latent[(i, c)] = normal(&mut r);
        }
    }
    let q = DMatrix::from_fn(10, 10, |_, _| normal(&mut r)).qr().q();
    (latent * q.transpose(), switching)
}

fn tica_oracle() -> Outcome {
    let (x, switching) = two_state_series(5000, 1010);
    let model = tica_fit(&x, 1).unwrap();
    let proj: Vec<f64> = tica_project(&model, &x).unwrap().iter().map(|p| p.0).collect();
    let n = proj.len() as f64;
    let (mp, ms) = (proj.iter().sum::<f64>() / n, switching.iter().sum::<f64>() / n);
    let cov: f64 = proj.iter().zip(&switching).map(|(a, b)| (a - mp) * (b - ms)).sum();
    let vp: f64 = proj.iter().map(|a| (a - mp).powi(2)).sum();
    let vs: f64 = switching.iter().map(|b| (b - ms).powi(2)).sum();
    let cos = (cov / (vp * vs).sqrt()).abs();

    let frames = 10_000;
    let mut r = rng(1011);
    let noise = DMatrix::from_fn(frames, 3, |_, _| normal(&mut r));
    let top = tica_fit(&noise, 1).unwrap().eigenvalues[0];
    let bound = 3.0 / (frames as f64).sqrt();
    outcome(
        cos > 0.95 && top.abs() < bound,
        format!("|cos| with switching coordinate {cos:.3}; noise top eigenvalue {top:.4} (bound {bound:.4})"),
    )
}

fn determinism(work: &Path) -> Outcome {
    let input = work.join("c10_input.pdb");
    let mean = synth::ideal_helix(10);
    let ens = synth::constrained_ensemble(&mean, 1.0, 1e-4, 10.0, 40, 1012).unwrap();
    io::export(&ens, &Topology::generic(10), &input).unwrap();
    let run = |name: &str| {
        let mut cfg = RunConfig::new(&input, 1012);
        cfg.output_dir = work.join(name);
        cfg.samples = 100;
        cfg.targets = TargetSource::Uniform(1e-3);
        cfg.set_baselines(&[BaselineKind::Oas]);
        run_pipeline(&cfg).unwrap();
        cfg.output_dir
    };
    let (a, b) = (run("c10a"), run("c10b"));
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .collect();
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!("{} CSV files compared, {} differ", names.len(), differing.len()),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let mut failures = 0;
    let mut line = |id: &str, name: &str, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!("criterion {id:>3} [{status}] {name}: {}", o.detail);
    };
    line("1", "jacobian vs finite differences", jacobian_finite_differences());
    line("2", "internal/cartesian round trip", round_trip_geometry());
    line("3", "trace identity", trace_identity());
    line("4", "first-order displacement", first_order_approximation());
    line("5", "solver self-consistency", solver_self_consistency());
    line("6", "monotonicity", monotonicity());
    line("7", "baseline inflation vs constrained fit", baseline_inflation(w));
    match public_data(w) {
        Some(o) => line("8", "public NMR ensemble (1unc)", o),
        None => println!(
            "criterion   8 [SKIP] public NMR ensemble (1unc): {} not present; see surrogate 8s",
            public_data_path().display()
        ),
    }
    line("8s", "synthetic 25-model 36-residue NMR surrogate", nmr_surrogate(w));
    line("9", "TICA oracle", tica_oracle());
    line("10", "determinism", determinism(w));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
