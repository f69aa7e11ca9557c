//! Subcommand bodies. Each writes its outputs plus the resolved
//! configuration into the output directory and prints a short report.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use klms::experiments::{compare as compare_curves, monte_carlo};
use klms::theory::{PredictedCurve, TheoryModel, TheorySummary};
use klms::{CoherenceSweep, Dictionary, LearningCurve};

use crate::config::RunConfig;
use crate::{CliError, Status};

pub const DICTIONARY_FILE: &str = "dictionary.txt";
pub const DICTIONARY_REPORT: &str = "dictionary_report.txt";
pub const THEORY_SUMMARY: &str = "theory_summary.txt";
pub const THEORY_CURVE: &str = "theory_curve.csv";
pub const EMPIRICAL_CURVE: &str = "empirical_curve.csv";
pub const SIMULATION_SUMMARY: &str = "simulation_summary.txt";
pub const COMPARISON_CURVE: &str = "comparison.csv";
pub const COMPARISON_REPORT: &str = "comparison_report.txt";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

fn output_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output { path: path.to_path_buf(), source }
}

fn prepare(rc: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&rc.out).map_err(output_error(&rc.out))?;
    let text = toml::to_string(&rc.resolved).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&rc.out.join(RESOLVED_CONFIG), &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(output_error(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(output_error(path))
}

fn dictionary_report(dict: &Dictionary, sweep: Option<&CoherenceSweep>, rc: &RunConfig) -> Result<String, CliError> {
    let d = dict.validate(&rc.experiment.kernel()?);
    let mut s = String::new();
    writeln!(s, "size = {}", d.size).unwrap();
    writeln!(s, "dim = {}", d.dim).unwrap();
    writeln!(s, "min_distance = {:.6e}", d.min_distance).unwrap();
    writeln!(s, "max_coherence = {:.6e}", d.max_coherence).unwrap();
    writeln!(s, "gram_condition = {:.6e}", d.gram_condition).unwrap();
    writeln!(s, "near_duplicates = {}", d.near_duplicates.len()).unwrap();
    if let Some(sw) = sweep {
        writeln!(s, "coherence_threshold = {}", sw.threshold).unwrap();
        writeln!(s, "coherence_threshold_exact = {}", sw.exact).unwrap();
    }
    if d.has_near_duplicates() {
        eprintln!("warning: {} near-duplicate center pairs", d.near_duplicates.len());
    }
    Ok(s)
}

fn build_dictionary(rc: &RunConfig) -> Result<Dictionary, CliError> {
    let (dict, sweep) = rc.experiment.build_dictionary()?;
    dict.save(rc.out.join(DICTIONARY_FILE))?;
    let report = dictionary_report(&dict, sweep.as_ref(), rc)?;
    write_text(&rc.out.join(DICTIONARY_REPORT), &report)?;
    Ok(dict)
}

pub fn dict(rc: &RunConfig) -> Result<Status, CliError> {
    prepare(rc)?;
    build_dictionary(rc)?;
    print!("{}", fs::read_to_string(rc.out.join(DICTIONARY_REPORT)).map_err(output_error(&rc.out))?);
    Ok(Status::Ok)
}

/// Theory summary and, when the recursion stays bounded, the predicted curve.
fn theory_outputs(rc: &RunConfig, dict: &Dictionary) -> Result<(TheoryModel, TheorySummary, Option<PredictedCurve>), CliError> {
    let model = rc.experiment.build_theory(dict)?;
    let summary = model.summary()?;
    let mut text = summary.to_string();
    writeln!(text, "mean_iteration_radius = {:.15}", model.convergence.mean_iteration_radius()).unwrap();
    let predicted = if summary.ms_stable {
        let p = model.predict_curve(&model.zero_init_covariance(), rc.experiment.horizon)?;
        p.write_csv(create(&rc.out.join(THEORY_CURVE))?)?;
        Some(p)
    } else {
        writeln!(text, "predicted_curve = skipped, not mean-square stable").unwrap();
        None
    };
    write_text(&rc.out.join(THEORY_SUMMARY), &text)?;
    print!("{text}");
    Ok((model, summary, predicted))
}

pub fn theory(rc: &RunConfig) -> Result<Status, CliError> {
    prepare(rc)?;
    let dict = build_dictionary(rc)?;
    let (_, summary, _) = theory_outputs(rc, &dict)?;
    Ok(if summary.mean_stable && summary.ms_stable { Status::Ok } else { Status::Unstable })
}

fn simulation_summary(rc: &RunConfig, curve: &LearningCurve) -> String {
    let tail = ((rc.experiment.compare.tail_fraction * curve.horizon as f64).ceil() as usize).clamp(1, curve.horizon);
    let values = &curve.mse_empirical[curve.horizon - tail..];
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut s = String::new();
    writeln!(s, "runs = {}", curve.runs).unwrap();
    writeln!(s, "horizon = {}", curve.horizon).unwrap();
    writeln!(s, "seed = {}", rc.experiment.seed).unwrap();
    writeln!(s, "tail_mean_mse = {mean:.12e}").unwrap();
    if let Some(se) = curve.steady_state_std_error() {
        writeln!(s, "tail_mean_mse_std_error = {se:.6e}").unwrap();
    }
    s
}

fn simulate_outputs(rc: &RunConfig, dict: Dictionary) -> Result<LearningCurve, CliError> {
    let curve = monte_carlo(&rc.experiment, Arc::new(dict), rc.experiment.runs)?;
    curve.write_csv(create(&rc.out.join(EMPIRICAL_CURVE))?)?;
    let text = simulation_summary(rc, &curve);
    write_text(&rc.out.join(SIMULATION_SUMMARY), &text)?;
    print!("{text}");
    Ok(curve)
}

pub fn simulate(rc: &RunConfig) -> Result<Status, CliError> {
    prepare(rc)?;
    let dict = build_dictionary(rc)?;
    simulate_outputs(rc, dict)?;
    Ok(Status::Ok)
}

fn finish_comparison(rc: &RunConfig, curve: LearningCurve, predicted: &PredictedCurve) -> Result<Status, CliError> {
    let report = compare_curves(&curve, predicted, &rc.experiment.compare)?;
    let curve = curve.with_theory(predicted)?;
    curve.write_csv(create(&rc.out.join(COMPARISON_CURVE))?)?;
    let text = report.to_string();
    write_text(&rc.out.join(COMPARISON_REPORT), &text)?;
    print!("{text}");
    Ok(if report.passed() { Status::Ok } else { Status::CompareFailed })
}

pub fn compare(rc: &RunConfig) -> Result<Status, CliError> {
    prepare(rc)?;
    let dict = build_dictionary(rc)?;
    let (_, _, predicted) = theory_outputs(rc, &dict)?;
    let Some(predicted) = predicted else {
        return Ok(Status::Unstable);
    };
    let curve = simulate_outputs(rc, dict)?;
    finish_comparison(rc, curve, &predicted)
}

pub fn compare_files(rc: &RunConfig, empirical: &Path, theory: &Path, steady_state: Option<f64>) -> Result<Status, CliError> {
    let open = |p: &Path| File::open(p).map_err(|e| CliError::Config(format!("cannot open {}: {e}", p.display())));
    let curve = LearningCurve::read_csv(open(empirical)?)?;
    let mut predicted = PredictedCurve::read_csv(open(theory)?)?;
    predicted.steady_state_mse = steady_state;
    prepare(rc)?;
    finish_comparison(rc, curve, &predicted)
}
