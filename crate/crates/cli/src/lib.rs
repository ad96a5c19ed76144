//! The `effifit` command-line tool.

pub mod args;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::Parser;
use effifit_core::io::read_points_file;
use effifit_core::kcr::{d2_weighted, kcr_circle, kcr_for_a};
use effifit_core::la_oracle::verify_suite;
use effifit_core::mc::{
    equivalent_weight, run_efficiency, run_sweep, EfficiencyReport, ExperimentConfig, SweepSpec, Target, TABLE_METHODS,
};
use effifit_core::geometry::sample_true_points;
use effifit_core::{fit, ArcSpec, CircleParams, Error, Method, NoiseModel, Spacing};

use args::{Cli, Command, FitArgs, Format, KcrArgs, NoiseArg, ParamArg, SimulateArgs, SpacingArg, SweepArgs, VerifyLaArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

/// Noise levels of the three reference tables, and the arc each was sampled on.
pub const TABLES: [(f64, &[f64]); 3] = [
    (360.0, &[0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3]),
    (180.0, &[0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3]),
    (90.0, &[0.01, 0.02, 0.03, 0.05, 0.1]),
];

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DegenerateConfiguration(_) | Error::ExperimentFailed(_) => EXIT_DEGENERATE,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    match try_run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn try_run(args: Vec<OsString>) -> Result<i32, CliError> {
    let args = match config::find_config(&args) {
        Some(path) => {
            let entries = config::load(Path::new(&path))?;
            config::merge(args, &entries)
        }
        None => args,
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return Ok(code);
        }
    };
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Kcr(a) => cmd_kcr(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::VerifyLa(a) => cmd_verify_la(&a),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::input(e.to_string())),
    }
}

fn check_output_dir(output: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = output.and_then(Path::parent).filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(CliError::input(format!("output directory {} does not exist", dir.display())));
        }
    }
    Ok(())
}

fn spacing(s: SpacingArg) -> Spacing {
    match s {
        SpacingArg::Cells => Spacing::Cells,
        SpacingArg::Endpoints => Spacing::Endpoints,
    }
}

fn noise(n: NoiseArg) -> NoiseModel {
    match n {
        NoiseArg::Cartesian => NoiseModel::Cartesian,
        NoiseArg::Radial => NoiseModel::Radial,
    }
}

fn target(p: ParamArg) -> Target {
    match p {
        ParamArg::Center => Target::Center,
        ParamArg::A => Target::A,
    }
}

fn cmd_fit(a: &FitArgs) -> Result<i32, CliError> {
    let method: Method = a.method.parse()?;
    if method == Method::WeightedAf {
        return Err(CliError::input("the weighted fit needs a weight function; choose olsf, af, pratt, taubin or graf"));
    }
    check_output_dir(a.output.output.as_deref())?;
    let points = read_points_file(&a.input)?;
    let report = fit(method, &points)?;
    emit(a.output.output.as_deref(), &report.to_json())?;
    if report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: {method} did not converge after {} iterations", report.iterations);
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn parse_circle(s: &str) -> Result<CircleParams, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::input(format!("--circle: `{t}` is not a number"))))
        .collect::<Result<_, _>>()?;
    let [a, b, r] = v[..] else {
        return Err(CliError::input(format!("--circle expects `a,b,R`, got `{s}`")));
    };
    Ok(CircleParams::new(a, b, r)?)
}

fn cmd_kcr(a: &KcrArgs) -> Result<i32, CliError> {
    check_output_dir(a.output.output.as_deref())?;
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(CliError::input(format!("--sigma must be non-negative, got {}", a.sigma)));
    }
    let (points, circle) = match &a.input {
        Some(path) => {
            let circle = parse_circle(a.circle.as_deref().unwrap_or_default())?;
            (read_points_file(path)?, circle)
        }
        None => {
            let spec = ArcSpec::unit_arc_deg(a.arc_deg, a.n).with_spacing(spacing(a.spacing));
            spec.validate()?;
            (sample_true_points(&spec)?, spec.circle)
        }
    };
    let mut bounds = kcr_circle(&points, &circle)?.with_sigma(a.sigma);
    if let Some(name) = &a.weight {
        let method: Method = name.parse()?;
        let w = equivalent_weight(method)
            .ok_or_else(|| CliError::input(format!("--weight: no weighted form for {method}; use af, pratt or graf")))?;
        bounds.d2 = d2_weighted(&points, &circle, &w)?.d2;
    }
    let mut json: serde_json::Value = serde_json::from_str(&bounds.to_json()).expect("bounds json");
    let var_a = kcr_for_a(&points, &circle)? * a.sigma * a.sigma;
    json["center_bound"] = bounds.center_bound().into();
    json["var_a_bound"] = var_a.into();
    emit(a.output.output.as_deref(), &serde_json::to_string_pretty(&json).expect("json"))?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32, CliError> {
    check_output_dir(a.output.output.as_deref())?;
    let (arc_deg, sigmas): (f64, Vec<f64>) = match a.table {
        Some(t) => {
            let (arc, column) = TABLES[usize::from(t) - 1];
            (arc, a.sigma_rel.map_or_else(|| column.to_vec(), |s| vec![s]))
        }
        None => {
            let s = a.sigma_rel.ok_or_else(|| CliError::input("--sigma-rel is required unless --table is given"))?;
            (a.arc_deg.unwrap_or(360.0), vec![s])
        }
    };
    let methods = match &a.methods {
        Some(list) => Method::parse_list(list)?,
        None if a.table.is_some() => TABLE_METHODS.to_vec(),
        None => Method::STANDARD.to_vec(),
    };
    let mut reports = Vec::new();
    for sigma in sigmas {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(CliError::input(format!("--sigma-rel must be non-negative, got {sigma}")));
        }
        let mut cfg = ExperimentConfig::new(arc_deg, a.n, sigma, &methods, a.trials, a.seed.seed);
        cfg.arc.spacing = spacing(a.spacing);
        cfg.noise.model = noise(a.noise);
        cfg.target = target(a.param);
        cfg.trim = a.trim;
        let report = if sigma == 0.0 { EfficiencyReport::zero_noise(&cfg)? } else { run_efficiency(&cfg)? };
        summarize(&report);
        reports.push(report);
    }
    let text = match a.format {
        Format::Csv => {
            let mut out = String::new();
            for (i, r) in reports.iter().enumerate() {
                let csv = r.to_csv();
                out.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |(_, rows)| rows) });
            }
            out
        }
        Format::Json if reports.len() == 1 => reports[0].to_json(),
        Format::Json => {
            let values: Vec<serde_json::Value> =
                reports.iter().map(|r| serde_json::from_str(&r.to_json()).expect("report json")).collect();
            serde_json::to_string_pretty(&values).expect("json")
        }
    };
    emit(a.output.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn summarize(r: &EfficiencyReport) {
    let cells: Vec<String> = r.methods.iter().map(|m| format!("{} {:.3}", m.method, m.efficiency)).collect();
    eprintln!("arc {} deg, sigma/R {}: {}", r.arc_deg, r.sigma, cells.join(", "));
    if let Some(note) = &r.note {
        eprintln!("note: {note}");
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::input(format!("--grid expects `<arcs>x<c values>` such as 10x10, got `{s}`"));
    let (a, c) = s.to_ascii_lowercase().split_once('x').map(|(a, c)| (a.trim().to_string(), c.trim().to_string())).ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32, CliError> {
    check_output_dir(a.output.output.as_deref())?;
    let (arc_steps, c_steps) = parse_grid(&a.grid)?;
    let spec = SweepSpec { arc_min_deg: a.arc_min, arc_max_deg: a.arc_max, arc_steps, c_min: a.c_min, c_max: a.c_max, c_steps };
    spec.validate()?;
    let methods = Method::parse_list(&a.methods)?;
    let mut base = ExperimentConfig::new(a.arc_max, a.n, 0.0, &methods, a.trials, a.seed.seed);
    base.arc.spacing = spacing(a.spacing);
    base.noise.model = noise(a.noise);
    base.target = target(a.param);
    let grid = run_sweep(&spec, &base)?;
    for (m, values) in grid.methods.iter().zip(&grid.values) {
        let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
        let min = finite.clone().fold(f64::INFINITY, f64::min);
        let max = finite.fold(f64::NEG_INFINITY, f64::max);
        eprintln!("{m}: E from {min:.3} to {max:.3}");
    }
    let text = match a.format {
        Format::Csv => grid.to_csv(),
        Format::Json => grid.to_json(),
    };
    emit(a.output.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn cmd_verify_la(a: &VerifyLaArgs) -> Result<i32, CliError> {
    check_output_dir(a.output.output.as_deref())?;
    let summary = verify_suite(a.instances, a.seed.seed, a.inject_fault)?;
    emit(a.output.output.as_deref(), &serde_json::to_string_pretty(&summary).expect("summary json"))?;
    eprintln!(
        "{} instances: worst min eig {:.3e}, optimal gap {:.3e}, corollary {:.3e}, lemma 4 {:.3e}",
        summary.instances, summary.worst_min_eig, summary.worst_optimal_gap, summary.worst_corollary, summary.worst_lemma4
    );
    if summary.passed {
        return Ok(EXIT_OK);
    }
    for f in &summary.failures {
        eprintln!("FAILED seed {} (replay: verify-la --instances 1 --seed {}): {}", f.seed, f.seed, f.failures.join("; "));
    }
    Ok(EXIT_VERIFICATION)
}
