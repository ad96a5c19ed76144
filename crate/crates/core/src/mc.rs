//! Monte Carlo experiments: statistical efficiency of the fitters relative to the
//! KCR bound, bias order, efficiency grids over arc angle and noise level, and
//! covariance comparisons between the noise models.
//!
//! Every trial draws its noise from a stream derived from `(master_seed, trial)`.
//! Trials may run in parallel (feature `parallel`), but per-trial results are
//! collected in trial order and reduced sequentially, so a report depends on the
//! seed only, never on the thread count.

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, Method, WeightFunction};
use crate::geometry::{
    arc_height, perturb, point_rng, sample_true_points, to_algebraic, ArcSpec, CircleParams, NoiseModel, NoiseSpec,
    Point2, Spacing,
};
use crate::io::format_f64;
use crate::kcr::{d2_weighted, kcr_circle, kcr_for_a};

/// Methods compared in the efficiency tables.
pub const TABLE_METHODS: [Method; 4] = [Method::Olsf, Method::Af, Method::Pratt, Method::Taubin];

pub const DEFAULT_TRIALS: usize = 10_000;
pub const ACCEPTANCE_TRIALS: usize = 100_000;

/// Efficiencies above this are flagged: only Monte Carlo noise can push E past 1.
pub const SUSPICIOUS_EFFICIENCY: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    /// Center `(a, b)`, bound `sigma^2 (D_11 + D_22)`.
    #[serde(rename = "center")]
    Center,
    /// Algebraic parameter `A = 1/(2R)`, bound from the delta method.
    #[serde(rename = "A")]
    A,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "center" => Ok(Target::Center),
            "a" => Ok(Target::A),
            other => Err(Error::InvalidInput(format!("unknown target '{other}' (expected center or A)"))),
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Center => "center",
            Target::A => "A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arc: ArcSpec,
    /// Noise model and level; its `seed` is replaced by a per-trial seed.
    pub noise: NoiseSpec,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub master_seed: u64,
    pub target: Target,
    /// Fraction of the largest squared errors dropped before averaging. Off by default.
    pub trim: Option<f64>,
}

impl ExperimentConfig {
    /// Unit circle, `n` points on an arc of `arc_deg` degrees, Cartesian noise `sigma`.
    /// Points sit at the middles of `n` equal pieces of the arc ([`Spacing::Cells`]),
    /// the placement under which the reference efficiency tables are reproduced.
    pub fn new(arc_deg: f64, n: usize, sigma: f64, methods: &[Method], trials: usize, master_seed: u64) -> Self {
        Self {
            arc: ArcSpec::unit_arc_deg(arc_deg, n).with_spacing(Spacing::Cells),
            noise: NoiseSpec { model: NoiseModel::Cartesian, sigma, seed: 0 },
            methods: methods.to_vec(),
            trials,
            master_seed,
            target: Target::Center,
            trim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arc.validate()?;
        self.noise.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        if self.methods.contains(&Method::WeightedAf) {
            return Err(Error::InvalidInput("WeightedAF needs a weight function and cannot be simulated".into()));
        }
        if let Some(t) = self.trim {
            if !(0.0..0.5).contains(&t) {
                return Err(Error::InvalidInput(format!("trim fraction must lie in [0, 0.5), got {t}")));
            }
        }
        Ok(())
    }

    pub fn arc_deg(&self) -> f64 {
        self.arc.arc_angle.to_degrees()
    }
}

/// Seed of trial `index` under `master`; streams are independent across indices.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    point_rng(master, index).next_u64()
}

fn run_trials<T, F>(trials: usize, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials as u64).into_par_iter().map(|t| f(trial_seed(master_seed, t))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials as u64).map(|t| f(trial_seed(master_seed, t))).collect()
    }
}

/// `E = bound / mse`.
pub fn efficiency(bound: f64, mse: f64) -> f64 {
    bound / mse
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Estimate { err2: f64, converged: bool },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEfficiency {
    pub method: Method,
    #[serde(with = "nan_as_null")]
    pub efficiency: f64,
    /// Monte Carlo standard error of `efficiency`.
    #[serde(with = "nan_as_null")]
    pub std_error: f64,
    /// Mean squared error of the target over the trials used.
    #[serde(with = "nan_as_null")]
    pub mse: f64,
    pub bound: f64,
    /// Trials without a usable estimate plus trials that did not converge.
    pub failures: usize,
    pub non_converged: usize,
    /// Trials in the average, non-converged ones included.
    pub trials_used: usize,
    pub suspicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub target: Target,
    pub arc_deg: f64,
    pub n: usize,
    pub spacing: Spacing,
    pub noise: NoiseModel,
    pub sigma: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub methods: Vec<MethodEfficiency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn center_bound(arc: &ArcSpec, sigma: f64, target: Target) -> Result<f64> {
    let pts = sample_true_points(arc)?;
    Ok(match target {
        Target::Center => kcr_circle(&pts, &arc.circle)?.with_sigma(sigma).center_bound(),
        Target::A => sigma * sigma * kcr_for_a(&pts, &arc.circle)?,
    })
}

fn squared_error(report: &crate::fit::FitReport, truth: &CircleParams, target: Target) -> Option<f64> {
    match target {
        Target::Center => {
            let c = report.center()?;
            let e = (c.x - truth.a).powi(2) + (c.y - truth.b).powi(2);
            e.is_finite().then_some(e)
        }
        Target::A => {
            let t = to_algebraic(truth).ok()?;
            let e = (report.params.aligned_with(&t).a - t.a).powi(2);
            e.is_finite().then_some(e)
        }
    }
}

fn summarize(errs: &mut Vec<f64>, trim: Option<f64>) -> (f64, f64) {
    if let Some(t) = trim {
        errs.sort_by(f64::total_cmp);
        let keep = errs.len() - (t * errs.len() as f64).floor() as usize;
        errs.truncate(keep.max(1));
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = if errs.len() > 1 { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Runs every configured fitter on `trials` noisy samples of the same true arc.
///
/// Non-converged fits stay in the average; only trials where a fitter returns no
/// estimate at all are left out of its average. A method without a single
/// estimate gets `E = NaN`, and the experiment fails only if that happens to all.
pub fn run_efficiency(config: &ExperimentConfig) -> Result<EfficiencyReport> {
    config.validate()?;
    let sigma = config.noise.sigma;
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("efficiency needs sigma > 0".into()));
    }
    let truth = config.arc.circle;
    let true_pts = sample_true_points(&config.arc)?;
    let bound = center_bound(&config.arc, sigma, config.target)?;

    let outcomes: Vec<Vec<Outcome>> = run_trials(config.trials, config.master_seed, |seed| {
        let noise = NoiseSpec { seed, ..config.noise };
        let Ok(pts) = perturb(&true_pts, &truth, &noise) else {
            return vec![Outcome::Failed; config.methods.len()];
        };
        config
            .methods
            .iter()
            .map(|&m| match fit(m, &pts) {
                Ok(r) => match squared_error(&r, &truth, config.target) {
                    Some(err2) => Outcome::Estimate { err2, converged: r.converged },
                    None => Outcome::Failed,
                },
                Err(_) => Outcome::Failed,
            })
            .collect()
    });

    let mut methods = Vec::with_capacity(config.methods.len());
    for (j, &method) in config.methods.iter().enumerate() {
        let mut errs = Vec::with_capacity(config.trials);
        let (mut failed, mut non_converged) = (0, 0);
        for trial in &outcomes {
            match trial[j] {
                Outcome::Estimate { err2, converged } => {
                    errs.push(err2);
                    if !converged {
                        non_converged += 1;
                    }
                }
                Outcome::Failed => failed += 1,
            }
        }
        let trials_used = errs.len();
        let (mse, e, se) = if errs.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let (mse, se_mse) = summarize(&mut errs, config.trim);
            let e = efficiency(bound, mse);
            (mse, e, e * se_mse / mse)
        };
        methods.push(MethodEfficiency {
            method,
            efficiency: e,
            std_error: se,
            mse,
            bound,
            failures: failed + non_converged,
            non_converged,
            trials_used,
            suspicious: e > SUSPICIOUS_EFFICIENCY,
        });
    }
    if methods.iter().all(|m| m.trials_used == 0) {
        return Err(Error::ExperimentFailed(format!("all {} trials failed for every method", config.trials)));
    }
    Ok(EfficiencyReport {
        target: config.target,
        arc_deg: config.arc_deg(),
        n: config.arc.n,
        spacing: config.arc.spacing,
        noise: config.noise.model,
        sigma,
        trials: config.trials,
        master_seed: config.master_seed,
        methods,
        note: None,
    })
}

const REPORT_HEADER: [&str; 16] = [
    "method",
    "target",
    "arc_deg",
    "n",
    "spacing",
    "noise",
    "sigma",
    "trials",
    "seed",
    "E",
    "std_error",
    "mse",
    "bound",
    "failures",
    "non_converged",
    "trials_used",
];

#[derive(Debug, Deserialize)]
struct ReportRow {
    method: Method,
    target: Target,
    arc_deg: f64,
    n: usize,
    spacing: Spacing,
    noise: NoiseModel,
    sigma: f64,
    trials: usize,
    seed: u64,
    #[serde(rename = "E")]
    e: f64,
    std_error: f64,
    mse: f64,
    bound: f64,
    failures: usize,
    non_converged: usize,
    trials_used: usize,
}

impl EfficiencyReport {
    /// Report for noiseless data: every fitter is exact, so `E` is defined as 1.
    pub fn zero_noise(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let true_pts = sample_true_points(&config.arc)?;
        let mut methods = Vec::new();
        for &method in &config.methods {
            let exact = fit(method, &true_pts).map(|r| r.converged).unwrap_or(false);
            methods.push(MethodEfficiency {
                method,
                efficiency: 1.0,
                std_error: 0.0,
                mse: 0.0,
                bound: 0.0,
                failures: usize::from(!exact) * config.trials,
                non_converged: 0,
                trials_used: if exact { config.trials } else { 0 },
                suspicious: false,
            });
        }
        Ok(Self {
            target: config.target,
            arc_deg: config.arc_deg(),
            n: config.arc.n,
            spacing: config.arc.spacing,
            noise: config.noise.model,
            sigma: 0.0,
            trials: config.trials,
            master_seed: config.master_seed,
            methods,
            note: Some("sigma = 0: bound and error are both zero; E reported as 1".into()),
        })
    }

    pub fn get(&self, method: Method) -> Option<&MethodEfficiency> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn efficiency(&self, method: Method) -> f64 {
        self.get(method).map_or(f64::NAN, |m| m.efficiency)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).expect("write to memory");
        for m in &self.methods {
            w.write_record([
                m.method.name().to_string(),
                self.target.to_string(),
                format_f64(self.arc_deg),
                self.n.to_string(),
                self.spacing.to_string(),
                self.noise.to_string(),
                format_f64(self.sigma),
                self.trials.to_string(),
                self.master_seed.to_string(),
                format_f64(m.efficiency),
                format_f64(m.std_error),
                format_f64(m.mse),
                format_f64(m.bound),
                m.failures.to_string(),
                m.non_converged.to_string(),
                m.trials_used.to_string(),
            ])
            .expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let mut report: Option<Self> = None;
        for row in rdr.deserialize::<ReportRow>() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let r = report.get_or_insert_with(|| Self {
                target: row.target,
                arc_deg: row.arc_deg,
                n: row.n,
                spacing: row.spacing,
                noise: row.noise,
                sigma: row.sigma,
                trials: row.trials,
                master_seed: row.seed,
                methods: Vec::new(),
                note: None,
            });
            r.methods.push(MethodEfficiency {
                method: row.method,
                efficiency: row.e,
                std_error: row.std_error,
                mse: row.mse,
                bound: row.bound,
                failures: row.failures,
                non_converged: row.non_converged,
                trials_used: row.trials_used,
                suspicious: row.e > SUSPICIOUS_EFFICIENCY,
            });
        }
        report.ok_or_else(|| Error::Parse { line: 1, message: "no report rows".into() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line() as u64, message: e.to_string() })
    }
}

/// Serializes NaN as JSON `null` and reads `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

mod nan_grid {
    use serde::{Deserialize, Deserializer, Serializer};

    type Grid = Vec<Vec<Vec<f64>>>;

    pub fn serialize<S: Serializer>(v: &Grid, s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Vec<Vec<Option<f64>>>> = v
            .iter()
            .map(|m| m.iter().map(|row| row.iter().map(|x| (!x.is_nan()).then_some(*x)).collect()).collect())
            .collect();
        serde::Serialize::serialize(&opt, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Grid, D::Error> {
        let opt = Vec::<Vec<Vec<Option<f64>>>>::deserialize(d)?;
        Ok(opt
            .into_iter()
            .map(|m| m.into_iter().map(|row| row.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()).collect())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub sigma: f64,
    /// `<theta^> - theta` in `(a, b, R)`.
    pub bias: [f64; 3],
    pub norm: f64,
    pub trials_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBias {
    pub method: Method,
    pub points: Vec<BiasPoint>,
    /// Least-squares slope of `log ||bias||` against `log sigma` over `sigma > 0`.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScan {
    pub arc_deg: f64,
    pub n: usize,
    pub trials: usize,
    pub methods: Vec<MethodBias>,
}

impl BiasScan {
    pub fn get(&self, method: Method) -> Option<&MethodBias> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Empirical bias of `(a, b, R)` for each method at each noise level.
pub fn run_bias_scan(config: &ExperimentConfig, sigmas: &[f64]) -> Result<BiasScan> {
    config.validate()?;
    let positive: Vec<f64> = sigmas.iter().copied().filter(|&s| s > 0.0).collect();
    if sigmas.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 noise levels".into()));
    }
    if let (Some(lo), Some(hi)) = (positive.iter().copied().reduce(f64::min), positive.iter().copied().reduce(f64::max))
    {
        if hi < 10.0 * lo {
            return Err(Error::InvalidInput("noise levels must span at least a decade".into()));
        }
    }
    let truth = config.arc.circle;
    let true_pts = sample_true_points(&config.arc)?;
    let mut per_method: Vec<Vec<BiasPoint>> = vec![Vec::new(); config.methods.len()];

    for (level, &sigma) in sigmas.iter().enumerate() {
        let noise = NoiseSpec { sigma, ..config.noise };
        noise.validate()?;
        let master = trial_seed(config.master_seed, level as u64);
        let estimates: Vec<Vec<Option<[f64; 3]>>> = run_trials(config.trials, master, |seed| {
            let Ok(pts) = perturb(&true_pts, &truth, &NoiseSpec { seed, ..noise }) else {
                return vec![None; config.methods.len()];
            };
            config
                .methods
                .iter()
                .map(|&m| fit(m, &pts).ok().and_then(|r| r.circle).map(|c| c.as_array()))
                .map(|c| c.filter(|c| c.iter().all(|v| v.is_finite())))
                .collect()
        });
        for (j, out) in per_method.iter_mut().enumerate() {
            let mut sum = [0.0; 3];
            let mut used = 0;
            for est in estimates.iter().filter_map(|t| t[j]) {
                for k in 0..3 {
                    sum[k] += est[k];
                }
                used += 1;
            }
            if used == 0 {
                return Err(Error::ExperimentFailed(format!(
                    "{} produced no circle at sigma = {sigma}",
                    config.methods[j]
                )));
            }
            let t = truth.as_array();
            let bias = [0, 1, 2].map(|k| sum[k] / used as f64 - t[k]);
            let norm = Vector3::from(bias).norm();
            out.push(BiasPoint { sigma, bias, norm, trials_used: used });
        }
    }

    let methods = config
        .methods
        .iter()
        .zip(per_method)
        .map(|(&method, points)| {
            let (x, y): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| p.sigma > 0.0 && p.norm > 0.0)
                .map(|p| (p.sigma.ln(), p.norm.ln()))
                .unzip();
            MethodBias { method, slope: fit_slope(&x, &y), points }
        })
        .collect();
    Ok(BiasScan { arc_deg: config.arc_deg(), n: config.arc.n, trials: config.trials, methods })
}

/// Axes of an efficiency sweep; both ranges are inclusive and evenly spaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub arc_min_deg: f64,
    pub arc_max_deg: f64,
    pub arc_steps: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub c_steps: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.arc_min_deg > 0.0) || !(self.arc_max_deg >= self.arc_min_deg) || self.arc_max_deg > 360.0 {
            return Err(Error::InvalidInput(format!(
                "arc range must satisfy 0 < min <= max <= 360, got {}..{}",
                self.arc_min_deg, self.arc_max_deg
            )));
        }
        if !(self.c_min > 0.0) || !(self.c_max >= self.c_min) || !self.c_max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise range must satisfy 0 < min <= max, got {}..{}",
                self.c_min, self.c_max
            )));
        }
        if self.arc_steps < 2 || self.c_steps < 2 {
            return Err(Error::InvalidInput("grid must be at least 2x2".into()));
        }
        Ok(())
    }

    pub fn arc_angles(&self) -> Vec<f64> {
        linspace(self.arc_min_deg, self.arc_max_deg, self.arc_steps)
    }

    pub fn c_values(&self) -> Vec<f64> {
        linspace(self.c_min, self.c_max, self.c_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyGrid {
    pub target: Target,
    /// Degrees.
    pub arc_angles: Vec<f64>,
    /// Noise level is `sigma = c * h` with `h` the arc height.
    pub c_values: Vec<f64>,
    pub methods: Vec<Method>,
    /// `values[method][c][arc]`; NaN where a method produced no estimate at all.
    #[serde(with = "nan_grid")]
    pub values: Vec<Vec<Vec<f64>>>,
    pub failures: Vec<Vec<Vec<usize>>>,
}

/// Efficiency on every (arc, c) cell, each cell a full [`run_efficiency`] with its own seed.
/// Points follow `base.arc.spacing`; the reference small-arc anchors are closest
/// with [`Spacing::Endpoints`].
pub fn run_sweep(spec: &SweepSpec, base: &ExperimentConfig) -> Result<EfficiencyGrid> {
    spec.validate()?;
    base.validate()?;
    let arcs = spec.arc_angles();
    let cs = spec.c_values();
    let nm = base.methods.len();
    let mut values = vec![vec![vec![f64::NAN; arcs.len()]; cs.len()]; nm];
    let mut failures = vec![vec![vec![base.trials; arcs.len()]; cs.len()]; nm];
    for (ci, &c) in cs.iter().enumerate() {
        for (ai, &arc) in arcs.iter().enumerate() {
            let arc_spec = ArcSpec { arc_angle: arc.to_radians(), ..base.arc };
            let cell = ExperimentConfig {
                arc: arc_spec,
                noise: NoiseSpec { sigma: c * arc_height(&arc_spec), ..base.noise },
                master_seed: trial_seed(base.master_seed, (ci * arcs.len() + ai) as u64),
                ..base.clone()
            };
            match run_efficiency(&cell) {
                Ok(report) => {
                    for (j, m) in report.methods.iter().enumerate() {
                        values[j][ci][ai] = m.efficiency;
                        failures[j][ci][ai] = m.failures;
                    }
                }
                Err(Error::ExperimentFailed(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(EfficiencyGrid { target: base.target, arc_angles: arcs, c_values: cs, methods: base.methods.clone(), values, failures })
}

#[derive(Debug, Deserialize)]
struct GridRow {
    arc_deg: f64,
    c: f64,
    method: Method,
    #[serde(rename = "E")]
    e: f64,
    failures: usize,
}

impl EfficiencyGrid {
    pub fn method_values(&self, method: Method) -> Option<&Vec<Vec<f64>>> {
        self.methods.iter().position(|&m| m == method).map(|j| &self.values[j])
    }

    /// Columns `arc_deg, c, method, E, failures`, one row per cell and method.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["arc_deg", "c", "method", "E", "failures"]).expect("write to memory");
        for (ci, &c) in self.c_values.iter().enumerate() {
            for (ai, &arc) in self.arc_angles.iter().enumerate() {
                for (j, m) in self.methods.iter().enumerate() {
                    w.write_record([
                        format_f64(arc),
                        format_f64(c),
                        m.name().to_string(),
                        format_f64(self.values[j][ci][ai]),
                        self.failures[j][ci][ai].to_string(),
                    ])
                    .expect("write to memory");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }

    /// Reads a grid written by [`Self::to_csv`]; the target is not part of the CSV.
    pub fn from_csv(s: &str, target: Target) -> Result<Self> {
        let mut rows = Vec::new();
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        for row in rdr.deserialize::<GridRow>() {
            rows.push(row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?);
        }
        let mut arcs: Vec<f64> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for r in &rows {
            if !arcs.contains(&r.arc_deg) {
                arcs.push(r.arc_deg);
            }
            if !cs.contains(&r.c) {
                cs.push(r.c);
            }
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        if rows.len() != arcs.len() * cs.len() * methods.len() || rows.is_empty() {
            return Err(Error::Parse { line: 1, message: "grid rows do not form a complete grid".into() });
        }
        let mut values = vec![vec![vec![f64::NAN; arcs.len()]; cs.len()]; methods.len()];
        let mut failures = vec![vec![vec![0; arcs.len()]; cs.len()]; methods.len()];
        for r in &rows {
            let j = methods.iter().position(|&m| m == r.method).expect("collected above");
            let ci = cs.iter().position(|&c| c == r.c).expect("collected above");
            let ai = arcs.iter().position(|&a| a == r.arc_deg).expect("collected above");
            values[j][ci][ai] = r.e;
            failures[j][ci][ai] = r.failures;
        }
        Ok(Self { target, arc_angles: arcs, c_values: cs, methods, values, failures })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line() as u64, message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceComparison {
    pub method: Method,
    pub sigma: f64,
    pub trials: usize,
    /// Empirical covariances of `(a, b, R)`.
    pub cartesian: [[f64; 3]; 3],
    pub radial: [[f64; 3]; 3],
    /// Entrywise difference in units of its Monte Carlo standard error.
    pub z_scores: [[f64; 3]; 3],
    pub max_abs_z: f64,
    /// `sigma^2 D_2`; `D_2 = D_min` for the geometric and Taubin fits.
    pub predicted: [[f64; 3]; 3],
    /// Diagonal ratios empirical / predicted for each model.
    pub cartesian_ratio: [f64; 3],
    pub radial_ratio: [f64; 3],
}

/// Weight function whose weighted algebraic fit has the same leading-order
/// covariance as `method`, when there is one.
pub fn equivalent_weight(method: Method) -> Option<WeightFunction> {
    match method {
        Method::Af => Some(WeightFunction::inverse_a_squared()),
        Method::Pratt => Some(WeightFunction::unit()),
        Method::Graf => Some(WeightFunction::gradient()),
        _ => None,
    }
}

struct Moments {
    cov: Matrix3<f64>,
    se: Matrix3<f64>,
}

fn moments(samples: &[[f64; 3]]) -> Moments {
    let n = samples.len() as f64;
    let mut mean = Vector3::zeros();
    for s in samples {
        mean += Vector3::from(*s);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for s in samples {
        let d = Vector3::from(*s) - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    let mut var = Matrix3::zeros();
    for s in samples {
        let d = Vector3::from(*s) - mean;
        let p = d * d.transpose() - cov;
        var += p.component_mul(&p);
    }
    var /= n - 1.0;
    Moments { cov, se: var.map(|v| (v / n).sqrt()) }
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

/// Fits the first configured method under Cartesian and under radial noise,
/// with independent seeds, and compares the empirical covariances.
pub fn compare_covariance(config: &ExperimentConfig) -> Result<CovarianceComparison> {
    config.validate()?;
    let method = config.methods[0];
    let sigma = config.noise.sigma;
    let truth = config.arc.circle;
    let true_pts = sample_true_points(&config.arc)?;
    if config.trials < 2 {
        return Err(Error::InvalidInput("need at least 2 trials for a covariance".into()));
    }

    let sample = |model: NoiseModel, master: u64| -> Result<Vec<[f64; 3]>> {
        let ests: Vec<Option<[f64; 3]>> = run_trials(config.trials, master, |seed| {
            let noise = NoiseSpec { model, sigma, seed };
            let pts: Vec<Point2> = perturb(&true_pts, &truth, &noise).ok()?;
            fit(method, &pts).ok()?.circle.map(|c| c.as_array())
        });
        let ests: Vec<[f64; 3]> = ests.into_iter().flatten().collect();
        if ests.len() < 2 {
            return Err(Error::ExperimentFailed(format!("{method} failed on almost every trial")));
        }
        Ok(ests)
    };
    let cart = moments(&sample(NoiseModel::Cartesian, config.master_seed)?);
    let rad = moments(&sample(NoiseModel::Radial, trial_seed(config.master_seed, u64::MAX))?);

    let z = Matrix3::from_fn(|i, j| {
        let se = cart.se[(i, j)].hypot(rad.se[(i, j)]);
        let d = cart.cov[(i, j)] - rad.cov[(i, j)];
        if se > 0.0 {
            d / se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    });
    let bounds = match equivalent_weight(method) {
        Some(w) => d2_weighted(&true_pts, &truth, &w)?,
        None => kcr_circle(&true_pts, &truth)?,
    };
    let predicted = bounds.d2.unwrap_or(bounds.d_min) * (sigma * sigma);
    let ratio = |c: &Matrix3<f64>| [0, 1, 2].map(|k| c[(k, k)] / predicted[(k, k)]);
    Ok(CovarianceComparison {
        method,
        sigma,
        trials: config.trials,
        cartesian: rows(&cart.cov),
        radial: rows(&rad.cov),
        z_scores: rows(&z),
        max_abs_z: z.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        predicted: rows(&predicted),
        cartesian_ratio: ratio(&cart.cov),
        radial_ratio: ratio(&rad.cov),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(arc: f64, sigma: f64, methods: &[Method], trials: usize) -> ExperimentConfig {
        ExperimentConfig::new(arc, 20, sigma, methods, trials, 7)
    }

    #[test]
    fn efficiency_of_the_bound_itself_is_one() {
        assert_eq!(efficiency(0.0123, 0.0123), 1.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = quick(180.0, 0.05, &TABLE_METHODS, 300);
        let a = run_efficiency(&cfg).unwrap();
        let b = run_efficiency(&cfg).unwrap();
        assert_eq!(a, b);
        let other = run_efficiency(&ExperimentConfig { master_seed: 8, ..cfg }).unwrap();
        assert_ne!(a.methods[0].mse, other.methods[0].mse);
    }

    #[test]
    fn trial_seeds_do_not_depend_on_order() {
        let forward: Vec<u64> = (0..16).map(|t| trial_seed(3, t)).collect();
        let backward: Vec<u64> = (0..16).rev().map(|t| trial_seed(3, t)).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
        let mut unique = forward.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), forward.len());
    }

    #[test]
    fn standard_error_scales_as_inverse_sqrt_trials() {
        let small = run_efficiency(&quick(360.0, 0.05, &[Method::Pratt], 1000)).unwrap();
        let large = run_efficiency(&quick(360.0, 0.05, &[Method::Pratt], 4000)).unwrap();
        let ratio = small.methods[0].std_error / large.methods[0].std_error;
        assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(run_efficiency(&quick(360.0, 0.05, &[Method::Af], 0)).is_err());
        assert!(run_efficiency(&quick(360.0, 0.0, &[Method::Af], 10)).is_err());
        assert!(run_efficiency(&quick(360.0, 0.05, &[], 10)).is_err());
        assert!(run_efficiency(&quick(360.0, 0.05, &[Method::WeightedAf], 10)).is_err());
    }

    #[test]
    fn zero_noise_report_has_unit_efficiency() {
        let r = EfficiencyReport::zero_noise(&quick(90.0, 0.0, &Method::STANDARD, 1)).unwrap();
        assert!(r.methods.iter().all(|m| m.efficiency == 1.0 && m.failures == 0));
        assert!(r.note.is_some());
    }

    #[test]
    fn report_round_trips_through_csv_and_json() {
        let r = run_efficiency(&quick(90.0, 0.05, &TABLE_METHODS, 50)).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("method,target,arc_deg,n,spacing,noise,sigma,trials,seed,E,"));
        assert_eq!(EfficiencyReport::from_csv(&csv).unwrap(), r);
        assert_eq!(EfficiencyReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn zero_sigma_has_no_bias() {
        let cfg = quick(180.0, 0.0, &[Method::Af, Method::Pratt], 4);
        let scan = run_bias_scan(&cfg, &[0.0, 0.01, 0.1]).unwrap();
        for m in &scan.methods {
            assert!(m.points[0].norm <= 1e-12, "{:?}", m.points[0]);
        }
    }

    #[test]
    fn af_shrinks_circles() {
        let cfg = quick(180.0, 0.0, &[Method::Af], 4000);
        let scan = run_bias_scan(&cfg, &[0.01, 0.05, 0.1]).unwrap();
        assert!(scan.methods[0].points[1].bias[2] < 0.0);
    }

    #[test]
    fn slope_of_a_power_law() {
        let x: Vec<f64> = [1.0f64, 2.0, 5.0, 10.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.3).collect();
        assert!((fit_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn sweep_marks_failed_cells_and_round_trips() {
        let spec = SweepSpec { arc_min_deg: 10.0, arc_max_deg: 40.0, arc_steps: 2, c_min: 0.01, c_max: 0.2, c_steps: 2 };
        let grid = run_sweep(&spec, &quick(10.0, 0.0, &[Method::Af, Method::Pratt], 100)).unwrap();
        assert_eq!(grid.values.len(), 2);
        assert_eq!(grid.values[0].len(), 2);
        assert_eq!(grid.values[0][0].len(), 2);
        let csv = grid.to_csv();
        assert!(csv.starts_with("arc_deg,c,method,E,failures\n"));
        assert_eq!(csv.lines().count(), 1 + 8);
        let back = EfficiencyGrid::from_csv(&csv, Target::Center).unwrap();
        assert_eq!(back, grid);

        let mut nan = grid.clone();
        nan.values[1][0][1] = f64::NAN;
        let back = EfficiencyGrid::from_json(&nan.to_json()).unwrap();
        assert!(back.values[1][0][1].is_nan());
        let back = EfficiencyGrid::from_csv(&nan.to_csv(), Target::Center).unwrap();
        assert!(back.values[1][0][1].is_nan());
    }

    #[test]
    fn sweep_rejects_bad_axes() {
        let base = quick(10.0, 0.0, &[Method::Af], 10);
        let bad = SweepSpec { arc_min_deg: 0.0, arc_max_deg: 40.0, arc_steps: 2, c_min: 0.01, c_max: 0.2, c_steps: 2 };
        assert!(run_sweep(&bad, &base).is_err());
        let bad = SweepSpec { arc_min_deg: 5.0, arc_steps: 1, ..bad };
        assert!(run_sweep(&bad, &base).is_err());
    }

    #[test]
    fn zero_noise_covariance_vanishes() {
        let cfg = quick(360.0, 0.0, &[Method::Pratt], 10);
        let cmp = compare_covariance(&cfg).unwrap();
        assert!(cmp.cartesian.iter().flatten().all(|v| v.abs() < 1e-28));
        assert!(cmp.radial.iter().flatten().all(|v| v.abs() < 1e-28));
    }
}
