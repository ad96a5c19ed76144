//! Circle-fitting estimators.
//!
//! All fitters work in a normalized local frame (data centered at its centroid
//! and scaled to unit RMS radius) and map the result back, which makes them
//! equivariant under translations, rotations and uniform scalings.
//!
//! | method | objective |
//! |---|---|
//! | [`fit_olsf`] | sum of squared orthogonal distances |
//! | [`fit_af`] | `sum [(x-a)^2 + (y-b)^2 - R^2]^2` (Kasa) |
//! | [`fit_pratt`] | `sum P^2` subject to `B^2 + C^2 - 4AD = 1` |
//! | [`fit_taubin`] | `sum P^2 / mean ||grad P||^2` |
//! | [`fit_graf`] | `sum P^2 / ||grad P||^2` |
//! | [`fit_weighted_af`] | `sum w P^2` for a user weight function |

mod algebraic;
mod geometric;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_algebraic, to_algebraic, AlgebraicCircleParams, CircleParams, Point2};

pub use algebraic::{fit_af, fit_graf, fit_pratt, fit_taubin, fit_weighted_af, fit_weighted_af_reduced};
pub use geometric::fit_olsf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLSF")]
    Olsf,
    #[serde(rename = "AF")]
    Af,
    Pratt,
    Taubin,
    #[serde(rename = "GRAF")]
    Graf,
    #[serde(rename = "WeightedAF")]
    WeightedAf,
}

impl Method {
    /// The five estimators that need no user-supplied weight.
    pub const STANDARD: [Method; 5] = [Method::Olsf, Method::Af, Method::Pratt, Method::Taubin, Method::Graf];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Olsf => "OLSF",
            Method::Af => "AF",
            Method::Pratt => "Pratt",
            Method::Taubin => "Taubin",
            Method::Graf => "GRAF",
            Method::WeightedAf => "WeightedAF",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("empty method list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "olsf" | "ols" | "geometric" => Ok(Method::Olsf),
            "af" | "kasa" => Ok(Method::Af),
            "pratt" => Ok(Method::Pratt),
            "taubin" => Ok(Method::Taubin),
            "graf" => Ok(Method::Graf),
            "weightedaf" | "weighted-af" | "weighted" => Ok(Method::WeightedAf),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub method: Method,
    /// Canonical output, normalized with `A >= 0`.
    pub params: AlgebraicCircleParams,
    /// Center-radius form; `None` when the fit is a line (`A = 0`).
    pub circle: Option<CircleParams>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    pub(crate) fn from_params(
        method: Method,
        params: AlgebraicCircleParams,
        objective: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
        Self { method, circle: from_algebraic(&params).ok(), params, objective, iterations, converged }
    }

    pub fn center(&self) -> Option<Point2> {
        self.circle.map(|c| c.center())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FitReportJson::from(self)).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: FitReportJson =
            serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line() as u64, message: e.to_string() })?;
        Ok(j.into())
    }
}

/// Flat JSON layout: `method, A, B, C, D, a, b, R, objective, iterations, converged`.
#[derive(Debug, Serialize, Deserialize)]
struct FitReportJson {
    method: Method,
    #[serde(rename = "A")]
    big_a: f64,
    #[serde(rename = "B")]
    big_b: f64,
    #[serde(rename = "C")]
    big_c: f64,
    #[serde(rename = "D")]
    big_d: f64,
    a: Option<f64>,
    b: Option<f64>,
    #[serde(rename = "R")]
    r: Option<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

impl From<&FitReport> for FitReportJson {
    fn from(r: &FitReport) -> Self {
        Self {
            method: r.method,
            big_a: r.params.a,
            big_b: r.params.b,
            big_c: r.params.c,
            big_d: r.params.d,
            a: r.circle.map(|c| c.a),
            b: r.circle.map(|c| c.b),
            r: r.circle.map(|c| c.r),
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

impl From<FitReportJson> for FitReport {
    fn from(j: FitReportJson) -> Self {
        let circle = match (j.a, j.b, j.r) {
            (Some(a), Some(b), Some(r)) => Some(CircleParams { a, b, r }),
            _ => None,
        };
        Self {
            method: j.method,
            params: AlgebraicCircleParams { a: j.big_a, b: j.big_b, c: j.big_c, d: j.big_d },
            circle,
            objective: j.objective,
            iterations: j.iterations,
            converged: j.converged,
        }
    }
}

type WeightFn = dyn Fn(Point2, &AlgebraicCircleParams) -> f64 + Send + Sync;

/// Weight `w(x, y; Theta)` of a weighted algebraic fit, evaluated on normalized
/// algebraic parameters.
#[derive(Clone)]
pub struct WeightFunction {
    name: String,
    f: Arc<WeightFn>,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction").field("name", &self.name).finish()
    }
}

impl WeightFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(Point2, &AlgebraicCircleParams) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// `w = 1`: the Pratt fit.
    pub fn unit() -> Self {
        Self::new("unit", |_, _| 1.0)
    }

    /// `w = 1/A^2`: the simple algebraic (Kasa) fit.
    pub fn inverse_a_squared() -> Self {
        Self::new("inverse-a-squared", |_, p| 1.0 / (p.a * p.a))
    }

    /// `w = 1/||grad_x P||^2`: the gradient-weighted fit.
    pub fn gradient() -> Self {
        Self::new("gradient", |pt, p| 1.0 / p.grad_norm_sq(pt))
    }

    /// `c * w`. The minimizer does not change.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.f.clone();
        Self::new(format!("{c}*{}", self.name), move |pt, p| c * inner(pt, p))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, pt: Point2, params: &AlgebraicCircleParams) -> f64 {
        (self.f)(pt, params)
    }

    /// Evaluates on every point and rejects non-positive or non-finite values.
    pub fn eval_all(&self, points: &[Point2], params: &AlgebraicCircleParams) -> Result<Vec<f64>> {
        points
            .iter()
            .enumerate()
            .map(|(index, &pt)| {
                let value = self.eval(pt, params);
                if value > 0.0 && value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::InvalidWeight { index, value })
                }
            })
            .collect()
    }
}

/// Fits with one of the five standard estimators using the default initialization.
pub fn fit(method: Method, points: &[Point2]) -> Result<FitReport> {
    match method {
        Method::Olsf => fit_olsf(points, None),
        Method::Af => fit_af(points),
        Method::Pratt => fit_pratt(points),
        Method::Taubin => fit_taubin(points),
        Method::Graf => fit_graf(points, None),
        Method::WeightedAf => Err(Error::InvalidInput("the weighted fit needs a weight function".into())),
    }
}

/// Affine frame `x' = (x - origin) / scale` used to condition the fits.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    origin: Point2,
    scale: f64,
}

impl Frame {
    pub(crate) fn for_points(points: &[Point2]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateConfiguration(format!("need at least 3 points, got {}", points.len())));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} is not finite")));
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
        let my = points.iter().map(|p| p.y).sum::<f64>() / n;
        let ms = points.iter().map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2)).sum::<f64>() / n;
        let scale = ms.sqrt();
        let spread = points.iter().map(|p| p.x.abs().max(p.y.abs())).fold(0.0, f64::max);
        if !(scale > 1e-14 * spread.max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateConfiguration("all points coincide".into()));
        }
        Ok(Self { origin: Point2::new(mx, my), scale })
    }

    pub(crate) fn to_local(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.origin.x) / self.scale, (p.y - self.origin.y) / self.scale)
    }

    pub(crate) fn local_points(&self, points: &[Point2]) -> Vec<Point2> {
        points.iter().map(|&p| self.to_local(p)).collect()
    }

    pub(crate) fn circle_to_local(&self, c: &CircleParams) -> CircleParams {
        CircleParams { a: (c.a - self.origin.x) / self.scale, b: (c.b - self.origin.y) / self.scale, r: c.r / self.scale }
    }

    pub(crate) fn circle_to_world(&self, c: &CircleParams) -> CircleParams {
        CircleParams {
            a: self.origin.x + self.scale * c.a,
            b: self.origin.y + self.scale * c.b,
            r: self.scale * c.r.abs(),
        }
    }

    /// World coefficients proportional to the local ones with a positive factor
    /// (no sign normalization), so that residuals vary continuously.
    pub(crate) fn raw_to_world(&self, p: &[f64; 4]) -> [f64; 4] {
        let [al, bl, cl, dl] = *p;
        let s = self.scale;
        let (mx, my) = (self.origin.x, self.origin.y);
        let a = al / (s * s);
        let b = bl / s - 2.0 * a * mx;
        let c = cl / s - 2.0 * a * my;
        let d = dl - (bl * mx + cl * my) / s + a * (mx * mx + my * my);
        // Scale by s so that a unit local discriminant maps to a unit world discriminant.
        [a * s, b * s, c * s, d * s]
    }

    pub(crate) fn params_to_world(&self, p: &[f64; 4]) -> Result<AlgebraicCircleParams> {
        let [a, b, c, d] = self.raw_to_world(p);
        AlgebraicCircleParams::normalized(a, b, c, d)
    }

    pub(crate) fn params_to_local(&self, p: &AlgebraicCircleParams) -> [f64; 4] {
        let s = self.scale;
        let (mx, my) = (self.origin.x, self.origin.y);
        // P_local(x') = P_world(m + s x') / s, which keeps the discriminant at one.
        let a = p.a * s;
        let b = p.b + 2.0 * p.a * mx;
        let c = p.c + 2.0 * p.a * my;
        let d = (p.eval(self.origin)) / s;
        [a, b, c, d]
    }
}

/// Initial local algebraic parameters: an explicit circle if given, else Taubin.
pub(crate) fn initial_local_params(frame: &Frame, local: &[Point2], init: Option<&CircleParams>) -> Result<[f64; 4]> {
    match init {
        Some(c) => Ok(frame.params_to_local(&to_algebraic(c)?)),
        None => algebraic::taubin_local(local),
    }
}
