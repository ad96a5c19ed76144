//! Circle parametrizations, true-point sampling on arcs and the two
//! functional noise models.
//!
//! Two parametrizations are used throughout the crate:
//!
//! * [`CircleParams`]: center `(a, b)` and radius `R`, i.e. `(x-a)^2 + (y-b)^2 - R^2 = 0`.
//! * [`AlgebraicCircleParams`]: `A(x^2+y^2) + Bx + Cy + D = 0` normalized by
//!   `B^2 + C^2 - 4AD = 1`. It stays bounded as the curvature vanishes and
//!   degenerates to the line `Bx + Cy + D = 0` at `A = 0`.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Tolerance on `B^2 + C^2 - 4AD - 1` for normalized algebraic parameters.
pub const CONSTRAINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Center-radius form of a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl CircleParams {
    pub fn new(a: f64, b: f64, r: f64) -> Result<Self> {
        ensure_finite("a", a)?;
        ensure_finite("b", b)?;
        ensure_finite("R", r)?;
        if r <= 0.0 {
            return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
        }
        Ok(Self { a, b, r })
    }

    pub const fn unit() -> Self {
        Self { a: 0.0, b: 0.0, r: 1.0 }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.a, self.b)
    }

    pub fn point_at(&self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(self.a + self.r * c, self.b + self.r * s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.r]
    }
}

/// Coefficients of `A(x^2+y^2) + Bx + Cy + D = 0` with `B^2 + C^2 - 4AD = 1`.
///
/// The constraint fixes the scale but not the sign; [`AlgebraicCircleParams::normalized`]
/// picks `A >= 0`, then `B >= 0` when `A = 0`, then `C > 0` when `A = B = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct AlgebraicCircleParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AlgebraicCircleParams {
    /// Scales arbitrary coefficients onto the constraint surface and fixes the sign.
    pub fn normalized(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        for (name, v) in [("A", a), ("B", b), ("C", c), ("D", d)] {
            ensure_finite(name, v)?;
        }
        let disc = b * b + c * c - 4.0 * a * d;
        if !(disc > 0.0) || !disc.is_finite() {
            return Err(Error::DegenerateConfiguration(format!(
                "B^2+C^2-4AD = {disc:e} is not positive; no real circle or line"
            )));
        }
        let mut scale = 1.0 / disc.sqrt();
        let flip = if a != 0.0 {
            a < 0.0
        } else if b != 0.0 {
            b < 0.0
        } else {
            c < 0.0
        };
        if flip {
            scale = -scale;
        }
        let p = Self { a: a * scale, b: b * scale, c: c * scale, d: d * scale };
        // One refinement step: the first division can leave a residual of a few ulps
        // relative to the largest coefficient.
        let disc = p.discriminant();
        let s = 1.0 / disc.sqrt();
        Ok(Self { a: p.a * s, b: p.b * s, c: p.c * s, d: p.d * s })
    }

    /// `B^2 + C^2 - 4AD`; equals one for normalized parameters.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b + self.c * self.c - 4.0 * self.a * self.d
    }

    pub fn constraint_residual(&self) -> f64 {
        (self.discriminant() - 1.0).abs()
    }

    /// Algebraic residual `P(x, y)`.
    pub fn eval(&self, p: Point2) -> f64 {
        self.a * (p.x * p.x + p.y * p.y) + self.b * p.x + self.c * p.y + self.d
    }

    /// `||grad_x P||^2 = (2Ax + B)^2 + (2Ay + C)^2`.
    pub fn grad_norm_sq(&self, p: Point2) -> f64 {
        let gx = 2.0 * self.a * p.x + self.b;
        let gy = 2.0 * self.a * p.y + self.c;
        gx * gx + gy * gy
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Same curve with the sign chosen so that the coefficient vector points
    /// the same way as `reference`.
    pub fn aligned_with(&self, reference: &Self) -> Self {
        let dot = self.a * reference.a + self.b * reference.b + self.c * reference.c + self.d * reference.d;
        if dot < 0.0 {
            Self { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
        } else {
            *self
        }
    }
}

pub fn to_algebraic(c: &CircleParams) -> Result<AlgebraicCircleParams> {
    CircleParams::new(c.a, c.b, c.r)?;
    let a = 0.5 / c.r;
    let p = AlgebraicCircleParams {
        a,
        b: -2.0 * a * c.a,
        c: -2.0 * a * c.b,
        // A(a^2 + b^2 - R^2) written to avoid cancellation when the center is near the curve.
        d: a * ((c.a * c.a + c.b * c.b) - c.r * c.r),
    };
    // The map satisfies the constraint exactly; any residual is evaluation
    // cancellation, and rescaling would only move R.
    Ok(p)
}

pub fn from_algebraic(p: &AlgebraicCircleParams) -> Result<CircleParams> {
    for (name, v) in [("A", p.a), ("B", p.b), ("C", p.c), ("D", p.d)] {
        ensure_finite(name, v)?;
    }
    if p.a == 0.0 {
        return Err(Error::LineCase);
    }
    let a = -p.b / (2.0 * p.a);
    let b = -p.c / (2.0 * p.a);
    let r = 1.0 / (2.0 * p.a.abs());
    if !(a.is_finite() && b.is_finite() && r.is_finite()) {
        return Err(Error::LineCase);
    }
    CircleParams::new(a, b, r)
}

/// `sqrt((x-a)^2 + (y-b)^2) - R`: positive outside, negative inside.
pub fn signed_distance(pt: Point2, c: &CircleParams) -> f64 {
    (pt.x - c.a).hypot(pt.y - c.b) - c.r
}

/// How `n` equally spaced points cover a partial arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    /// Both endpoints included, spacing `alpha / (n - 1)`.
    #[default]
    Endpoints,
    /// The arc cut into `n` equal pieces with a point at the middle of each,
    /// spacing `alpha / n`; the rule a full circle uses.
    Cells,
}

impl std::str::FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "endpoints" => Ok(Self::Endpoints),
            "cells" => Ok(Self::Cells),
            other => Err(Error::InvalidInput(format!("unknown spacing '{other}' (expected endpoints or cells)"))),
        }
    }
}

impl std::fmt::Display for Spacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Endpoints => "endpoints",
            Self::Cells => "cells",
        })
    }
}

/// Points on a circular arc of a given angular extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub circle: CircleParams,
    /// Angular extent in radians, `(0, 2pi]`.
    pub arc_angle: f64,
    pub n: usize,
    /// Polar angle of the arc midpoint.
    pub center_angle: f64,
    #[serde(default)]
    pub spacing: Spacing,
}

impl ArcSpec {
    /// Arc on the unit circle centered at the origin, midpoint at angle pi/2.
    pub fn unit_arc_deg(arc_deg: f64, n: usize) -> Self {
        Self {
            circle: CircleParams::unit(),
            arc_angle: arc_deg.to_radians(),
            n,
            center_angle: PI / 2.0,
            spacing: Spacing::Endpoints,
        }
    }

    pub fn with_spacing(self, spacing: Spacing) -> Self {
        Self { spacing, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        CircleParams::new(self.circle.a, self.circle.b, self.circle.r)?;
        ensure_finite("center_angle", self.center_angle)?;
        if self.n < 3 {
            return Err(Error::InvalidInput(format!("need at least 3 points, got {}", self.n)));
        }
        if !(self.arc_angle > 0.0 && self.arc_angle <= TAU + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "arc angle must lie in (0, 2pi], got {}",
                self.arc_angle
            )));
        }
        Ok(())
    }

    pub fn is_full_circle(&self) -> bool {
        self.arc_angle >= TAU - 1e-12
    }
}

/// `n` equally spaced points; a full circle omits the duplicated endpoint,
/// a partial arc follows `spec.spacing`.
pub fn sample_true_points(spec: &ArcSpec) -> Result<Vec<Point2>> {
    spec.validate()?;
    let n = spec.n;
    let angles: Vec<f64> = if spec.is_full_circle() {
        (0..n).map(|j| spec.center_angle + TAU * j as f64 / n as f64).collect()
    } else {
        let half = 0.5 * spec.arc_angle;
        let (start, step) = match spec.spacing {
            Spacing::Endpoints => (spec.center_angle - half, spec.arc_angle / (n - 1) as f64),
            Spacing::Cells => {
                let step = spec.arc_angle / n as f64;
                (spec.center_angle - half + 0.5 * step, step)
            }
        };
        (0..n).map(|j| start + step * j as f64).collect()
    };
    Ok(angles.into_iter().map(|t| spec.circle.point_at(t)).collect())
}

/// Sagitta of the arc: `R(1 - cos(alpha/2))`, and the diameter for a full circle.
pub fn arc_height(spec: &ArcSpec) -> f64 {
    if spec.is_full_circle() {
        2.0 * spec.circle.r
    } else {
        // 2 sin^2(alpha/4) avoids the cancellation in 1 - cos for small arcs.
        let s = (0.25 * spec.arc_angle).sin();
        2.0 * spec.circle.r * s * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Isotropic 2-D Gaussian, covariance `sigma^2 I`.
    Cartesian,
    /// Gaussian displacement along the curve normal at the true point.
    Radial,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartesian" => Ok(Self::Cartesian),
            "radial" => Ok(Self::Radial),
            other => Err(Error::InvalidInput(format!("unknown noise model '{other}'"))),
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cartesian => "cartesian",
            Self::Radial => "radial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("sigma", self.sigma)?;
        if self.sigma < 0.0 {
            return Err(Error::InvalidInput(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Independent generator for point `index` under `seed`. Streams never depend on
/// the order in which points (or trials) are processed.
pub fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Moves `pt` by `xi` along the outward radial direction of `circle` at `pt`.
pub fn radial_displace(pt: Point2, circle: &CircleParams, xi: f64) -> Point2 {
    let dx = pt.x - circle.a;
    let dy = pt.y - circle.b;
    let len = dx.hypot(dy);
    Point2::new(pt.x + xi * dx / len, pt.y + xi * dy / len)
}

/// Adds noise to true points. For the radial model the normal is taken at the
/// true point, so every input must lie on `circle`.
pub fn perturb(points: &[Point2], circle: &CircleParams, noise: &NoiseSpec) -> Result<Vec<Point2>> {
    noise.validate()?;
    if noise.model == NoiseModel::Radial {
        for (index, p) in points.iter().enumerate() {
            let distance = signed_distance(*p, circle);
            if !(distance.abs() <= 1e-9 * circle.r) {
                return Err(Error::OffCurve { index, distance });
            }
        }
    }
    if noise.sigma == 0.0 {
        return Ok(points.to_vec());
    }
    let out = points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut rng = point_rng(noise.seed, i as u64);
            match noise.model {
                NoiseModel::Cartesian => {
                    let ex: f64 = StandardNormal.sample(&mut rng);
                    let ey: f64 = StandardNormal.sample(&mut rng);
                    Point2::new(p.x + noise.sigma * ex, p.y + noise.sigma * ey)
                }
                NoiseModel::Radial => {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    radial_displace(p, circle, noise.sigma * xi)
                }
            }
        })
        .collect();
    Ok(out)
}
