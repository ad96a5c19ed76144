//! Kanatani-Cramer-Rao lower bound for circle parameters and the asymptotic
//! covariance factor of weighted algebraic fits.
//!
//! Parameter order is `(a, b, R)` everywhere. All matrices are the `D` factors;
//! the covariance scale is `sigma^2 D`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::WeightFunction;
use crate::geometry::{signed_distance, to_algebraic, CircleParams, Point2};
use crate::linalg::spd_inverse;

pub const PARAMETER_ORDER: [&str; 3] = ["a", "b", "R"];

/// Implicit curve `P(x, y; Theta) = 0` with `K` parameters.
pub trait ImplicitModel<const K: usize> {
    fn grad_theta(&self, pt: Point2) -> SVector<f64, K>;
    fn grad_x(&self, pt: Point2) -> Vector2<f64>;
}

/// `P = (x-a)^2 + (y-b)^2 - R^2` at a fixed `(a, b, R)`.
impl ImplicitModel<3> for CircleParams {
    fn grad_theta(&self, pt: Point2) -> Vector3<f64> {
        -2.0 * Vector3::new(pt.x - self.a, pt.y - self.b, self.r)
    }

    fn grad_x(&self, pt: Point2) -> Vector2<f64> {
        2.0 * Vector2::new(pt.x - self.a, pt.y - self.b)
    }
}

/// `sum (grad_Theta P)(grad_Theta P)^T / ||grad_x P||^2` over the true points.
pub fn kcr_information<M: ImplicitModel<K>, const K: usize>(model: &M, true_points: &[Point2]) -> SMatrix<f64, K, K> {
    true_points.iter().fold(SMatrix::zeros(), |acc, &pt| {
        let g = model.grad_theta(pt);
        acc + g * g.transpose() / model.grad_x(pt).norm_squared()
    })
}

/// Sandwich `M^-1 S M^-1` with `M = sum w g g^T`, `S = sum w^2 ||grad_x P||^2 g g^T`.
pub fn sandwich_covariance<M: ImplicitModel<K>, const K: usize>(
    model: &M,
    true_points: &[Point2],
    weights: &[f64],
) -> Result<SMatrix<f64, K, K>> {
    let mut inner = SMatrix::<f64, K, K>::zeros();
    let mut outer = SMatrix::<f64, K, K>::zeros();
    for (&pt, &w) in true_points.iter().zip(weights) {
        let g = model.grad_theta(pt);
        let ggt = g * g.transpose();
        inner += ggt * w;
        outer += ggt * (w * w * model.grad_x(pt).norm_squared());
    }
    let inv = spd_inverse(&inner)?;
    let d2 = inv * outer * inv;
    Ok(0.5 * (d2 + d2.transpose()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundMatrices {
    pub d_min: Matrix3<f64>,
    pub d2: Option<Matrix3<f64>>,
    pub sigma: f64,
}

impl BoundMatrices {
    fn new(d_min: Matrix3<f64>) -> Self {
        Self { d_min, d2: None, sigma: 1.0 }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// `C_min = sigma^2 D_min`.
    pub fn c_min(&self) -> Matrix3<f64> {
        self.d_min * (self.sigma * self.sigma)
    }

    /// Lower bound on `E[(a^ - a)^2 + (b^ - b)^2]`: `sigma^2 (D_11 + D_22)`.
    pub fn center_bound(&self) -> f64 {
        self.sigma * self.sigma * (self.d_min[(0, 0)] + self.d_min[(1, 1)])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&BoundMatricesJson::from(self)).expect("bounds serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: BoundMatricesJson =
            serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line() as u64, message: e.to_string() })?;
        Ok(Self { d_min: from_rows(&j.d_min), d2: j.d2.as_ref().map(from_rows), sigma: j.sigma })
    }
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundMatricesJson {
    parameter_order: [String; 3],
    sigma: f64,
    d_min: [[f64; 3]; 3],
    c_min: [[f64; 3]; 3],
    d2: Option<[[f64; 3]; 3]>,
}

impl From<&BoundMatrices> for BoundMatricesJson {
    fn from(b: &BoundMatrices) -> Self {
        Self {
            parameter_order: PARAMETER_ORDER.map(String::from),
            sigma: b.sigma,
            d_min: rows(&b.d_min),
            c_min: rows(&b.c_min()),
            d2: b.d2.as_ref().map(rows),
        }
    }
}

fn check_true_points(true_points: &[Point2], circle: &CircleParams) -> Result<()> {
    CircleParams::new(circle.a, circle.b, circle.r)?;
    if true_points.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("need at least 3 true points, got {}", true_points.len())));
    }
    for (index, &p) in true_points.iter().enumerate() {
        let distance = signed_distance(p, circle);
        if !(distance.abs() <= 1e-9 * circle.r) {
            return Err(Error::OffCurve { index, distance });
        }
    }
    Ok(())
}

/// Inverse of the moment matrix of `u_i = (x_i - a)/R`, `v_i = (y_i - b)/R`:
/// `[[Su^2, Suv, Su], [Suv, Sv^2, Sv], [Su, Sv, n]]^-1`.
pub fn kcr_circle(true_points: &[Point2], circle: &CircleParams) -> Result<BoundMatrices> {
    check_true_points(true_points, circle)?;
    let mut m = Matrix3::zeros();
    for p in true_points {
        let w = Vector3::new((p.x - circle.a) / circle.r, (p.y - circle.b) / circle.r, 1.0);
        m += w * w.transpose();
    }
    Ok(BoundMatrices::new(spd_inverse(&m)?))
}

/// Same bound evaluated from the gradients of the implicit equation.
pub fn kcr_generic(true_points: &[Point2], circle: &CircleParams) -> Result<BoundMatrices> {
    check_true_points(true_points, circle)?;
    Ok(BoundMatrices::new(spd_inverse(&kcr_information(circle, true_points))?))
}

/// Asymptotic covariance factor `D_2` of the weighted algebraic fit with weight `w`,
/// together with `D_min`. Weights are evaluated at the true points.
pub fn d2_weighted(true_points: &[Point2], circle: &CircleParams, w: &WeightFunction) -> Result<BoundMatrices> {
    let mut bounds = kcr_generic(true_points, circle)?;
    let params = to_algebraic(circle)?;
    let weights = w.eval_all(true_points, &params)?;
    bounds.d2 = Some(sandwich_covariance(circle, true_points, &weights)?);
    Ok(bounds)
}

/// Number of on-curve sample points used by [`efficiency_condition`].
const CONDITION_SAMPLES: usize = 64;

/// Whether `w ||grad_x P||^2` is constant along the circle up to relative
/// variation `tol`, i.e. whether the weighted fit attains the bound.
pub fn efficiency_condition(w: &WeightFunction, circle: &CircleParams, tol: f64) -> bool {
    let Ok(params) = to_algebraic(circle) else {
        return false;
    };
    let values: Vec<f64> = (0..CONDITION_SAMPLES)
        .map(|j| {
            let pt = circle.point_at(std::f64::consts::TAU * j as f64 / CONDITION_SAMPLES as f64);
            w.eval(pt, &params) * circle.grad_x(pt).norm_squared()
        })
        .collect();
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return false;
    }
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean <= tol
}

/// Delta-method bound on `Var(A^)/sigma^2`: `J D_min J^T`, `J = dA/d(a, b, R) = (0, 0, -1/(2R^2))`.
pub fn kcr_for_a(true_points: &[Point2], circle: &CircleParams) -> Result<f64> {
    let d = kcr_circle(true_points, circle)?.d_min;
    let j = Vector3::new(0.0, 0.0, -0.5 / (circle.r * circle.r));
    Ok((j.transpose() * d * j)[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_true_points, ArcSpec};
    use crate::linalg::min_eigenvalue;

    fn rel_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    /// Direct summation of the moment matrix, inverted by cofactors.
    fn oracle_dmin(pts: &[Point2], c: &CircleParams) -> Matrix3<f64> {
        let (mut suu, mut svv, mut suv, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in pts {
            let (u, v) = ((p.x - c.a) / c.r, (p.y - c.b) / c.r);
            suu += u * u;
            svv += v * v;
            suv += u * v;
            su += u;
            sv += v;
        }
        let n = pts.len() as f64;
        let m = Matrix3::new(suu, suv, su, suv, svv, sv, su, sv, n);
        let det = m.determinant();
        Matrix3::from_fn(|i, j| {
            let minor = m.remove_row(j).remove_column(i);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant() / det
        })
    }

    #[test]
    fn full_circle_closed_form() {
        let spec = ArcSpec::unit_arc_deg(360.0, 20);
        let pts = sample_true_points(&spec).unwrap();
        let want = Matrix3::from_diagonal(&Vector3::new(0.1, 0.1, 0.05));
        let d = kcr_circle(&pts, &spec.circle).unwrap().d_min;
        assert!((d - want).abs().max() <= 1e-12, "{d}");
        assert!((oracle_dmin(&pts, &spec.circle) - want).abs().max() <= 1e-12);
        assert_eq!(d, d.transpose());
        let g = kcr_generic(&pts, &spec.circle).unwrap().d_min;
        assert!((g - want).abs().max() <= 1e-12);
    }

    #[test]
    fn generic_matches_closed_form_on_arcs() {
        for (deg, n, mid) in [(45.0, 5, 0.3), (120.0, 9, 2.0), (200.0, 13, -1.0)] {
            let spec = ArcSpec { circle: CircleParams::new(1.5, -0.5, 2.5).unwrap(), arc_angle: f64::to_radians(deg), n, center_angle: mid, spacing: Default::default() };
            let pts = sample_true_points(&spec).unwrap();
            let c = kcr_circle(&pts, &spec.circle).unwrap().d_min;
            let g = kcr_generic(&pts, &spec.circle).unwrap().d_min;
            assert!(rel_err(&g, &c) <= 1e-12);
            assert!(rel_err(&oracle_dmin(&pts, &spec.circle), &c) <= 1e-10);
        }
    }

    #[test]
    fn rotation_invariants() {
        let spec = ArcSpec::unit_arc_deg(100.0, 10);
        let pts = sample_true_points(&spec).unwrap();
        let d = kcr_circle(&pts, &spec.circle).unwrap().d_min;
        let rotated = ArcSpec { center_angle: spec.center_angle + 0.7, ..spec };
        let rpts = sample_true_points(&rotated).unwrap();
        let dr = kcr_circle(&rpts, &rotated.circle).unwrap().d_min;
        assert!((d[(2, 2)] - dr[(2, 2)]).abs() <= 1e-12 * d[(2, 2)]);
        assert!((d[(0, 0)] + d[(1, 1)] - dr[(0, 0)] - dr[(1, 1)]).abs() <= 1e-12 * d.trace());
    }

    #[test]
    fn conditioning_worsens_on_shorter_arcs() {
        let mut prev = 0.0;
        for deg in [180.0, 150.0, 120.0, 90.0, 60.0, 30.0] {
            let spec = ArcSpec::unit_arc_deg(deg, 20);
            let pts = sample_true_points(&spec).unwrap();
            let info = kcr_information(&spec.circle, &pts);
            let (values, _) = crate::linalg::sym_eigen(&info);
            let cond = values[2] / values[0];
            assert!(cond > prev, "{deg}: {cond} <= {prev}");
            prev = cond;
        }
    }

    #[test]
    fn degenerate_inputs() {
        let c = CircleParams::unit();
        let p = Point2::new(1.0, 0.0);
        assert!(matches!(kcr_circle(&[p, p], &c), Err(Error::DegenerateConfiguration(_))));
        assert!(matches!(kcr_circle(&[p, p, p], &c), Err(Error::DegenerateConfiguration(_))));
        assert!(matches!(kcr_circle(&[p, p, Point2::new(0.0, 0.0)], &c), Err(Error::OffCurve { index: 2, .. })));
    }

    #[test]
    fn efficient_weights_attain_bound() {
        let spec = ArcSpec { circle: CircleParams::new(0.4, 0.2, 1.7).unwrap(), ..ArcSpec::unit_arc_deg(150.0, 15) };
        let pts = sample_true_points(&spec).unwrap();
        let r = spec.circle.r;
        for w in [
            WeightFunction::new("1/4R^2", move |_, _| 1.0 / (4.0 * r * r)),
            WeightFunction::unit(),
            WeightFunction::gradient(),
        ] {
            let b = d2_weighted(&pts, &spec.circle, &w).unwrap();
            assert!(rel_err(&b.d2.unwrap(), &b.d_min) <= 1e-12, "{}", w.name());
        }
    }

    #[test]
    fn varying_weight_is_strictly_inefficient() {
        let spec = ArcSpec::unit_arc_deg(360.0, 20);
        let pts = sample_true_points(&spec).unwrap();
        let w = WeightFunction::new("1+x^2", |pt, _| 1.0 + pt.x * pt.x);
        let b = d2_weighted(&pts, &spec.circle, &w).unwrap();
        let gap = b.d2.unwrap() - b.d_min;
        assert!(min_eigenvalue(&gap) > 1e-6 * b.d_min.trace(), "{}", min_eigenvalue(&gap));
    }

    #[test]
    fn efficiency_condition_examples() {
        let c = CircleParams::new(0.3, -0.2, 1.4).unwrap();
        assert!(efficiency_condition(&WeightFunction::unit(), &c, 1e-9));
        let inv_sq = WeightFunction::new("1/|x-c|^2", |pt, p| {
            let c = crate::geometry::from_algebraic(p).unwrap();
            1.0 / ((pt.x - c.a).powi(2) + (pt.y - c.b).powi(2))
        });
        assert!(efficiency_condition(&inv_sq, &c, 1e-9));
        assert!(efficiency_condition(&WeightFunction::gradient(), &c, 1e-9));
        assert!(!efficiency_condition(&WeightFunction::new("1+x^2", |pt, _| 1.0 + pt.x * pt.x), &c, 1e-9));
    }

    #[test]
    fn bound_for_a() {
        let spec = ArcSpec::unit_arc_deg(360.0, 20);
        let pts = sample_true_points(&spec).unwrap();
        assert!((kcr_for_a(&pts, &spec.circle).unwrap() - 0.0125).abs() <= 1e-15);
        let big = ArcSpec { circle: CircleParams::new(0.0, 0.0, 3.0).unwrap(), ..spec };
        let big_pts = sample_true_points(&big).unwrap();
        let ratio = kcr_for_a(&big_pts, &big.circle).unwrap() / kcr_for_a(&pts, &spec.circle).unwrap();
        assert!((ratio - 3f64.powi(-4)).abs() <= 1e-14);
    }

    #[test]
    fn adding_points_shrinks_bound() {
        let spec = ArcSpec::unit_arc_deg(90.0, 10);
        let pts = sample_true_points(&spec).unwrap();
        let extra = sample_true_points(&ArcSpec::unit_arc_deg(200.0, 7)).unwrap();
        let small = kcr_circle(&pts, &spec.circle).unwrap().d_min;
        let all: Vec<Point2> = pts.iter().chain(&extra).copied().collect();
        let large = kcr_circle(&all, &spec.circle).unwrap().d_min;
        assert!(min_eigenvalue(&(small - large)) >= -1e-12);
    }

    #[test]
    fn json_round_trip() {
        let spec = ArcSpec::unit_arc_deg(360.0, 20);
        let pts = sample_true_points(&spec).unwrap();
        let b = d2_weighted(&pts, &spec.circle, &WeightFunction::unit()).unwrap().with_sigma(0.1);
        let json = b.to_json();
        assert!(json.contains("\"parameter_order\""));
        assert_eq!(BoundMatrices::from_json(&json).unwrap(), b);
    }
}
