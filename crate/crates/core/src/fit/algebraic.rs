use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4};

use super::{initial_local_params, FitReport, Frame, Method, WeightFunction};
use crate::error::{Error, Result};
use crate::geometry::{AlgebraicCircleParams, CircleParams, Point2};
use crate::linalg::{sym_eigen, RowQr};

/// Condition number of the normal matrix above which a linear fit is rejected.
const MAX_NORMAL_CONDITION: f64 = 1e12;
/// Relative singular value below which the data are treated as exactly on a curve.
const EXACT_FIT_RTOL: f64 = 1e-12;
const IRLS_TOL: f64 = 1e-12;
const IRLS_MAX_ITER: usize = 50;
/// Added to `||grad P||^2` in the GRAF weights (`1e-12 R^2` in center-radius terms).
const GRAF_REGULARIZATION: f64 = 1e-12;

fn z(p: Point2) -> f64 {
    p.x * p.x + p.y * p.y
}

fn normalize_raw(p: [f64; 4]) -> Result<[f64; 4]> {
    let disc = p[1] * p[1] + p[2] * p[2] - 4.0 * p[0] * p[3];
    if !(disc > 0.0 && disc.is_finite()) {
        return Err(Error::DegenerateConfiguration(format!("fit produced B^2+C^2-4AD = {disc:e}")));
    }
    let s = disc.sqrt();
    Ok(p.map(|v| v / s))
}

/// Sign-independent distance between two coefficient vectors.
fn param_change(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    let plus: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
    let minus: f64 = p.iter().zip(q).map(|(a, b)| (a + b).powi(2)).sum();
    plus.min(minus).sqrt()
}

fn align(p: [f64; 4], reference: &[f64; 4]) -> [f64; 4] {
    let dot: f64 = p.iter().zip(reference).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        p.map(|v| -v)
    } else {
        p
    }
}

/// Kasa fit in local coordinates: least squares for `z + Bx + Cy + D = 0`.
fn af_local(local: &[Point2]) -> Result<[f64; 4]> {
    let mut qr = RowQr::<4>::default();
    for &p in local {
        qr.push([p.x, p.y, 1.0, -z(p)]);
    }
    let r = qr.r();
    let r11: Matrix3<f64> = r.fixed_view::<3, 3>(0, 0).into_owned();
    let rhs: Vector3<f64> = r.fixed_view::<3, 1>(0, 3).into_owned();
    let sv = r11.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || (smax / smin).powi(2) > MAX_NORMAL_CONDITION {
        return Err(Error::DegenerateConfiguration("normal matrix is singular (collinear points?)".into()));
    }
    let sol = r11
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::DegenerateConfiguration("triangular solve failed".into()))?;
    let (b, c, d) = (sol[0], sol[1], sol[2]);
    let r2 = 0.25 * (b * b + c * c) - d;
    if !(r2 > 0.0) {
        return Err(Error::DegenerateConfiguration(format!("algebraic fit gave R^2 = {r2:e}")));
    }
    normalize_raw([1.0, b, c, d])
}

/// Minimizes `sum w_i P_i^2` subject to `B^2 + C^2 - 4AD = 1` in local coordinates.
///
/// With `Z = U S V^T` and `Y = V S V^T`, the constrained problem `Z^T Z a = eta N a`
/// becomes the symmetric eigenproblem `Y N^-1 Y b = eta b`, `a = Y^-1 b`; the
/// smallest positive `eta` is the minimum.
pub(super) fn pratt_local(local: &[Point2], weights: Option<&[f64]>) -> Result<[f64; 4]> {
    let mut qr = RowQr::<4>::default();
    for (i, &p) in local.iter().enumerate() {
        let sw = weights.map_or(1.0, |w| w[i].sqrt());
        qr.push([sw * z(p), sw * p.x, sw * p.y, sw]);
    }
    let svd = qr.r().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let smax = s.max();
    let (imin, smin) = s.argmin();
    if !(smax > 0.0) {
        return Err(Error::DegenerateConfiguration("empty design matrix".into()));
    }
    let v: Matrix4<f64> = v_t.transpose();
    let coeffs: Vector4<f64> = if smin < EXACT_FIT_RTOL * smax {
        v.column(imin).into_owned()
    } else {
        let y = v * Matrix4::from_diagonal(&s) * v_t;
        let n_inv = Matrix4::new(
            0.0, 0.0, 0.0, -0.5, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            -0.5, 0.0, 0.0, 0.0,
        );
        let q = y * n_inv * y;
        let (values, vectors) = sym_eigen(&q);
        let scale = values.abs().max();
        let pick = (0..4)
            .filter(|&i| values[i] >= -1e-14 * scale)
            .min_by(|&i, &j| values[i].abs().total_cmp(&values[j].abs()))
            .ok_or_else(|| Error::DegenerateConfiguration("no admissible eigenvalue".into()))?;
        let s_inv = Matrix4::from_diagonal(&s.map(|x| 1.0 / x));
        v * s_inv * v_t * vectors.column(pick)
    };
    normalize_raw([coeffs[0], coeffs[1], coeffs[2], coeffs[3]])
}

/// Taubin fit in local (centroid-centered) coordinates.
///
/// With `x, y` centered the optimal `D` is `-A mean(z)`, and Taubin's normalization
/// `4 mean(z) A^2 + B^2 + C^2 = 1` turns the problem into the smallest right
/// singular vector of the `n x 3` matrix `[(z - mean z) / (2 sqrt(mean z)), x, y]`.
/// The same normalization equals `B^2 + C^2 - 4AD` at `D = -A mean(z)`.
pub(super) fn taubin_local(local: &[Point2]) -> Result<[f64; 4]> {
    let n = local.len() as f64;
    let zmean = local.iter().map(|&p| z(p)).sum::<f64>() / n;
    if !(zmean > 0.0) {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    let root = zmean.sqrt();
    let mut qr = RowQr::<3>::default();
    for &p in local {
        qr.push([(z(p) - zmean) / (2.0 * root), p.x, p.y]);
    }
    let svd = qr.r().svd(false, true);
    let v_t: SMatrix<f64, 3, 3> = svd.v_t.expect("requested V^T");
    let (imin, _) = svd.singular_values.argmin();
    let row = v_t.row(imin);
    let a = row[0] / (2.0 * root);
    normalize_raw([a, row[1], row[2], -zmean * a])
}

fn objective_sum(points: &[Point2], f: impl Fn(Point2) -> f64) -> f64 {
    points.iter().map(|&p| f(p)).sum()
}

fn kasa_objective(points: &[Point2], c: &CircleParams) -> f64 {
    objective_sum(points, |p| ((p.x - c.a).powi(2) + (p.y - c.b).powi(2) - c.r * c.r).powi(2))
}

/// Simple algebraic fit (Kasa): closed-form linear least squares.
pub fn fit_af(points: &[Point2]) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let params = frame.params_to_world(&af_local(&local)?)?;
    let mut report = FitReport::from_params(Method::Af, params, 0.0, 1, true);
    report.objective = report.circle.map_or(f64::INFINITY, |c| kasa_objective(points, &c));
    Ok(report)
}

/// Pratt fit: `sum P^2` under `B^2 + C^2 - 4AD = 1`. Lines come out as `A = 0`.
pub fn fit_pratt(points: &[Point2]) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let params = frame.params_to_world(&pratt_local(&local, None)?)?;
    let objective = objective_sum(points, |p| params.eval(p).powi(2));
    Ok(FitReport::from_params(Method::Pratt, params, objective, 1, true))
}

/// Taubin fit: `sum P^2` divided by the mean of `||grad P||^2`.
pub fn fit_taubin(points: &[Point2]) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let params = frame.params_to_world(&taubin_local(&local)?)?;
    let n = points.len() as f64;
    let denom = objective_sum(points, |p| params.grad_norm_sq(p)) / n;
    let objective = objective_sum(points, |p| params.eval(p).powi(2)) / denom;
    Ok(FitReport::from_params(Method::Taubin, params, objective, 1, true))
}

fn local_grad_norm_sq(p: &[f64; 4], pt: Point2) -> f64 {
    let gx = 2.0 * p[0] * pt.x + p[1];
    let gy = 2.0 * p[0] * pt.y + p[2];
    gx * gx + gy * gy
}

struct Irls {
    params: [f64; 4],
    iterations: usize,
    converged: bool,
}

/// Freeze-weights iteration: evaluate weights at the current iterate, solve the
/// weighted Pratt problem, repeat until the parameters stop moving.
fn irls(
    local: &[Point2],
    start: [f64; 4],
    mut weights_at: impl FnMut(&[f64; 4]) -> Result<Vec<f64>>,
) -> Result<Irls> {
    let mut params = start;
    for it in 1..=IRLS_MAX_ITER {
        let w = weights_at(&params)?;
        let next = align(pratt_local(local, Some(&w))?, &params);
        let change = param_change(&next, &params);
        params = next;
        if change <= IRLS_TOL {
            return Ok(Irls { params, iterations: it, converged: true });
        }
    }
    Ok(Irls { params, iterations: IRLS_MAX_ITER, converged: false })
}

/// Gradient-weighted algebraic fit by iteratively reweighted Pratt solves with
/// weights `1/||grad_x P||^2` frozen at each iterate. Seeded from Taubin unless
/// `init` is given.
pub fn fit_graf(points: &[Point2], init: Option<&CircleParams>) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let start = initial_local_params(&frame, &local, init)?;
    let run = irls(&local, start, |p| {
        Ok(local.iter().map(|&pt| 1.0 / (local_grad_norm_sq(p, pt) + GRAF_REGULARIZATION)).collect())
    })?;
    let params = frame.params_to_world(&run.params)?;
    let objective = objective_sum(points, |p| params.eval(p).powi(2) / params.grad_norm_sq(p));
    Ok(FitReport::from_params(Method::Graf, params, objective, run.iterations, run.converged))
}

fn world_weights(
    frame: &Frame,
    points: &[Point2],
    w: &WeightFunction,
    local_params: &[f64; 4],
) -> Result<Vec<f64>> {
    let world = frame.params_to_world(local_params)?;
    w.eval_all(points, &world)
}

fn weighted_objective(points: &[Point2], w: &WeightFunction, params: &AlgebraicCircleParams) -> Result<f64> {
    let weights = w.eval_all(points, params)?;
    Ok(points.iter().zip(weights).map(|(&p, wi)| wi * params.eval(p).powi(2)).sum())
}

/// Solves the reduced estimating equation `sum w_i P_i grad P_i = 0` (the `grad w`
/// term dropped) by freeze-weights iteration.
pub fn fit_weighted_af_reduced(
    points: &[Point2],
    w: &WeightFunction,
    init: Option<&CircleParams>,
) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let start = match init {
        Some(_) => initial_local_params(&frame, &local, init)?,
        None => pratt_local(&local, None)?,
    };
    let run = irls(&local, start, |p| world_weights(&frame, points, w, p))?;
    let params = frame.params_to_world(&run.params)?;
    let objective = weighted_objective(points, w, &params)?;
    Ok(FitReport::from_params(Method::WeightedAf, params, objective, run.iterations, run.converged))
}

/// Weighted algebraic fit `sum w(x_i; Theta) P_i^2 -> min` under `B^2 + C^2 - 4AD = 1`.
///
/// The freeze-weights solution of the reduced equation is refined by a damped
/// Gauss-Newton search on the constraint surface that keeps the dependence of
/// the weights on the parameters. With `w = 1` this is the Pratt fit and with
/// `w = 1/A^2` the Kasa fit.
pub fn fit_weighted_af(points: &[Point2], w: &WeightFunction, init: Option<&CircleParams>) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let start = match init {
        Some(_) => initial_local_params(&frame, &local, init)?,
        None => pratt_local(&local, None)?,
    };
    let stage1 = irls(&local, start, |p| world_weights(&frame, points, w, p))?;
    let stage2 = refine_full_objective(&frame, points, w, stage1.params)?;
    let params = frame.params_to_world(&stage2.params)?;
    let objective = weighted_objective(points, w, &params)?;
    Ok(FitReport::from_params(
        Method::WeightedAf,
        params,
        objective,
        stage1.iterations + stage2.iterations,
        stage2.converged,
    ))
}

const REFINE_MAX_ITER: usize = 100;
const REFINE_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;

/// Orthonormal basis of the tangent space `{t : t^T N p = 0}` of the constraint surface.
fn tangent_basis(p: &[f64; 4]) -> [Vector4<f64>; 3] {
    let g = Vector4::new(-2.0 * p[3], p[1], p[2], -2.0 * p[0]).normalize();
    let mut basis: Vec<Vector4<f64>> = Vec::with_capacity(3);
    let mut candidates: Vec<Vector4<f64>> = (0..4)
        .map(|i| {
            let e = Vector4::ith(i, 1.0);
            e - g * g.dot(&e)
        })
        .collect();
    candidates.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    for c in candidates {
        let mut v = c;
        for b in &basis {
            v -= *b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
        if basis.len() == 3 {
            break;
        }
    }
    [basis[0], basis[1], basis[2]]
}

fn retract(p: &[f64; 4], basis: &[Vector4<f64>; 3], delta: &Vector3<f64>) -> Option<[f64; 4]> {
    let q = Vector4::from(*p) + basis[0] * delta[0] + basis[1] * delta[1] + basis[2] * delta[2];
    let disc = q[1] * q[1] + q[2] * q[2] - 4.0 * q[0] * q[3];
    (disc > 0.0).then(|| {
        let s = disc.sqrt();
        [q[0] / s, q[1] / s, q[2] / s, q[3] / s]
    })
}

fn weighted_residuals(frame: &Frame, points: &[Point2], w: &WeightFunction, local: &[f64; 4]) -> Result<Vec<f64>> {
    let raw = frame.raw_to_world(local);
    let p = AlgebraicCircleParams { a: raw[0], b: raw[1], c: raw[2], d: raw[3] };
    let normalized = frame.params_to_world(local)?;
    let weights = w.eval_all(points, &normalized)?;
    Ok(points.iter().zip(weights).map(|(&pt, wi)| wi.sqrt() * p.eval(pt)).collect())
}

fn refine_full_objective(frame: &Frame, points: &[Point2], w: &WeightFunction, start: [f64; 4]) -> Result<Irls> {
    let mut params = start;
    let mut residuals = weighted_residuals(frame, points, w, &params)?;
    let mut cost: f64 = residuals.iter().map(|r| r * r).sum();
    let mut lambda = 1e-3;
    for it in 1..=REFINE_MAX_ITER {
        let basis = tangent_basis(&params);
        let mut jac = vec![[0.0; 3]; points.len()];
        for k in 0..3 {
            let mut step = Vector3::zeros();
            step[k] = FD_STEP;
            let plus = retract(&params, &basis, &step)
                .ok_or_else(|| Error::DegenerateConfiguration("left the constraint surface".into()))?;
            let minus = retract(&params, &basis, &(-step))
                .ok_or_else(|| Error::DegenerateConfiguration("left the constraint surface".into()))?;
            let rp = weighted_residuals(frame, points, w, &plus)?;
            let rm = weighted_residuals(frame, points, w, &minus)?;
            for (row, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&rm)) {
                row[k] = (a - b) / (2.0 * FD_STEP);
            }
        }
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (row, r) in jac.iter().zip(&residuals) {
            let j = Vector3::from(*row);
            jtj += j * j.transpose();
            jtr += j * *r;
        }
        loop {
            let damped = jtj + Matrix3::from_diagonal(&jtj.diagonal()) * lambda + Matrix3::identity() * 1e-300;
            let delta = match damped.cholesky() {
                Some(ch) => -ch.solve(&jtr),
                None => Vector3::zeros(),
            };
            if delta.norm() <= REFINE_TOL {
                return Ok(Irls { params, iterations: it, converged: true });
            }
            let candidate = retract(&params, &basis, &delta);
            let trial = match candidate {
                Some(c) => weighted_residuals(frame, points, w, &c).ok().map(|r| (c, r)),
                None => None,
            };
            match trial {
                Some((c, r)) if r.iter().map(|x| x * x).sum::<f64>() <= cost => {
                    cost = r.iter().map(|x| x * x).sum();
                    params = c;
                    residuals = r;
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return Ok(Irls { params, iterations: it, converged: true });
                    }
                }
            }
        }
    }
    Ok(Irls { params, iterations: REFINE_MAX_ITER, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{from_algebraic, sample_true_points, to_algebraic, ArcSpec};

    fn close_params(p: &AlgebraicCircleParams, q: &AlgebraicCircleParams, tol: f64) -> bool {
        p.as_array().iter().zip(q.as_array()).all(|(a, b)| (a - b).abs() <= tol)
    }

    fn noisy_half_circle() -> Vec<Point2> {
        // Fixed, hand-picked perturbations of a half circle of radius 2 at (1, -1).
        let c = CircleParams::new(1.0, -1.0, 2.0).unwrap();
        let offs = [0.03, -0.05, 0.02, 0.06, -0.01, -0.04, 0.05, -0.02, 0.01, 0.04];
        (0..10)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 9.0;
                let p = c.point_at(t);
                Point2::new(p.x + offs[i], p.y - offs[(i + 3) % 10])
            })
            .collect()
    }

    #[test]
    fn af_circumcircle() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        let c = fit_af(&pts).unwrap().circle.unwrap();
        assert!((c.a - 0.5).abs() < 1e-12 && (c.b - 0.5).abs() < 1e-12);
        assert!((c.r - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn af_rejects_collinear_points() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        assert!(matches!(fit_af(&pts), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn exact_data_recovered_by_algebraic_fits() {
        let spec = ArcSpec::unit_arc_deg(360.0, 8);
        let pts = sample_true_points(&spec).unwrap();
        let truth = to_algebraic(&spec.circle).unwrap();
        for report in [fit_af(&pts), fit_pratt(&pts), fit_taubin(&pts), fit_graf(&pts, None)] {
            let report = report.unwrap();
            assert!(close_params(&report.params, &truth, 1e-10), "{report:?}");
        }
    }

    #[test]
    fn pratt_and_taubin_fit_lines() {
        let pts: Vec<Point2> = (0..6).map(|i| Point2::new(i as f64 - 2.0, 0.0)).collect();
        for report in [fit_pratt(&pts).unwrap(), fit_taubin(&pts).unwrap()] {
            let p = report.params;
            assert!(p.a.abs() < 1e-12 && p.b.abs() < 1e-12 && p.d.abs() < 1e-12, "{p:?}");
            assert!((p.c.abs() - 1.0).abs() < 1e-12);
            assert!(p.constraint_residual() <= 1e-12);
        }
    }

    #[test]
    fn algebraic_outputs_satisfy_constraint() {
        let pts = noisy_half_circle();
        for report in [fit_af(&pts), fit_pratt(&pts), fit_taubin(&pts), fit_graf(&pts, None)] {
            let report = report.unwrap();
            assert!(report.params.constraint_residual() <= 1e-12);
            assert!(report.params.a >= 0.0);
        }
    }

    #[test]
    fn pratt_minimizes_its_objective() {
        // Perturbing the solution along the constraint surface never lowers sum P^2.
        let pts = noisy_half_circle();
        let best = fit_pratt(&pts).unwrap();
        let f = |p: &AlgebraicCircleParams| pts.iter().map(|&q| p.eval(q).powi(2)).sum::<f64>();
        let base = f(&best.params);
        for k in 0..4 {
            for eps in [1e-4, -1e-4] {
                let mut v = best.params.as_array();
                v[k] += eps;
                let q = AlgebraicCircleParams::normalized(v[0], v[1], v[2], v[3]).unwrap();
                assert!(f(&q) >= base - 1e-15);
            }
        }
    }

    #[test]
    fn weighted_fit_reproduces_pratt_and_af() {
        let pts = noisy_half_circle();
        let pratt = fit_pratt(&pts).unwrap();
        let unit = fit_weighted_af(&pts, &WeightFunction::unit(), None).unwrap();
        assert!(close_params(&unit.params, &pratt.params, 1e-10), "{:?} {:?}", unit.params, pratt.params);
        let scaled = fit_weighted_af(&pts, &WeightFunction::unit().scaled(5.0), None).unwrap();
        assert!(close_params(&scaled.params, &pratt.params, 1e-10));

        let af = fit_af(&pts).unwrap();
        let inv = fit_weighted_af(&pts, &WeightFunction::inverse_a_squared(), None).unwrap();
        assert!(close_params(&inv.params, &af.params, 1e-8), "{:?} {:?}", inv.params, af.params);
    }

    #[test]
    fn reduced_equation_with_gradient_weights_is_graf() {
        let pts = noisy_half_circle();
        let graf = fit_graf(&pts, None).unwrap();
        let reduced = fit_weighted_af_reduced(&pts, &WeightFunction::gradient(), None).unwrap();
        assert!(close_params(&graf.params, &reduced.params, 1e-9));
    }

    #[test]
    fn graf_minimizes_gradient_weighted_objective_closely() {
        // Frozen weights drop a term of order sigma^2 in the estimating equation; the
        // full minimizer is found by the weighted fit with gradient weights.
        let pts = noisy_half_circle();
        let graf = fit_graf(&pts, None).unwrap();
        let full = fit_weighted_af(&pts, &WeightFunction::gradient(), None).unwrap();
        let (c1, c2) = (from_algebraic(&graf.params).unwrap(), from_algebraic(&full.params).unwrap());
        assert!((c1.a - c2.a).abs() < 1e-2 && (c1.r - c2.r).abs() < 1e-2);
        assert!(full.objective <= graf.objective + 1e-15);
    }

    #[test]
    fn invalid_weight_is_reported() {
        let pts = noisy_half_circle();
        let w = WeightFunction::new("bad", |pt, _| if pt.x > 2.5 { f64::NAN } else { 1.0 });
        assert!(matches!(fit_weighted_af(&pts, &w, None), Err(Error::InvalidWeight { .. })));
    }
}
