use nalgebra::{Matrix3, Vector3};

use super::{algebraic::taubin_local, FitReport, Frame, Method};
use crate::error::{Error, Result};
use crate::geometry::{from_algebraic, to_algebraic, CircleParams, Point2};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-12;
const LAMBDA_INIT: f64 = 1e-3;
/// Seeds flatter than this (radius in units of the data's RMS spread) count as lines.
const MAX_LOCAL_RADIUS: f64 = 1e10;

fn residuals(points: &[Point2], p: &Vector3<f64>) -> (Vec<f64>, f64) {
    let r: Vec<f64> = points.iter().map(|q| (q.x - p[0]).hypot(q.y - p[1]) - p[2]).collect();
    let cost = r.iter().map(|x| x * x).sum();
    (r, cost)
}

fn normal_equations(points: &[Point2], p: &Vector3<f64>, r: &[f64]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (q, ri) in points.iter().zip(r) {
        let (dx, dy) = (q.x - p[0], q.y - p[1]);
        let d = dx.hypot(dy);
        // A point at the center has no defined direction; it only constrains R.
        let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (0.0, 0.0) };
        let j = Vector3::new(-ux, -uy, -1.0);
        jtj += j * j.transpose();
        jtr += j * *ri;
    }
    (jtj, jtr)
}

struct LocalRun {
    params: Vector3<f64>,
    iterations: usize,
    converged: bool,
    /// Cost after the start and after every accepted step.
    #[cfg_attr(not(test), allow(dead_code))]
    costs: Vec<f64>,
}

fn solve_local(local: &[Point2], start: Vector3<f64>) -> LocalRun {
    let mut p = start;
    let (mut r, mut cost) = residuals(local, &p);
    let mut costs = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < MAX_ITER {
        let (jtj, jtr) = normal_equations(local, &p, &r);
        loop {
            iterations += 1;
            let damped = jtj + Matrix3::identity() * lambda;
            let Some(delta) = damped.cholesky().map(|ch| -ch.solve(&jtr)) else {
                lambda *= 10.0;
                if iterations >= MAX_ITER {
                    break 'outer;
                }
                continue;
            };
            let small = delta.norm() <= STEP_TOL * (1.0 + p.norm());
            let candidate = p + delta;
            let (rc, cc) = residuals(local, &candidate);
            if cc <= cost && cc.is_finite() {
                p = candidate;
                r = rc;
                cost = cc;
                costs.push(cost);
                lambda /= 10.0;
                if small {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if small {
                converged = true;
                break 'outer;
            }
            lambda *= 10.0;
            if iterations >= MAX_ITER {
                break 'outer;
            }
        }
    }
    LocalRun { params: p, iterations, converged, costs }
}

/// Orthogonal least squares fit: minimizes the sum of squared geometric distances
/// by Levenberg-damped Gauss-Newton in `(a, b, R)`.
///
/// Damping starts at `1e-3`, is divided by 10 on an accepted step and multiplied
/// by 10 on a rejected one. Every linear solve counts as an iteration. The fit
/// has converged once a step is below `1e-12 (1 + ||(a, b, R)||)` in the
/// normalized frame. Without `init` it is seeded from the Taubin fit.
pub fn fit_olsf(points: &[Point2], init: Option<&CircleParams>) -> Result<FitReport> {
    let frame = Frame::for_points(points)?;
    let local = frame.local_points(points);
    let start = match init {
        Some(c) => frame.circle_to_local(&CircleParams::new(c.a, c.b, c.r)?),
        None => {
            let t = taubin_local(&local)?;
            let alg = crate::geometry::AlgebraicCircleParams { a: t[0], b: t[1], c: t[2], d: t[3] };
            match from_algebraic(&alg) {
                Ok(c) if c.r <= MAX_LOCAL_RADIUS => c,
                _ => {
                    return Err(Error::DegenerateConfiguration(
                        "initial fit is a line; no finite circle to refine".into(),
                    ))
                }
            }
        }
    };
    let run = solve_local(&local, Vector3::new(start.a, start.b, start.r));
    let (p, iterations, converged) = (run.params, run.iterations, run.converged);

    let local_circle = CircleParams { a: p[0], b: p[1], r: p[2].abs() };
    let circle = frame.circle_to_world(&local_circle);
    if !(circle.a.is_finite() && circle.b.is_finite() && circle.r.is_finite() && circle.r > 0.0) {
        return Err(Error::DegenerateConfiguration("geometric fit diverged".into()));
    }
    let params = to_algebraic(&circle)?;
    let objective = points.iter().map(|&q| crate::geometry::signed_distance(q, &circle).powi(2)).sum();
    Ok(FitReport { method: Method::Olsf, params, circle: Some(circle), objective, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_true_points, ArcSpec};

    #[test]
    fn exact_data_from_truth_converges_immediately() {
        let spec = ArcSpec { circle: CircleParams::new(2.0, -3.0, 1.5).unwrap(), ..ArcSpec::unit_arc_deg(120.0, 10) };
        let pts = sample_true_points(&spec).unwrap();
        let report = fit_olsf(&pts, Some(&spec.circle)).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2, "{}", report.iterations);
        let c = report.circle.unwrap();
        assert!((c.a - 2.0).abs() < 1e-12 && (c.b + 3.0).abs() < 1e-12 && (c.r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn objective_decreases_monotonically() {
        let spec = ArcSpec::unit_arc_deg(90.0, 12);
        let pts: Vec<Point2> = sample_true_points(&spec)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, p)| Point2::new(p.x + 0.02 * ((i * 7 % 5) as f64 - 2.0), p.y - 0.015 * ((i * 3 % 4) as f64 - 1.5)))
            .collect();
        let frame = Frame::for_points(&pts).unwrap();
        let local = frame.local_points(&pts);
        let start = frame.circle_to_local(&CircleParams::new(0.3, -0.4, 1.4).unwrap());
        let run = solve_local(&local, Vector3::new(start.a, start.b, start.r));
        assert!(run.converged);
        assert!(run.costs.len() > 3);
        assert!(run.costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", run.costs);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(fit_olsf(&pts, None), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn too_few_points() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        assert!(matches!(fit_olsf(&pts, None), Err(Error::DegenerateConfiguration(_))));
    }
}
