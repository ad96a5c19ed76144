//! Browser bindings: sample a noisy arc, fit it with every method, and estimate
//! efficiencies against the KCR bound. Each export has a plain Rust twin in
//! [`api`] so the logic is testable off the browser.

use wasm_bindgen::prelude::*;

pub mod api {
    use effifit_core::geometry::{perturb, sample_true_points};
    use effifit_core::kcr::kcr_circle;
    use effifit_core::mc::{run_efficiency, ExperimentConfig};
    use effifit_core::{fit, ArcSpec, Method, NoiseModel, NoiseSpec, Point2, Spacing};
    use serde_json::json;

    /// Largest Monte Carlo run the page may request; keeps the tab responsive.
    pub const MAX_TRIALS: usize = 20_000;

    fn arc(arc_deg: f64, n: usize) -> Result<ArcSpec, String> {
        let spec = ArcSpec::unit_arc_deg(arc_deg, n).with_spacing(Spacing::Cells);
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    fn points_from_flat(xy: &[f64]) -> Result<Vec<Point2>, String> {
        if !xy.len().is_multiple_of(2) {
            return Err("coordinates must come in x, y pairs".into());
        }
        Ok(xy.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect())
    }

    /// Noisy points on an arc of the unit circle as `[x0, y0, x1, y1, ...]`.
    pub fn sample(arc_deg: f64, n: usize, sigma: f64, radial: bool, seed: u64) -> Result<Vec<f64>, String> {
        let spec = arc(arc_deg, n)?;
        let truth = sample_true_points(&spec).map_err(|e| e.to_string())?;
        let model = if radial { NoiseModel::Radial } else { NoiseModel::Cartesian };
        let noisy = perturb(&truth, &spec.circle, &NoiseSpec { model, sigma, seed }).map_err(|e| e.to_string())?;
        Ok(noisy.iter().flat_map(|p| [p.x, p.y]).collect())
    }

    /// Every standard fit of the points, as a JSON array. Failed fits carry an `error`.
    pub fn fit_all(xy: &[f64]) -> Result<String, String> {
        let points = points_from_flat(xy)?;
        let fits: Vec<_> = Method::STANDARD
            .iter()
            .map(|&m| match fit(m, &points) {
                Ok(r) => json!({
                    "method": m.name(),
                    "A": r.params.a, "B": r.params.b, "C": r.params.c, "D": r.params.d,
                    "a": r.circle.map(|c| c.a), "b": r.circle.map(|c| c.b), "R": r.circle.map(|c| c.r),
                    "converged": r.converged,
                    "iterations": r.iterations,
                }),
                Err(e) => json!({ "method": m.name(), "error": e.to_string() }),
            })
            .collect();
        Ok(serde_json::Value::from(fits).to_string())
    }

    /// Monte Carlo efficiency report (JSON) for the unit circle.
    pub fn efficiency(arc_deg: f64, n: usize, sigma: f64, trials: usize, seed: u64) -> Result<String, String> {
        if trials > MAX_TRIALS {
            return Err(format!("at most {MAX_TRIALS} trials in the browser"));
        }
        arc(arc_deg, n)?;
        let cfg = ExperimentConfig::new(arc_deg, n, sigma, &Method::STANDARD, trials, seed);
        run_efficiency(&cfg).map(|r| r.to_json()).map_err(|e| e.to_string())
    }

    /// `D_min` and the bound on the mean squared center error at noise `sigma` (JSON).
    pub fn kcr(arc_deg: f64, n: usize, sigma: f64) -> Result<String, String> {
        let spec = arc(arc_deg, n)?;
        let pts = sample_true_points(&spec).map_err(|e| e.to_string())?;
        let b = kcr_circle(&pts, &spec.circle).map_err(|e| e.to_string())?.with_sigma(sigma);
        let d: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| b.d_min[(i, j)]).collect()).collect();
        Ok(json!({ "d_min": d, "center_bound": b.center_bound() }).to_string())
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample(arc_deg: f64, n: usize, sigma: f64, radial: bool, seed: u64) -> Result<Vec<f64>, JsError> {
    api::sample(arc_deg, n, sigma, radial, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitAll)]
pub fn fit_all(xy: &[f64]) -> Result<String, JsError> {
    js(api::fit_all(xy))
}

#[wasm_bindgen]
pub fn efficiency(arc_deg: f64, n: usize, sigma: f64, trials: usize, seed: u64) -> Result<String, JsError> {
    js(api::efficiency(arc_deg, n, sigma, trials, seed))
}

#[wasm_bindgen]
pub fn kcr(arc_deg: f64, n: usize, sigma: f64) -> Result<String, JsError> {
    js(api::kcr(arc_deg, n, sigma))
}
