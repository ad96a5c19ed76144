//! Acceptance suite: every criterion runs at its stated tolerance and prints one
//! PASS/FAIL line. Runs as a plain binary (`harness = false`) so the lines always show.

use std::time::Instant;

use effifit_core::fit::fit;
use effifit_core::geometry::{sample_true_points, ArcSpec, CircleParams, NoiseModel, Point2};
use effifit_core::kcr::{d2_weighted, kcr_circle, kcr_generic};
use effifit_core::la_oracle::{verify_suite, COROLLARY_TOL, LEMMA4_TOL, OPTIMAL_TOL, PSD_TOL};
use effifit_core::linalg::min_eigenvalue;
use effifit_core::mc::{
    compare_covariance, run_bias_scan, run_efficiency, run_sweep, ExperimentConfig, SweepSpec, Target,
    ACCEPTANCE_TRIALS, TABLE_METHODS,
};
use effifit_core::{Method, Spacing, WeightFunction};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self { pass: true, summary: String::new(), details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "MISS" }));
    }
}

const OLSF: Method = Method::Olsf;
const AF: Method = Method::Af;
const PRATT: Method = Method::Pratt;
const TAUBIN: Method = Method::Taubin;

/// Runs one table row and compares each method to its reference efficiency.
fn table_row(v: &mut Verdict, arc: f64, sigma: f64, seed: u64, expected: &[(Method, f64, f64)]) {
    let cfg = ExperimentConfig::new(arc, 20, sigma, &TABLE_METHODS, ACCEPTANCE_TRIALS, seed);
    let report = run_efficiency(&cfg).expect("efficiency run");
    for &(m, want, tol) in expected {
        let got = report.efficiency(m);
        let se = report.get(m).map_or(f64::NAN, |r| r.std_error);
        v.check(
            (got - want).abs() <= tol,
            format!("arc {arc} sigma/R {sigma} {m}: E = {got:.4} (se {se:.4}), expected {want} +/- {tol}"),
        );
    }
}

fn criterion_1() -> Verdict {
    let mut v = Verdict::new();
    let rows = [
        (0.02, [0.999, 0.998, 0.997, 0.997], [0.02; 4]),
        (0.05, [0.996, 0.992, 0.987, 0.987], [0.02; 4]),
        (0.10, [0.985, 0.970, 0.953, 0.953], [0.02; 4]),
        (0.20, [0.935, 0.900, 0.837, 0.835], [0.02, 0.02, 0.03, 0.03]),
    ];
    for (sigma, want, tol) in rows {
        let expected: Vec<_> = TABLE_METHODS.iter().zip(want).zip(tol).map(|((&m, w), t)| (m, w, t)).collect();
        table_row(&mut v, 360.0, sigma, 1001, &expected);
    }
    v.summary = "full circle efficiencies match the reference table".into();
    v
}

fn criterion_2() -> Verdict {
    let mut v = Verdict::new();
    table_row(&mut v, 180.0, 0.05, 1002, &[(OLSF, 0.984, 0.02), (AF, 0.902, 0.02), (PRATT, 0.978, 0.02)]);
    table_row(&mut v, 180.0, 0.10, 1002, &[(OLSF, 0.935, 0.02), (AF, 0.720, 0.02), (PRATT, 0.916, 0.02)]);
    let cfg = ExperimentConfig::new(180.0, 20, 0.3, &[OLSF, AF], ACCEPTANCE_TRIALS, 1002);
    let r = run_efficiency(&cfg).expect("efficiency run");
    let (o, a) = (r.efficiency(OLSF), r.efficiency(AF));
    v.check(o < 0.3, format!("arc 180 sigma/R 0.3 OLSF: E = {o:.4} (breakdown, expect < 0.3)"));
    v.check(a > 0.3, format!("arc 180 sigma/R 0.3 AF: E = {a:.4} (expect > 0.3)"));
    v.summary = "half circle efficiencies and the sigma/R = 0.3 breakdown".into();
    v
}

fn criterion_3() -> Verdict {
    let mut v = Verdict::new();
    table_row(&mut v, 90.0, 0.05, 1003, &[(OLSF, 0.837, 0.03), (AF, 0.365, 0.03), (PRATT, 0.843, 0.03), (TAUBIN, 0.842, 0.03)]);
    v.summary = "quarter circle efficiencies at sigma/R = 0.05".into();
    v
}

fn criterion_4() -> Verdict {
    // Four times the usual trial count: the band is +/-0.01 and the standard
    // error at 1e5 trials is about 0.004.
    let trials = 4 * ACCEPTANCE_TRIALS;
    let mut v = Verdict::new();
    for arc in [360.0, 180.0, 90.0] {
        let cfg = ExperimentConfig::new(arc, 20, 0.001, &Method::STANDARD, trials, 1004);
        let r = run_efficiency(&cfg).expect("efficiency run");
        for m in &r.methods {
            v.check(
                (0.99..=1.01).contains(&m.efficiency),
                format!("arc {arc} {}: E = {:.4} (se {:.4})", m.method, m.efficiency, m.std_error),
            );
        }
    }
    v.summary = format!("E in [0.99, 1.01] at sigma/R = 0.001 ({trials} trials)");
    v
}

fn criterion_5() -> Verdict {
    let mut v = Verdict::new();
    let cfg = ExperimentConfig::new(180.0, 20, 0.0, &[AF], ACCEPTANCE_TRIALS, 1005);
    let scan = run_bias_scan(&cfg, &[0.01, 0.02, 0.05, 0.1]).expect("bias scan");
    let af = scan.get(AF).expect("AF scanned");
    for p in &af.points {
        v.details.push(format!("     sigma {:.2}: ||bias|| = {:.3e}, R bias = {:.3e}", p.sigma, p.norm, p.bias[2]));
    }
    let slope = af.slope.unwrap_or(f64::NAN);
    v.check((1.7..=2.3).contains(&slope), format!("log-log slope {slope:.3}, expect [1.7, 2.3]"));
    v.summary = "AF bias is of order sigma^2 on a half circle".into();
    v
}

fn criterion_6() -> Verdict {
    let mut v = Verdict::new();
    let mut cfg = ExperimentConfig::new(360.0, 20, 0.02, &[PRATT], ACCEPTANCE_TRIALS, 1006);
    cfg.noise.model = NoiseModel::Cartesian;
    let cmp = compare_covariance(&cfg).expect("covariance comparison");
    v.check(cmp.max_abs_z <= 5.0, format!("max |z| over entries = {:.2}, expect <= 5", cmp.max_abs_z));
    v.details.push(format!(
        "     diag ratio to sigma^2 D2: cartesian {:.3?}, radial {:.3?}",
        cmp.cartesian_ratio, cmp.radial_ratio
    ));
    v.summary = "Pratt covariance agrees under Cartesian and radial noise".into();
    v
}

fn random_arc(rng: &mut ChaCha8Rng, degrees: std::ops::RangeInclusive<f64>) -> ArcSpec {
    // Centers stay within one radius: farther out, rounding the sample points
    // themselves dominates any 1e-12 comparison on short arcs.
    let r = 10f64.powf(rng.random_range(-1.0..1.0));
    ArcSpec {
        circle: CircleParams::new(r * rng.random_range(-1.0..1.0), r * rng.random_range(-1.0..1.0), r).expect("valid circle"),
        arc_angle: rng.random_range(degrees).to_radians(),
        n: rng.random_range(5..=50),
        center_angle: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        spacing: Spacing::Endpoints,
    }
}

fn rel(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn criterion_7() -> Verdict {
    let mut v = Verdict::new();
    let spec = ArcSpec::unit_arc_deg(360.0, 20);
    let d = kcr_circle(&sample_true_points(&spec).unwrap(), &spec.circle).unwrap().d_min;
    let err = (d - Matrix3::from_diagonal(&[0.1, 0.1, 0.05].into())).abs().max();
    v.check(err <= 1e-12, format!("n = 20 full circle: max |D - diag(0.1, 0.1, 0.05)| = {err:.2e}"));
    // Below about 60 degrees cond(D) * eps alone approaches 1e-12, so shorter
    // arcs are reported but not gated.
    let worst = |min_deg: f64, max_deg: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(1007);
        (0..100)
            .map(|_| {
                let arc = random_arc(&mut rng, min_deg..=max_deg);
                let pts = sample_true_points(&arc).unwrap();
                let a = kcr_circle(&pts, &arc.circle).unwrap().d_min;
                let b = kcr_generic(&pts, &arc.circle).unwrap().d_min;
                rel(&a, &b)
            })
            .fold(0.0, f64::max)
    };
    let gated = worst(60.0, 360.0);
    v.check(gated <= 1e-12, format!("100 random configurations, arcs 60..360 deg: worst relative difference {gated:.2e}"));
    v.details.push(format!("     arcs 30..60 deg (not gated): worst relative difference {:.2e}", worst(30.0, 60.0)));
    v.summary = "closed-form KCR matrix matches the generic formula".into();
    v
}

/// `exp` of a random quadratic in coordinates scaled to the circle.
fn random_weight(rng: &mut ChaCha8Rng, circle: CircleParams) -> WeightFunction {
    let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    WeightFunction::new("random", move |p: Point2, _| {
        let (x, y) = (p.x / circle.r, p.y / circle.r);
        let (x, y) = (x - circle.a / circle.r, y - circle.b / circle.r);
        (c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y).exp()
    })
}

fn criterion_8() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let (mut worst_gap, mut worst_eff): (f64, f64) = (f64::INFINITY, 0.0);
    for _ in 0..100 {
        let arc = random_arc(&mut rng, 30.0..=360.0);
        let pts = sample_true_points(&arc).unwrap();
        let w = random_weight(&mut rng, arc.circle);
        let b = d2_weighted(&pts, &arc.circle, &w).unwrap();
        let gap = min_eigenvalue(&(b.d2.unwrap() - b.d_min)) / b.d_min.trace();
        worst_gap = worst_gap.min(gap);
        let g = d2_weighted(&pts, &arc.circle, &WeightFunction::gradient()).unwrap();
        worst_eff = worst_eff.max(rel(&g.d2.unwrap(), &g.d_min));
    }
    v.check(worst_gap >= -1e-10, format!("100 random weights: min eig(D2 - Dmin)/tr(Dmin) >= {worst_gap:.2e}"));
    v.check(worst_eff <= 1e-10, format!("w = 1/||grad P||^2: worst ||D2 - Dmin||/||Dmin|| = {worst_eff:.2e}"));
    v.summary = "weighted fits never beat the bound; gradient weights attain it".into();
    v
}

fn criterion_9() -> Verdict {
    let mut v = Verdict::new();
    let s = verify_suite(1000, 1009, false).expect("oracle suite");
    v.check(s.worst_min_eig >= -PSD_TOL, format!("min eig(D - B^-1)/||B^-1|| >= {:.2e}", s.worst_min_eig));
    v.check(s.worst_optimal_gap <= OPTIMAL_TOL, format!("optimal sets: ||D - B^-1||/||B^-1|| <= {:.2e}", s.worst_optimal_gap));
    v.check(s.worst_corollary <= COROLLARY_TOL, format!("corollary residual (scaled) <= {:.2e}", s.worst_corollary));
    v.check(s.worst_lemma4 <= LEMMA4_TOL, format!("||sum A_i X_i^T + I|| <= {:.2e}", s.worst_lemma4));
    v.check(s.passed, format!("{} of 1000 instances failed a check", s.failures.len()));
    v.summary = "matrix inequality D >= B^-1 on 1000 random instances".into();
    v
}

fn criterion_10() -> Verdict {
    let mut v = Verdict::new();
    let mut base = ExperimentConfig::new(50.0, 20, 0.0, &[AF, PRATT], ACCEPTANCE_TRIALS, 1010);
    base.target = Target::A;
    base.arc.spacing = Spacing::Endpoints;
    let spec = SweepSpec { arc_min_deg: 5.0, arc_max_deg: 50.0, arc_steps: 10, c_min: 0.45, c_max: 0.5, c_steps: 2 };
    let grid = run_sweep(&spec, &base).expect("sweep");
    let pratt = grid.method_values(PRATT).unwrap();
    let af = grid.method_values(AF).unwrap();
    let corner = pratt[1][9];
    v.check((corner - 0.89).abs() <= 0.05, format!("Pratt E_A at 50 deg, c = 0.5: {corner:.4}, expected 0.89 +/- 0.05"));
    let worst_af = af[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.check(worst_af < 0.10, format!("AF E_A at c = 0.45, arcs 5..50 deg: max {worst_af:.4}, expect < 0.10"));
    v.details.push(format!("     AF E_A at c = 0.45: {:.3?}", af[0]));
    v.summary = "efficiency of A on small arcs: Pratt stays high, AF collapses".into();
    v
}

fn criterion_11() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1011);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let arc = random_arc(&mut rng, 30.0..=360.0);
        let pts = sample_true_points(&arc).unwrap();
        for m in Method::STANDARD {
            let err = match fit(m, &pts) {
                Ok(r) => r.circle.map_or(f64::INFINITY, |c| {
                    let t = arc.circle;
                    (c.a - t.a).abs().max((c.b - t.b).abs()).max((c.r - t.r).abs()) / t.r
                }),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    v.check(worst <= 1e-8, format!("100 circles x 5 fitters: worst error / R = {worst:.2e}"));
    v.summary = "noiseless points are fitted exactly".into();
    v
}

type Criterion = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
        ("11", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        println!(
            "{} criterion {id:>2}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.summary,
            start.elapsed().as_secs_f64()
        );
        for d in &v.details {
            println!("    {d}");
        }
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
