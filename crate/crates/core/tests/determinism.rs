//! Monte Carlo output depends only on the seed, not on how trials are scheduled.

use effifit_core::mc::{run_efficiency, run_sweep, ExperimentConfig, SweepSpec, TABLE_METHODS};
use effifit_core::Method;

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn reports_are_bit_identical_across_thread_counts() {
    let cfg = ExperimentConfig::new(180.0, 20, 0.1, &TABLE_METHODS, 3000, 77);
    let one = with_threads(1, || run_efficiency(&cfg).unwrap());
    let four = with_threads(4, || run_efficiency(&cfg).unwrap());
    assert_eq!(one.to_json(), four.to_json());
    for (a, b) in one.methods.iter().zip(&four.methods) {
        assert_eq!(a.efficiency.to_bits(), b.efficiency.to_bits());
    }
}

#[test]
fn sweeps_are_bit_identical_across_thread_counts() {
    let spec = SweepSpec { arc_min_deg: 10.0, arc_max_deg: 40.0, arc_steps: 2, c_min: 0.1, c_max: 0.4, c_steps: 2 };
    let base = ExperimentConfig::new(40.0, 10, 0.0, &[Method::Af, Method::Pratt], 500, 5);
    let one = with_threads(1, || run_sweep(&spec, &base).unwrap());
    let three = with_threads(3, || run_sweep(&spec, &base).unwrap());
    assert_eq!(one.to_csv(), three.to_csv());
}

#[test]
fn seeds_change_results() {
    let a = run_efficiency(&ExperimentConfig::new(360.0, 20, 0.05, &[Method::Olsf], 500, 1)).unwrap();
    let b = run_efficiency(&ExperimentConfig::new(360.0, 20, 0.05, &[Method::Olsf], 500, 2)).unwrap();
    assert_ne!(a.efficiency(Method::Olsf), b.efficiency(Method::Olsf));
}
