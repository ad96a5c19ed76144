//! Numerical checks of the matrix inequality behind the KCR bound.
//!
//! For nonzero `u_i` in R^m and `v_i` in R^k spanning R^k, let
//! `X_i = v_i u_i^T / (u_i^T u_i)` and `B = sum X_i X_i^T`. A set of `k x m`
//! matrices `A_i` is *proper* when `A_i = z_i u_i^T` with `sum z_i v_i^T = -I`.
//! Every proper set satisfies `D = sum A_i A_i^T >= B^-1`, with equality only
//! for `A_i = -B^-1 X_i`. The functions here generate instances and proper sets
//! and measure how closely those statements hold in floating point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_psd_by_cholesky, min_eigenvalue_dyn, spectral_norm};

pub const MAX_K: usize = 4;
pub const MAX_M: usize = 3;
pub const MAX_N: usize = 10;

/// Instances whose `v` matrix has a reciprocal condition number below this are redrawn.
const MIN_RCOND: f64 = 1e-12;
/// `B` must be better conditioned than this: computing `B^-1` loses about
/// `eps * cond(B)` relative accuracy, and the optimal-set check asks for `1e-10`.
pub const MIN_RCOND_B: f64 = 1e-6;
const MAX_DRAWS: usize = 1000;

pub const PROPER_TOL: f64 = 1e-12;
pub const OPTIMAL_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
pub const LEMMA4_TOL: f64 = 1e-10;
pub const COROLLARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LAInstance {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl LAInstance {
    pub fn new(u: Vec<DVector<f64>>, v: Vec<DVector<f64>>) -> Result<Self> {
        let n = u.len();
        if n == 0 || v.len() != n {
            return Err(Error::InvalidInput(format!("need matching nonempty u and v lists, got {} and {}", n, v.len())));
        }
        let (m, k) = (u[0].len(), v[0].len());
        check_dims(k, m, n)?;
        for (i, (ui, vi)) in u.iter().zip(&v).enumerate() {
            if ui.len() != m || vi.len() != k {
                return Err(Error::InvalidInput(format!("vector {i} has inconsistent length")));
            }
            if !(ui.norm() > 0.0) || !(vi.norm() > 0.0) {
                return Err(Error::InvalidInput(format!("vector {i} is zero or not finite")));
            }
        }
        let inst = Self { k, m, n, u, v };
        let sv = inst.v_matrix().singular_values();
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if !(lo > MIN_RCOND * hi) {
            return Err(Error::DegenerateConfiguration("the v_i do not span R^k".into()));
        }
        let eig = inst.b().symmetric_eigen().eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if !(lo > MIN_RCOND_B * hi) {
            return Err(Error::DegenerateConfiguration(format!("B is too ill-conditioned (cond {:e})", hi / lo)));
        }
        Ok(inst)
    }

    /// `k x n` matrix with columns `v_i`.
    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.v)
    }

    pub fn x(&self, i: usize) -> DMatrix<f64> {
        &self.v[i] * self.u[i].transpose() / self.u[i].norm_squared()
    }

    pub fn b(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.k, self.k);
        for (ui, vi) in self.u.iter().zip(&self.v) {
            b += vi * vi.transpose() / ui.norm_squared();
        }
        b
    }

    pub fn b_inverse(&self) -> DMatrix<f64> {
        let b = self.b();
        let inv = b.cholesky().expect("B is positive definite for a valid instance").inverse();
        0.5 * (&inv + inv.transpose())
    }
}

fn check_dims(k: usize, m: usize, n: usize) -> Result<()> {
    if k < 1 || m < 1 || n < k {
        return Err(Error::InvalidInput(format!("need n >= k >= 1 and m >= 1, got k={k}, m={m}, n={n}")));
    }
    Ok(())
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Draws all vectors from a standard normal, redrawing until the instance is valid.
pub fn random_instance(k: usize, m: usize, n: usize, seed: u64) -> Result<LAInstance> {
    check_dims(k, m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let u = (0..n).map(|_| normal_vector(&mut rng, m)).collect();
        let v = (0..n).map(|_| normal_vector(&mut rng, k)).collect();
        if let Ok(inst) = LAInstance::new(u, v) {
            return Ok(inst);
        }
    }
    Err(Error::DegenerateConfiguration(format!("no valid instance after {MAX_DRAWS} draws")))
}

/// The `z_i` of a proper set; the matrices themselves are `A_i = z_i u_i^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProperSet {
    pub z: Vec<DVector<f64>>,
}

impl ProperSet {
    pub fn matrices(&self, inst: &LAInstance) -> Vec<DMatrix<f64>> {
        self.z.iter().zip(&inst.u).map(|(z, u)| z * u.transpose()).collect()
    }

    /// `|| sum z_i v_i^T + I ||`, zero exactly when the set is proper.
    pub fn properness_residual(&self, inst: &LAInstance) -> f64 {
        let mut s = DMatrix::identity(inst.k, inst.k);
        for (z, v) in self.z.iter().zip(&inst.v) {
            s += z * v.transpose();
        }
        spectral_norm(&s)
    }

    fn z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.z)
    }

    fn from_z_matrix(z: &DMatrix<f64>) -> Self {
        Self { z: z.column_iter().map(|c| c.into_owned()).collect() }
    }
}

pub fn optimal_proper_set(inst: &LAInstance) -> ProperSet {
    let chol = inst.b().cholesky().expect("B is positive definite for a valid instance");
    let z: Vec<DVector<f64>> = inst.u.iter().zip(&inst.v).map(|(u, v)| -chol.solve(v) / u.norm_squared()).collect();
    ProperSet::from_z_matrix(&restore_properness(inst, DMatrix::from_columns(&z)))
}

/// Orthonormal basis of the row space of the `v` matrix, as an `n x k` matrix.
fn row_space_basis(inst: &LAInstance) -> DMatrix<f64> {
    inst.v_matrix().transpose().qr().q()
}

/// Removes the component of each row of `dz` that lies in the row space of `V`,
/// so that `sum dz_i v_i^T = 0`.
pub fn project_direction(inst: &LAInstance, dz: &DMatrix<f64>) -> DMatrix<f64> {
    let q = row_space_basis(inst);
    let mut out = dz - (dz * &q) * q.transpose();
    // A second pass removes what the first left behind at rounding level.
    out -= (&out * &q) * q.transpose();
    out
}

/// `z_i = z_i° + eps * P(dz)_i` where `P` projects onto directions that keep the set proper.
pub fn perturbed_proper_set(inst: &LAInstance, dz: &DMatrix<f64>, eps: f64) -> ProperSet {
    let z = optimal_proper_set(inst).z_matrix() + project_direction(inst, dz) * eps;
    ProperSet::from_z_matrix(&restore_properness(inst, z))
}

/// Removes the rounding-level residual of `sum z_i v_i^T = -I` with a correction whose
/// rows lie in the row space of `V`: with `V^T = Q R`, `C = E R^-1 Q^T` solves `C V^T = E`.
fn restore_properness(inst: &LAInstance, mut z: DMatrix<f64>) -> DMatrix<f64> {
    let v = inst.v_matrix();
    let qr = v.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    for _ in 0..2 {
        let resid = &z * v.transpose() + DMatrix::identity(inst.k, inst.k);
        // C Q R = E  =>  (C Q) = E R^-1  =>  R^T (C Q)^T = E^T.
        let Some(cq_t) = r.transpose().solve_lower_triangular(&resid.transpose()) else {
            break;
        };
        z -= cq_t.transpose() * q.transpose();
    }
    z
}

pub fn random_direction(inst: &LAInstance, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(inst.k, inst.n, |_, _| rng.sample(StandardNormal))
}

/// Random point of the affine variety of proper sets.
pub fn random_proper_set(inst: &LAInstance, seed: u64) -> ProperSet {
    perturbed_proper_set(inst, &random_direction(inst, seed), 1.0)
}

/// Random `z_i` with no constraint; generically not proper.
pub fn random_improper_set(inst: &LAInstance, seed: u64) -> ProperSet {
    ProperSet::from_z_matrix(&random_direction(inst, seed))
}

pub fn d_matrix(inst: &LAInstance, a: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(inst.k, inst.k);
    for ai in a {
        d += ai * ai.transpose();
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// Smallest eigenvalue of `D - B^-1`.
    pub min_eig: f64,
    /// `|| sum A_i X_i^T + I ||`.
    pub lemma4_residual: f64,
    /// Whether `D - B^-1 + tol I` admits a Cholesky factor, `tol = 1e-9 ||B^-1||`.
    pub psd_by_factorization: bool,
    pub b_inv_norm: f64,
}

impl BoundCheck {
    pub fn psd_by_eigenvalue(&self) -> bool {
        self.min_eig >= -PSD_TOL * self.b_inv_norm
    }
}

pub fn check_bound(inst: &LAInstance, ps: &ProperSet) -> BoundCheck {
    check_bound_matrices(inst, &ps.matrices(inst))
}

pub fn check_bound_matrices(inst: &LAInstance, a: &[DMatrix<f64>]) -> BoundCheck {
    let binv = inst.b_inverse();
    let b_inv_norm = spectral_norm(&binv);
    let gap = d_matrix(inst, a) - &binv;
    let mut cross = DMatrix::identity(inst.k, inst.k);
    for (i, ai) in a.iter().enumerate() {
        cross += ai * inst.x(i).transpose();
    }
    BoundCheck {
        min_eig: min_eigenvalue_dyn(&gap),
        lemma4_residual: spectral_norm(&cross),
        psd_by_factorization: is_psd_by_cholesky(&gap, PSD_TOL * b_inv_norm),
        b_inv_norm,
    }
}

/// `max_i || A_i n_i n_i^T A_i^T - A_i A_i^T || / max_i ||A_i||^2` with `n_i = u_i / ||u_i||`.
pub fn check_corollary(inst: &LAInstance, ps: &ProperSet) -> f64 {
    corollary_residual(inst, &ps.matrices(inst))
}

pub fn corollary_residual(inst: &LAInstance, a: &[DMatrix<f64>]) -> f64 {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (ai, u) in a.iter().zip(&inst.u) {
        let nrm = u / u.norm();
        let an = ai * nrm;
        let diff = &an * an.transpose() - ai * ai.transpose();
        worst = worst.max(spectral_norm(&diff));
        scale = scale.max(spectral_norm(ai).powi(2));
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub properness: f64,
    pub lemma4: f64,
    pub corollary: f64,
    /// `||D - B^-1|| / ||B^-1||` for the optimal set.
    pub optimal_gap: f64,
    /// Smallest eigenvalue of `D - B^-1` for the optimal set, relative to `||B^-1||`.
    pub optimal_min_eig: f64,
    /// Properness of a midpoint between the optimal and the random set.
    pub combination: f64,
}

/// One logged instance: dimensions, seed and the measured quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaRecord {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    /// Smallest eigenvalue of `D - B^-1` for the random proper set, relative to `||B^-1||`.
    pub min_eig: f64,
    pub residuals: Residuals,
    pub psd_checks_agree: bool,
    pub failures: Vec<String>,
}

impl LaRecord {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Dimensions for the instance with this seed, within the size caps.
pub fn instance_dims(seed: u64) -> (usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let k = rng.random_range(1..=MAX_K);
    let m = rng.random_range(1..=MAX_M);
    let n = rng.random_range(k..=MAX_N);
    (k, m, n)
}

/// Runs every check on the instance with this seed. With `inject_fault` the random
/// proper set is replaced by an unconstrained one, which the checks must reject.
pub fn verify_instance(seed: u64, inject_fault: bool) -> Result<LaRecord> {
    let (k, m, n) = instance_dims(seed);
    let inst = random_instance(k, m, n, seed)?;
    let opt = optimal_proper_set(&inst);
    let ps = if inject_fault { random_improper_set(&inst, seed ^ 0x5eed) } else { random_proper_set(&inst, seed) };

    let binv = inst.b_inverse();
    let nb = spectral_norm(&binv);
    let opt_a = opt.matrices(&inst);
    let optimal_gap = spectral_norm(&(d_matrix(&inst, &opt_a) - &binv)) / nb;
    let opt_check = check_bound_matrices(&inst, &opt_a);
    let check = check_bound(&inst, &ps);
    let mid = ProperSet { z: opt.z.iter().zip(&ps.z).map(|(a, b)| a + (b - a) * 0.5).collect() };

    let residuals = Residuals {
        properness: ps.properness_residual(&inst).max(opt.properness_residual(&inst)),
        lemma4: check.lemma4_residual.max(opt_check.lemma4_residual),
        corollary: check_corollary(&inst, &ps).max(check_corollary(&inst, &opt)),
        optimal_gap,
        optimal_min_eig: opt_check.min_eig / nb,
        combination: mid.properness_residual(&inst),
    };
    let psd_checks_agree = check.psd_by_eigenvalue() == check.psd_by_factorization
        && opt_check.psd_by_eigenvalue() == opt_check.psd_by_factorization;

    let mut failures = Vec::new();
    let mut require = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    let min_eig = check.min_eig / nb;
    require(min_eig >= -PSD_TOL, format!("min eig(D - B^-1) = {min_eig:e} ||B^-1||"));
    require(check.psd_by_factorization, "D - B^-1 has no Cholesky factor".into());
    require(psd_checks_agree, "eigenvalue and factorization PSD tests disagree".into());
    require(residuals.properness <= PROPER_TOL, format!("properness residual {:e}", residuals.properness));
    require(residuals.lemma4 <= LEMMA4_TOL, format!("sum A_i X_i^T + I residual {:e}", residuals.lemma4));
    require(residuals.corollary <= COROLLARY_TOL, format!("corollary residual {:e}", residuals.corollary));
    require(optimal_gap <= OPTIMAL_TOL, format!("optimal set ||D - B^-1|| = {optimal_gap:e} ||B^-1||"));
    require(residuals.optimal_min_eig.abs() <= OPTIMAL_TOL, "optimal set min eigenvalue not zero".into());
    require(residuals.combination <= PROPER_TOL, format!("affine combination residual {:e}", residuals.combination));

    Ok(LaRecord { k, m, n, seed, min_eig, residuals, psd_checks_agree, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaSummary {
    pub instances: usize,
    pub seed: u64,
    pub passed: bool,
    pub worst_min_eig: f64,
    pub worst_properness: f64,
    pub worst_lemma4: f64,
    pub worst_corollary: f64,
    pub worst_optimal_gap: f64,
    /// Records of failing instances; each `seed` replays with `instances = 1`.
    pub failures: Vec<LaRecord>,
}

pub fn instance_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

pub fn verify_suite(instances: usize, seed: u64, inject_fault: bool) -> Result<LaSummary> {
    let mut s = LaSummary {
        instances,
        seed,
        passed: true,
        worst_min_eig: f64::INFINITY,
        worst_properness: 0.0,
        worst_lemma4: 0.0,
        worst_corollary: 0.0,
        worst_optimal_gap: 0.0,
        failures: Vec::new(),
    };
    for i in 0..instances {
        let rec = verify_instance(instance_seed(seed, i), inject_fault)?;
        s.worst_min_eig = s.worst_min_eig.min(rec.min_eig);
        s.worst_properness = s.worst_properness.max(rec.residuals.properness);
        s.worst_lemma4 = s.worst_lemma4.max(rec.residuals.lemma4);
        s.worst_corollary = s.worst_corollary.max(rec.residuals.corollary);
        s.worst_optimal_gap = s.worst_optimal_gap.max(rec.residuals.optimal_gap);
        if !rec.passed() {
            s.passed = false;
            s.failures.push(rec);
        }
    }
    Ok(s)
}
