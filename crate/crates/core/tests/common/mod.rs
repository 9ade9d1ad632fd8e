//! Shared generators and independent oracles for the integration tests.

#![allow(dead_code)]

use d2pc::numerics::{Matrix, Vector};
use d2pc::plant::LtiSystem;
use d2pc::qp::QpProblem;
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random system whose state matrix has spectral radius `radius`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, radius: f64) -> LtiSystem {
    let mut a = random_matrix(rng, n, n);
    let rho = spectral_radius(&a);
    if rho > 0.0 {
        a *= radius / rho;
    }
    let b = random_matrix(rng, n, m);
    let c = random_matrix(rng, p, n);
    LtiSystem::new(a, b, c).expect("random system is well formed")
}

/// Controllable and observable two-output system whose joint
/// `(y, u)`-history realization is uncontrollable.
pub fn two_output_shift_system() -> LtiSystem {
    LtiSystem::new(
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
    )
    .unwrap()
}

/// Noise-free LTI simulation `y(t) = Cx(t)`, `x(t+1) = Ax(t) + Bu(t)` from `x0`.
pub fn lti_outputs(sys: &LtiSystem, x0: &Vector, inputs: &Matrix) -> Matrix {
    let mut x = x0.clone();
    let mut y = Matrix::zeros(sys.p(), inputs.ncols());
    for t in 0..inputs.ncols() {
        y.set_column(t, &(sys.c() * &x));
        x = sys.a() * &x + sys.b() * inputs.column(t);
    }
    y
}

pub fn lambda_max(sym: &Matrix) -> f64 {
    SymmetricEigen::new(sym.clone()).eigenvalues.iter().copied().fold(0.0, f64::max)
}

fn project(v: &Vector, l: &Vector, u: &Vector) -> Vector {
    Vector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

/// Strongly convex QP with general constraints and a known feasible point.
pub fn random_dense_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.gen_range(2..=40);
    let c = rng.gen_range(1..=80);
    let a = random_matrix(rng, d, d);
    let h = a.transpose() * &a + Matrix::identity(d, d) * rng.gen_range(0.1..1.0);
    let f = random_vector(rng, d) * 5.0;
    let m = random_matrix(rng, c, d);
    let z_feas = random_vector(rng, d);
    let v = &m * &z_feas;
    let max_eq = d / 2;
    let mut eq = 0;
    let mut l = Vector::zeros(c);
    let mut u = Vector::zeros(c);
    for i in 0..c {
        let kind = rng.gen_range(0..4);
        let (lo, hi) = match kind {
            0 if eq < max_eq => {
                eq += 1;
                (v[i], v[i])
            }
            1 => (f64::NEG_INFINITY, v[i] + rng.gen_range(0.0..0.5)),
            2 => (v[i] - rng.gen_range(0.0..0.5), f64::INFINITY),
            _ => (v[i] - rng.gen_range(0.0..0.5), v[i] + rng.gen_range(0.0..0.5)),
        };
        l[i] = lo;
        u[i] = hi;
    }
    QpProblem::new(h, f, m, l, u).unwrap()
}

/// Rank-deficient PSD Hessian with finite box constraints `M = I`.
pub fn random_box_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.gen_range(2..=40);
    let k = rng.gen_range(1..d);
    let b = random_matrix(rng, k, d);
    let h = b.transpose() * b;
    let f = random_vector(rng, d) * 3.0;
    let l = Vector::from_fn(d, |_, _| -rng.gen_range(0.1..2.0));
    let u = Vector::from_fn(d, |_, _| rng.gen_range(0.1..2.0));
    QpProblem::new(h, f, Matrix::identity(d, d), l, u).unwrap()
}

/// Oracle for strongly convex QPs: accelerated proximal gradient on the
/// dual with adaptive restart. Returns the primal point `z(y)`.
pub fn dual_fista(prob: &QpProblem) -> Vector {
    let h_inv = prob.h.clone().cholesky().expect("oracle needs positive definite H").inverse();
    let k = &prob.m * &h_inv * prob.m.transpose();
    let lip = lambda_max(&k).max(1e-12);
    let c = prob.num_constraints();
    let primal = |y: &Vector| -(&h_inv * (&prob.f + prob.m.transpose() * y));
    let step = |v: &Vector| {
        let w = v + (&prob.m * primal(v)) / lip;
        let scaled = &w * lip;
        &w - project(&scaled, &prob.l, &prob.u) / lip
    };
    let mut y = Vector::zeros(c);
    let mut v = y.clone();
    let mut theta: f64 = 1.0;
    for _ in 0..400_000 {
        let y_next = step(&v);
        let moved = (&y_next - &y).amax();
        if (&v - &y_next).dot(&(&y_next - &y)) > 0.0 {
            theta = 1.0;
            v = y_next.clone();
        } else {
            let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            v = &y_next + (&y_next - &y) * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        y = y_next;
        if moved <= 1e-13 * (1.0 + y.amax()) {
            break;
        }
    }
    primal(&y)
}

/// Oracle for box-constrained convex QPs: accelerated projected gradient
/// with adaptive restart, run until the projected-gradient step stalls.
pub fn projected_gradient_box(prob: &QpProblem) -> Vector {
    let lip = lambda_max(&prob.h).max(1e-12);
    let d = prob.num_vars();
    let step = |v: &Vector| project(&(v - (&prob.h * v + &prob.f) / lip), &prob.l, &prob.u);
    let mut z = project(&Vector::zeros(d), &prob.l, &prob.u);
    let mut v = z.clone();
    let mut theta: f64 = 1.0;
    for _ in 0..1_000_000 {
        let z_next = step(&v);
        let moved = (&z_next - &z).amax();
        if (&v - &z_next).dot(&(&z_next - &z)) > 0.0 {
            theta = 1.0;
            v = z_next.clone();
        } else {
            let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            v = &z_next + (&z_next - &z) * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        z = z_next;
        if moved <= 1e-14 && (&step(&z) - &z).amax() <= 1e-13 {
            break;
        }
    }
    z
}

/// Largest KKT violation of a returned solution, relative to the data scale:
/// bound violation, stationarity and multiplier sign consistency.
pub fn kkt_violation(prob: &QpProblem, z: &Vector, lambda: &Vector) -> f64 {
    let mz = &prob.m * z;
    let grad = &prob.h * z + &prob.f;
    let mt_lambda = prob.m.transpose() * lambda;
    let scale = 1.0 + grad.amax().max(mt_lambda.amax()).max(prob.f.amax());
    let stationarity = (&grad + &mt_lambda).amax() / scale;
    let mut worst = prob.max_violation(z).max(stationarity);
    for i in 0..prob.num_constraints() {
        let y = lambda[i];
        if y.abs() <= 1e-5 * scale {
            continue;
        }
        let gap = if y > 0.0 { prob.u[i] - mz[i] } else { mz[i] - prob.l[i] };
        worst = worst.max(gap.abs() / (1.0 + mz[i].abs()));
    }
    worst
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
