//! Model generators and independent oracles shared by the property tests and
//! the acceptance suite.

#![allow(dead_code)]

use emflows::energy::energy_report;
use emflows::laws::{w2_gaussian, GaussianLaw, Law, ProductPoint};
use emflows::linalg::{Matrix, Vector};
use emflows::model::{make_conjugate_1d, make_hierarchical, HierarchicalModelConfig, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v1(x: f64) -> Vector<f64> {
    Vector::from_element(1, x)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector<f64> {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// `AAᵀ + floor·I` with entries of `A` uniform on `[−1, 1]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + Matrix::identity(n, n) * floor
}

/// Well-conditioned square matrix: identity plus a small random part.
fn random_full_rank(rng: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    Matrix::identity(n, n) + random_matrix(rng, n, n) * 0.3
}

/// Random balanced hierarchical model with `d_x = m·block ≤ 4`.
pub fn random_hierarchical(rng: &mut ChaCha8Rng) -> ModelSpec<f64> {
    let blocks = rng.random_range(1..=4usize);
    let block = rng.random_range(1..=4 / blocks);
    let d_theta = rng.random_range(1..=block);
    let d = {
        let full = random_full_rank(rng, block);
        full.columns(0, d_theta).into_owned()
    };
    let c = (0..blocks).map(|_| random_full_rank(rng, block)).collect();
    let cfg = HierarchicalModelConfig {
        blocks,
        c,
        d,
        sigma_u: random_spd(rng, block, 0.3),
        sigma_v: random_spd(rng, block, 0.3),
        y: random_vector(rng, blocks * block, 2.0),
    };
    make_hierarchical(&cfg).expect("random hierarchical model")
}

pub fn random_conjugate(rng: &mut ChaCha8Rng) -> ModelSpec<f64> {
    let y = rng.random_range(-2.0..2.0);
    let pv = rng.random_range(0.3..3.0);
    let ov = rng.random_range(0.3..3.0);
    make_conjugate_1d(y, pv, ov).expect("conjugate model")
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> GaussianLaw<f64> {
    GaussianLaw::new(random_vector(rng, dim, 2.0), random_spd(rng, dim, 0.2)).expect("random Gaussian")
}

/// Worst relative error between `∇ℓ` and central finite differences of `log_rho`.
pub fn finite_difference_error(model: &ModelSpec<f64>, theta: &Vector<f64>, x: &Vector<f64>) -> f64 {
    let eps = 1e-5;
    let gt = model.grad_theta(theta, x);
    let gx = model.grad_x(theta, x);
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += eps;
        dn[i] -= eps;
        let fd = (model.log_rho(&up, x) - model.log_rho(&dn, x)) / (2.0 * eps);
        worst = worst.max((fd - gt[i]).abs() / (1.0 + gt[i].abs()));
    }
    for i in 0..x.len() {
        let mut up = x.clone();
        let mut dn = x.clone();
        up[i] += eps;
        dn[i] -= eps;
        let fd = (model.log_rho(theta, &up) - model.log_rho(theta, &dn)) / (2.0 * eps);
        worst = worst.max((fd - gx[i]).abs() / (1.0 + gx[i].abs()));
    }
    worst
}

/// Composite Simpson rule on `[a, b]` with an even number of panels.
pub fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `log ∫ e^{ℓ(θ, x)} dx` by Simpson over a wide window around `centre`.
fn log_z_by_quadrature(model: &ModelSpec<f64>, theta: f64, centre: f64) -> f64 {
    let shift = model.log_rho(&v1(theta), &v1(centre));
    simpson(centre - 40.0, centre + 40.0, 8000, |x| (model.log_rho(&v1(theta), &v1(x)) - shift).exp()).ln() + shift
}

/// Free-energy gap and extended Fisher information of `(θ, N(m, s²))` on a
/// one-dimensional model, from quadrature and finite differences only.
/// `log Z_θ` is quadratic in `θ` here, so `max_θ log Z_θ` follows from three
/// quadrature evaluations.
pub fn energy_by_quadrature(model: &ModelSpec<f64>, theta: f64, m: f64, s: f64) -> (f64, f64) {
    let t = v1(theta);
    let lo = m - 12.0 * s;
    let hi = m + 12.0 * s;
    let n = 6000;
    let q = |x: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let entropy_term = simpson(lo, hi, n, |x| {
        let d = q(x);
        if d > 0.0 {
            d * d.ln()
        } else {
            0.0
        }
    });
    let energy_term = simpson(lo, hi, n, |x| q(x) * model.log_rho(&t, &v1(x)));
    let free_energy = entropy_term - energy_term;

    let lz = |th: f64| log_z_by_quadrature(model, th, m);
    let (f0, f1, f2) = (lz(-1.0), lz(0.0), lz(1.0));
    let a = (f2 + f0 - 2.0 * f1) / 2.0;
    let b = (f2 - f0) / 2.0;
    let log_z_star = f1 - b * b / (4.0 * a);
    let gap = free_energy + log_z_star;

    let eps = 1e-5;
    let d_theta = simpson(lo, hi, n, |x| {
        q(x) * (model.log_rho(&v1(theta + eps), &v1(x)) - model.log_rho(&v1(theta - eps), &v1(x))) / (2.0 * eps)
    });
    let relative = simpson(lo, hi, n, |x| {
        let dl = (model.log_rho(&t, &v1(x + eps)) - model.log_rho(&t, &v1(x - eps))) / (2.0 * eps);
        let score = -(x - m) / (s * s);
        q(x) * (score - dl).powi(2)
    });
    (gap, d_theta * d_theta + relative)
}

/// `(|Δgap|, |ΔI|)` between the closed forms and [`energy_by_quadrature`].
pub fn closed_form_energy_error(model: &ModelSpec<f64>, theta: f64, m: f64, s: f64) -> (f64, f64) {
    let law = GaussianLaw::scalar(m, s * s).unwrap();
    let report = energy_report(model, &ProductPoint::new(v1(theta), law)).unwrap();
    let (gap, fisher) = energy_by_quadrature(model, theta, m, s);
    ((report.gap - gap).abs(), (report.fisher - fisher).abs())
}

/// `W₂(a, c) − W₂(a, b) − W₂(b, c)`, which must be ≤ 0.
pub fn bures_triangle_excess(rng: &mut ChaCha8Rng, dim: usize) -> f64 {
    let a = random_gaussian(rng, dim);
    let b = random_gaussian(rng, dim);
    let c = random_gaussian(rng, dim);
    w2_gaussian(&a, &c).unwrap() - w2_gaussian(&a, &b).unwrap() - w2_gaussian(&b, &c).unwrap()
}

/// `|W₂(Ra + t, Rb + t) − W₂(a, b)|` for a random rotation `R`.
pub fn bures_rotation_error(rng: &mut ChaCha8Rng, dim: usize) -> f64 {
    let a = random_gaussian(rng, dim);
    let b = random_gaussian(rng, dim);
    let r = random_matrix(rng, dim, dim).qr().q();
    let t = random_vector(rng, dim, 3.0);
    let ra = a.affine_image(&r, &t).unwrap();
    let rb = b.affine_image(&r, &t).unwrap();
    (w2_gaussian(&ra, &rb).unwrap() - w2_gaussian(&a, &b).unwrap()).abs()
}

/// `‖∫∇_θℓ(θ', ·) dq‖` at the exact M-step `θ'` for a random Gaussian `q`,
/// scaled by the gradient size at a perturbed parameter.
pub fn m_step_residual(rng: &mut ChaCha8Rng, model: &ModelSpec<f64>) -> f64 {
    let law = Law::Gaussian(random_gaussian(rng, model.d_x()));
    let theta = model.exact_m_step(&law).unwrap();
    let g = model.mean_theta_gradient(&theta, &law).unwrap();
    let off = &theta + Vector::from_element(theta.len(), 1.0);
    let scale = model.mean_theta_gradient(&off, &law).unwrap().norm();
    g.norm() / (1.0 + scale)
}

/// Largest `‖∇_•ℓ(z) − ∇_•ℓ(z')‖ / (L_• ‖z − z'‖)` over random pairs; ≤ 1 when
/// the stored constants are valid.
pub fn lipschitz_ratio(rng: &mut ChaCha8Rng, model: &ModelSpec<f64>, pairs: usize) -> f64 {
    let (dt, dx) = (model.d_theta(), model.d_x());
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (t1, x1) = (random_vector(rng, dt, 3.0), random_vector(rng, dx, 3.0));
        let (t2, x2) = (random_vector(rng, dt, 3.0), random_vector(rng, dx, 3.0));
        let dz = ((&t1 - &t2).norm_squared() + (&x1 - &x2).norm_squared()).sqrt();
        let gt = (model.grad_theta(&t1, &x1) - model.grad_theta(&t2, &x2)).norm();
        let gx = (model.grad_x(&t1, &x1) - model.grad_x(&t2, &x2)).norm();
        worst = worst
            .max(gt / (model.lipschitz_theta() * dz))
            .max(gx / (model.lipschitz_x() * dz));
    }
    worst
}
