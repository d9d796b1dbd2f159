//! Bounded, θ-independent perturbations `π̃_θ ∝ e^{w} π_θ` of a quadratic
//! model with a one-dimensional latent space. Posteriors are tabulated on a
//! quadrature grid, and the normaliser `N(θ) = ∫ e^{w} dπ_θ` is folded into
//! `ℓ̃` so that `Z̃_θ = Z_θ`.

use std::fmt;
use std::sync::Arc;

use super::quadratic::QuadraticModel;
use crate::error::{invalid, Error, Result};
use crate::laws::TabulatedLaw;
use crate::linalg::{self, Vector};
use crate::quadrature::{log_integral_exp, Grid1d, DEFAULT_NODES, DEFAULT_SPAN};
use crate::scalar::Scalar;

/// A log-weight `w(x)` on a one-dimensional latent space.
pub trait LogWeight<T: Scalar>: Send + Sync {
    fn value(&self, x: T) -> T;
    fn derivative(&self, x: T) -> T;
    fn describe(&self) -> String;
}

/// `w(x) = a·cos(ω x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineWeight<T> {
    pub amplitude: T,
    pub frequency: T,
}

impl<T: Scalar> LogWeight<T> for CosineWeight<T> {
    fn value(&self, x: T) -> T {
        self.amplitude * (self.frequency * x).cos()
    }

    fn derivative(&self, x: T) -> T {
        -self.amplitude * self.frequency * (self.frequency * x).sin()
    }

    fn describe(&self) -> String {
        format!("{}*cos({}*x)", self.amplitude, self.frequency)
    }
}

#[derive(Clone)]
pub struct PerturbedModel<T: Scalar> {
    base: QuadraticModel<T>,
    weight: Arc<dyn LogWeight<T>>,
    log_bound: T,
}

impl<T: Scalar> fmt::Debug for PerturbedModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbedModel")
            .field("base", &self.base)
            .field("weight", &self.weight.describe())
            .field("log_bound", &self.log_bound)
            .finish()
    }
}

/// Slack for round-off when checking `|w| ≤ log c`.
const BOUND_SLACK: f64 = 1e-12;

impl<T: Scalar> PerturbedModel<T> {
    pub fn new(base: QuadraticModel<T>, weight: Arc<dyn LogWeight<T>>, c: T) -> Result<Self> {
        if base.d_x() != 1 {
            return Err(Error::UnsupportedModel(
                "perturbations are tabulated and need a one-dimensional latent space".into(),
            ));
        }
        if !(c > T::one()) || !c.is_finite_value() {
            return Err(invalid("perturbation bound c must be a finite number > 1"));
        }
        let model = Self {
            base,
            weight,
            log_bound: c.ln(),
        };
        let theta = model.base.mle().or_else(|_| {
            model
                .base
                .stationary_point()
                .map(|(t, _)| t)
        });
        let theta = theta.unwrap_or_else(|_| Vector::zeros(model.base.d_theta()));
        model.check_bound(&model.grid(&theta))?;
        Ok(model)
    }

    pub fn base(&self) -> &QuadraticModel<T> {
        &self.base
    }

    pub fn weight(&self) -> &Arc<dyn LogWeight<T>> {
        &self.weight
    }

    pub fn c(&self) -> T {
        self.log_bound.exp()
    }

    fn base_sd(&self) -> T {
        self.base.posterior_cov()[(0, 0)].sqrt()
    }

    /// Quadrature grid centred on the unperturbed posterior at `θ`.
    pub fn grid(&self, theta: &Vector<T>) -> Grid1d<T> {
        let mu = self.base.posterior_mean(theta)[0];
        Grid1d::centred(mu, self.base_sd(), DEFAULT_SPAN, DEFAULT_NODES)
    }

    fn check_bound(&self, grid: &Grid1d<T>) -> Result<()> {
        let limit = self.log_bound + T::lit(BOUND_SLACK);
        for x in grid.nodes() {
            let w = self.weight.value(x);
            if !w.is_finite_value() || w.magnitude() > limit {
                return Err(invalid(format!(
                    "log-weight {} = {w} at x = {x} exceeds the declared bound log c = {}",
                    self.weight.describe(),
                    self.log_bound
                )));
            }
        }
        Ok(())
    }

    fn base_log_density(&self, theta: &Vector<T>) -> impl Fn(T) -> T {
        let mu = self.base.posterior_mean(theta)[0];
        let prec = self.base.q_xx()[(0, 0)];
        move |x| -T::lit(0.5) * prec * (x - mu) * (x - mu)
    }

    /// `log N(θ) = log ∫ e^{w} dπ_θ`.
    pub fn log_normaliser(&self, theta: &Vector<T>) -> T {
        let grid = self.grid(theta);
        let base = self.base_log_density(theta);
        let tilted: Vec<T> = grid.nodes().map(|x| base(x) + self.weight.value(x)).collect();
        let plain: Vec<T> = grid.nodes().map(&base).collect();
        log_integral_exp(&tilted, grid.step) - log_integral_exp(&plain, grid.step)
    }

    pub fn posterior(&self, theta: &Vector<T>) -> Result<TabulatedLaw<T>> {
        let grid = self.grid(theta);
        self.check_bound(&grid)?;
        self.tabulate(theta, grid)
    }

    fn tabulate(&self, theta: &Vector<T>, grid: Grid1d<T>) -> Result<TabulatedLaw<T>> {
        let mu = self.base.posterior_mean(theta)[0];
        let prec = self.base.q_xx()[(0, 0)];
        let w = Arc::clone(&self.weight);
        let w2 = Arc::clone(&self.weight);
        TabulatedLaw::from_log_density(
            grid,
            move |x| -T::lit(0.5) * prec * (x - mu) * (x - mu) + w.value(x),
            move |x| -prec * (x - mu) + w2.derivative(x),
        )
    }

    /// `∇_θ log N(θ) = −Q_θx (E_π̃[x] − E_π[x])`, since `∇_θℓ` is affine in `x`.
    pub fn grad_log_normaliser(&self, theta: &Vector<T>) -> Vector<T> {
        let grid = self.grid(theta);
        let base = self.base_log_density(theta);
        let logs: Vec<T> = grid.nodes().map(|x| base(x) + self.weight.value(x)).collect();
        let log_norm = log_integral_exp(&logs, grid.step);
        let weighted: Vec<T> = grid
            .nodes()
            .zip(&logs)
            .map(|(x, l)| x * (*l - log_norm).exp())
            .collect();
        let tilted_mean = crate::quadrature::trapezoid(&weighted, grid.step);
        let shift = tilted_mean - self.base.posterior_mean(theta)[0];
        -(self.base.q_tx() * Vector::from_element(1, shift))
    }

    pub fn log_rho(&self, theta: &Vector<T>, x: &Vector<T>) -> T {
        self.base.log_rho(theta, x) + self.weight.value(x[0]) - self.log_normaliser(theta)
    }

    pub fn grad_theta(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        self.base.grad_theta(theta, x) - self.grad_log_normaliser(theta)
    }

    pub fn grad_x(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        let mut g = self.base.grad_x(theta, x);
        g[0] += self.weight.derivative(x[0]);
        g
    }

    /// Solves `∫∇_θℓ̃(θ; x) q(dx) = 0` for a law with latent mean `m` by the
    /// fixed-point iteration `θ ← Q_θθ⁻¹(g_θ − Q_θx m − ∇ log N(θ))`.
    pub fn m_step(&self, latent_mean: &Vector<T>) -> Result<Vector<T>> {
        let q_tt_inv = linalg::spd_inverse(&self.base.q_tt(), "parameter block of the negative Hessian")?;
        let rhs = self.base.g_theta() - self.base.q_tx() * latent_mean;
        let mut theta = &q_tt_inv * &rhs;
        for _ in 0..500 {
            let next = &q_tt_inv * (&rhs - self.grad_log_normaliser(&theta));
            let step = (&next - &theta).norm();
            theta = next;
            if step <= T::eps_times(8.0) * (T::one() + theta.norm()) {
                return Ok(theta);
            }
        }
        let residual = (&q_tt_inv * (&rhs - self.grad_log_normaliser(&theta)) - &theta).norm();
        if residual <= T::eps_times(1e4) * (T::one() + theta.norm()) {
            Ok(theta)
        } else {
            Err(Error::DegenerateModel(format!(
                "perturbed M-step did not converge (residual {residual})"
            )))
        }
    }
}
