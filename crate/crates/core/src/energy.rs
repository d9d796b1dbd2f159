//! The free energy `F(θ, q) = ∫ log(q/ρ_θ) dq`, reported as the gap
//! `F − F_⋆ = KL(q ‖ π_θ) + [log Z_⋆ − log Z_θ]`, and the extended Fisher
//! information `I(θ, q) = ‖∫∇_θℓ dq‖² + ∫‖∇_x log(q/ρ_θ)‖² dq`.
//!
//! Gaussian laws on quadratic models are evaluated in closed form. Tabulated
//! laws, and Gaussian laws on perturbed models, are integrated on a grid.
//! Particle clouds are summarised by a moment-matched Gaussian proxy and the
//! resulting report is flagged.

use crate::error::{Error, Result};
use crate::laws::{kl_gaussian, moments, GaussianLaw, Law, ParticleCloud, ProductPoint, TabulatedLaw};
use crate::linalg::{self, Vector};
use crate::model::{Family, ModelSpec};
use crate::quadrature::Grid1d;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTerms<T> {
    pub gap: T,
    pub kl_term: T,
    pub logz_term: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherTerms<T> {
    pub fisher: T,
    pub theta_grad_norm_sq: T,
    pub relative_fisher: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport<T> {
    /// Absolute `F = KL(q ‖ π_θ) − log Z_θ`; absent for particle clouds.
    pub free_energy: Option<T>,
    pub gap: T,
    pub kl_term: T,
    pub logz_term: T,
    pub fisher: T,
    pub theta_grad_norm_sq: T,
    pub relative_fisher: T,
    /// Set when KL and relative Fisher refer to a Gaussian proxy of a cloud.
    pub proxy: bool,
}

fn nonneg<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn particles_refused() -> Error {
    Error::UnsupportedRepresentation(
        "exact energies need a Gaussian or tabulated law; use particle_energy_estimates".into(),
    )
}

/// `log Z_⋆ − log Z_θ`.
pub fn logz_gap<T: Scalar>(model: &ModelSpec<T>, theta: &Vector<T>) -> Result<T> {
    let star = model.mle()?;
    Ok(nonneg(model.log_marginal(&star)? - model.log_marginal(theta)?))
}

fn gaussian_grid<T: Scalar>(g: &GaussianLaw<T>) -> Result<Grid1d<T>> {
    if g.dim() != 1 {
        return Err(Error::UnsupportedRepresentation(
            "quadrature energies are one-dimensional".into(),
        ));
    }
    Ok(Grid1d::gaussian(g.mean()[0], g.cov()[(0, 0)].sqrt()))
}

/// `KL(q ‖ π_θ)` for a law tabulated on a grid.
fn kl_on_grid<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    grid: &Grid1d<T>,
    log_q: &[T],
) -> Result<T> {
    let log_post = model.log_posterior_fn(theta)?;
    let values: Vec<T> = grid
        .nodes()
        .zip(log_q)
        .map(|(x, lq)| lq.exp() * (*lq - log_post(&Vector::from_element(1, x))))
        .collect();
    Ok(nonneg(crate::quadrature::trapezoid(&values, grid.step)))
}

fn relative_fisher_on_grid<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    grid: &Grid1d<T>,
    log_q: &[T],
    score_q: &[T],
) -> T {
    let values: Vec<T> = grid
        .nodes()
        .zip(log_q.iter().zip(score_q))
        .map(|(x, (lq, sq))| {
            let r = *sq - model.grad_x(theta, &Vector::from_element(1, x))[0];
            lq.exp() * r * r
        })
        .collect();
    nonneg(crate::quadrature::trapezoid(&values, grid.step))
}

fn gaussian_tabulation<T: Scalar>(g: &GaussianLaw<T>) -> Result<(Grid1d<T>, Vec<T>, Vec<T>)> {
    let grid = gaussian_grid(g)?;
    let (m, v) = (g.mean()[0], g.cov()[(0, 0)]);
    let log_norm = T::lit(0.5) * (T::two_pi() * v).ln();
    let log_q = grid.nodes().map(|x| -(x - m) * (x - m) / (T::lit(2.0) * v) - log_norm).collect();
    let score = grid.nodes().map(|x| -(x - m) / v).collect();
    Ok((grid, log_q, score))
}

fn kl_to_posterior<T: Scalar>(model: &ModelSpec<T>, theta: &Vector<T>, law: &Law<T>) -> Result<T> {
    match (model.family(), law) {
        (_, Law::Particles(_)) => Err(particles_refused()),
        (Family::Custom(_), _) => Err(Error::UnsupportedModel(format!(
            "model `{}` has no closed-form posterior",
            model.name()
        ))),
        (Family::Quadratic(q), Law::Gaussian(g)) => kl_gaussian(g, &q.posterior(theta)?),
        (_, Law::Gaussian(g)) => {
            let (grid, log_q, _) = gaussian_tabulation(g)?;
            kl_on_grid(model, theta, &grid, &log_q)
        }
        (_, Law::Tabulated(t)) => kl_on_grid(model, theta, t.grid(), t.log_density()),
    }
}

/// `(F − F_⋆, KL(q ‖ π_θ), log Z_⋆ − log Z_θ)`.
pub fn free_energy_gap<T: Scalar>(model: &ModelSpec<T>, p: &ProductPoint<T>) -> Result<GapTerms<T>> {
    let kl_term = kl_to_posterior(model, &p.theta, &p.law)?;
    let logz_term = logz_gap(model, &p.theta)?;
    Ok(GapTerms {
        gap: kl_term + logz_term,
        kl_term,
        logz_term,
    })
}

/// Absolute free energy `KL(q ‖ π_θ) − log Z_θ`.
pub fn free_energy<T: Scalar>(model: &ModelSpec<T>, p: &ProductPoint<T>) -> Result<T> {
    Ok(kl_to_posterior(model, &p.theta, &p.law)? - model.log_marginal(&p.theta)?)
}

/// `E_q ‖∇ log q − ∇_xℓ(θ; ·)‖²` for Gaussian `q = N(m, S)` under a quadratic
/// model with latent precision `P` and posterior mean `μ`:
/// `‖P(m − μ)‖² + tr(M S Mᵀ)` with `M = P − S⁻¹`.
fn relative_fisher_gaussian<T: Scalar>(
    q: &crate::model::QuadraticModel<T>,
    theta: &Vector<T>,
    g: &GaussianLaw<T>,
) -> Result<T> {
    let p = q.q_xx();
    let mu = q.posterior_mean(theta);
    let shift = &p * (g.mean() - mu);
    let m = &p - linalg::spd_inverse(g.cov(), "covariance")?;
    let spread = (&m * g.cov() * m.transpose()).trace();
    Ok(nonneg(shift.dot(&shift) + spread))
}

fn relative_fisher<T: Scalar>(model: &ModelSpec<T>, theta: &Vector<T>, law: &Law<T>) -> Result<T> {
    match (model.family(), law) {
        (_, Law::Particles(_)) => Err(particles_refused()),
        (Family::Custom(_), _) => Err(Error::UnsupportedRepresentation(
            "relative Fisher information for custom models is not available in closed form".into(),
        )),
        (Family::Quadratic(q), Law::Gaussian(g)) => relative_fisher_gaussian(q, theta, g),
        (_, Law::Gaussian(g)) => {
            let (grid, log_q, score) = gaussian_tabulation(g)?;
            Ok(relative_fisher_on_grid(model, theta, &grid, &log_q, &score))
        }
        (_, Law::Tabulated(t)) => Ok(tabulated_relative_fisher(model, theta, t)),
    }
}

fn tabulated_relative_fisher<T: Scalar>(model: &ModelSpec<T>, theta: &Vector<T>, t: &TabulatedLaw<T>) -> T {
    relative_fisher_on_grid(model, theta, t.grid(), t.log_density(), t.score())
}

/// `(I, ‖∫∇_θℓ dq‖², I(q ‖ π_θ))`.
pub fn extended_fisher<T: Scalar>(model: &ModelSpec<T>, p: &ProductPoint<T>) -> Result<FisherTerms<T>> {
    let relative = relative_fisher(model, &p.theta, &p.law)?;
    let grad = model.mean_theta_gradient(&p.theta, &p.law)?;
    let theta_part = grad.dot(&grad);
    Ok(FisherTerms {
        fisher: theta_part + relative,
        theta_grad_norm_sq: theta_part,
        relative_fisher: relative,
    })
}

/// Gap, Fisher information and absolute free energy at an exact point.
pub fn energy_report<T: Scalar>(model: &ModelSpec<T>, p: &ProductPoint<T>) -> Result<EnergyReport<T>> {
    let gap = free_energy_gap(model, p)?;
    let fisher = extended_fisher(model, p)?;
    let log_z = model.log_marginal(&p.theta)?;
    Ok(EnergyReport {
        free_energy: Some(gap.kl_term - log_z),
        gap: gap.gap,
        kl_term: gap.kl_term,
        logz_term: gap.logz_term,
        fisher: fisher.fisher,
        theta_grad_norm_sq: fisher.theta_grad_norm_sq,
        relative_fisher: fisher.relative_fisher,
        proxy: false,
    })
}

/// Diagnostics for a particle cloud: the θ-gradient term is the particle
/// average, KL and relative Fisher use the moment-matched Gaussian proxy,
/// and `log Z_⋆ − log Z_θ` is exact.
pub fn particle_energy_estimates<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    cloud: &ParticleCloud<T>,
) -> Result<EnergyReport<T>> {
    let mom = moments(cloud)?;
    if mom.degenerate {
        return Err(Error::InsufficientParticles(
            "particle covariance is singular, so the Gaussian proxy is undefined".into(),
        ));
    }
    let proxy = Law::Gaussian(GaussianLaw::new(mom.mean, mom.cov)?);
    let mut grad = Vector::zeros(model.d_theta());
    for p in cloud.iter() {
        grad += model.grad_theta(theta, &Vector::from_column_slice(p));
    }
    grad /= T::from_usize_lossy(cloud.len());
    let theta_part = grad.dot(&grad);
    let kl_term = kl_to_posterior(model, theta, &proxy)?;
    let relative = relative_fisher(model, theta, &proxy)?;
    let logz_term = logz_gap(model, theta)?;
    Ok(EnergyReport {
        free_energy: None,
        gap: kl_term + logz_term,
        kl_term,
        logz_term,
        fisher: theta_part + relative,
        theta_grad_norm_sq: theta_part,
        relative_fisher: relative,
        proxy: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_conjugate_1d, perturbed_model, CosineWeight};
    use crate::quadrature::integrate_1d;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn v1(x: f64) -> Vector<f64> {
        Vector::from_element(1, x)
    }

    fn conj() -> ModelSpec<f64> {
        make_conjugate_1d(0.0, 1.0, 1.0).unwrap()
    }

    fn point(theta: f64, mean: f64, var: f64) -> ProductPoint<f64> {
        ProductPoint::new(v1(theta), GaussianLaw::scalar(mean, var).unwrap())
    }

    /// Direct quadrature of `∫ q log(q/ρ_θ)` minus `F_⋆ = −log Z_⋆`, with `Z_⋆`
    /// itself obtained by quadrature of `ρ_{θ⋆}` over x.
    fn gap_by_quadrature(model: &ModelSpec<f64>, theta: f64, mean: f64, var: f64) -> f64 {
        let sd = var.sqrt();
        let grid = Grid1d::gaussian(mean, sd);
        let log_q = |x: f64| -(x - mean).powi(2) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let f = integrate_1d(&grid, |x| log_q(x).exp() * (log_q(x) - model.log_rho(&v1(theta), &v1(x))));
        let star = model.mle().unwrap();
        let post = model.exact_posterior(&star).unwrap().mean()[0];
        let wide = Grid1d::gaussian(post, 1.0);
        let z_star = integrate_1d(&wide, |x| model.log_rho(&star, &v1(x)).exp());
        f + z_star.ln()
    }

    fn fisher_by_quadrature(model: &ModelSpec<f64>, theta: f64, mean: f64, var: f64) -> f64 {
        let grid = Grid1d::gaussian(mean, var.sqrt());
        let q = |x: f64| (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let h = 1e-5;
        let d_theta = |x: f64| {
            (model.log_rho(&v1(theta + h), &v1(x)) - model.log_rho(&v1(theta - h), &v1(x))) / (2.0 * h)
        };
        let d_x = |x: f64| {
            (model.log_rho(&v1(theta), &v1(x + h)) - model.log_rho(&v1(theta), &v1(x - h))) / (2.0 * h)
        };
        let theta_part = integrate_1d(&grid, |x| q(x) * d_theta(x)).powi(2);
        let rel = integrate_1d(&grid, |x| q(x) * (-(x - mean) / var - d_x(x)).powi(2));
        theta_part + rel
    }

    #[test]
    fn gap_cases() {
        let m = conj();
        let at_opt = free_energy_gap(&m, &point(0.0, 0.0, 0.5)).unwrap();
        assert!(at_opt.gap.abs() < 1e-15 && at_opt.kl_term.abs() < 1e-15);

        let em = free_energy_gap(&m, &point(1.0, 0.5, 0.5)).unwrap();
        assert!(em.kl_term.abs() < 1e-15);
        assert_relative_eq!(em.logz_term, 0.25, epsilon = 1e-14);
        assert_relative_eq!(em.gap, 0.25, epsilon = 1e-14);
        assert_relative_eq!(gap_by_quadrature(&m, 1.0, 0.5, 0.5), 0.25, epsilon = 1e-8);

        let off = free_energy_gap(&m, &point(0.0, 1.0, 0.5)).unwrap();
        assert_relative_eq!(off.kl_term, 1.0, epsilon = 1e-14);
        assert!(off.logz_term.abs() < 1e-15);
        assert_relative_eq!(off.gap, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fisher_cases() {
        let m = conj();
        // q = π_θ: relative part vanishes and I = ‖∇_θ log Z_θ‖².
        for theta in [-1.3, 0.4, 2.0] {
            let f = extended_fisher(&m, &point(theta, theta / 2.0, 0.5)).unwrap();
            assert!(f.relative_fisher.abs() < 1e-14);
            let h = 1e-5;
            let fd = (m.log_marginal(&v1(theta + h)).unwrap() - m.log_marginal(&v1(theta - h)).unwrap()) / (2.0 * h);
            assert!((f.fisher - fd * fd).abs() < 1e-8);
            assert_relative_eq!(f.fisher, theta * theta / 4.0, epsilon = 1e-14);
        }
        let f = extended_fisher(&m, &point(0.0, 0.0, 0.25)).unwrap();
        assert_relative_eq!(f.relative_fisher, 1.0, epsilon = 1e-14);
        assert_relative_eq!(fisher_by_quadrature(&m, 0.0, 0.0, 0.25), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let m = make_conjugate_1d(0.7, 1.3, 0.6).unwrap();
        for &(theta, mean, var) in &[(0.2, -0.4, 0.3), (1.5, 1.0, 2.0), (-2.0, 0.1, 0.05)] {
            let p = point(theta, mean, var);
            let gap = free_energy_gap(&m, &p).unwrap().gap;
            let fisher = extended_fisher(&m, &p).unwrap().fisher;
            assert_relative_eq!(gap, gap_by_quadrature(&m, theta, mean, var), max_relative = 1e-4);
            assert_relative_eq!(fisher, fisher_by_quadrature(&m, theta, mean, var), max_relative = 1e-4);
        }
    }

    #[test]
    fn absolute_free_energy_is_gap_minus_log_z_star() {
        let m = conj();
        let p = point(0.3, -0.2, 0.7);
        let f = free_energy(&m, &p).unwrap();
        let gap = free_energy_gap(&m, &p).unwrap().gap;
        let f_star = -m.log_marginal(&m.mle().unwrap()).unwrap();
        assert_relative_eq!(f - f_star, gap, epsilon = 1e-12);
    }

    #[test]
    fn particles_are_refused_by_exact_functionals() {
        let m = conj();
        let cloud = ParticleCloud::from_scalars(vec![0.0, 1.0, 2.0]).unwrap();
        let p = ProductPoint::new(v1(0.0), cloud);
        assert!(matches!(free_energy_gap(&m, &p), Err(Error::UnsupportedRepresentation(_))));
        assert!(matches!(extended_fisher(&m, &p), Err(Error::UnsupportedRepresentation(_))));
    }

    #[test]
    fn particle_estimates() {
        let m = conj();
        let theta = 1.0;
        let post = GaussianLaw::scalar(0.5, 0.5).unwrap();
        let cloud = ParticleCloud::gaussian_quantiles(&post, 10_000).unwrap();
        let r = particle_energy_estimates(&m, &v1(theta), &cloud).unwrap();
        assert!(r.proxy);
        assert!(r.free_energy.is_none());
        assert!((r.theta_grad_norm_sq - 0.25).abs() < 1e-4);
        assert_relative_eq!(r.logz_term, 0.25, epsilon = 1e-14);

        let flat = ParticleCloud::from_scalars(vec![0.3; 8]).unwrap();
        assert!(matches!(
            particle_energy_estimates(&m, &v1(theta), &flat),
            Err(Error::InsufficientParticles(_))
        ));
    }

    #[test]
    fn perturbed_energies_at_em_iterates() {
        let base = conj();
        let w = Arc::new(CosineWeight { amplitude: 0.1, frequency: 1.0 });
        let m = perturbed_model(&base, w, 0.1_f64.exp(), 1.5, 2.4).unwrap();
        let theta = v1(0.8);
        let law = m.exact_posterior(&theta).unwrap();
        let r = energy_report(&m, &ProductPoint { theta: theta.clone(), law }).unwrap();
        assert!(r.kl_term < 1e-10 && r.relative_fisher < 1e-10);
        // Same Z_θ, so the gap and the Fisher identity match the base model.
        assert_relative_eq!(r.logz_term, 0.16, epsilon = 1e-12);
        assert_relative_eq!(r.theta_grad_norm_sq, 0.16, epsilon = 1e-8);
    }
}
