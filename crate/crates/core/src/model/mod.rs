//! The latent-variable model contract and the built-in model families.
//!
//! A [`ModelSpec`] couples a complete log-likelihood `ℓ(θ; x) = log ρ_θ(x)`
//! with its gradients, the Lipschitz constants `L_θ`, `L_x`, and whatever
//! closed forms the family provides (posterior, M-step, `log Z_θ`, MLE,
//! stationary point). Wrapper constructors record themselves in the
//! construction chain so that certified constants can be composed later.

mod perturbed;
mod quadratic;

use std::fmt;
use std::sync::Arc;

pub use perturbed::{CosineWeight, LogWeight, PerturbedModel};
pub use quadratic::QuadraticModel;

use crate::error::{invalid, Error, Result};
use crate::laws::{Law, ProductPoint};
use crate::linalg::{self, Matrix, Vector};
use crate::scalar::Scalar;

/// A user-supplied complete log-likelihood with analytic gradients.
pub trait LatentDensity<T: Scalar>: Send + Sync {
    fn log_rho(&self, theta: &Vector<T>, x: &Vector<T>) -> T;
    fn grad_theta(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T>;
    fn grad_x(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T>;
}

#[derive(Clone)]
pub enum Family<T: Scalar> {
    Quadratic(QuadraticModel<T>),
    Perturbed(PerturbedModel<T>),
    Custom(Arc<dyn LatentDensity<T>>),
}

impl<T: Scalar> fmt::Debug for Family<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            Family::Perturbed(p) => f.debug_tuple("Perturbed").field(p).finish(),
            Family::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// One link of the chain that produced a model.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstructionStep<T> {
    /// The base family. `min_eigenvalue` is the smallest eigenvalue of the
    /// constant negative Hessian when there is one; `declared` is a
    /// user-declared strong-concavity constant.
    Base {
        family: String,
        min_eigenvalue: Option<T>,
        declared: Option<T>,
    },
    Pushforward { lipschitz_t: T },
    /// `c` bounds the density ratio `dπ_θ/dπ̃_θ` within `[1/c, c]`.
    Perturbation { c: T, b: T },
}

#[derive(Debug, Clone)]
pub struct ModelSpec<T: Scalar> {
    name: String,
    d_theta: usize,
    d_x: usize,
    lipschitz_theta: T,
    lipschitz_x: T,
    strong_concavity: Option<T>,
    family: Family<T>,
    chain: Vec<ConstructionStep<T>>,
}

fn positive<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v > T::zero() && v.is_finite_value() {
        Ok(v)
    } else {
        Err(invalid(format!("{what} must be positive and finite, got {v}")))
    }
}

impl<T: Scalar> ModelSpec<T> {
    fn from_quadratic(name: String, q: QuadraticModel<T>, chain: Vec<ConstructionStep<T>>) -> Self {
        let (lt, lx) = q.lipschitz();
        let lambda = q.min_eigenvalue();
        Self {
            name,
            d_theta: q.d_theta(),
            d_x: q.d_x(),
            lipschitz_theta: lt,
            lipschitz_x: lx,
            strong_concavity: (lambda > T::zero()).then_some(lambda),
            family: Family::Quadratic(q),
            chain,
        }
    }

    /// Replaces the stored Lipschitz constants. Larger constants remain valid
    /// upper bounds; smaller ones are the caller's responsibility.
    pub fn with_lipschitz(mut self, lipschitz_theta: T, lipschitz_x: T) -> Result<Self> {
        self.lipschitz_theta = positive(lipschitz_theta, "lipschitz_theta")?;
        self.lipschitz_x = positive(lipschitz_x, "lipschitz_x")?;
        Ok(self)
    }

    fn base_step(family: &str, q: &QuadraticModel<T>) -> ConstructionStep<T> {
        ConstructionStep::Base {
            family: family.to_string(),
            min_eigenvalue: Some(q.min_eigenvalue()),
            declared: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn lipschitz_theta(&self) -> T {
        self.lipschitz_theta
    }

    pub fn lipschitz_x(&self) -> T {
        self.lipschitz_x
    }

    /// `L = max(L_θ, L_x)`.
    pub fn lipschitz(&self) -> T {
        if self.lipschitz_theta > self.lipschitz_x {
            self.lipschitz_theta
        } else {
            self.lipschitz_x
        }
    }

    pub fn strong_concavity(&self) -> Option<T> {
        self.strong_concavity
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn construction(&self) -> &[ConstructionStep<T>] {
        &self.chain
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticModel<T>> {
        match &self.family {
            Family::Quadratic(q) => Some(q),
            _ => None,
        }
    }

    /// The constant negative Hessian `−∇²ℓ`, when the family has one.
    pub fn neg_hessian(&self) -> Option<&Matrix<T>> {
        self.as_quadratic().map(|q| q.neg_hessian())
    }

    pub fn has_closed_forms(&self) -> bool {
        !matches!(self.family, Family::Custom(_))
    }

    pub fn log_rho(&self, theta: &Vector<T>, x: &Vector<T>) -> T {
        match &self.family {
            Family::Quadratic(q) => q.log_rho(theta, x),
            Family::Perturbed(p) => p.log_rho(theta, x),
            Family::Custom(c) => c.log_rho(theta, x),
        }
    }

    pub fn grad_theta(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        match &self.family {
            Family::Quadratic(q) => q.grad_theta(theta, x),
            Family::Perturbed(p) => p.grad_theta(theta, x),
            Family::Custom(c) => c.grad_theta(theta, x),
        }
    }

    pub fn grad_x(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        match &self.family {
            Family::Quadratic(q) => q.grad_x(theta, x),
            Family::Perturbed(p) => p.grad_x(theta, x),
            Family::Custom(c) => c.grad_x(theta, x),
        }
    }

    fn no_closed_forms(&self, what: &str) -> Error {
        Error::UnsupportedModel(format!("model `{}` has no closed-form {what}", self.name))
    }

    /// The posterior `π_θ`: Gaussian for quadratic models, tabulated for
    /// perturbed ones.
    pub fn exact_posterior(&self, theta: &Vector<T>) -> Result<Law<T>> {
        self.check_theta(theta)?;
        match &self.family {
            Family::Quadratic(q) => Ok(Law::Gaussian(q.posterior(theta)?)),
            Family::Perturbed(p) => Ok(Law::Tabulated(p.posterior(theta)?)),
            Family::Custom(_) => Err(self.no_closed_forms("posterior")),
        }
    }

    /// Maximiser of `θ ↦ ∫ℓ(θ; x) q(dx)`. Only the latent mean of `q`
    /// matters because `∇_θℓ` is affine in `x` for every built-in family.
    pub fn exact_m_step(&self, law: &Law<T>) -> Result<Vector<T>> {
        if law.dim() != self.d_x {
            return Err(invalid(format!(
                "law has dimension {}, model latent dimension is {}",
                law.dim(),
                self.d_x
            )));
        }
        let mean = law.mean();
        match &self.family {
            Family::Quadratic(q) => q.m_step(&mean),
            Family::Perturbed(p) => p.m_step(&mean),
            Family::Custom(_) => Err(self.no_closed_forms("M-step")),
        }
    }

    /// `log Z_θ`.
    pub fn log_marginal(&self, theta: &Vector<T>) -> Result<T> {
        self.check_theta(theta)?;
        match &self.family {
            Family::Quadratic(q) => Ok(q.log_marginal(theta)),
            Family::Perturbed(p) => Ok(p.base().log_marginal(theta)),
            Family::Custom(_) => Err(self.no_closed_forms("marginal likelihood")),
        }
    }

    /// `θ_⋆`, the unique maximiser of `log Z_θ`.
    pub fn mle(&self) -> Result<Vector<T>> {
        match &self.family {
            Family::Quadratic(q) => q.mle(),
            Family::Perturbed(p) => p.base().mle(),
            Family::Custom(_) => Err(self.no_closed_forms("MLE")),
        }
    }

    /// `(θ_†, x_†)` with `∇ℓ(θ_†; x_†) = 0`.
    pub fn stationary_point(&self) -> Result<(Vector<T>, Vector<T>)> {
        match &self.family {
            Family::Quadratic(q) => q.stationary_point(),
            _ => Err(self.no_closed_forms("stationary point")),
        }
    }

    /// `∇_xℓ(θ; x) = A x + b_θ` for models with affine latent gradients.
    pub fn langevin_affine(&self, theta: &Vector<T>) -> Result<(Matrix<T>, Vector<T>)> {
        match &self.family {
            Family::Quadratic(q) => Ok(q.langevin_affine(theta)),
            _ => Err(Error::UnsupportedModel(format!(
                "model `{}` does not have an affine latent gradient",
                self.name
            ))),
        }
    }

    /// `∫∇_θℓ(θ; x) q(dx)`: exact at the mean for the built-in families, a
    /// particle average otherwise.
    pub fn mean_theta_gradient(&self, theta: &Vector<T>, law: &Law<T>) -> Result<Vector<T>> {
        match (&self.family, law) {
            (Family::Quadratic(_) | Family::Perturbed(_), _) => Ok(self.grad_theta(theta, &law.mean())),
            (Family::Custom(_), Law::Particles(cloud)) => {
                let mut acc = Vector::zeros(self.d_theta);
                for p in cloud.iter() {
                    acc += self.grad_theta(theta, &Vector::from_column_slice(p));
                }
                Ok(acc / T::from_usize_lossy(cloud.len()))
            }
            (Family::Custom(_), _) => Err(Error::UnsupportedRepresentation(
                "custom models integrate gradients over particle clouds only".into(),
            )),
        }
    }

    /// `x ↦ log π_θ(x) = ℓ(θ; x) − log Z_θ`, with the θ-dependent constants
    /// evaluated once.
    pub fn log_posterior_fn(&self, theta: &Vector<T>) -> Result<Box<dyn Fn(&Vector<T>) -> T + '_>> {
        let log_z = self.log_marginal(theta)?;
        let theta = theta.clone();
        match &self.family {
            Family::Quadratic(q) => Ok(Box::new(move |x| q.log_rho(&theta, x) - log_z)),
            Family::Perturbed(p) => {
                let shift = p.log_normaliser(&theta) + log_z;
                Ok(Box::new(move |x| {
                    p.base().log_rho(&theta, x) + p.weight().value(x[0]) - shift
                }))
            }
            Family::Custom(_) => Err(self.no_closed_forms("posterior")),
        }
    }

    /// `{(θ_⋆, π_{θ_⋆})}`.
    pub fn optimum_set(&self) -> Result<Vec<ProductPoint<T>>> {
        let theta = self.mle()?;
        let law = self.exact_posterior(&theta)?;
        Ok(vec![ProductPoint { theta, law }])
    }

    pub fn check_theta(&self, theta: &Vector<T>) -> Result<()> {
        if theta.len() != self.d_theta {
            return Err(invalid(format!(
                "θ has length {}, model expects {}",
                theta.len(),
                self.d_theta
            )));
        }
        Ok(())
    }
}

/// `ρ_θ(x) = N(y; x, obs_var)·N(x; θ, prior_var)`.
pub fn make_conjugate_1d<T: Scalar>(y: T, prior_var: T, obs_var: T) -> Result<ModelSpec<T>> {
    positive(prior_var, "prior_var")?;
    positive(obs_var, "obs_var")?;
    if !y.is_finite_value() {
        return Err(invalid("y must be finite"));
    }
    let config = HierarchicalModelConfig {
        blocks: 1,
        c: vec![Matrix::identity(1, 1)],
        d: Matrix::identity(1, 1),
        sigma_u: Matrix::from_element(1, 1, obs_var),
        sigma_v: Matrix::from_element(1, 1, prior_var),
        y: Vector::from_element(1, y),
    };
    let q = config.quadratic()?;
    let name = format!("conjugate_1d(y={y}, prior_var={prior_var}, obs_var={obs_var})");
    let chain = vec![ModelSpec::base_step("conjugate_1d", &q)];
    Ok(ModelSpec::from_quadratic(name, q, chain))
}

/// `Y_i = C_i X_i + U_i`, `X_i = Dθ + V_i` for `i = 1..m`, with
/// `U_i ~ N(0, Σ_u)` and `V_i ~ N(0, Σ_v)`.
///
/// `D` is `block_dim × d_θ`, so `Dθ` is an `x_i`-block. Each `C_i` is
/// `obs_dim × block_dim` and `y` stacks the `m` observation blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModelConfig<T: Scalar> {
    pub blocks: usize,
    pub c: Vec<Matrix<T>>,
    pub d: Matrix<T>,
    pub sigma_u: Matrix<T>,
    pub sigma_v: Matrix<T>,
    pub y: Vector<T>,
}

impl<T: Scalar> HierarchicalModelConfig<T> {
    fn validate_cov(m: &Matrix<T>, what: &str) -> Result<()> {
        if !m.is_square() {
            return Err(invalid(format!("{what} must be square")));
        }
        if !linalg::all_finite(m.as_slice()) {
            return Err(invalid(format!("{what} has non-finite entries")));
        }
        if !linalg::is_symmetric(m, T::lit(1e-12)) {
            return Err(invalid(format!("{what} is not symmetric")));
        }
        if linalg::min_eigenvalue(m) <= T::zero() {
            return Err(Error::DegenerateModel(format!("{what} is not positive definite")));
        }
        Ok(())
    }

    fn quadratic(&self) -> Result<QuadraticModel<T>> {
        let m = self.blocks;
        if m == 0 {
            return Err(invalid("block count m must be ≥ 1"));
        }
        if self.c.len() != m {
            return Err(invalid(format!("expected {m} observation matrices, got {}", self.c.len())));
        }
        let k = self.d.nrows();
        let dt = self.d.ncols();
        if k == 0 || dt == 0 {
            return Err(invalid("D must be non-empty"));
        }
        let p = self.sigma_u.nrows();
        linalg::check_dims(&self.sigma_v, k, k, "Σ_v")?;
        linalg::check_dims(&self.sigma_u, p, p, "Σ_u")?;
        for (i, ci) in self.c.iter().enumerate() {
            linalg::check_dims(ci, p, k, &format!("C_{i}"))?;
        }
        if self.y.len() != m * p {
            return Err(invalid(format!(
                "y has length {}, expected m·obs_dim = {}",
                self.y.len(),
                m * p
            )));
        }
        let finite = |mat: &Matrix<T>| linalg::all_finite(mat.as_slice());
        if !finite(&self.d) || !self.c.iter().all(finite) || !linalg::all_finite(self.y.as_slice()) {
            return Err(invalid("hierarchical model has non-finite inputs"));
        }
        Self::validate_cov(&self.sigma_u, "Σ_u")?;
        Self::validate_cov(&self.sigma_v, "Σ_v")?;
        let su_inv = linalg::spd_inverse(&self.sigma_u, "Σ_u")?;
        let sv_inv = linalg::spd_inverse(&self.sigma_v, "Σ_v")?;
        let dtsd = self.d.transpose() * &sv_inv * &self.d;
        if linalg::spd_inverse(&dtsd, "DᵀΣ_v⁻¹D").is_err() || linalg::min_eigenvalue(&dtsd) <= T::zero() {
            return Err(Error::DegenerateModel("DᵀΣ_v⁻¹D is singular".into()));
        }

        let d_x = m * k;
        let n = dt + d_x;
        let mut q = Matrix::zeros(n, n);
        let mut g = Vector::zeros(n);
        q.view_mut((0, 0), (dt, dt))
            .copy_from(&(&dtsd * T::from_usize_lossy(m)));
        let cross = -(self.d.transpose() * &sv_inv);
        let two_pi = T::two_pi();
        let log_det_u = linalg::log_det_spd(&(&self.sigma_u * two_pi), "Σ_u")?;
        let log_det_v = linalg::log_det_spd(&(&self.sigma_v * two_pi), "Σ_v")?;
        let mut c = T::zero();
        for (i, ci) in self.c.iter().enumerate() {
            let off = dt + i * k;
            let yi = self.y.rows(i * p, p).into_owned();
            q.view_mut((0, off), (dt, k)).copy_from(&cross);
            q.view_mut((off, 0), (k, dt)).copy_from(&cross.transpose());
            q.view_mut((off, off), (k, k))
                .copy_from(&(ci.transpose() * &su_inv * ci + &sv_inv));
            g.rows_mut(off, k).copy_from(&(ci.transpose() * &su_inv * &yi));
            c -= T::lit(0.5) * (yi.dot(&(&su_inv * &yi)) + log_det_u + log_det_v);
        }
        QuadraticModel::new(dt, q, g, c)
    }
}

pub fn make_hierarchical<T: Scalar>(config: &HierarchicalModelConfig<T>) -> Result<ModelSpec<T>> {
    let q = config.quadratic()?;
    let name = format!(
        "hierarchical(m={}, d_theta={}, d_x={})",
        config.blocks,
        q.d_theta(),
        q.d_x()
    );
    let chain = vec![ModelSpec::base_step("hierarchical", &q)];
    Ok(ModelSpec::from_quadratic(name, q, chain))
}

/// A model given directly by `ℓ(θ, x) = −½ zᵀQz + gᵀz + c`. `Q` need not be
/// positive definite, but its latent block must be.
pub fn make_quadratic<T: Scalar>(
    name: &str,
    d_theta: usize,
    neg_hessian: Matrix<T>,
    linear: Vector<T>,
    constant: T,
) -> Result<ModelSpec<T>> {
    let q = QuadraticModel::new(d_theta, neg_hessian, linear, constant)?;
    let chain = vec![ModelSpec::base_step("quadratic", &q)];
    Ok(ModelSpec::from_quadratic(name.to_string(), q, chain))
}

/// A user model. The Lipschitz constants of `∇ℓ` are hypotheses and must be
/// supplied; `strong_concavity`, if given, must not exceed `min(L_θ, L_x)`.
pub fn make_custom<T: Scalar>(
    name: &str,
    d_theta: usize,
    d_x: usize,
    density: Arc<dyn LatentDensity<T>>,
    lipschitz_theta: T,
    lipschitz_x: T,
    strong_concavity: Option<T>,
) -> Result<ModelSpec<T>> {
    if d_theta == 0 || d_x == 0 {
        return Err(invalid("dimensions must be ≥ 1"));
    }
    positive(lipschitz_theta, "lipschitz_theta")?;
    positive(lipschitz_x, "lipschitz_x")?;
    if let Some(lambda) = strong_concavity {
        positive(lambda, "strong_concavity")?;
        let cap = if lipschitz_theta < lipschitz_x { lipschitz_theta } else { lipschitz_x };
        if lambda > cap {
            return Err(invalid(format!(
                "strong_concavity {lambda} exceeds min(L_theta, L_x) = {cap}"
            )));
        }
    }
    Ok(ModelSpec {
        name: name.to_string(),
        d_theta,
        d_x,
        lipschitz_theta,
        lipschitz_x,
        strong_concavity,
        family: Family::Custom(density),
        chain: vec![ConstructionStep::Base {
            family: "custom".into(),
            min_eigenvalue: None,
            declared: strong_concavity,
        }],
    })
}

/// The model with completion `T_#π_θ` for `T(x) = A x + b` and the same
/// `Z_θ`: `ℓ̃(θ; x) = ℓ(θ; A⁻¹(x − b)) − log|det A|`.
pub fn pushforward_model<T: Scalar>(model: &ModelSpec<T>, a: &Matrix<T>, b: &Vector<T>) -> Result<ModelSpec<T>> {
    let q = match &model.family {
        Family::Quadratic(q) => q,
        _ => {
            return Err(Error::UnsupportedModel(
                "pushforwards are available for quadratic models only".into(),
            ))
        }
    };
    let pushed = q.pushforward(a, b)?;
    let mut chain = model.chain.clone();
    chain.push(ConstructionStep::Pushforward {
        lipschitz_t: linalg::op_norm(a),
    });
    let name = format!("pushforward({})", model.name);
    Ok(ModelSpec::from_quadratic(name, pushed, chain))
}

/// `π̃_θ ∝ e^{w} π_θ` with `|w| ≤ log c`, renormalised so that `Z̃_θ = Z_θ`.
///
/// The normalised ratio `dπ_θ/dπ̃_θ = N(θ) e^{−w}` then lies in
/// `[1/c², c²]`, and that is the bound recorded in the construction chain.
/// The Lipschitz constants of the perturbed gradient are hypotheses and are
/// supplied by the caller.
pub fn perturbed_model<T: Scalar>(
    model: &ModelSpec<T>,
    weight: Arc<dyn LogWeight<T>>,
    c: T,
    lipschitz_theta: T,
    lipschitz_x: T,
) -> Result<ModelSpec<T>> {
    let q = match &model.family {
        Family::Quadratic(q) => q.clone(),
        _ => {
            return Err(Error::UnsupportedModel(
                "perturbations are available for quadratic models only".into(),
            ))
        }
    };
    positive(lipschitz_theta, "lipschitz_theta")?;
    positive(lipschitz_x, "lipschitz_x")?;
    let description = weight.describe();
    let perturbed = PerturbedModel::new(q, weight, c)?;
    let mut chain = model.chain.clone();
    chain.push(ConstructionStep::Perturbation {
        c: c * c,
        b: T::zero(),
    });
    Ok(ModelSpec {
        name: format!("perturbed({}, w={description})", model.name),
        d_theta: model.d_theta,
        d_x: model.d_x,
        lipschitz_theta,
        lipschitz_x,
        strong_concavity: None,
        family: Family::Perturbed(perturbed),
        chain,
    })
}
