//! Non-asymptotic convergence bounds as explicit curves over `k = 0..K`,
//! with every constant computed from the model.

use std::fmt;

use crate::algorithms::Scheme;
use crate::error::{invalid, Error, Result};
use crate::laws::Law;
use crate::model::ModelSpec;
use crate::scalar::Scalar;

/// Number of log-spaced step sizes in the sharp EM bound's grid, on top of `h = 0`.
pub const SHARP_GRID_POINTS: usize = 200;
pub const SHARP_GRID_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Bounds on `F(θ_k, q_k) − F⋆`.
    FreeEnergyGap,
    /// Bounds on `λ·d((θ_k, q_k), M⋆)²`.
    LambdaDSquared,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::FreeEnergyGap => "free_energy_gap",
            Metric::LambdaDSquared => "lambda_d_squared",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The constants a curve was evaluated with; unused ones are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants<T> {
    pub lambda: T,
    pub lipschitz_theta: Option<T>,
    pub lipschitz_x: Option<T>,
    pub lipschitz: Option<T>,
    pub d_x: Option<usize>,
    pub c: Option<T>,
    pub b: Option<T>,
    pub h: Option<T>,
    pub gap0: T,
}

impl<T> BoundConstants<T> {
    fn new(lambda: T, gap0: T) -> Self {
        Self {
            lambda,
            lipschitz_theta: None,
            lipschitz_x: None,
            lipschitz: None,
            d_x: None,
            c: None,
            b: None,
            h: None,
            gap0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve<T> {
    pub scheme: Scheme,
    pub values: Vec<T>,
    pub constants: BoundConstants<T>,
    pub metric: Metric,
    /// Limit of the curve as `k → ∞`.
    pub asymptote: T,
    /// Minimising step size per `k`, for the sharp EM bound only.
    pub minimising_h: Vec<T>,
    pub provenance: String,
}

fn positive<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v > T::zero() && v.is_finite_value() {
        Ok(v)
    } else {
        Err(Error::InvalidConstants(format!("{what} must be positive and finite, got {v}")))
    }
}

fn nonneg<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v >= T::zero() && v.is_finite_value() {
        Ok(v)
    } else {
        Err(Error::InvalidConstants(format!("{what} must be non-negative and finite, got {v}")))
    }
}

fn step_bound<T: Scalar>(scheme: Scheme, h: T, max: T) -> Result<T> {
    nonneg(h, "h")?;
    if h > max * (T::one() + T::lit(1e-12)) {
        return Err(Error::StepSize {
            scheme: scheme.as_str().into(),
            h: h.as_f64(),
            max: max.as_f64(),
        });
    }
    Ok(h)
}

fn curve<T: Scalar>(k_max: usize, f: impl Fn(T) -> T) -> Vec<T> {
    (0..=k_max).map(|k| f(T::from_usize_lossy(k))).collect()
}

/// `(1 − λ/L_θ)^k · gap0`.
pub fn em_bound_basic<T: Scalar>(lambda: T, lipschitz_theta: T, gap0: T, k_max: usize) -> Result<BoundCurve<T>> {
    positive(lambda, "lambda")?;
    positive(lipschitz_theta, "L_theta")?;
    nonneg(gap0, "gap0")?;
    if lambda >= lipschitz_theta {
        return Err(Error::InvalidConstants(format!(
            "λ = {lambda} must be below L_θ = {lipschitz_theta} for a positive contraction factor"
        )));
    }
    let factor = T::one() - lambda / lipschitz_theta;
    let values = (0..=k_max).scan(gap0, |acc, k| {
        let v = if k == 0 { gap0 } else { *acc * factor };
        *acc = v;
        Some(v)
    });
    let mut constants = BoundConstants::new(lambda, gap0);
    constants.lipschitz_theta = Some(lipschitz_theta);
    Ok(BoundCurve {
        scheme: Scheme::Em,
        values: values.collect(),
        constants,
        metric: Metric::FreeEnergyGap,
        asymptote: T::zero(),
        minimising_h: Vec::new(),
        provenance: "em basic: (1 - λ/L_θ)^k · gap0".into(),
    })
}

/// `C = L²[tr Σ_{π_θ⋆} + ‖μ_{π_θ⋆} − x†‖² + ‖θ⋆ − θ†‖²] + (2L²/λ)·gap0`,
/// with `θ⋆` the MLE, `π_θ⋆ = N(μ, Σ)` and `(θ†, x†)` the stationary point of `ℓ`.
pub fn constant_c<T: Scalar>(model: &ModelSpec<T>, lambda: T, gap0: T) -> Result<T> {
    positive(lambda, "lambda")?;
    nonneg(gap0, "gap0")?;
    let (theta_dag, x_dag) = model.stationary_point()?;
    let theta_star = model.mle()?;
    let post = match model.exact_posterior(&theta_star)? {
        Law::Gaussian(g) => g,
        _ => {
            return Err(Error::UnsupportedModel(
                "the constant C needs a Gaussian posterior at the MLE".into(),
            ))
        }
    };
    let l = model.lipschitz();
    let l2 = l * l;
    let dx = post.mean() - &x_dag;
    let dt = &theta_star - &theta_dag;
    let moment = post.cov().trace() + dx.dot(&dx) + dt.dot(&dt);
    Ok(l2 * moment + T::lit(2.0) * l2 / lambda * gap0)
}

/// `B = 8 L_x² d_x + C L_x / 2`.
pub fn constant_b<T: Scalar>(lipschitz_x: T, d_x: usize, c: T) -> T {
    T::lit(8.0) * lipschitz_x * lipschitz_x * T::from_usize_lossy(d_x) + c * lipschitz_x / T::lit(2.0)
}

/// `{0} ∪ logspace(1e−6, 1/(4L_x), 200)`.
pub fn sharp_h_grid<T: Scalar>(lipschitz_x: T) -> Vec<T> {
    let hi = (T::one() / (T::lit(4.0) * lipschitz_x)).as_f64();
    let lo = SHARP_GRID_MIN.min(hi);
    let (a, b) = (lo.ln(), hi.ln());
    let n = SHARP_GRID_POINTS;
    std::iter::once(T::zero())
        .chain((0..n).map(|i| {
            let t = i as f64 / (n - 1) as f64;
            T::lit((a + t * (b - a)).exp())
        }))
        .collect()
}

/// Minimum over `h ∈ {0} ∪ logspace(1e−6, 1/(4L_x), 200)` of
/// `e^{−kλ(h+1/L_θ)}·gap0 + h²B/(1 − e^{−λ(h+1/L_θ)})`.
pub fn em_bound_sharp<T: Scalar>(
    lambda: T,
    lipschitz_theta: T,
    lipschitz_x: T,
    d_x: usize,
    c: T,
    gap0: T,
    k_max: usize,
) -> Result<BoundCurve<T>> {
    positive(lipschitz_x, "L_x")?;
    let grid = sharp_h_grid(lipschitz_x);
    em_bound_sharp_on_grid(lambda, lipschitz_theta, lipschitz_x, d_x, c, gap0, k_max, &grid)
}

/// [`em_bound_sharp`] with a caller-supplied step-size grid.
#[allow(clippy::too_many_arguments)]
pub fn em_bound_sharp_on_grid<T: Scalar>(
    lambda: T,
    lipschitz_theta: T,
    lipschitz_x: T,
    d_x: usize,
    c: T,
    gap0: T,
    k_max: usize,
    grid: &[T],
) -> Result<BoundCurve<T>> {
    positive(lambda, "lambda")?;
    positive(lipschitz_theta, "L_theta")?;
    positive(lipschitz_x, "L_x")?;
    nonneg(c, "C")?;
    nonneg(gap0, "gap0")?;
    if d_x == 0 {
        return Err(Error::InvalidConstants("d_x must be ≥ 1".into()));
    }
    if grid.is_empty() {
        return Err(invalid("step-size grid is empty"));
    }
    for h in grid {
        nonneg(*h, "grid step")?;
    }
    let b = constant_b(lipschitz_x, d_x, c);
    let terms: Vec<(T, T)> = grid
        .iter()
        .map(|&h| {
            let rate = lambda * (h + T::one() / lipschitz_theta);
            let bias = if h == T::zero() {
                T::zero()
            } else {
                h * h * b / (T::one() - (-rate).exp())
            };
            (rate, bias)
        })
        .collect();
    let mut values = Vec::with_capacity(k_max + 1);
    let mut argmin = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let kt = T::from_usize_lossy(k);
        let (best, h) = grid
            .iter()
            .zip(&terms)
            .map(|(&h, &(rate, bias))| ((-kt * rate).exp() * gap0 + bias, h))
            .fold(None, |acc: Option<(T, T)>, cur| match acc {
                Some(a) if a.0 <= cur.0 => Some(a),
                _ => Some(cur),
            })
            .expect("non-empty grid");
        values.push(best);
        argmin.push(h);
    }
    let mut constants = BoundConstants::new(lambda, gap0);
    constants.lipschitz_theta = Some(lipschitz_theta);
    constants.lipschitz_x = Some(lipschitz_x);
    constants.d_x = Some(d_x);
    constants.c = Some(c);
    constants.b = Some(b);
    Ok(BoundCurve {
        scheme: Scheme::Em,
        values,
        constants,
        metric: Metric::FreeEnergyGap,
        asymptote: T::zero(),
        minimising_h: argmin,
        provenance: format!(
            "em sharp: min over {} step sizes of e^(-kλ(h+1/L_θ))·gap0 + h²B/(1 - e^(-λ(h+1/L_θ)))",
            grid.len()
        ),
    })
}

/// `2 e^{−kλh}·gap0` on `λ·d²`, for `h ≤ 1/L_θ`.
pub fn first_order_bound<T: Scalar>(
    lambda: T,
    lipschitz_theta: T,
    h: T,
    gap0: T,
    k_max: usize,
) -> Result<BoundCurve<T>> {
    positive(lambda, "lambda")?;
    positive(lipschitz_theta, "L_theta")?;
    nonneg(gap0, "gap0")?;
    let h = step_bound(Scheme::FirstOrderEm, h, T::one() / lipschitz_theta)?;
    let two = T::lit(2.0);
    let mut constants = BoundConstants::new(lambda, gap0);
    constants.lipschitz_theta = Some(lipschitz_theta);
    constants.h = Some(h);
    Ok(BoundCurve {
        scheme: Scheme::FirstOrderEm,
        values: curve(k_max, |k: T| two * (-k * lambda * h).exp() * gap0),
        constants,
        metric: Metric::LambdaDSquared,
        asymptote: T::zero(),
        minimising_h: Vec::new(),
        provenance: "first-order em: 2e^(-kλh)·gap0".into(),
    })
}

/// `2e^{−kλh}·gap0 + 2h²B/(1 − e^{−λ(h+1/L_θ)})` on `λ·d²`, for `h ≤ 1/(4L_x)`.
#[allow(clippy::too_many_arguments)]
pub fn langevin_em_bound<T: Scalar>(
    lambda: T,
    lipschitz_theta: T,
    lipschitz_x: T,
    d_x: usize,
    c: T,
    h: T,
    gap0: T,
    k_max: usize,
) -> Result<BoundCurve<T>> {
    positive(lambda, "lambda")?;
    positive(lipschitz_theta, "L_theta")?;
    positive(lipschitz_x, "L_x")?;
    nonneg(c, "C")?;
    nonneg(gap0, "gap0")?;
    if d_x == 0 {
        return Err(Error::InvalidConstants("d_x must be ≥ 1".into()));
    }
    let h = step_bound(Scheme::LangevinEm, h, T::one() / (T::lit(4.0) * lipschitz_x))?;
    let two = T::lit(2.0);
    let b = constant_b(lipschitz_x, d_x, c);
    let asymptote = if h == T::zero() {
        T::zero()
    } else {
        two * h * h * b / (T::one() - (-lambda * (h + T::one() / lipschitz_theta)).exp())
    };
    let mut constants = BoundConstants::new(lambda, gap0);
    constants.lipschitz_theta = Some(lipschitz_theta);
    constants.lipschitz_x = Some(lipschitz_x);
    constants.d_x = Some(d_x);
    constants.c = Some(c);
    constants.b = Some(b);
    constants.h = Some(h);
    Ok(BoundCurve {
        scheme: Scheme::LangevinEm,
        values: curve(k_max, |k: T| two * (-k * lambda * h).exp() * gap0 + asymptote),
        constants,
        metric: Metric::LambdaDSquared,
        asymptote,
        minimising_h: Vec::new(),
        provenance: "langevin em: 2e^(-kλh)·gap0 + 2h²B/(1 - e^(-λ(h+1/L_θ))); \
                     B reuses the constant C derived along EM iterates"
            .into(),
    })
}

/// `2e^{−kλh}·gap0 + 12L²d_x h²/(1 − e^{−λh})` on `λ·d²`, for `h ≤ 1/(4L)`.
pub fn agd_bound<T: Scalar>(lambda: T, lipschitz: T, d_x: usize, h: T, gap0: T, k_max: usize) -> Result<BoundCurve<T>> {
    positive(lambda, "lambda")?;
    positive(lipschitz, "L")?;
    nonneg(gap0, "gap0")?;
    if d_x == 0 {
        return Err(Error::InvalidConstants("d_x must be ≥ 1".into()));
    }
    let h = step_bound(Scheme::Agd, h, T::one() / (T::lit(4.0) * lipschitz))?;
    let two = T::lit(2.0);
    let asymptote = if h == T::zero() {
        T::zero()
    } else {
        T::lit(12.0) * lipschitz * lipschitz * T::from_usize_lossy(d_x) * h * h / (T::one() - (-lambda * h).exp())
    };
    let mut constants = BoundConstants::new(lambda, gap0);
    constants.lipschitz = Some(lipschitz);
    constants.d_x = Some(d_x);
    constants.h = Some(h);
    Ok(BoundCurve {
        scheme: Scheme::Agd,
        values: curve(k_max, |k: T| two * (-k * lambda * h).exp() * gap0 + asymptote),
        constants,
        metric: Metric::LambdaDSquared,
        asymptote,
        minimising_h: Vec::new(),
        provenance: "agd: 2e^(-kλh)·gap0 + 12L²d_x h²/(1 - e^(-λh))".into(),
    })
}

/// Turns a gap bound into a bound on `λ·d²` through `λd² ≤ 2(F − F⋆)`.
pub fn gap_to_distance<T: Scalar>(curve: &BoundCurve<T>) -> Result<BoundCurve<T>> {
    if curve.metric != Metric::FreeEnergyGap {
        return Err(invalid(format!(
            "gap_to_distance expects a free_energy_gap curve, got {}",
            curve.metric
        )));
    }
    let two = T::lit(2.0);
    Ok(BoundCurve {
        values: curve.values.iter().map(|v| two * *v).collect(),
        metric: Metric::LambdaDSquared,
        asymptote: two * curve.asymptote,
        provenance: format!("2 × [{}]", curve.provenance),
        ..curve.clone()
    })
}

#[cfg(test)]
mod tests;
