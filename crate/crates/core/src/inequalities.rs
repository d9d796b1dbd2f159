//! Trajectory checks of the extended log-Sobolev and Talagrand inequalities,
//! the EM descent inequality and free-energy monotonicity, plus the calculators
//! that certify an xLSI constant for a model from its construction chain.
//!
//! Every check is evaluated at the iterates of a trace only. A passing report
//! means no violation was found along that trajectory, not that the
//! inequality holds on the whole space.

use std::fmt;

use rayon::prelude::*;

use crate::algorithms::{Scheme, Trace};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{ConstructionStep, Family, ModelSpec};
use crate::scalar::Scalar;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const MONOTONICITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InequalityKind {
    Xlsi,
    Xt2i,
    Descent,
    Monotonicity,
}

impl InequalityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InequalityKind::Xlsi => "xlsi",
            InequalityKind::Xt2i => "xt2i",
            InequalityKind::Descent => "descent",
            InequalityKind::Monotonicity => "monotonicity",
        }
    }
}

impl fmt::Display for InequalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport<T> {
    pub name: InequalityKind,
    /// LHS − RHS per iterate, oriented so that it must be ≥ 0.
    pub margins: Vec<T>,
    pub min_margin: Option<T>,
    pub lambda_used: Option<T>,
    pub tolerance: T,
    /// First index with margin below `−tolerance`.
    pub violated_at: Option<usize>,
}

impl<T: Scalar> InequalityReport<T> {
    fn new(name: InequalityKind, margins: Vec<T>, lambda_used: Option<T>, tolerance: T) -> Self {
        let min_margin = margins
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, m| Some(match acc {
                Some(a) if a <= m => a,
                _ => m,
            }));
        let violated_at = margins.iter().position(|m| *m < -tolerance);
        Self {
            name,
            margins,
            min_margin,
            lambda_used,
            tolerance,
            violated_at,
        }
    }

    pub fn passed(&self) -> bool {
        self.violated_at.is_none()
    }

    pub fn summary(&self) -> String {
        match self.violated_at {
            None => "no violation found along trajectory".to_string(),
            Some(k) => format!(
                "violated at k = {k} (margin {:e}, tolerance {:e})",
                self.margins[k], self.tolerance
            ),
        }
    }
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda > T::zero() && lambda.is_finite_value() {
        Ok(())
    } else {
        Err(invalid(format!("λ must be positive and finite, got {lambda}")))
    }
}

fn require_exact<T: Scalar>(trace: &Trace<T>) -> Result<()> {
    if trace.is_proxy() {
        return Err(Error::UnsupportedRepresentation(
            "inequality checks need exact energies; particle traces only carry proxies".into(),
        ));
    }
    Ok(())
}

/// Smallest eigenvalue of the constant negative Hessian, or the declared
/// strong-concavity constant for models without one.
pub fn bakry_emery_lambda<T: Scalar>(model: &ModelSpec<T>) -> Result<T> {
    match model.family() {
        Family::Quadratic(q) => {
            let lambda = q.min_eigenvalue();
            if lambda > T::zero() {
                Ok(lambda)
            } else {
                Err(Error::NotLogConcave(format!(
                    "negative Hessian of `{}` has smallest eigenvalue {lambda}",
                    model.name()
                )))
            }
        }
        _ => model.strong_concavity().ok_or_else(|| {
            Error::NotLogConcave(format!(
                "`{}` has no constant Hessian and no declared strong-concavity constant",
                model.name()
            ))
        }),
    }
}

/// `margin_k = I_k − 2λ·gap_k`.
pub fn check_xlsi<T: Scalar>(_model: &ModelSpec<T>, trace: &Trace<T>, lambda: T, tol: T) -> Result<InequalityReport<T>> {
    check_lambda(lambda)?;
    require_exact(trace)?;
    let two = T::lit(2.0);
    let margins = trace
        .records
        .par_iter()
        .map(|r| r.fisher - two * lambda * r.gap)
        .collect();
    Ok(InequalityReport::new(InequalityKind::Xlsi, margins, Some(lambda), tol))
}

/// `margin_k = 2·gap_k − λ·d_k²`.
pub fn check_xt2i<T: Scalar>(_model: &ModelSpec<T>, trace: &Trace<T>, lambda: T, tol: T) -> Result<InequalityReport<T>> {
    check_lambda(lambda)?;
    require_exact(trace)?;
    let two = T::lit(2.0);
    let margins = trace
        .records
        .iter()
        .map(|r| {
            r.distance
                .map(|d| two * r.gap - lambda * d * d)
                .ok_or_else(|| Error::UnsupportedRepresentation(format!("no distance recorded at k = {}", r.k)))
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(InequalityReport::new(InequalityKind::Xt2i, margins, Some(lambda), tol))
}

fn require_em<T: Scalar>(trace: &Trace<T>, what: &str) -> Result<()> {
    if trace.config.scheme != Scheme::Em {
        return Err(Error::UnsupportedScheme(format!(
            "the {what} check applies to EM traces, not {}",
            trace.config.scheme
        )));
    }
    require_exact(trace)
}

fn pre_update<T: Scalar>(trace: &Trace<T>, k: usize) -> Result<T> {
    trace.records[k].pre_update_gap.ok_or_else(|| {
        Error::UnsupportedRepresentation(format!("no intermediate free energy recorded at k = {k}"))
    })
}

/// `margin_k = [F(θ_k, q_k) − F(θ_{k+1}, q_k)] − I(θ_k, q_k)/(2L_θ)`, for
/// `k = 0..K−1`.
pub fn check_descent<T: Scalar>(model: &ModelSpec<T>, trace: &Trace<T>, tol: T) -> Result<InequalityReport<T>> {
    require_em(trace, "descent")?;
    let denom = T::lit(2.0) * model.lipschitz_theta();
    let margins = (0..trace.records.len().saturating_sub(1))
        .map(|k| {
            let r = &trace.records[k];
            Ok(r.gap - pre_update(trace, k + 1)? - r.fisher / denom)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(InequalityReport::new(InequalityKind::Descent, margins, None, tol))
}

/// The chain `F(θ_{k+1}, q_{k+1}) ≤ F(θ_{k+1}, q_k) ≤ F(θ_k, q_k)`; the
/// margin of step `k` is the smaller of the two decreases.
pub fn check_monotonicity<T: Scalar>(trace: &Trace<T>, tol: T) -> Result<InequalityReport<T>> {
    require_em(trace, "monotonicity")?;
    let margins = (0..trace.records.len().saturating_sub(1))
        .map(|k| {
            let mid = pre_update(trace, k + 1)?;
            let m_step = trace.records[k].gap - mid;
            let e_step = mid - trace.records[k + 1].gap;
            Ok(if m_step < e_step { m_step } else { e_step })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(InequalityReport::new(InequalityKind::Monotonicity, margins, None, tol))
}

/// `λ / max(1, L_T²)` for a pushforward by an `L_T`-Lipschitz map.
pub fn contraction_lambda<T: Scalar>(lambda: T, lipschitz_t: T) -> T {
    let sq = lipschitz_t * lipschitz_t;
    lambda / if sq > T::one() { sq } else { T::one() }
}

/// `(λ − c²b)/(2c²)` for a perturbation with `dπ/dπ̃ ∈ [1/c, c]`. A value
/// ≤ 0 is a vacuous certificate.
pub fn perturbation_lambda<T: Scalar>(lambda: T, c: T, b: T) -> Result<T> {
    if !(c > T::one()) || !c.is_finite_value() {
        return Err(invalid(format!("perturbation bound c must exceed 1, got {c}")));
    }
    if !(b >= T::zero()) {
        return Err(invalid(format!("b must be non-negative, got {b}")));
    }
    let c2 = c * c;
    Ok((lambda - c2 * b) / (T::lit(2.0) * c2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateStep<T> {
    pub rule: &'static str,
    pub detail: String,
    pub lambda: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate<T> {
    pub lambda: T,
    pub steps: Vec<CertificateStep<T>>,
}

impl<T: Scalar> Certificate<T> {
    pub fn trail(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("{} ({}) -> {}", s.rule, s.detail, s.lambda))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Composes the certified xLSI constant along the model's construction chain.
pub fn certified_lambda<T: Scalar>(model: &ModelSpec<T>) -> Result<Certificate<T>> {
    let mut steps = Vec::new();
    let mut lambda: Option<T> = None;
    for link in model.construction() {
        match link {
            ConstructionStep::Base {
                family,
                min_eigenvalue,
                declared,
            } => {
                let (value, detail) = match (min_eigenvalue, declared) {
                    (Some(v), _) if *v > T::zero() => (*v, format!("{family}: smallest eigenvalue of -Hessian")),
                    (Some(v), None) => {
                        return Err(Error::NoCertificate(format!(
                            "{family} base model is not strongly log-concave (smallest eigenvalue of -Hessian {v})"
                        )))
                    }
                    (_, Some(d)) => (*d, format!("{family}: declared strong concavity")),
                    (None, None) => {
                        return Err(Error::NoCertificate(format!(
                            "{family} base model has neither a constant Hessian nor a declared constant"
                        )))
                    }
                };
                lambda = Some(value);
                steps.push(CertificateStep {
                    rule: "bakry_emery",
                    detail,
                    lambda: value,
                });
            }
            ConstructionStep::Pushforward { lipschitz_t } => {
                let base = lambda.ok_or_else(|| Error::NoCertificate("pushforward before a base model".into()))?;
                let value = contraction_lambda(base, *lipschitz_t);
                lambda = Some(value);
                steps.push(CertificateStep {
                    rule: "contraction",
                    detail: format!("L_T = {lipschitz_t}"),
                    lambda: value,
                });
            }
            ConstructionStep::Perturbation { c, b } => {
                let base = lambda.ok_or_else(|| Error::NoCertificate("perturbation before a base model".into()))?;
                let value = perturbation_lambda(base, *c, *b)?;
                if value <= T::zero() {
                    return Err(Error::NoCertificate(format!(
                        "perturbation with c = {c}, b = {b} gives a vacuous constant {value}"
                    )));
                }
                lambda = Some(value);
                steps.push(CertificateStep {
                    rule: "perturbation",
                    detail: format!("c = {c}, b = {b}"),
                    lambda: value,
                });
            }
        }
    }
    let lambda = lambda.ok_or_else(|| Error::NoCertificate("empty construction chain".into()))?;
    Ok(Certificate { lambda, steps })
}

/// Smallest eigenvalue of a symmetric matrix, re-exported for callers that
/// certify hand-built Hessians.
pub fn min_eigenvalue<T: Scalar>(m: &linalg::Matrix<T>) -> T {
    linalg::min_eigenvalue(m)
}
