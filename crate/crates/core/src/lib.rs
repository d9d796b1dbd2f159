//! EM and its gradient-flow relatives (first-order EM, Langevin EM and
//! alternating gradient descent) on latent-variable models, viewed as
//! minimisation of the free energy `F(θ, q) = ∫ log(q/ρ_θ) dq` over
//! parameter–law pairs.
//!
//! The crate evaluates `F` and the extended Fisher information exactly on
//! linear-Gaussian models, checks the extended log-Sobolev and Talagrand
//! inequalities and the EM descent inequality along trajectories, and evaluates
//! the non-asymptotic convergence bounds as explicit curves.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, with `F32` variants where single precision is useful.

pub mod error;
pub mod inequalities;
pub mod laws;
pub mod algorithms;
pub mod bounds;
pub mod energy;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = model::ModelSpec<f64>;
pub type ModelF32 = model::ModelSpec<f32>;
pub type Gaussian = laws::GaussianLaw<f64>;
pub type GaussianF32 = laws::GaussianLaw<f32>;
pub type Particles = laws::ParticleCloud<f64>;
pub type ParticlesF32 = laws::ParticleCloud<f32>;
pub type Point = laws::ProductPoint<f64>;
pub type PointF32 = laws::ProductPoint<f32>;
pub type Mat = linalg::Matrix<f64>;
pub type Vec64 = linalg::Vector<f64>;
