//! EM, first-order EM, Langevin EM and alternating gradient descent, with
//! exact-law and particle representations of the latent law, and the
//! instrumented driver [`run`].
//!
//! On quadratic models the latent gradient is affine, `∇_xℓ(θ; x) = A x + b_θ`,
//! so one Langevin step maps `N(m, Σ)` to
//! `N((I + hA)m + hb, (I + hA)Σ(I + hA)ᵀ + 2hI)` exactly.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::energy::{energy_report, free_energy_gap, particle_energy_estimates};
use crate::error::{invalid, Error, Result};
use crate::laws::{distance_to_optimum, w2_1d, GaussianLaw, Law, ParticleCloud, ProductPoint};
use crate::linalg::{self, Matrix, Vector};
use crate::model::ModelSpec;
use crate::rng::NoiseStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Em,
    FirstOrderEm,
    LangevinEm,
    Agd,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Em, Scheme::FirstOrderEm, Scheme::LangevinEm, Scheme::Agd];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::FirstOrderEm => "first_order_em",
            Scheme::LangevinEm => "langevin_em",
            Scheme::Agd => "agd",
        }
    }

    /// Largest admissible step: `1/L_θ`, `1/(4L_x)` and `1/(4L)` respectively;
    /// `None` for EM.
    pub fn max_step<T: Scalar>(self, model: &ModelSpec<T>) -> Option<T> {
        match self {
            Scheme::Em => None,
            Scheme::FirstOrderEm => Some(T::one() / model.lipschitz_theta()),
            Scheme::LangevinEm => Some(T::one() / (T::lit(4.0) * model.lipschitz_x())),
            Scheme::Agd => Some(T::one() / (T::lit(4.0) * model.lipschitz())),
        }
    }

    pub fn check_step<T: Scalar>(self, model: &ModelSpec<T>, h: T) -> Result<()> {
        if !(h >= T::zero()) || !h.is_finite_value() {
            return Err(invalid(format!("step size must be finite and ≥ 0, got {h}")));
        }
        if let Some(max) = self.max_step(model) {
            // Relative slack so that h = 1/(4L) computed by the caller passes.
            if h > max * (T::one() + T::lit(1e-12)) {
                return Err(Error::StepSize {
                    scheme: self.as_str().into(),
                    h: h.as_f64(),
                    max: max.as_f64(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// The exact law: Gaussian on quadratic models, tabulated on perturbed ones.
    ExactGaussian,
    Particles,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::ExactGaussian => "exact_gaussian",
            Representation::Particles => "particles",
        }
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_gaussian" | "exact" => Ok(Representation::ExactGaussian),
            "particles" => Ok(Representation::Particles),
            other => Err(invalid(format!("unknown representation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw<T: Scalar> {
    /// `q₀ = π_{θ₀}`.
    PosteriorAtInit,
    Gaussian(GaussianLaw<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig<T: Scalar> {
    pub scheme: Scheme,
    pub step_h: T,
    pub iterations: usize,
    pub representation: Representation,
    pub particle_count: usize,
    pub seed: u64,
    pub init_theta: Vector<T>,
    pub init_law: InitLaw<T>,
}

impl<T: Scalar> AlgorithmConfig<T> {
    pub fn exact(scheme: Scheme, step_h: T, iterations: usize, init_theta: Vector<T>) -> Self {
        Self {
            scheme,
            step_h,
            iterations,
            representation: Representation::ExactGaussian,
            particle_count: 0,
            seed: 0,
            init_theta,
            init_law: InitLaw::PosteriorAtInit,
        }
    }

    pub fn particles(
        scheme: Scheme,
        step_h: T,
        iterations: usize,
        init_theta: Vector<T>,
        particle_count: usize,
        seed: u64,
    ) -> Self {
        Self {
            representation: Representation::Particles,
            particle_count,
            seed,
            ..Self::exact(scheme, step_h, iterations, init_theta)
        }
    }
}

/// Mean and covariance of the law at one iterate (empirical for clouds).
#[derive(Debug, Clone, PartialEq)]
pub struct LawSummary<T: Scalar> {
    pub mean: Vector<T>,
    pub cov: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord<T: Scalar> {
    pub k: usize,
    pub theta: Vector<T>,
    pub law: LawSummary<T>,
    /// `F(θ_k, q_k) − F_⋆`.
    pub gap: T,
    pub kl_term: T,
    pub logz_term: T,
    /// `I(θ_k, q_k)`.
    pub fisher: T,
    pub theta_grad_norm_sq: T,
    pub relative_fisher: T,
    /// `d((θ_k, q_k), M_⋆)` when it can be computed.
    pub distance: Option<T>,
    /// `F(θ_k, q_{k−1}) − F_⋆`, between the parameter and the law update.
    pub pre_update_gap: Option<T>,
    /// Energies refer to a Gaussian proxy of a particle cloud.
    pub proxy: bool,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    pub model: String,
    pub config: AlgorithmConfig<T>,
    pub records: Vec<IterateRecord<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn gaps(&self) -> Vec<T> {
        self.records.iter().map(|r| r.gap).collect()
    }

    pub fn is_proxy(&self) -> bool {
        self.records.iter().any(|r| r.proxy)
    }

    pub fn last(&self) -> &IterateRecord<T> {
        self.records.last().expect("traces hold at least the initial record")
    }
}

/// One EM iteration: `θ' = argmax_θ ∫ℓ(θ; x) q(dx)`, then `q' = π_{θ'}`.
pub fn em_step<T: Scalar>(model: &ModelSpec<T>, _theta: &Vector<T>, law: &Law<T>) -> Result<(Vector<T>, Law<T>)> {
    let next = model.exact_m_step(law)?;
    let post = model.exact_posterior(&next)?;
    Ok((next, post))
}

fn first_order_unchecked<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    law: &Law<T>,
    h: T,
) -> Result<(Vector<T>, Law<T>)> {
    let next = theta + model.mean_theta_gradient(theta, law)? * h;
    let post = model.exact_posterior(&next)?;
    Ok((next, post))
}

/// `θ' = θ + h ∫∇_θℓ(θ; x) q(dx)`, then `q' = π_{θ'}`; requires `h ≤ 1/L_θ`.
pub fn first_order_em_step<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    law: &Law<T>,
    h: T,
) -> Result<(Vector<T>, Law<T>)> {
    Scheme::FirstOrderEm.check_step(model, h)?;
    first_order_unchecked(model, theta, law, h)
}

/// Exact law of `X' = X + h∇_xℓ(θ; X) + √(2h) ξ` for Gaussian `X`.
fn langevin_law<T: Scalar>(model: &ModelSpec<T>, theta: &Vector<T>, law: &GaussianLaw<T>, h: T) -> Result<GaussianLaw<T>> {
    let (a, b) = model.langevin_affine(theta)?;
    let d = law.dim();
    let k = Matrix::identity(d, d) + a * h;
    let mean = &k * law.mean() + b * h;
    let cov = &k * law.cov() * k.transpose() + Matrix::identity(d, d) * (T::lit(2.0) * h);
    GaussianLaw::new(mean, linalg::symmetrize(&cov))
}

/// Langevin EM with the law propagated in closed form: exact M-step, then
/// one Langevin step at the new parameter.
pub fn langevin_em_step_exact<T: Scalar>(
    model: &ModelSpec<T>,
    _theta: &Vector<T>,
    law: &GaussianLaw<T>,
    h: T,
) -> Result<(Vector<T>, GaussianLaw<T>)> {
    Scheme::LangevinEm.check_step(model, h)?;
    let next = model.exact_m_step(&Law::Gaussian(law.clone()))?;
    let law_next = langevin_law(model, &next, law, h)?;
    Ok((next, law_next))
}

const PARTICLE_BLOCK: usize = 1024;

/// Moves every particle by `h∇_xℓ(θ; X) + √(2h) ξ`. The noise for particle
/// `i`, coordinate `j` at iteration `k` is word `i·d + j` of stream `k + 1`,
/// so the result does not depend on how blocks are scheduled. `noise = None`
/// sets `ξ = 0`.
fn move_particles<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    cloud: &ParticleCloud<T>,
    h: T,
    noise: Option<&NoiseStream>,
    k: usize,
) -> Result<ParticleCloud<T>> {
    let d = cloud.dim();
    let scale = (T::lit(2.0) * h).sqrt();
    let stream = NoiseStream::iteration_stream(k);
    let mut out = cloud.as_slice().to_vec();
    out.par_chunks_mut(PARTICLE_BLOCK * d)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut xi = vec![0.0; chunk.len()];
            if let Some(noise) = noise {
                noise.fill_normals(stream, (block * PARTICLE_BLOCK * d) as u64, &mut xi);
            }
            for (p, z) in chunk.chunks_mut(d).zip(xi.chunks(d)) {
                let x = Vector::from_column_slice(p);
                let g = model.grad_x(theta, &x);
                for j in 0..d {
                    p[j] = x[j] + h * g[j] + scale * T::lit(z[j]);
                }
            }
        });
    ParticleCloud::new(d, out).map_err(|_| Error::Divergence {
        iteration: k,
        what: "particle positions".into(),
    })
}

/// Particle Langevin EM: M-step against the empirical law, then one
/// Langevin move per particle with the noise addressed by iteration `k`.
pub fn langevin_em_step_particles<T: Scalar>(
    model: &ModelSpec<T>,
    _theta: &Vector<T>,
    cloud: &ParticleCloud<T>,
    h: T,
    noise: Option<&NoiseStream>,
    k: usize,
) -> Result<(Vector<T>, ParticleCloud<T>)> {
    Scheme::LangevinEm.check_step(model, h)?;
    if cloud.len() < 2 {
        return Err(Error::InsufficientParticles("Langevin EM needs N ≥ 2".into()));
    }
    let next = model.exact_m_step(&Law::Particles(cloud.clone()))?;
    let moved = move_particles(model, &next, cloud, h, noise, k)?;
    Ok((next, moved))
}

/// Alternating gradient descent: `θ' = θ + h ∫∇_θℓ(θ; x) q(dx)`, then a
/// Langevin step on the law at `θ'`. Requires `h ≤ 1/(4L)`.
pub fn agd_step<T: Scalar>(
    model: &ModelSpec<T>,
    theta: &Vector<T>,
    law: &Law<T>,
    h: T,
    noise: Option<&NoiseStream>,
    k: usize,
) -> Result<(Vector<T>, Law<T>)> {
    Scheme::Agd.check_step(model, h)?;
    let next = theta + model.mean_theta_gradient(theta, law)? * h;
    let law_next = match law {
        Law::Gaussian(g) => Law::Gaussian(langevin_law(model, &next, g, h)?),
        Law::Particles(c) => Law::Particles(move_particles(model, &next, c, h, noise, k)?),
        Law::Tabulated(_) => {
            return Err(Error::UnsupportedRepresentation(
                "Langevin steps are not available for tabulated laws".into(),
            ))
        }
    };
    Ok((next, law_next))
}

fn validate<T: Scalar>(model: &ModelSpec<T>, config: &AlgorithmConfig<T>) -> Result<()> {
    model.check_theta(&config.init_theta)?;
    if !linalg::all_finite(config.init_theta.as_slice()) {
        return Err(invalid("init_theta has non-finite entries"));
    }
    config.scheme.check_step(model, config.step_h)?;
    if let InitLaw::Gaussian(g) = &config.init_law {
        if g.dim() != model.d_x() {
            return Err(invalid(format!(
                "init_law has dimension {}, model latent dimension is {}",
                g.dim(),
                model.d_x()
            )));
        }
    }
    if config.representation == Representation::Particles {
        match config.scheme {
            Scheme::Em | Scheme::FirstOrderEm => {
                return Err(Error::UnsupportedRepresentation(format!(
                    "{} uses the exact posterior; particle representations apply to langevin_em and agd",
                    config.scheme
                )))
            }
            _ => {}
        }
        if config.particle_count < 2 {
            return Err(Error::InsufficientParticles(
                "particle runs need particle_count ≥ 2".into(),
            ));
        }
    }
    Ok(())
}

fn initial_law<T: Scalar>(model: &ModelSpec<T>, config: &AlgorithmConfig<T>, noise: &NoiseStream) -> Result<Law<T>> {
    let exact = match &config.init_law {
        InitLaw::PosteriorAtInit => model.exact_posterior(&config.init_theta)?,
        InitLaw::Gaussian(g) => Law::Gaussian(g.clone()),
    };
    if config.representation == Representation::ExactGaussian {
        return Ok(exact);
    }
    let n = config.particle_count;
    let cloud = match &exact {
        Law::Gaussian(g) => g.sample(n, noise, NoiseStream::INIT_STREAM)?,
        Law::Tabulated(t) => t.sample(n, noise, NoiseStream::INIT_STREAM)?,
        Law::Particles(c) => c.clone(),
    };
    Ok(Law::Particles(cloud))
}

fn summarise<T: Scalar>(law: &Law<T>) -> LawSummary<T> {
    LawSummary {
        mean: law.mean(),
        cov: law.covariance(),
    }
}

struct Instrument<'a, T: Scalar> {
    model: &'a ModelSpec<T>,
    optimum: Vec<ProductPoint<T>>,
}

impl<'a, T: Scalar> Instrument<'a, T> {
    fn new(model: &'a ModelSpec<T>) -> Result<Self> {
        Ok(Self {
            model,
            optimum: model.optimum_set()?,
        })
    }

    fn distance(&self, point: &ProductPoint<T>) -> Result<Option<T>> {
        match &point.law {
            Law::Particles(_) if point.law.dim() != 1 => Ok(None),
            Law::Particles(_) => {
                let mut best: Option<T> = None;
                for opt in &self.optimum {
                    let dt = &point.theta - &opt.theta;
                    let w = w2_1d(&point.law, &opt.law)?;
                    let d = (dt.dot(&dt) + w * w).sqrt();
                    best = Some(match best {
                        Some(b) if b <= d => b,
                        _ => d,
                    });
                }
                Ok(best)
            }
            _ => distance_to_optimum(point, &self.optimum).map(Some),
        }
    }

    fn record(
        &self,
        k: usize,
        point: &ProductPoint<T>,
        pre_update_gap: Option<T>,
        wall_nanos: u64,
    ) -> Result<IterateRecord<T>> {
        let report = match &point.law {
            Law::Particles(c) => particle_energy_estimates(self.model, &point.theta, c)?,
            _ => energy_report(self.model, point)?,
        };
        let record = IterateRecord {
            k,
            theta: point.theta.clone(),
            law: summarise(&point.law),
            gap: report.gap,
            kl_term: report.kl_term,
            logz_term: report.logz_term,
            fisher: report.fisher,
            theta_grad_norm_sq: report.theta_grad_norm_sq,
            relative_fisher: report.relative_fisher,
            distance: self.distance(point)?,
            pre_update_gap,
            proxy: report.proxy,
            wall_nanos,
        };
        check_finite(&record)?;
        Ok(record)
    }
}

fn check_finite<T: Scalar>(r: &IterateRecord<T>) -> Result<()> {
    let bad = |what: &str| {
        Err(Error::Divergence {
            iteration: r.k,
            what: what.into(),
        })
    };
    if !linalg::all_finite(r.theta.as_slice()) {
        return bad("theta");
    }
    if !linalg::all_finite(r.law.mean.as_slice()) || !linalg::all_finite(r.law.cov.as_slice()) {
        return bad("law moments");
    }
    for (v, what) in [(r.gap, "free-energy gap"), (r.fisher, "Fisher information")] {
        if !v.is_finite_value() {
            return bad(what);
        }
    }
    if matches!(r.distance, Some(d) if !d.is_finite_value()) {
        return bad("distance to optimum");
    }
    Ok(())
}

fn step<T: Scalar>(
    model: &ModelSpec<T>,
    config: &AlgorithmConfig<T>,
    theta: &Vector<T>,
    law: &Law<T>,
    noise: &NoiseStream,
    k: usize,
) -> Result<(Vector<T>, Law<T>)> {
    let h = config.step_h;
    match (config.scheme, law) {
        (Scheme::Em, _) => em_step(model, theta, law),
        (Scheme::FirstOrderEm, _) => first_order_em_step(model, theta, law, h),
        (Scheme::LangevinEm, Law::Gaussian(g)) => {
            langevin_em_step_exact(model, theta, g, h).map(|(t, g)| (t, Law::Gaussian(g)))
        }
        (Scheme::LangevinEm, Law::Particles(c)) => {
            langevin_em_step_particles(model, theta, c, h, Some(noise), k).map(|(t, c)| (t, Law::Particles(c)))
        }
        (Scheme::LangevinEm, Law::Tabulated(_)) => Err(Error::UnsupportedModel(format!(
            "model `{}` has no affine latent gradient, so its exact Langevin law is not available",
            model.name()
        ))),
        (Scheme::Agd, _) => agd_step(model, theta, law, h, Some(noise), k),
    }
}

/// Runs `config.iterations` steps from the configured start and records
/// energies, distance to the optimum and timing at every iterate, `k = 0`
/// included.
pub fn run<T: Scalar>(model: &ModelSpec<T>, config: &AlgorithmConfig<T>) -> Result<Trace<T>> {
    validate(model, config)?;
    let noise = NoiseStream::new(config.seed);
    let instrument = Instrument::new(model)?;
    let exact = config.representation == Representation::ExactGaussian;

    let start = Instant::now();
    let mut theta = config.init_theta.clone();
    let mut law = initial_law(model, config, &noise)?;
    let init_nanos = start.elapsed().as_nanos() as u64;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let point = ProductPoint { theta, law };
    records.push(instrument.record(0, &point, None, init_nanos)?);
    theta = point.theta;
    law = point.law;

    for k in 0..config.iterations {
        let t0 = Instant::now();
        let (theta_next, law_next) = step(model, config, &theta, &law, &noise, k).map_err(|e| match e {
            Error::InvalidParameter(msg) | Error::DegenerateModel(msg) => Error::Divergence {
                iteration: k + 1,
                what: msg,
            },
            other => other,
        })?;
        let nanos = t0.elapsed().as_nanos() as u64;
        if !linalg::all_finite(theta_next.as_slice()) {
            return Err(Error::Divergence {
                iteration: k + 1,
                what: "theta".into(),
            });
        }
        let pre_update_gap = if exact {
            let mid = ProductPoint {
                theta: theta_next.clone(),
                law: law.clone(),
            };
            Some(free_energy_gap(model, &mid)?.gap)
        } else {
            None
        };
        let point = ProductPoint {
            theta: theta_next,
            law: law_next,
        };
        records.push(instrument.record(k + 1, &point, pre_update_gap, nanos)?);
        theta = point.theta;
        law = point.law;
    }

    Ok(Trace {
        model: model.name().to_string(),
        config: config.clone(),
        records,
    })
}
