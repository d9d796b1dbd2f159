//! Latent laws: exact Gaussians, particle clouds and tabulated 1D densities,
//! together with the Wasserstein-2 and Kullback–Leibler quantities between them.

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::quadrature::{trapezoid, Grid1d};
use crate::rng::{standard_normal_cdf, standard_normal_quantile, NoiseStream};
use crate::scalar::Scalar;

/// Gaussian law `N(mean, cov)` with symmetric positive definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw<T: Scalar> {
    mean: Vector<T>,
    cov: Matrix<T>,
}

impl<T: Scalar> GaussianLaw<T> {
    pub fn new(mean: Vector<T>, cov: Matrix<T>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("Gaussian law needs dimension ≥ 1"));
        }
        linalg::check_dims(&cov, d, d, "covariance")?;
        if !linalg::all_finite(mean.as_slice()) || !linalg::all_finite(cov.as_slice()) {
            return Err(invalid("Gaussian law has non-finite entries"));
        }
        if !linalg::is_symmetric(&cov, T::lit(1e-12)) {
            return Err(invalid("covariance is not symmetric"));
        }
        let cov = linalg::symmetrize(&cov);
        if linalg::min_eigenvalue(&cov) <= T::zero() {
            return Err(invalid("covariance is not positive definite"));
        }
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: T, var: T) -> Result<Self> {
        Self::new(Vector::from_element(1, mean), Matrix::from_element(1, 1, var))
    }

    pub fn isotropic(mean: Vector<T>, var: T) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, Matrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix<T> {
        &self.cov
    }

    pub fn precision(&self) -> Matrix<T> {
        linalg::spd_inverse(&self.cov, "covariance").expect("validated SPD covariance")
    }

    /// Differential entropy `½ log det(2πe Σ)`.
    pub fn entropy(&self) -> T {
        let d = T::from_usize_lossy(self.dim());
        let log_det = linalg::log_det_spd(&self.cov, "covariance").expect("validated SPD covariance");
        T::lit(0.5) * (d * (T::two_pi().ln() + T::one()) + log_det)
    }

    pub fn log_density(&self, x: &Vector<T>) -> T {
        let diff = x - &self.mean;
        let prec = self.precision();
        let d = T::from_usize_lossy(self.dim());
        let log_det = linalg::log_det_spd(&self.cov, "covariance").expect("validated SPD covariance");
        -T::lit(0.5) * (diff.dot(&(prec * &diff)) + d * T::two_pi().ln() + log_det)
    }

    /// `∇ log q(x) = −Σ⁻¹(x − m)`.
    pub fn score(&self, x: &Vector<T>) -> Vector<T> {
        -(self.precision() * (x - &self.mean))
    }

    /// Image under `x ↦ A x + b`.
    pub fn affine_image(&self, a: &Matrix<T>, b: &Vector<T>) -> Result<Self> {
        Self::new(a * &self.mean + b, a * &self.cov * a.transpose())
    }

    fn scalar_sd(&self) -> T {
        self.cov[(0, 0)].sqrt()
    }

    /// Quantile of a one-dimensional law.
    pub fn quantile_1d(&self, u: T) -> T {
        debug_assert_eq!(self.dim(), 1);
        self.mean[0] + self.scalar_sd() * T::lit(standard_normal_quantile(u.as_f64()))
    }

    pub fn cdf_1d(&self, x: T) -> T {
        debug_assert_eq!(self.dim(), 1);
        T::lit(standard_normal_cdf(((x - self.mean[0]) / self.scalar_sd()).as_f64()))
    }

    /// `n` draws `m + L z` with `L` the Cholesky factor, using the noise
    /// addressed by `(stream, 0..n·d)`.
    pub fn sample(&self, n: usize, noise: &NoiseStream, stream: u64) -> Result<ParticleCloud<T>> {
        let d = self.dim();
        let chol = linalg::cholesky_factor(&self.cov, "covariance")?;
        let mut z = vec![0.0; n * d];
        noise.fill_normals(stream, 0, &mut z);
        let mut data = Vec::with_capacity(n * d);
        for row in z.chunks(d) {
            let zv = Vector::from_iterator(d, row.iter().map(|v| T::lit(*v)));
            let x = &self.mean + &chol * zv;
            data.extend(x.iter().copied());
        }
        ParticleCloud::new(d, data)
    }
}

/// `N` equally weighted particles in `R^{d_x}`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<T: Scalar> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> ParticleCloud<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("particle dimension must be ≥ 1"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(invalid(format!(
                "particle buffer of length {} does not hold whole particles of dimension {dim}",
                data.len()
            )));
        }
        if !linalg::all_finite(&data) {
            return Err(invalid("particle cloud has non-finite entries"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_scalars(values: Vec<T>) -> Result<Self> {
        Self::new(1, values)
    }

    /// The `n` midpoint quantiles `(i − ½)/n` of a one-dimensional Gaussian.
    pub fn gaussian_quantiles(g: &GaussianLaw<T>, n: usize) -> Result<Self> {
        if g.dim() != 1 {
            return Err(Error::UnsupportedRepresentation(
                "quantile clouds are one-dimensional".into(),
            ));
        }
        let nf = T::from_usize_lossy(n);
        let values = (0..n)
            .map(|i| g.quantile_1d((T::from_usize_lossy(i) + T::lit(0.5)) / nf))
            .collect();
        Self::from_scalars(values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn mean(&self) -> Vector<T> {
        let n = T::from_usize_lossy(self.len());
        let mut acc = Vector::zeros(self.dim);
        for p in self.iter() {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += *v;
            }
        }
        acc / n
    }
}

/// Empirical mean and unbiased covariance of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Scalar> {
    pub mean: Vector<T>,
    pub cov: Matrix<T>,
    /// Set when the covariance is singular (e.g. coincident particles).
    pub degenerate: bool,
}

/// Two-pass moments in particle order, so the result does not depend on
/// thread scheduling.
pub fn moments<T: Scalar>(cloud: &ParticleCloud<T>) -> Result<Moments<T>> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InsufficientParticles(
            "covariance needs at least two particles".into(),
        ));
    }
    let mean = cloud.mean();
    let d = cloud.dim();
    let mut cov = Matrix::zeros(d, d);
    for p in cloud.iter() {
        let diff = Vector::from_iterator(d, p.iter().zip(mean.iter()).map(|(a, m)| *a - *m));
        cov += &diff * diff.transpose();
    }
    cov /= T::from_usize_lossy(n - 1);
    let degenerate = linalg::min_eigenvalue(&cov) <= T::zero();
    Ok(Moments { mean, cov, degenerate })
}

/// One-dimensional law given by its density on a uniform grid, carrying the
/// exact score at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedLaw<T: Scalar> {
    grid: Grid1d<T>,
    density: Vec<T>,
    log_density: Vec<T>,
    score: Vec<T>,
    cdf: Vec<T>,
}

impl<T: Scalar> TabulatedLaw<T> {
    /// Normalises `exp(log_unnormalised)` on `grid`; `score` is `∇ log` of the
    /// same function.
    pub fn from_log_density(
        grid: Grid1d<T>,
        log_unnormalised: impl Fn(T) -> T,
        score: impl Fn(T) -> T,
    ) -> Result<Self> {
        let logs: Vec<T> = grid.nodes().map(&log_unnormalised).collect();
        if !linalg::all_finite(&logs) {
            return Err(invalid("tabulated log-density is not finite on its grid"));
        }
        let log_norm = crate::quadrature::log_integral_exp(&logs, grid.step);
        let log_density: Vec<T> = logs.iter().map(|v| *v - log_norm).collect();
        let density: Vec<T> = log_density.iter().map(|v| v.exp()).collect();
        let score = grid.nodes().map(score).collect();
        let mut cdf = Vec::with_capacity(grid.n);
        let mut acc = T::zero();
        cdf.push(acc);
        for w in density.windows(2) {
            acc += (w[0] + w[1]) * T::lit(0.5) * grid.step;
            cdf.push(acc);
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(Self {
            grid,
            density,
            log_density,
            score,
            cdf,
        })
    }

    pub fn grid(&self) -> &Grid1d<T> {
        &self.grid
    }

    pub fn density(&self) -> &[T] {
        &self.density
    }

    pub fn log_density(&self) -> &[T] {
        &self.log_density
    }

    pub fn score(&self) -> &[T] {
        &self.score
    }

    /// `∫ f(x) q(x) dx` on the law's own grid.
    pub fn expect(&self, f: impl Fn(usize, T) -> T) -> T {
        let values: Vec<T> = self
            .grid
            .nodes()
            .enumerate()
            .zip(&self.density)
            .map(|((i, x), q)| f(i, x) * *q)
            .collect();
        trapezoid(&values, self.grid.step)
    }

    pub fn mean(&self) -> T {
        self.expect(|_, x| x)
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        self.expect(|_, x| (x - m) * (x - m))
    }

    pub fn cdf_at_node(&self, i: usize) -> T {
        self.cdf[i]
    }

    /// Inverse CDF by linear interpolation of the cumulative trapezoid sums.
    pub fn quantile(&self, u: T) -> T {
        let idx = self.cdf.partition_point(|c| *c < u);
        if idx == 0 {
            return self.grid.start;
        }
        if idx >= self.cdf.len() {
            return self.grid.end();
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { T::zero() };
        self.grid.node(idx - 1) + frac * self.grid.step
    }

    pub fn sample(&self, n: usize, noise: &NoiseStream, stream: u64) -> Result<ParticleCloud<T>> {
        let mut u = vec![0.0; n];
        noise.fill_uniforms(stream, 0, &mut u);
        ParticleCloud::from_scalars(u.into_iter().map(|v| self.quantile(T::lit(v))).collect())
    }
}

/// Any of the latent-law representations used along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Law<T: Scalar> {
    Gaussian(GaussianLaw<T>),
    Particles(ParticleCloud<T>),
    Tabulated(TabulatedLaw<T>),
}

impl<T: Scalar> Law<T> {
    pub fn dim(&self) -> usize {
        match self {
            Law::Gaussian(g) => g.dim(),
            Law::Particles(c) => c.dim(),
            Law::Tabulated(_) => 1,
        }
    }

    pub fn mean(&self) -> Vector<T> {
        match self {
            Law::Gaussian(g) => g.mean().clone(),
            Law::Particles(c) => c.mean(),
            Law::Tabulated(t) => Vector::from_element(1, t.mean()),
        }
    }

    /// Covariance summary; a single particle reports zeros.
    pub fn covariance(&self) -> Matrix<T> {
        match self {
            Law::Gaussian(g) => g.cov().clone(),
            Law::Particles(c) => moments(c)
                .map(|m| m.cov)
                .unwrap_or_else(|_| Matrix::zeros(c.dim(), c.dim())),
            Law::Tabulated(t) => Matrix::from_element(1, 1, t.variance()),
        }
    }

    pub fn is_particles(&self) -> bool {
        matches!(self, Law::Particles(_))
    }

    pub fn as_gaussian(&self) -> Option<&GaussianLaw<T>> {
        match self {
            Law::Gaussian(g) => Some(g),
            _ => None,
        }
    }
}

impl<T: Scalar> From<GaussianLaw<T>> for Law<T> {
    fn from(g: GaussianLaw<T>) -> Self {
        Law::Gaussian(g)
    }
}

impl<T: Scalar> From<ParticleCloud<T>> for Law<T> {
    fn from(c: ParticleCloud<T>) -> Self {
        Law::Particles(c)
    }
}

impl<T: Scalar> From<TabulatedLaw<T>> for Law<T> {
    fn from(t: TabulatedLaw<T>) -> Self {
        Law::Tabulated(t)
    }
}

/// A point `(θ, q)` of the product space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint<T: Scalar> {
    pub theta: Vector<T>,
    pub law: Law<T>,
}

impl<T: Scalar> ProductPoint<T> {
    pub fn new(theta: Vector<T>, law: impl Into<Law<T>>) -> Self {
        Self {
            theta,
            law: law.into(),
        }
    }
}

fn same_dim<T: Scalar>(a: &GaussianLaw<T>, b: &GaussianLaw<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Bures–Wasserstein distance
/// `√(‖m₁−m₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^{½} Σ₁ Σ₂^{½})^{½}))`.
pub fn w2_gaussian<T: Scalar>(g1: &GaussianLaw<T>, g2: &GaussianLaw<T>) -> Result<T> {
    same_dim(g1, g2)?;
    let dm = g1.mean() - g2.mean();
    let root2 = linalg::sqrtm_psd(g2.cov());
    let cross = linalg::sqrtm_psd(&linalg::symmetrize(&(&root2 * g1.cov() * &root2)));
    let bures = g1.cov().trace() + g2.cov().trace() - T::lit(2.0) * cross.trace();
    let sq = dm.dot(&dm) + bures;
    Ok(if sq > T::zero() { sq.sqrt() } else { T::zero() })
}

/// Closed-form `KL(g1 ‖ g2)`.
pub fn kl_gaussian<T: Scalar>(g1: &GaussianLaw<T>, g2: &GaussianLaw<T>) -> Result<T> {
    same_dim(g1, g2)?;
    let d = T::from_usize_lossy(g1.dim());
    let prec2 = g2.precision();
    let dm = g2.mean() - g1.mean();
    let log_det1 = linalg::log_det_spd(g1.cov(), "covariance")?;
    let log_det2 = linalg::log_det_spd(g2.cov(), "covariance")?;
    let kl = T::lit(0.5)
        * ((&prec2 * g1.cov()).trace() + dm.dot(&(&prec2 * &dm)) - d + log_det2 - log_det1);
    Ok(if kl > T::zero() { kl } else { T::zero() })
}

/// Quantile-coupling W₂ between a 1D cloud and a 1D Gaussian: the sorted
/// particle `i` is paired with the Gaussian quantile at `(i − ½)/N`.
pub fn w2_empirical_1d<T: Scalar>(cloud: &ParticleCloud<T>, g: &GaussianLaw<T>) -> Result<T> {
    if cloud.dim() != 1 || g.dim() != 1 {
        return Err(Error::UnsupportedRepresentation(
            "empirical W2 is only provided in one dimension".into(),
        ));
    }
    Ok(coupling_to_quantiles(cloud, |u| g.quantile_1d(u)))
}

fn coupling_to_quantiles<T: Scalar>(cloud: &ParticleCloud<T>, quantile: impl Fn(T) -> T) -> T {
    let mut sorted = cloud.as_slice().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = T::from_usize_lossy(sorted.len());
    let sum = sorted.iter().enumerate().fold(T::zero(), |acc, (i, x)| {
        let q = quantile((T::from_usize_lossy(i) + T::lit(0.5)) / n);
        acc + (*x - q) * (*x - q)
    });
    (sum / n).sqrt()
}

/// `∫ (x − T(x))² a(dx)` with `T` the monotone map carrying `a` onto the law
/// with quantile function `quantile`.
fn tabulated_transport<T: Scalar>(a: &TabulatedLaw<T>, quantile: impl Fn(T) -> T) -> T {
    let tiny = T::lit(1e-300_f64.max(f64::MIN_POSITIVE));
    let top = T::one() - T::lit(1e-16);
    let cost = a.expect(|i, x| {
        let u = a.cdf_at_node(i);
        let u = if u < tiny { tiny } else if u > top { top } else { u };
        let y = quantile(u);
        (x - y) * (x - y)
    });
    if cost > T::zero() {
        cost.sqrt()
    } else {
        T::zero()
    }
}

/// W₂ between two one-dimensional laws of any representation.
pub fn w2_1d<T: Scalar>(a: &Law<T>, b: &Law<T>) -> Result<T> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::UnsupportedRepresentation(
            "mixed-representation W2 is only provided in one dimension".into(),
        ));
    }
    match (a, b) {
        (Law::Gaussian(x), Law::Gaussian(y)) => w2_gaussian(x, y),
        (Law::Particles(c), Law::Gaussian(g)) | (Law::Gaussian(g), Law::Particles(c)) => {
            w2_empirical_1d(c, g)
        }
        (Law::Particles(c), Law::Tabulated(t)) | (Law::Tabulated(t), Law::Particles(c)) => {
            Ok(coupling_to_quantiles(c, |u| t.quantile(u)))
        }
        (Law::Tabulated(t), Law::Gaussian(g)) | (Law::Gaussian(g), Law::Tabulated(t)) => {
            Ok(tabulated_transport(t, |u| g.quantile_1d(u)))
        }
        (Law::Tabulated(s), Law::Tabulated(t)) => Ok(tabulated_transport(s, |u| t.quantile(u))),
        (Law::Particles(c1), Law::Particles(c2)) => {
            if c1.len() != c2.len() {
                return Err(Error::UnsupportedRepresentation(
                    "particle-to-particle W2 needs equal cloud sizes".into(),
                ));
            }
            let mut s1 = c1.as_slice().to_vec();
            let mut s2 = c2.as_slice().to_vec();
            let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
            s1.sort_by(cmp);
            s2.sort_by(cmp);
            let sum = s1
                .iter()
                .zip(&s2)
                .fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y));
            Ok((sum / T::from_usize_lossy(s1.len())).sqrt())
        }
    }
}

/// `√(‖θ−θ'‖² + W₂(q, q')²)`.
pub fn product_distance<T: Scalar>(p1: &ProductPoint<T>, p2: &ProductPoint<T>) -> Result<T> {
    if p1.theta.len() != p2.theta.len() {
        return Err(invalid("parameter dimension mismatch"));
    }
    let dt = &p1.theta - &p2.theta;
    let w2 = match (&p1.law, &p2.law) {
        (Law::Gaussian(a), Law::Gaussian(b)) => w2_gaussian(a, b)?,
        (a, b) if a.dim() == 1 && b.dim() == 1 => w2_1d(a, b)?,
        _ => {
            return Err(Error::UnsupportedRepresentation(
                "product distance between non-Gaussian laws needs d_x = 1".into(),
            ))
        }
    };
    Ok((dt.dot(&dt) + w2 * w2).sqrt())
}

/// Distance from `p` to the closest point of `optimum_set`.
pub fn distance_to_optimum<T: Scalar>(p: &ProductPoint<T>, optimum_set: &[ProductPoint<T>]) -> Result<T> {
    if optimum_set.is_empty() {
        return Err(invalid("optimum set is empty"));
    }
    let mut best: Option<T> = None;
    for candidate in optimum_set {
        let d = product_distance(p, candidate)?;
        best = Some(match best {
            Some(b) if b <= d => b,
            _ => d,
        });
    }
    Ok(best.expect("non-empty set"))
}
