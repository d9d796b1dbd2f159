//! Models whose complete log-likelihood is a quadratic form in `z = (θ, x)`:
//! `ℓ(z) = −½ zᵀQz + gᵀz + c` with `Q` the constant negative Hessian.

use crate::error::{invalid, Error, Result};
use crate::laws::GaussianLaw;
use crate::linalg::{self, Matrix, Vector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel<T: Scalar> {
    d_theta: usize,
    d_x: usize,
    q: Matrix<T>,
    g: Vector<T>,
    c: T,
    qxx_inv: Matrix<T>,
    log_det_qxx: T,
}

impl<T: Scalar> QuadraticModel<T> {
    /// Requires `Q` symmetric with a positive definite latent block `Q_xx`, so
    /// that every `π_θ` is a proper Gaussian.
    pub fn new(d_theta: usize, q: Matrix<T>, g: Vector<T>, c: T) -> Result<Self> {
        let n = q.nrows();
        if d_theta == 0 || d_theta >= n {
            return Err(invalid(format!(
                "d_theta = {d_theta} must lie in 1..{n} for a {n}x{n} Hessian"
            )));
        }
        linalg::check_dims(&q, n, n, "negative Hessian")?;
        if g.len() != n {
            return Err(invalid(format!("linear term has length {}, expected {n}", g.len())));
        }
        if !linalg::all_finite(q.as_slice()) || !linalg::all_finite(g.as_slice()) || !c.is_finite_value() {
            return Err(invalid("quadratic model has non-finite coefficients"));
        }
        if !linalg::is_symmetric(&q, T::lit(1e-12)) {
            return Err(invalid("negative Hessian is not symmetric"));
        }
        let q = linalg::symmetrize(&q);
        let d_x = n - d_theta;
        let qxx = q.view((d_theta, d_theta), (d_x, d_x)).into_owned();
        let qxx_inv = linalg::spd_inverse(&qxx, "latent precision block")?;
        let log_det_qxx = linalg::log_det_spd(&qxx, "latent precision block")?;
        Ok(Self {
            d_theta,
            d_x,
            q,
            g,
            c,
            qxx_inv,
            log_det_qxx,
        })
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    /// The constant matrix `Q = −∇²ℓ`.
    pub fn neg_hessian(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn linear(&self) -> &Vector<T> {
        &self.g
    }

    pub fn constant(&self) -> T {
        self.c
    }

    fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Matrix<T> {
        self.q.view((r0, c0), (nr, nc)).into_owned()
    }

    pub fn q_tt(&self) -> Matrix<T> {
        self.block(0, self.d_theta, 0, self.d_theta)
    }

    pub fn q_tx(&self) -> Matrix<T> {
        self.block(0, self.d_theta, self.d_theta, self.d_x)
    }

    pub fn q_xt(&self) -> Matrix<T> {
        self.block(self.d_theta, self.d_x, 0, self.d_theta)
    }

    pub fn q_xx(&self) -> Matrix<T> {
        self.block(self.d_theta, self.d_x, self.d_theta, self.d_x)
    }

    pub fn g_theta(&self) -> Vector<T> {
        self.g.rows(0, self.d_theta).into_owned()
    }

    pub fn g_x(&self) -> Vector<T> {
        self.g.rows(self.d_theta, self.d_x).into_owned()
    }

    fn stack(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        let mut z = Vector::zeros(self.d_theta + self.d_x);
        z.rows_mut(0, self.d_theta).copy_from(theta);
        z.rows_mut(self.d_theta, self.d_x).copy_from(x);
        z
    }

    pub fn log_rho(&self, theta: &Vector<T>, x: &Vector<T>) -> T {
        let z = self.stack(theta, x);
        -T::lit(0.5) * z.dot(&(&self.q * &z)) + self.g.dot(&z) + self.c
    }

    /// Full gradient `g − Qz`.
    pub fn grad(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        let z = self.stack(theta, x);
        &self.g - &self.q * z
    }

    pub fn grad_theta(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        self.g_theta() - self.q_tt() * theta - self.q_tx() * x
    }

    pub fn grad_x(&self, theta: &Vector<T>, x: &Vector<T>) -> Vector<T> {
        self.g_x() - self.q_xt() * theta - self.q_xx() * x
    }

    /// `∇_xℓ(θ; x) = A x + b_θ`.
    pub fn langevin_affine(&self, theta: &Vector<T>) -> (Matrix<T>, Vector<T>) {
        (-self.q_xx(), self.g_x() - self.q_xt() * theta)
    }

    pub fn posterior_mean(&self, theta: &Vector<T>) -> Vector<T> {
        &self.qxx_inv * (self.g_x() - self.q_xt() * theta)
    }

    pub fn posterior_cov(&self) -> &Matrix<T> {
        &self.qxx_inv
    }

    pub fn posterior(&self, theta: &Vector<T>) -> Result<GaussianLaw<T>> {
        GaussianLaw::new(self.posterior_mean(theta), self.qxx_inv.clone())
    }

    /// `log Z_θ = ℓ(θ; μ_θ) + (d_x/2) log 2π − ½ log det Q_xx`.
    pub fn log_marginal(&self, theta: &Vector<T>) -> T {
        let mu = self.posterior_mean(theta);
        let d = T::from_usize_lossy(self.d_x);
        self.log_rho(theta, &mu) + T::lit(0.5) * (d * T::two_pi().ln() - self.log_det_qxx)
    }

    /// Schur complement `S = Q_θθ − Q_θx Q_xx⁻¹ Q_xθ`, the negative Hessian
    /// of `θ ↦ log Z_θ`.
    pub fn schur(&self) -> Matrix<T> {
        self.q_tt() - self.q_tx() * &self.qxx_inv * self.q_xt()
    }

    pub fn mle(&self) -> Result<Vector<T>> {
        let s_inv = linalg::spd_inverse(&self.schur(), "marginal negative Hessian")
            .map_err(|_| Error::DegenerateModel("marginal likelihood has no unique maximiser".into()))?;
        Ok(s_inv * (self.g_theta() - self.q_tx() * &self.qxx_inv * self.g_x()))
    }

    /// Maximiser of `θ ↦ ∫ℓ(θ; x) q(dx)` given the latent mean of `q`.
    pub fn m_step(&self, latent_mean: &Vector<T>) -> Result<Vector<T>> {
        let q_tt_inv = linalg::spd_inverse(&self.q_tt(), "parameter block of the negative Hessian")?;
        Ok(q_tt_inv * (self.g_theta() - self.q_tx() * latent_mean))
    }

    /// The zero `Q⁻¹g` of the full gradient.
    pub fn stationary_point(&self) -> Result<(Vector<T>, Vector<T>)> {
        let lu = self.q.clone().lu();
        let z = lu
            .solve(&self.g)
            .ok_or_else(|| Error::DegenerateModel("negative Hessian is singular".into()))?;
        if !linalg::all_finite(z.as_slice()) {
            return Err(Error::DegenerateModel("negative Hessian is singular".into()));
        }
        Ok((
            z.rows(0, self.d_theta).into_owned(),
            z.rows(self.d_theta, self.d_x).into_owned(),
        ))
    }

    /// Operator norms of the θ and x column blocks of `Q`.
    pub fn lipschitz(&self) -> (T, T) {
        let n = self.d_theta + self.d_x;
        let cols_t = self.block(0, n, 0, self.d_theta);
        let cols_x = self.block(0, n, self.d_theta, self.d_x);
        (linalg::op_norm(&cols_t), linalg::op_norm(&cols_x))
    }

    pub fn min_eigenvalue(&self) -> T {
        linalg::min_eigenvalue(&self.q)
    }

    /// Model of `T_#π_θ` for `T(u) = A u + b`.
    pub fn pushforward(&self, a: &Matrix<T>, b: &Vector<T>) -> Result<Self> {
        let (dt, dx) = (self.d_theta, self.d_x);
        linalg::check_dims(a, dx, dx, "pushforward matrix")?;
        if b.len() != dx {
            return Err(invalid(format!("pushforward offset has length {}, expected {dx}", b.len())));
        }
        let lu = a.clone().lu();
        let det = lu.determinant();
        if det == T::zero() || !det.is_finite_value() {
            return Err(invalid("pushforward matrix is singular"));
        }
        let a_inv = lu
            .try_inverse()
            .ok_or_else(|| invalid("pushforward matrix is singular"))?;
        let n = dt + dx;
        let mut m = Matrix::identity(n, n);
        m.view_mut((dt, dt), (dx, dx)).copy_from(&a_inv);
        let mut s = Vector::zeros(n);
        s.rows_mut(dt, dx).copy_from(&(-(&a_inv * b)));
        let qs = &self.q * &s;
        let q_new = m.transpose() * &self.q * &m;
        let g_new = m.transpose() * (&self.g - &qs);
        let c_new = self.c - T::lit(0.5) * s.dot(&qs) + self.g.dot(&s) - det.magnitude().ln();
        Self::new(dt, linalg::symmetrize(&q_new), g_new, c_new)
    }
}
