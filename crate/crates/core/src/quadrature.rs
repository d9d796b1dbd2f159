//! Deterministic trapezoid quadrature on uniform grids.
//!
//! Grids are centred on a Gaussian reference (mean ± 8σ, 4001 nodes per axis
//! by default). Trapezoid sums are spectrally accurate for the smooth,
//! Gaussian-tailed integrands used here.

use crate::scalar::Scalar;

pub const DEFAULT_NODES: usize = 4001;
pub const DEFAULT_SPAN: f64 = 8.0;

/// Uniform grid `start + i·step`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d<T> {
    pub start: T,
    pub step: T,
    pub n: usize,
}

impl<T: Scalar> Grid1d<T> {
    pub fn new(lo: T, hi: T, n: usize) -> Self {
        assert!(n >= 2, "grid needs at least two nodes");
        let step = (hi - lo) / T::from_usize_lossy(n - 1);
        Self { start: lo, step, n }
    }

    /// `[mean − span·sd, mean + span·sd]` with `n` nodes.
    pub fn centred(mean: T, sd: T, span: f64, n: usize) -> Self {
        let half = sd * T::lit(span);
        Self::new(mean - half, mean + half, n)
    }

    pub fn gaussian(mean: T, sd: T) -> Self {
        Self::centred(mean, sd, DEFAULT_SPAN, DEFAULT_NODES)
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.start + self.step * T::from_usize_lossy(i)
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    pub fn end(&self) -> T {
        self.node(self.n - 1)
    }
}

/// Trapezoid rule for samples on a uniform grid.
pub fn trapezoid<T: Scalar>(values: &[T], step: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        n => {
            let interior = values[1..n - 1].iter().fold(T::zero(), |a, v| a + *v);
            (interior + (values[0] + values[n - 1]) * T::lit(0.5)) * step
        }
    }
}

/// `log ∫ exp(f)` from log-values on a uniform grid, shifted by the maximum
/// for stability.
pub fn log_integral_exp<T: Scalar>(log_values: &[T], step: T) -> T {
    let peak = log_values
        .iter()
        .copied()
        .fold(T::lit(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    let shifted: Vec<T> = log_values.iter().map(|v| (*v - peak).exp()).collect();
    trapezoid(&shifted, step).ln() + peak
}

/// Integrates `f(x)` over a 1D grid.
pub fn integrate_1d<T: Scalar>(grid: &Grid1d<T>, f: impl Fn(T) -> T) -> T {
    let values: Vec<T> = grid.nodes().map(f).collect();
    trapezoid(&values, grid.step)
}

/// Tensor-product trapezoid rule on two grids.
pub fn integrate_2d<T: Scalar>(gx: &Grid1d<T>, gy: &Grid1d<T>, f: impl Fn(T, T) -> T) -> T {
    let rows: Vec<T> = gx
        .nodes()
        .map(|x| {
            let inner: Vec<T> = gy.nodes().map(|y| f(x, y)).collect();
            trapezoid(&inner, gy.step)
        })
        .collect();
    trapezoid(&rows, gx.step)
}
