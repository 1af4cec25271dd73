//! The smoothing kernel, its moments and the convolutions used by the
//! renormalised estimators.
//!
//! Only the Gaussian kernel ships; the enum keeps the door open for other
//! symmetric densities. With a Gaussian kernel every convolution against a
//! normal density is closed form, and convolutions against tabulated
//! functions are smooth enough that trapezoid quadrature converges fast once
//! the grid resolves the bandwidth.

use thiserror::Error;

use crate::grid::GridFunction;

pub(crate) const INV_SQRT_2PI: f64 = 0.39894228040143267793994605993438;

/// Kernel terms beyond `|u| > KERNEL_CUTOFF` are below 7.7e-23 and are
/// skipped by the tabulation loops.
pub(crate) const KERNEL_CUTOFF: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("bandwidth must be a positive finite number, got {0}")]
    InvalidBandwidth(f64),
    #[error("kernel moment s_{0} is not supported (only 0, 2, 4)")]
    UnsupportedMoment(u32),
    #[error("standard deviation must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("tabulation grid [{grid_lo}, {grid_hi}] does not extend 6h = {margin} beyond x = {x}")]
    InsufficientSupport {
        x: f64,
        margin: f64,
        grid_lo: f64,
        grid_hi: f64,
    },
}

pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

/// A smoothing bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self, KernelError> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(KernelError::InvalidBandwidth(h))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A symmetric probability-density smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Gaussian,
}

impl Kernel {
    /// K(u) at unit bandwidth.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
        }
    }

    /// K_h(u) = h⁻¹ K(h⁻¹ u).
    pub fn eval_scaled(self, h: Bandwidth, u: f64) -> f64 {
        self.eval(u / h.get()) / h.get()
    }

    /// Kernel moment s_ℓ = ∫ uℓ K(u) du for ℓ ∈ {0, 2, 4}.
    pub fn moment(self, ell: u32) -> Result<f64, KernelError> {
        match (self, ell) {
            (Kernel::Gaussian, 0) => Ok(1.0),
            (Kernel::Gaussian, 2) => Ok(1.0),
            (Kernel::Gaussian, 4) => Ok(3.0),
            (_, other) => Err(KernelError::UnsupportedMoment(other)),
        }
    }

    /// The self-convolution (K*K)(u). For the Gaussian this is the normal
    /// density with variance 2.
    pub fn self_convolution(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => normal_pdf(u, 0.0, std::f64::consts::SQRT_2),
        }
    }

    /// ∫ (2K(u) − (K*K)(u))² du, the variance constant of the twice-smoothed
    /// estimators, computed by quadrature.
    pub fn variance_constant(self) -> f64 {
        self.variance_constant_resolved(4801)
    }

    pub(crate) fn variance_constant_resolved(self, m: usize) -> f64 {
        // The integrand decays like e^{−u²}; [−12, 12] is exhaustive.
        let (lo, hi) = (-12.0, 12.0);
        let d = (hi - lo) / (m - 1) as f64;
        let f = |u: f64| {
            let v = 2.0 * self.eval(u) - self.self_convolution(u);
            v * v
        };
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..m - 1 {
            acc += f(lo + d * i as f64);
        }
        acc * d
    }
}

/// (K_h * N(μ, σ²))(x), closed form: the normal density N(x; μ, σ² + h²).
pub fn convolve_with_normal(h: Bandwidth, mean: f64, sd: f64, x: f64) -> Result<f64, KernelError> {
    if !(sd.is_finite() && sd > 0.0) {
        return Err(KernelError::InvalidSigma(sd));
    }
    let s = (sd * sd + h.get() * h.get()).sqrt();
    Ok(normal_pdf(x, mean, s))
}

/// (K_h * g)(x) by trapezoid quadrature of a tabulated `g`.
///
/// The tabulation must extend at least 6h beyond `x` on both sides; a grid
/// coarser than h/4 still evaluates but logs a resolution warning.
pub fn convolve_with_function(h: Bandwidth, g: &GridFunction, x: f64) -> Result<f64, KernelError> {
    let hv = h.get();
    let grid = g.grid();
    let margin = 6.0 * hv;
    if !grid.covers(x - margin, x + margin) {
        return Err(KernelError::InsufficientSupport {
            x,
            margin,
            grid_lo: grid.lo(),
            grid_hi: grid.hi(),
        });
    }
    let d = grid.spacing();
    if d > hv / 4.0 {
        log::warn!(
            "convolution grid spacing {d:.3e} exceeds h/4 = {:.3e}; result may be under-resolved",
            hv / 4.0
        );
    }
    let m = grid.len();
    let lo_idx = ((x - KERNEL_CUTOFF * hv - grid.lo()) / d).ceil().max(0.0) as usize;
    let hi_idx = (((x + KERNEL_CUTOFF * hv - grid.lo()) / d).floor() as usize).min(m - 1);
    let mut acc = 0.0;
    for j in lo_idx..=hi_idx {
        let t = grid.point(j);
        let u = (x - t) / hv;
        let mut term = INV_SQRT_2PI * (-0.5 * u * u).exp() / hv * g.value(j);
        if j == 0 || j == m - 1 {
            term *= 0.5;
        }
        acc += term;
    }
    Ok(acc * d)
}
