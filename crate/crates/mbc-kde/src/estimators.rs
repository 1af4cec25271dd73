//! The seven density estimators, built from one generic multiplicative
//! corrector.
//!
//! The family shares a single form: pick a positive pilot `g`, estimate the
//! ratio f/g by kernel smoothing, and multiply back,
//!
//! ```text
//!     f̃(x) = g(x) · n⁻¹ Σᵢ g(Xᵢ)⁻¹ K_h(x − Xᵢ)
//! ```
//!
//! optionally renormalised to unit integral by dividing through
//! `Σᵢ g(Xᵢ)⁻¹ (K_h*g)(Xᵢ)`. The concrete estimators are
//!
//! * `Kde` — g ≡ 1, the basic kernel density estimator;
//! * `JlnRaw` / `JlnRenorm` — g is the KDE itself at the same bandwidth
//!   (Jones-Linton-Nielsen), giving O(h⁴) bias for smooth f;
//! * `HgRaw` / `HgRenorm` — g is a fitted normal vehicle (Hjort-Glad),
//!   zeroing the leading bias when the vehicle is right;
//! * `HobskdeRaw` / `HobskdeRenorm` — g is the raw Hjort-Glad estimate,
//!   combining both properties.
//!
//! Every operation is pure given (sample, spec, grid); sums over the sample
//! always run in ascending value order, so estimates are bit-identical under
//! permutation of the input and under any worker scheduling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{EvaluationGrid, GridError, GridFunction};
use crate::kernels::{
    convolve_with_normal, normal_pdf, Bandwidth, Kernel, KernelError, INV_SQRT_2PI, KERNEL_CUTOFF,
};

/// Pilot values below this at a sample point are an error rather than a
/// silent overflow of g(Xᵢ)⁻¹.
const PILOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("parametric fit needs at least 2 observations, got {0}")]
    TooSmallForFit(usize),
    #[error("degenerate sample: zero variance")]
    DegenerateFit,
    #[error("invalid pilot value {value:e} at sample index {index}")]
    InvalidPilot { index: usize, value: f64 },
    #[error("renormalisation failed: denominator = {denominator}")]
    RenormalisationFailure { denominator: f64 },
    #[error(
        "grid [{grid_lo}, {grid_hi}] does not cover the sample range plus a 6h margin [{needed_lo}, {needed_hi}]"
    )]
    InsufficientSupport {
        needed_lo: f64,
        needed_hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// An observed sample. Values are kept in input order; estimators run their
/// sums over an internally sorted copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self, EstimatorError> {
        if values.is_empty() {
            return Err(EstimatorError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFiniteSample);
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self { values, sorted })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values in ascending order; all estimator sums run over this view.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.n() - 1]
    }
}

/// Gaussian MLE fit N(μ̂, σ̂²) with variance divisor n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricFit {
    mu: f64,
    sigma: f64,
}

impl ParametricFit {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, EstimatorError> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(EstimatorError::DegenerateFit);
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pdf(&self, x: f64) -> f64 {
        normal_pdf(x, self.mu, self.sigma)
    }
}

pub fn fit_normal_mle(sample: &Sample) -> Result<ParametricFit, EstimatorError> {
    let n = sample.n();
    if n < 2 {
        return Err(EstimatorError::TooSmallForFit(n));
    }
    let nf = n as f64;
    let mu = sample.sorted().iter().sum::<f64>() / nf;
    let var = sample
        .sorted()
        .iter()
        .map(|x| (x - mu) * (x - mu))
        .sum::<f64>()
        / nf;
    if !(var.is_finite() && var > 0.0) {
        return Err(EstimatorError::DegenerateFit);
    }
    ParametricFit::new(mu, var.sqrt())
}

/// The estimator taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Kde,
    JlnRaw,
    JlnRenorm,
    HgRaw,
    HgRenorm,
    HobskdeRaw,
    HobskdeRenorm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Kde,
        EstimatorKind::JlnRaw,
        EstimatorKind::JlnRenorm,
        EstimatorKind::HgRaw,
        EstimatorKind::HgRenorm,
        EstimatorKind::HobskdeRaw,
        EstimatorKind::HobskdeRenorm,
    ];

    /// The five benchmark-table estimators, in table row order.
    pub const TABLE1: [EstimatorKind; 5] = [
        EstimatorKind::Kde,
        EstimatorKind::JlnRenorm,
        EstimatorKind::HgRaw,
        EstimatorKind::HobskdeRaw,
        EstimatorKind::HobskdeRenorm,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EstimatorKind::Kde => "kde",
            EstimatorKind::JlnRaw => "jln_raw",
            EstimatorKind::JlnRenorm => "jln_renorm",
            EstimatorKind::HgRaw => "hg_raw",
            EstimatorKind::HgRenorm => "hg_renorm",
            EstimatorKind::HobskdeRaw => "hobskde_raw",
            EstimatorKind::HobskdeRenorm => "hobskde_renorm",
        }
    }

    /// Whether the estimator needs a parametric fit (and hence n ≥ 2).
    pub fn needs_fit(self) -> bool {
        !matches!(
            self,
            EstimatorKind::Kde | EstimatorKind::JlnRaw | EstimatorKind::JlnRenorm
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.token() == norm)
            .ok_or_else(|| {
                let tokens: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.token()).collect();
                format!(
                    "unknown estimator '{s}'; valid kinds: {}",
                    tokens.join(", ")
                )
            })
    }
}

/// Which estimator to evaluate, and at what bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub h: Bandwidth,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, h: Bandwidth) -> Self {
        Self { kind, h }
    }
}

/// An estimate tabulated on an evaluation grid, ready for ISE quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    grid: EvaluationGrid,
    values: Vec<f64>,
}

impl DensityEstimate {
    /// Wrap an externally tabulated estimate. Values must be nonnegative and
    /// finite, one per grid node.
    pub fn new(grid: EvaluationGrid, values: Vec<f64>) -> Result<Self, EstimatorError> {
        if values.len() != grid.len() {
            return Err(EstimatorError::Grid(GridError::TooFewPoints {
                min: grid.len(),
                got: values.len(),
            }));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EstimatorError::NonFiniteSample);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &EvaluationGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Trapezoid mass over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }
}

// ─── point evaluation API ───────────────────────────────────────────────

/// The basic kernel density estimator n⁻¹ Σ K_h(x − Xᵢ).
pub fn kde(sample: &Sample, h: Bandwidth, x: f64) -> f64 {
    let hv = h.get();
    let sum: f64 = sample
        .sorted()
        .iter()
        .map(|xi| {
            let u = (x - xi) / hv;
            (-0.5 * u * u).exp()
        })
        .sum();
    sum * INV_SQRT_2PI / (hv * sample.n() as f64)
}

fn pilot_at_sample(values: &[f64]) -> Result<(), EstimatorError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < PILOT_FLOOR {
            return Err(EstimatorError::InvalidPilot { index, value });
        }
    }
    Ok(())
}

/// g(x) · n⁻¹ Σ g(Xᵢ)⁻¹ K_h(x − Xᵢ), the raw multiplicative form.
pub fn multiplicative_raw(
    sample: &Sample,
    h: Bandwidth,
    g: impl Fn(f64) -> f64,
    x: f64,
) -> Result<f64, EstimatorError> {
    let gx = g(x);
    if !gx.is_finite() {
        return Err(EstimatorError::InvalidPilot {
            index: usize::MAX,
            value: gx,
        });
    }
    let gi: Vec<f64> = sample.sorted().iter().map(|&xi| g(xi)).collect();
    pilot_at_sample(&gi)?;
    let hv = h.get();
    let sum: f64 = sample
        .sorted()
        .iter()
        .zip(&gi)
        .map(|(&xi, &gv)| {
            let u = (x - xi) / hv;
            (-0.5 * u * u).exp() / gv
        })
        .sum();
    Ok(gx * sum * INV_SQRT_2PI / (hv * sample.n() as f64))
}

/// The renormalised multiplicative form
/// g(x) Σ g(Xᵢ)⁻¹K_h(x − Xᵢ) / Σ g(Xᵢ)⁻¹(K_h*g)(Xᵢ); integrates to one.
///
/// `conv_g` must compute (K_h*g)(·) consistently with `g`.
pub fn multiplicative_renorm(
    sample: &Sample,
    h: Bandwidth,
    g: impl Fn(f64) -> f64,
    conv_g: impl Fn(f64) -> Result<f64, KernelError>,
    x: f64,
) -> Result<f64, EstimatorError> {
    let gx = g(x);
    if !gx.is_finite() {
        return Err(EstimatorError::InvalidPilot {
            index: usize::MAX,
            value: gx,
        });
    }
    let gi: Vec<f64> = sample.sorted().iter().map(|&xi| g(xi)).collect();
    pilot_at_sample(&gi)?;
    let hv = h.get();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (&xi, &gv) in sample.sorted().iter().zip(&gi) {
        let u = (x - xi) / hv;
        numerator += (-0.5 * u * u).exp() * INV_SQRT_2PI / hv / gv;
        denominator += conv_g(xi)? / gv;
    }
    if !(denominator.is_finite() && denominator > 0.0) {
        return Err(EstimatorError::RenormalisationFailure { denominator });
    }
    Ok(gx * numerator / denominator)
}

// ─── tabulation engine ──────────────────────────────────────────────────

/// Visit the grid nodes with |t_j − x| ≤ cutoff·h, passing (j, K_h(t_j − x)).
///
/// Consecutive kernel values on a uniform lattice obey
/// e_{j+1} = e_j · exp(−u_j·d − d²/2) with the second factor itself geometric
/// in exp(−d²), so the window costs one exp triple plus two multiplies per
/// node. Relative drift is ~2·L·ulp over a window of L nodes, far below the
/// 1e-10 oracle tolerances.
fn scan_kernel_window(grid: &EvaluationGrid, h: f64, x: f64, mut visit: impl FnMut(usize, f64)) {
    let m = grid.len();
    let d = grid.spacing();
    let radius = KERNEL_CUTOFF * h;
    let jlo_f = ((x - radius - grid.lo()) / d).ceil();
    let jhi_f = ((x + radius - grid.lo()) / d).floor();
    if jhi_f < 0.0 || jlo_f > (m - 1) as f64 {
        return;
    }
    let jlo = jlo_f.max(0.0) as usize;
    let jhi = (jhi_f.max(0.0) as usize).min(m - 1);
    if jlo > jhi {
        return;
    }
    let amp = INV_SQRT_2PI / h;
    let dh = d / h;
    if dh > 3.0 || jhi - jlo < 4 {
        for j in jlo..=jhi {
            let u = (grid.point(j) - x) / h;
            visit(j, amp * (-0.5 * u * u).exp());
        }
        return;
    }
    let j0 = grid.nearest_index(x).clamp(jlo, jhi);
    let u0 = (grid.point(j0) - x) / h;
    let e0 = (-0.5 * u0 * u0).exp();
    visit(j0, amp * e0);
    let r = (-dh * dh).exp();
    let mut q = (-(u0 * dh) - 0.5 * dh * dh).exp();
    let mut e = e0;
    for j in j0 + 1..=jhi {
        e *= q;
        q *= r;
        visit(j, amp * e);
    }
    let mut q = ((u0 * dh) - 0.5 * dh * dh).exp();
    let mut e = e0;
    for j in (jlo..j0).rev() {
        e *= q;
        q *= r;
        visit(j, amp * e);
    }
}

/// out[j] = scale · Σᵢ wᵢ K_h(x_j − Xᵢ), accumulated in ascending sample
/// order over truncated kernel windows.
fn weighted_scatter(
    xs: &[f64],
    ws: Option<&[f64]>,
    h: f64,
    grid: &EvaluationGrid,
    scale: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (i, &x) in xs.iter().enumerate() {
        let w = scale * ws.map_or(1.0, |w| w[i]);
        scan_kernel_window(grid, h, x, |j, k| out[j] += w * k);
    }
    out
}

/// s[i] = scale · Σⱼ wⱼ K_h(Xᵢ − Xⱼ) over the sorted sample, truncated at
/// the kernel cutoff with a two-pointer window.
fn weighted_sums_at_samples(xs: &[f64], ws: Option<&[f64]>, h: f64, scale: f64) -> Vec<f64> {
    let n = xs.len();
    let radius = KERNEL_CUTOFF * h;
    let inv_h = 1.0 / h;
    let mut out = vec![0.0; n];
    let mut lo = 0usize;
    for i in 0..n {
        let x = xs[i];
        while xs[lo] < x - radius {
            lo += 1;
        }
        let mut acc = 0.0;
        for j in lo..n {
            if xs[j] > x + radius {
                break;
            }
            let u = (x - xs[j]) * inv_h;
            acc += ws.map_or(1.0, |w| w[j]) * (-0.5 * u * u).exp();
        }
        out[i] = acc * scale * INV_SQRT_2PI * inv_h;
    }
    out
}

/// Trapezoid of K_h(x − t)·tab(t) over the tabulation grid, truncated at the
/// kernel cutoff.
fn convolve_tabulated_at(tab: &GridFunction, h: f64, x: f64) -> f64 {
    let grid = tab.grid();
    let last = grid.len() - 1;
    let mut acc = 0.0;
    scan_kernel_window(grid, h, x, |j, k| {
        let wj = if j == 0 || j == last { 0.5 } else { 1.0 };
        acc += wj * k * tab.value(j);
    });
    acc * grid.spacing()
}

fn check_margin(sample: &Sample, h: f64, grid: &EvaluationGrid) -> Result<(), EstimatorError> {
    let needed_lo = sample.min() - 6.0 * h;
    let needed_hi = sample.max() + 6.0 * h;
    if grid.covers(needed_lo, needed_hi) {
        Ok(())
    } else {
        Err(EstimatorError::InsufficientSupport {
            needed_lo,
            needed_hi,
            grid_lo: grid.lo(),
            grid_hi: grid.hi(),
        })
    }
}

/// Pilot tabulation lattice: the evaluation grid widened by 6h, refined to
/// at most h/4 spacing so the quadrature convolution stays resolved.
fn convolution_grid(grid: &EvaluationGrid, h: f64) -> Result<EvaluationGrid, GridError> {
    let spacing = grid.spacing().min(h / 4.0);
    EvaluationGrid::spanning(grid.lo() - 6.0 * h, grid.hi() + 6.0 * h, spacing)
}

fn inverted(values: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    pilot_at_sample(values)?;
    Ok(values.iter().map(|v| 1.0 / v).collect())
}

fn renormalise(
    mut numerator: Vec<f64>,
    inv_pilot: &[f64],
    conv_at_samples: &[f64],
    n: f64,
) -> Result<Vec<f64>, EstimatorError> {
    let denominator = inv_pilot
        .iter()
        .zip(conv_at_samples)
        .map(|(w, c)| w * c)
        .sum::<f64>()
        / n;
    if !(denominator.is_finite() && denominator > 0.0) {
        return Err(EstimatorError::RenormalisationFailure { denominator });
    }
    for v in &mut numerator {
        *v /= denominator;
    }
    Ok(numerator)
}

/// Tabulate the requested estimator on `grid`.
///
/// The grid must cover the sample range plus a 6h margin. Renormalised kinds
/// compute (K_h*g) at the sample points: closed form for the normal vehicle,
/// trapezoid quadrature of the tabulated pilot for the KDE and semiparametric
/// pilots.
pub fn estimate(
    spec: &EstimatorSpec,
    sample: &Sample,
    grid: &EvaluationGrid,
) -> Result<DensityEstimate, EstimatorError> {
    let h = spec.h.get();
    check_margin(sample, h, grid)?;
    let xs = sample.sorted();
    let n = xs.len() as f64;
    if spec.kind.needs_fit() && sample.n() < 2 {
        return Err(EstimatorError::TooSmallForFit(sample.n()));
    }

    let values = match spec.kind {
        EstimatorKind::Kde => weighted_scatter(xs, None, h, grid, 1.0 / n),
        EstimatorKind::JlnRaw | EstimatorKind::JlnRenorm => {
            let pilot = weighted_sums_at_samples(xs, None, h, 1.0 / n);
            let inv_pilot = inverted(&pilot)?;
            let base = weighted_scatter(xs, None, h, grid, 1.0 / n);
            let ratio = weighted_scatter(xs, Some(&inv_pilot), h, grid, 1.0 / n);
            let raw: Vec<f64> = base.iter().zip(&ratio).map(|(b, r)| b * r).collect();
            if spec.kind == EstimatorKind::JlnRaw {
                raw
            } else {
                let conv_grid = convolution_grid(grid, h)?;
                let tab = GridFunction::new(
                    conv_grid,
                    weighted_scatter(xs, None, h, &conv_grid, 1.0 / n),
                );
                let conv: Vec<f64> = xs
                    .iter()
                    .map(|&xi| convolve_tabulated_at(&tab, h, xi))
                    .collect();
                renormalise(raw, &inv_pilot, &conv, n)?
            }
        }
        EstimatorKind::HgRaw | EstimatorKind::HgRenorm => {
            let fit = fit_normal_mle(sample)?;
            let pilot: Vec<f64> = xs.iter().map(|&xi| fit.pdf(xi)).collect();
            let inv_pilot = inverted(&pilot)?;
            let ratio = weighted_scatter(xs, Some(&inv_pilot), h, grid, 1.0 / n);
            let raw: Vec<f64> = grid
                .points()
                .zip(&ratio)
                .map(|(x, r)| fit.pdf(x) * r)
                .collect();
            if spec.kind == EstimatorKind::HgRaw {
                raw
            } else {
                let conv: Result<Vec<f64>, KernelError> = xs
                    .iter()
                    .map(|&xi| convolve_with_normal(spec.h, fit.mu(), fit.sigma(), xi))
                    .collect();
                renormalise(raw, &inv_pilot, &conv?, n)?
            }
        }
        EstimatorKind::HobskdeRaw | EstimatorKind::HobskdeRenorm => {
            let fit = fit_normal_mle(sample)?;
            let vehicle: Vec<f64> = xs.iter().map(|&xi| fit.pdf(xi)).collect();
            let inv_vehicle = inverted(&vehicle)?;
            // Raw semiparametric pilot f̂_S at the sample points; the
            // renormalisation constant of f̂_S would cancel here anyway.
            let ratio_at = weighted_sums_at_samples(xs, Some(&inv_vehicle), h, 1.0 / n);
            let pilot: Vec<f64> = vehicle.iter().zip(&ratio_at).map(|(v, r)| v * r).collect();
            let inv_pilot = inverted(&pilot)?;
            let ratio_vehicle = weighted_scatter(xs, Some(&inv_vehicle), h, grid, 1.0 / n);
            let pilot_on_grid: Vec<f64> = grid
                .points()
                .zip(&ratio_vehicle)
                .map(|(x, r)| fit.pdf(x) * r)
                .collect();
            let correction = weighted_scatter(xs, Some(&inv_pilot), h, grid, 1.0 / n);
            let raw: Vec<f64> = pilot_on_grid
                .iter()
                .zip(&correction)
                .map(|(p, c)| p * c)
                .collect();
            if spec.kind == EstimatorKind::HobskdeRaw {
                raw
            } else {
                let conv_grid = convolution_grid(grid, h)?;
                let ratio_conv = weighted_scatter(xs, Some(&inv_vehicle), h, &conv_grid, 1.0 / n);
                let tab_values: Vec<f64> = conv_grid
                    .points()
                    .zip(&ratio_conv)
                    .map(|(t, r)| fit.pdf(t) * r)
                    .collect();
                let tab = GridFunction::new(conv_grid, tab_values);
                let conv: Vec<f64> = xs
                    .iter()
                    .map(|&xi| convolve_tabulated_at(&tab, h, xi))
                    .collect();
                renormalise(raw, &inv_pilot, &conv, n)?
            }
        }
    };

    debug_assert!(values.iter().all(|v| *v >= 0.0));
    Ok(DensityEstimate {
        grid: *grid,
        values,
    })
}

/// Convenience: the Gaussian kernel used throughout.
pub fn kernel() -> Kernel {
    Kernel::Gaussian
}
