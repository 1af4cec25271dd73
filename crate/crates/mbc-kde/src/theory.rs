//! Evaluators of the asymptotic bias expansions and variance of the
//! multiplicatively corrected estimators, for diagnostics and
//! order-of-convergence checks.
//!
//! For a pilot g, the smoothed mean g·(K_h*(f/g)) expands as
//!
//! ```text
//!     f + (h²/2)·s₂·g·(f/g)'' + (h⁴/24)·s₄·g·(f/g)⁗ + O(h⁶)
//! ```
//!
//! With a parametric vehicle f₀ the h² term is (h²/2)s₂·f₀·(f/f₀)'', and
//! feeding that smoothed mean back through the expansion gives the combined
//! estimator's leading bias −(h⁴/4)s₂²·f·{(f₀/f)(f/f₀)''}'' — zero when the
//! vehicle is the truth, O(h⁴) otherwise.
//!
//! Derivatives are 4th-order central finite differences at the grid spacing,
//! written in difference-from-center form so a constant ratio yields an
//! exact zero. Nested second derivatives reuse the same stencil. The
//! vehicle is a fixed density here; estimating θ̂ changes nothing at this
//! order.

use thiserror::Error;

use crate::densities::NormalMixture;
use crate::grid::{EvaluationGrid, GridFunction};
use crate::kernels::{Bandwidth, Kernel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("functions are tabulated on different grids")]
    GridMismatch,
    #[error("x = {x} is within {margin} stencil nodes of the grid edge")]
    EdgeProximity { x: f64, margin: usize },
    #[error("non-positive denominator value at x = {x}")]
    NonPositiveValue { x: f64 },
    #[error("expression is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error("count must be at least 1")]
    InvalidCount,
}

/// Truncation order of the bias expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionOrder {
    Two,
    Four,
}

/// 4th-order central second derivative. The difference-from-center form
/// returns exactly 0 for constant input.
pub(crate) fn second_derivative(values: &[f64], i: usize, spacing: f64) -> f64 {
    let v0 = values[i];
    let num = -(values[i - 2] - v0) + 16.0 * (values[i - 1] - v0) + 16.0 * (values[i + 1] - v0)
        - (values[i + 2] - v0);
    num / (12.0 * spacing * spacing)
}

/// 4th-order central fourth derivative (7-point stencil).
pub(crate) fn fourth_derivative(values: &[f64], i: usize, spacing: f64) -> f64 {
    let v0 = values[i];
    let num = -(values[i - 3] - v0) + 12.0 * (values[i - 2] - v0)
        - 39.0 * (values[i - 1] - v0)
        - 39.0 * (values[i + 1] - v0)
        + 12.0 * (values[i + 2] - v0)
        - (values[i + 3] - v0);
    let d2 = spacing * spacing;
    num / (6.0 * d2 * d2)
}

fn require_same_grid(a: &GridFunction, b: &GridFunction) -> Result<(), TheoryError> {
    if a.grid() == b.grid() {
        Ok(())
    } else {
        Err(TheoryError::GridMismatch)
    }
}

fn locate(grid: &EvaluationGrid, x: f64, margin: usize) -> Result<usize, TheoryError> {
    let i = grid.nearest_index(x);
    if i < margin || i + margin >= grid.len() {
        Err(TheoryError::EdgeProximity { x, margin })
    } else {
        Ok(i)
    }
}

fn positive(v: f64, x: f64) -> Result<f64, TheoryError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(TheoryError::NonPositiveValue { x })
    }
}

fn finite(v: f64, x: f64) -> Result<f64, TheoryError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TheoryError::NonFinite { x })
    }
}

/// (h²/2)s₂·g(x)(f/g)''(x), plus (h⁴/24)s₄·g(x)(f/g)⁗(x) at order four.
///
/// `x` snaps to the nearest grid node.
pub fn general_bias_expansion(
    f: &GridFunction,
    g: &GridFunction,
    h: Bandwidth,
    x: f64,
    order: ExpansionOrder,
) -> Result<f64, TheoryError> {
    require_same_grid(f, g)?;
    let margin = match order {
        ExpansionOrder::Two => 2,
        ExpansionOrder::Four => 3,
    };
    let grid = f.grid();
    let i = locate(grid, x, margin)?;
    let lo = i - margin;
    let mut ratio = [0.0f64; 7];
    for (k, idx) in (lo..=i + margin).enumerate() {
        let gv = positive(g.value(idx), grid.point(idx))?;
        ratio[k] = f.value(idx) / gv;
    }
    let d = grid.spacing();
    let kernel = Kernel::Gaussian;
    let s2 = kernel.moment(2).expect("supported moment");
    let h2 = h.get() * h.get();
    let mut out =
        0.5 * h2 * s2 * g.value(i) * second_derivative(&ratio[..2 * margin + 1], margin, d);
    if order == ExpansionOrder::Four {
        let s4 = kernel.moment(4).expect("supported moment");
        out += h2 * h2 / 24.0 * s4 * g.value(i) * fourth_derivative(&ratio, margin, d);
    }
    finite(out, x)
}

/// Leading bias of the parametric-start estimator:
/// (h²/2)s₂·f₀(x)(f/f₀)''(x).
pub fn hg_bias(
    f: &GridFunction,
    f0: &GridFunction,
    h: Bandwidth,
    x: f64,
) -> Result<f64, TheoryError> {
    general_bias_expansion(f, f0, h, x, ExpansionOrder::Two)
}

/// Leading bias of the combined estimator:
/// −(h⁴/4)s₂²·f(x)·{(f₀/f)(x)(f/f₀)''(x)}''.
pub fn hobskde_bias(
    f: &GridFunction,
    f0: &GridFunction,
    h: Bandwidth,
    x: f64,
) -> Result<f64, TheoryError> {
    require_same_grid(f, f0)?;
    let grid = f.grid();
    let i = locate(grid, x, 4)?;
    let d = grid.spacing();
    let mut u = [0.0f64; 9];
    for (k, idx) in (i - 4..=i + 4).enumerate() {
        let f0v = positive(f0.value(idx), grid.point(idx))?;
        u[k] = f.value(idx) / f0v;
    }
    let mut w = [0.0f64; 5];
    for t in 0..5 {
        let idx = i - 2 + t;
        let fv = positive(f.value(idx), grid.point(idx))?;
        w[t] = f0.value(idx) / fv * second_derivative(&u, 2 + t, d);
    }
    let s2 = Kernel::Gaussian.moment(2).expect("supported moment");
    let h2 = h.get() * h.get();
    let out = -0.25 * (h2 * h2) * (s2 * s2) * f.value(i) * second_derivative(&w, 2, d);
    finite(out, x)
}

/// Bracket term {(f₀/f)(f/f₀)''}'' at every node where the nested stencil
/// fits, for the renormalisation integral.
fn bracket_curve(f: &GridFunction, f0: &GridFunction) -> Result<Vec<(usize, f64)>, TheoryError> {
    let grid = f.grid();
    let m = grid.len();
    let d = grid.spacing();
    let mut u = Vec::with_capacity(m);
    for idx in 0..m {
        let f0v = positive(f0.value(idx), grid.point(idx))?;
        u.push(f.value(idx) / f0v);
    }
    // w is defined on [2, m−3]; store with the same indexing as the grid.
    let mut w = vec![f64::NAN; m];
    for idx in 2..m - 2 {
        let fv = positive(f.value(idx), grid.point(idx))?;
        w[idx] = f0.value(idx) / fv * second_derivative(&u, idx, d);
    }
    let mut out = Vec::with_capacity(m - 8);
    for idx in 4..m - 4 {
        out.push((idx, second_derivative(&w, idx, d)));
    }
    Ok(out)
}

/// Renormalised combined-estimator bias: the point bias plus the recentring
/// term (h⁴/4)s₂²·f(x)·∫f(z){(f₀/f)(z)(f/f₀)''(z)}'' dz, with the integral
/// taken over the grid's valid interior.
pub fn hobskde_renorm_bias(
    f: &GridFunction,
    f0: &GridFunction,
    h: Bandwidth,
    x: f64,
) -> Result<f64, TheoryError> {
    let point = hobskde_bias(f, f0, h, x)?;
    let grid = f.grid();
    let i = locate(grid, x, 4)?;
    let curve = bracket_curve(f, f0)?;
    let last = curve.len() - 1;
    let mut integral = 0.0;
    for (k, &(idx, b)) in curve.iter().enumerate() {
        let weight = if k == 0 || k == last { 0.5 } else { 1.0 };
        integral += weight * f.value(idx) * b;
    }
    integral *= grid.spacing();
    let s2 = Kernel::Gaussian.moment(2).expect("supported moment");
    let h2 = h.get() * h.get();
    let out = point + 0.25 * (h2 * h2) * (s2 * s2) * f.value(i) * integral;
    finite(out, x)
}

/// Asymptotic variance (nh)⁻¹·f(x)·∫(2K − K*K)² of the twice-smoothed
/// estimators.
pub fn asymptotic_variance(
    f: &GridFunction,
    n: usize,
    h: Bandwidth,
    x: f64,
    kernel: Kernel,
) -> Result<f64, TheoryError> {
    if n == 0 {
        return Err(TheoryError::InvalidCount);
    }
    let i = f.grid().nearest_index(x);
    Ok(f.value(i) * kernel.variance_constant() / (n as f64 * h.get()))
}

/// Grid fine enough for the finite-difference stencils to meet their 1e-6
/// accuracy on the catalog densities: the effective support at a spacing of
/// min(σ_min/25, 0.01).
pub fn recommended_grid(truth: &NormalMixture) -> EvaluationGrid {
    let sd_min = truth
        .components()
        .iter()
        .map(|c| c.sd)
        .fold(f64::INFINITY, f64::min);
    let spacing = (sd_min / 25.0).min(0.01);
    let (lo, hi) = truth.effective_support();
    EvaluationGrid::spanning(lo, hi, spacing).expect("valid support")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::mw_density;
    use approx::assert_relative_eq;

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::new(h).unwrap()
    }

    fn tabulated_pair(id: u32) -> (GridFunction, GridFunction, EvaluationGrid) {
        let truth = mw_density(id).unwrap();
        let vehicle = truth.matched_normal();
        let grid = recommended_grid(&truth);
        (
            GridFunction::from_fn(grid, |x| truth.pdf(x)),
            GridFunction::from_fn(grid, |x| vehicle.pdf(x)),
            grid,
        )
    }

    #[test]
    fn stencils_match_analytic_normal_derivatives() {
        let grid = EvaluationGrid::spanning(-8.0, 8.0, 0.02).unwrap();
        let f = GridFunction::from_fn(grid, phi);
        let d = grid.spacing();
        for x in [-1.7, -0.5, 0.0, 0.9, 2.3] {
            let i = grid.nearest_index(x);
            let xi = grid.point(i);
            let d2 = second_derivative(f.values(), i, d);
            let d4 = fourth_derivative(f.values(), i, d);
            let a2 = (xi * xi - 1.0) * phi(xi);
            let a4 = (xi.powi(4) - 6.0 * xi * xi + 3.0) * phi(xi);
            assert!((d2 - a2).abs() / a2.abs().max(0.1) < 1e-6, "d2 at {xi}");
            assert!((d4 - a4).abs() / a4.abs().max(0.1) < 1e-6, "d4 at {xi}");
        }
    }

    #[test]
    fn bias_vanishes_exactly_when_pilot_is_truth() {
        let (f, _, grid) = tabulated_pair(2);
        let g = f.clone();
        let h = bw(0.25);
        for k in 0..50 {
            let x = -2.0 + 0.1 * k as f64;
            assert_eq!(
                general_bias_expansion(&f, &g, h, x, ExpansionOrder::Two).unwrap(),
                0.0
            );
            assert_eq!(
                general_bias_expansion(&f, &g, h, x, ExpansionOrder::Four).unwrap(),
                0.0
            );
            assert_eq!(hg_bias(&f, &g, h, x).unwrap(), 0.0);
            assert_eq!(hobskde_bias(&f, &g, h, x).unwrap(), 0.0);
            assert_eq!(hobskde_renorm_bias(&f, &g, h, x).unwrap(), 0.0);
        }
        let _ = grid;
    }

    #[test]
    fn matched_vehicle_is_bitwise_truth_for_the_gaussian() {
        // MW #1's matched normal reproduces the same pdf values, so every
        // bias evaluator is exactly zero there too.
        let (f, f0, grid) = tabulated_pair(1);
        for (a, b) in f.values().iter().zip(f0.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let h = bw(0.3);
        for k in 0..50 {
            let x = grid.point(grid.nearest_index(-2.4) + 2 * k);
            assert_eq!(hobskde_bias(&f, &f0, h, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_pilot_recovers_kde_bias_expansion() {
        let grid = EvaluationGrid::spanning(-8.0, 8.0, 0.02).unwrap();
        let f = GridFunction::from_fn(grid, phi);
        let g = GridFunction::from_fn(grid, |_| 1.0);
        let h = 0.1;
        let two = general_bias_expansion(&f, &g, bw(h), 0.0, ExpansionOrder::Two).unwrap();
        let four = general_bias_expansion(&f, &g, bw(h), 0.0, ExpansionOrder::Four).unwrap();
        // φ''(0) = −φ(0), φ⁗(0) = 3φ(0).
        let expect2 = 0.5 * h * h * (-phi(0.0));
        let expect4 = expect2 + h.powi(4) / 24.0 * 3.0 * 3.0 * phi(0.0);
        assert_relative_eq!(two, -0.0019947, epsilon = 1e-7);
        assert!((two - expect2).abs() < 1e-9);
        assert!((four - expect4).abs() < 1e-9);
        assert_relative_eq!(four - two, 0.0000149, epsilon = 1e-7);
    }

    #[test]
    fn hg_bias_is_the_order_two_expansion() {
        let (f, f0, grid) = tabulated_pair(2);
        let h = bw(0.2);
        let x = grid.point(grid.nearest_index(1.0));
        let a = hg_bias(&f, &f0, h, x).unwrap();
        let b = general_bias_expansion(&f, &f0, h, x, ExpansionOrder::Two).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a != 0.0);
    }

    #[test]
    fn hg_bias_is_stable_under_stencil_refinement() {
        let truth = mw_density(6).unwrap();
        let vehicle = truth.matched_normal();
        let coarse = recommended_grid(&truth);
        let fine = coarse.refined(2);
        let h = bw(0.2);
        let on = |grid: EvaluationGrid| {
            let f = GridFunction::from_fn(grid, |x| truth.pdf(x));
            let f0 = GridFunction::from_fn(grid, |x| vehicle.pdf(x));
            hg_bias(&f, &f0, h, 0.0).unwrap()
        };
        let a = on(coarse);
        let b = on(fine);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn hobskde_bias_is_h4_homogeneous_exactly() {
        let (f, f0, _) = tabulated_pair(2);
        let x = 0.75;
        let full = hobskde_bias(&f, &f0, bw(0.4), x).unwrap();
        let half = hobskde_bias(&f, &f0, bw(0.2), x).unwrap();
        assert_eq!(full, 16.0 * half);
        assert!(full != 0.0);
    }

    #[test]
    fn hg_bias_is_h2_homogeneous_exactly() {
        let (f, f0, _) = tabulated_pair(2);
        let x = 0.75;
        let full = hg_bias(&f, &f0, bw(0.4), x).unwrap();
        let half = hg_bias(&f, &f0, bw(0.2), x).unwrap();
        assert_eq!(full, 4.0 * half);
        assert!(full != 0.0);
    }

    #[test]
    fn hobskde_bias_matches_composed_expansions() {
        // Feed the order-two vehicle bias back through the expansion: with
        // pilot mean f·(1 + ε), the next-stage h² term is
        // (h²/2)s₂·f·{1 − ε}'' with ε = hg_bias/f.
        let (f, f0, grid) = tabulated_pair(6);
        let h = 0.3;
        let m = grid.len();
        let d = grid.spacing();
        let mut curve = vec![f64::NAN; m];
        for idx in 2..m - 2 {
            curve[idx] = 1.0 - hg_bias(&f, &f0, bw(h), grid.point(idx)).unwrap() / f.value(idx);
        }
        let i = grid.nearest_index(0.5);
        let oracle = 0.5 * h * h * f.value(i) * second_derivative(&curve, i, d);
        let direct = hobskde_bias(&f, &f0, bw(h), 0.5).unwrap();
        assert!(
            (direct - oracle).abs() < 1e-5,
            "direct {direct} vs composed {oracle}"
        );
        assert!(direct.abs() > 1e-7);
    }

    #[test]
    fn renormalised_bias_integrates_to_zero() {
        let (f, f0, grid) = tabulated_pair(2);
        let h = bw(0.2);
        let mut vals = Vec::new();
        let mut pts = Vec::new();
        for idx in (4..grid.len() - 4).step_by(2) {
            let x = grid.point(idx);
            vals.push(hobskde_renorm_bias(&f, &f0, h, x).unwrap());
            pts.push(x);
        }
        let step = pts[1] - pts[0];
        let integral: f64 = vals.iter().sum::<f64>() * step;
        assert!(integral.abs() < 1e-6, "∫ bias = {integral}");
    }

    #[test]
    fn renormalisation_adds_a_constant_multiple_of_f() {
        let (f, f0, grid) = tabulated_pair(2);
        let h = bw(0.2);
        let mut ratios = Vec::new();
        for k in 0..10 {
            let x = grid.point(grid.nearest_index(-1.0) + 40 * k);
            let plain = hobskde_bias(&f, &f0, h, x).unwrap();
            let renorm = hobskde_renorm_bias(&f, &f0, h, x).unwrap();
            let i = grid.nearest_index(x);
            ratios.push((renorm - plain) / f.value(i));
        }
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-8, "{ratios:?}");
        }
        assert!(ratios[0].abs() > 0.0);
    }

    #[test]
    fn variance_composes_the_constants() {
        let grid = EvaluationGrid::spanning(-8.0, 8.0, 0.02).unwrap();
        let f = GridFunction::from_fn(grid, phi);
        let v = asymptotic_variance(&f, 100, bw(0.3), 0.0, Kernel::Gaussian).unwrap();
        assert_relative_eq!(v, 0.3989 * 0.40653 / 30.0, epsilon = 1e-5);
        let v2 = asymptotic_variance(&f, 200, bw(0.3), 0.0, Kernel::Gaussian).unwrap();
        assert_eq!(v2, v / 2.0);
        assert!(matches!(
            asymptotic_variance(&f, 0, bw(0.3), 0.0, Kernel::Gaussian),
            Err(TheoryError::InvalidCount)
        ));
    }

    #[test]
    fn edge_and_grid_mismatches_are_rejected() {
        let (f, f0, grid) = tabulated_pair(2);
        let h = bw(0.2);
        assert!(matches!(
            hg_bias(&f, &f0, h, grid.lo()),
            Err(TheoryError::EdgeProximity { .. })
        ));
        assert!(matches!(
            hobskde_bias(&f, &f0, h, grid.point(grid.len() - 2)),
            Err(TheoryError::EdgeProximity { .. })
        ));
        let other = EvaluationGrid::spanning(-5.0, 5.0, 0.02).unwrap();
        let g2 = GridFunction::from_fn(other, phi);
        assert!(matches!(
            hg_bias(&f, &g2, h, 0.0),
            Err(TheoryError::GridMismatch)
        ));
        let zeroed = GridFunction::from_fn(*f.grid(), |_| 0.0);
        assert!(matches!(
            hg_bias(&f, &zeroed, h, 0.0),
            Err(TheoryError::NonPositiveValue { .. })
        ));
    }
}
