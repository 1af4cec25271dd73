//! Uniform evaluation grids and functions tabulated on them.
//!
//! Every quadrature in this crate (ISE, renormalisation denominators, bias
//! integrals) runs on a uniform lattice, so the grid type is shared by the
//! estimator, metrics and theory modules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid range is invalid: lo = {lo}, hi = {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("grid needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
}

/// A uniform lattice `lo, lo + Δ, …, hi` with `m ≥ 101` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationGrid {
    lo: f64,
    hi: f64,
    m: usize,
}

impl EvaluationGrid {
    pub const MIN_POINTS: usize = 101;

    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self, GridError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GridError::InvalidRange { lo, hi });
        }
        if m < Self::MIN_POINTS {
            return Err(GridError::TooFewPoints {
                min: Self::MIN_POINTS,
                got: m,
            });
        }
        Ok(Self { lo, hi, m })
    }

    /// Grid covering `[lo, hi]` with spacing at most `max_spacing`.
    ///
    /// The upper end is pushed outward so the spacing is exactly
    /// `max_spacing`; the point count is never below `MIN_POINTS`.
    pub fn spanning(lo: f64, hi: f64, max_spacing: f64) -> Result<Self, GridError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GridError::InvalidRange { lo, hi });
        }
        if !(max_spacing.is_finite() && max_spacing > 0.0) {
            return Err(GridError::InvalidRange {
                lo: max_spacing,
                hi: max_spacing,
            });
        }
        let intervals = ((hi - lo) / max_spacing).ceil() as usize;
        let m = (intervals + 1).max(Self::MIN_POINTS);
        let hi = lo + max_spacing * (m - 1) as f64;
        Ok(Self { lo, hi, m })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.m - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        debug_assert!(i < self.m);
        self.lo + self.spacing() * i as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.point(i))
    }

    /// Index of the grid node closest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let raw = (x - self.lo) / self.spacing();
        if raw <= 0.0 {
            0
        } else {
            (raw.round() as usize).min(self.m - 1)
        }
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        // A 1e-9·Δ slack absorbs round-off at the endpoints.
        let eps = 1e-9 * self.spacing();
        self.lo <= lo + eps && self.hi >= hi - eps
    }

    /// Widen the range by at least `margin` on each side, keeping the spacing.
    pub fn extended(&self, margin: f64) -> Self {
        assert!(margin >= 0.0 && margin.is_finite());
        let d = self.spacing();
        let extra = (margin / d).ceil() as usize;
        Self {
            lo: self.lo - d * extra as f64,
            hi: self.hi + d * extra as f64,
            m: self.m + 2 * extra,
        }
    }

    /// Same range with each interval split `factor` times.
    pub fn refined(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        Self {
            lo: self.lo,
            hi: self.hi,
            m: (self.m - 1) * factor + 1,
        }
    }

    /// Trapezoid quadrature of node values over the grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.m);
        let interior: f64 = values[1..self.m - 1].iter().sum();
        self.spacing() * (interior + 0.5 * (values[0] + values[self.m - 1]))
    }
}

/// A function tabulated at the nodes of an [`EvaluationGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: EvaluationGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: EvaluationGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: EvaluationGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
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

    pub fn trapezoid(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }
}
