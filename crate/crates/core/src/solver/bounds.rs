//! Non-asymptotic suboptimality bounds for the primal-dual iteration.

use serde::{Deserialize, Serialize};

use super::RunTrace;
use crate::error::{Error, Result};

/// Constants of the convergence bound. `r` (diameter) and `c` (gradient
/// bound) are kept for reporting; only [`corollary1_bound`] uses `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// `d²(x*, x₀)` or an upper estimate.
    pub d0_sq: f64,
    /// Bound on `|h_k(x)|`.
    pub g: f64,
    /// Constraint count.
    pub m: usize,
    pub r: f64,
    pub c: f64,
}

impl BoundParams {
    pub fn new(d0_sq: f64, g: f64, m: usize) -> Result<Self> {
        let p = BoundParams { d0_sq, g, m, r: 0.0, c: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d0_sq", self.d0_sq), ("G", self.g), ("R", self.r), ("C", self.c)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `(½ d0² + 2 m G² Σ η_t²) / Σ η_t`.
pub fn theorem1_bound(params: &BoundParams, etas: &[f64]) -> Result<f64> {
    params.validate()?;
    if etas.is_empty() {
        return Err(Error::InvalidArgument("step-size sequence is empty".into()));
    }
    if etas.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    let sum: f64 = etas.iter().sum();
    let sum_sq: f64 = etas.iter().map(|e| e * e).sum();
    Ok((0.5 * params.d0_sq + 2.0 * params.m as f64 * params.g * params.g * sum_sq) / sum)
}

/// `(2(√T − 1), 1 + ln T)`: lower bound on `Σ η_t`, upper bound on `Σ η_t²`
/// for `η_t = 1/√(t+1)`.
pub fn corollary1_sums(t: usize) -> Result<(f64, f64)> {
    if t < 1 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let tf = t as f64;
    Ok((2.0 * (tf.sqrt() - 1.0), 1.0 + tf.ln()))
}

/// Exact `(Σ η_t, Σ η_t²)` for `η_t = η₀/√(t+1)`, `t < T`.
pub fn step_sums(t: usize, eta0: f64) -> (f64, f64) {
    (0..t).fold((0.0, 0.0), |(s, s2), i| {
        let e = super::step_size(i, eta0);
        (s + e, s2 + e * e)
    })
}

/// `(½ R² + 2 m G² (1 + ln T)) / (2(√T − 1))`, the closed-form rate with the
/// diameter in place of `d(x*, x₀)`. Needs `T ≥ 2`.
pub fn corollary1_bound(params: &BoundParams, t: usize) -> Result<f64> {
    params.validate()?;
    if t < 2 {
        return Err(Error::InvalidArgument("T must be at least 2".into()));
    }
    let (lo, hi) = corollary1_sums(t)?;
    Ok((0.5 * params.r * params.r + 2.0 * params.m as f64 * params.g * params.g * hi) / lo)
}

/// Result of comparing an observed optimality gap with [`theorem1_bound`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBoundCheck {
    pub horizon: usize,
    /// Index of the best record within the horizon.
    pub best_index: usize,
    pub gap: f64,
    pub bound: f64,
    pub d0_sq: f64,
    pub g: f64,
    pub holds: bool,
}

impl EmpiricalBoundCheck {
    /// Compare the best gap over the first `horizon` records with the bound.
    /// `G` is `max ‖h‖_∞` over those records and `d0_sq` is supplied by the
    /// caller (typically `d²(x_best, x₀)`, since `x*` is unknown).
    pub fn evaluate(trace: &RunTrace, f_star: f64, d0_sq: f64, m: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon > trace.len() {
            return Err(Error::InvalidArgument(format!("horizon {horizon} outside 1..={}", trace.len())));
        }
        let best_index = trace.best_index_within(horizon).expect("horizon is nonempty");
        let gap = trace.records[best_index].f - f_star;
        let g = trace.max_h_abs_within(horizon);
        let etas: Vec<f64> = trace.records[..horizon].iter().map(|r| r.eta).collect();
        let bound = theorem1_bound(&BoundParams::new(d0_sq, g, m)?, &etas)?;
        Ok(EmpiricalBoundCheck { horizon, best_index, gap, bound, d0_sq, g, holds: gap <= bound })
    }
}
