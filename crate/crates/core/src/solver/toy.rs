//! One-dimensional test problem `min (x − a)² s.t. x ≤ c` on the 1×1 SPD
//! manifold (the positive reals), with a closed-form proximal step.

use super::{run_observed, DualVector, EmpiricalBoundCheck, InnerSettings, RunOutcome, SaddleProblem, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::spd::{logdet_divergence, SpdMatrix, EPS_PD};

pub const DEFAULT_TARGET: f64 = 2.0;
pub const DEFAULT_CAP: f64 = 1.0;
pub const DEFAULT_X0: f64 = 0.5;
pub const DEFAULT_ETA0: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyProblem {
    pub target: f64,
    /// `None` replaces the constraint with the inactive `h ≡ −1`.
    pub cap: Option<f64>,
}

impl Default for ToyProblem {
    fn default() -> Self {
        ToyProblem::constrained(DEFAULT_TARGET, DEFAULT_CAP)
    }
}

impl ToyProblem {
    pub fn constrained(target: f64, cap: f64) -> Self {
        ToyProblem { target, cap: Some(cap) }
    }

    pub fn unconstrained(target: f64) -> Self {
        ToyProblem { target, cap: None }
    }

    pub fn default_config(iters: usize) -> SolverConfig {
        SolverConfig::new(DEFAULT_ALPHA, DEFAULT_ETA0, iters).expect("defaults are valid")
    }

    pub fn value(&self, x: f64) -> f64 {
        (x - self.target) * (x - self.target)
    }

    pub fn is_feasible(&self, x: f64) -> bool {
        self.cap.is_none_or(|c| x <= c)
    }

    fn scalar(x: &SpdMatrix) -> f64 {
        x.as_matrix()[(0, 0)]
    }

    fn point(x: f64) -> SpdMatrix {
        SpdMatrix::from_diagonal(&[x.max(EPS_PD)]).expect("positive scalar is SPD")
    }
}

impl SaddleProblem for ToyProblem {
    type Point = SpdMatrix;

    fn constraint_count(&self) -> usize {
        1
    }

    fn objective(&self, x: &SpdMatrix) -> f64 {
        self.value(Self::scalar(x))
    }

    fn constraints(&self, x: &SpdMatrix) -> Vec<f64> {
        match self.cap {
            Some(c) => vec![Self::scalar(x) - c],
            None => vec![-1.0],
        }
    }

    fn distance_sq(&self, x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
        logdet_divergence(x, y)
    }

    /// Stationarity of `(x − a)² + λ h(x) + (x/x_t − ln(x/x_t) − 1)/(2η)`
    /// is the quadratic `2x² + b x − q = 0` with `q = 1/(2η)`.
    fn inner_minimize(
        &self,
        x_t: &SpdMatrix,
        dual: &DualVector,
        eta: f64,
        settings: &InnerSettings,
    ) -> Result<SpdMatrix> {
        check_dim("toy point", 1, x_t.dim())?;
        check_dim("toy dual", 1, dual.len())?;
        let xt = Self::scalar(x_t);
        let slope = if self.cap.is_some() { dual.values()[0] } else { 0.0 };
        let q = 0.5 / eta;
        let b = slope - 2.0 * self.target + q / xt;
        let disc = (b * b + 8.0 * q).sqrt();
        let x = if b > 0.0 { 2.0 * q / (b + disc) } else { (disc - b) / 4.0 };
        let x = x.max(EPS_PD);

        let grad = 2.0 * (x - self.target) + slope + q * (1.0 / xt - 1.0 / x);
        let scale = 2.0 * (x.abs() + self.target.abs()) + slope + q * (1.0 / xt + 1.0 / x);
        if !grad.is_finite() || grad.abs() > settings.tolerance * scale.max(1.0) {
            return Err(Error::InnerSolve(format!("toy prox residual {grad:e} at x = {x}")));
        }
        Ok(Self::point(x))
    }
}

/// Exhaustive search over `x = k·step ∈ (lo, hi]`, feasible points only.
pub fn grid_search_optimum(problem: &ToyProblem, lo: f64, hi: f64, step: f64) -> Option<(f64, f64)> {
    let n = ((hi - lo) / step).round() as usize;
    (1..=n)
        .map(|k| lo + k as f64 * step)
        .filter(|&x| problem.is_feasible(x))
        .map(|x| (x, problem.value(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// A run of the toy problem that keeps every iterate for bound checks.
#[derive(Clone, Debug)]
pub struct ToyStudy {
    pub problem: ToyProblem,
    pub x0: f64,
    pub outcome: RunOutcome<SpdMatrix>,
    /// `x_{t+1}` for each record.
    pub points: Vec<f64>,
    /// `λ_{t+1}` for each record.
    pub duals: Vec<f64>,
}

impl ToyStudy {
    pub fn run(problem: ToyProblem, x0: f64, config: &SolverConfig) -> Result<Self> {
        let mut points = Vec::with_capacity(config.max_outer_iters);
        let mut duals = Vec::with_capacity(config.max_outer_iters);
        let start = SpdMatrix::from_diagonal(&[x0])?;
        let outcome = run_observed(&problem, start, config, |it| {
            points.push(ToyProblem::scalar(it.point));
            duals.push(it.dual.values()[0]);
        })?;
        Ok(ToyStudy { problem, x0, outcome, points, duals })
    }

    /// `min_{t<T} f(x_{t+1}) − f*` under the solver's selection rule.
    pub fn best_gap(&self, horizon: usize, f_star: f64) -> Option<f64> {
        let i = self.outcome.trace.best_index_within(horizon)?;
        Some(self.outcome.trace.records[i].f - f_star)
    }

    /// Bound check at horizon `T` with `d²(x_best, x₀)` in place of `d²(x*, x₀)`.
    pub fn bound_check(&self, horizon: usize, f_star: f64) -> Result<EmpiricalBoundCheck> {
        let trace = &self.outcome.trace;
        let i = trace.best_index_within(horizon).ok_or_else(|| Error::InvalidArgument("empty horizon".into()))?;
        let best = SpdMatrix::from_diagonal(&[self.points[i]])?;
        let d0_sq = logdet_divergence(&best, &SpdMatrix::from_diagonal(&[self.x0])?)?;
        EmpiricalBoundCheck::evaluate(trace, f_star, d0_sq, 1, horizon)
    }

    /// `gap_T · (√T − 1) / ln T`, bounded if the rate is `O(ln T/(√T − 1))`.
    pub fn rate_statistic(&self, horizon: usize, f_star: f64) -> Option<f64> {
        if horizon < 2 {
            return None;
        }
        let t = horizon as f64;
        self.best_gap(horizon, f_star).map(|g| g * (t.sqrt() - 1.0) / t.ln())
    }
}
