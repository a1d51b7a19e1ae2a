//! Proximal primal-dual iteration on an augmented Lagrangian.
//!
//! For `min f(x) s.t. h(x) ≤ 0` over a manifold, the solver works with
//!
//! ```text
//! L(x, λ) = f(x) + ⟨λ, h(x)⟩ − (α/2)‖λ‖²,   λ ≥ 0
//! ```
//!
//! and alternates, for `t = 0 .. T−1` with `η_t = η₀/√(t+1)` and `λ₀ = 0`:
//!
//! ```text
//! x_{t+1} = argmin_x  L(x, λ_t) + d²(x, x_t) / (2η_t)
//! λ_{t+1} = [λ_t + η_t (h(x_{t+1}) − αλ_t)]₊
//! ```
//!
//! The primal proximal step is problem specific and supplied through
//! [`SaddleProblem::inner_minimize`]. The reported solution is the best
//! iterate, not the last one; see [`RunTrace::best_index`].

pub mod bounds;
pub mod toy;
mod trace;

pub use bounds::{corollary1_bound, corollary1_sums, step_sums, theorem1_bound, BoundParams, EmpiricalBoundCheck};
pub use trace::{read_jsonl, IterationRecord, RunTrace, TraceLine};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_INNER_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_INNER_MAX_ITERS: usize = 200;

/// Nonnegative multipliers, one per inequality constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn zeros(m: usize) -> Self {
        DualVector(vec![0.0; m])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("dual entries must be finite and nonnegative, got {v}")));
        }
        Ok(DualVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Split into `[head; tail]` at `at`.
    pub fn split_at(&self, at: usize) -> (DualVector, DualVector) {
        let (a, b) = self.0.split_at(at);
        (DualVector(a.to_vec()), DualVector(b.to_vec()))
    }

    pub fn concat(head: &DualVector, tail: &DualVector) -> DualVector {
        let mut v = head.0.clone();
        v.extend_from_slice(&tail.0);
        DualVector(v)
    }
}

impl TryFrom<Vec<f64>> for DualVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DualVector::new(v)
    }
}

impl From<DualVector> for Vec<f64> {
    fn from(d: DualVector) -> Self {
        d.0
    }
}

/// Stopping rule handed to the inner (primal) minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSettings {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings { tolerance: DEFAULT_INNER_TOLERANCE, max_iters: DEFAULT_INNER_MAX_ITERS }
    }
}

/// A constrained problem `min f(x) s.t. h(x) ≤ 0` in saddle-point form.
pub trait SaddleProblem {
    type Point: Clone;

    /// Number of inequality constraints `m`.
    fn constraint_count(&self) -> usize;

    fn objective(&self, x: &Self::Point) -> f64;

    /// `h(x)`, length [`constraint_count`](Self::constraint_count).
    fn constraints(&self, x: &Self::Point) -> Vec<f64>;

    /// Proximal distance `d²(x, y)`; `d²(x, x) = 0`.
    fn distance_sq(&self, x: &Self::Point, y: &Self::Point) -> Result<f64>;

    /// Solve `argmin_x L(x, λ) + d²(x, x_t)/(2η)` to the given tolerance.
    fn inner_minimize(
        &self,
        x_t: &Self::Point,
        dual: &DualVector,
        eta: f64,
        settings: &InnerSettings,
    ) -> Result<Self::Point>;

    /// Projected dual ascent. Problems whose multipliers split into blocks
    /// with their own closed forms may override this, provided the result is
    /// the same map.
    fn dual_update(&self, dual: &DualVector, h_val: &[f64], eta: f64, alpha: f64) -> Result<DualVector> {
        dual_ascent_step(dual, h_val, eta, alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Dual regularization α > 0.
    pub alpha: f64,
    /// Base step η₀; `η_t = η₀/√(t+1)`.
    pub eta0: f64,
    /// Outer iterations T.
    pub max_outer_iters: usize,
    pub inner_tolerance: f64,
    pub inner_max_iters: usize,
}

impl SolverConfig {
    pub fn new(alpha: f64, eta0: f64, max_outer_iters: usize) -> Result<Self> {
        let cfg = SolverConfig {
            alpha,
            eta0,
            max_outer_iters,
            inner_tolerance: DEFAULT_INNER_TOLERANCE,
            inner_max_iters: DEFAULT_INNER_MAX_ITERS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_inner(mut self, tolerance: f64, max_iters: usize) -> Result<Self> {
        self.inner_tolerance = tolerance;
        self.inner_max_iters = max_iters;
        self.validate()?;
        Ok(self)
    }

    /// `α η_t ≤ 1` for all t reduces to `α η₀ ≤ 1` since the schedule decreases.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if self.alpha * self.eta0 > 1.0 {
            return Err(Error::Config(format!("alpha * eta0 = {} exceeds 1", self.alpha * self.eta0)));
        }
        if !(self.inner_tolerance > 0.0) {
            return Err(Error::Config("inner tolerance must be positive".into()));
        }
        if self.inner_max_iters == 0 {
            return Err(Error::Config("inner_max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn inner_settings(&self) -> InnerSettings {
        InnerSettings { tolerance: self.inner_tolerance, max_iters: self.inner_max_iters }
    }

    pub fn eta(&self, t: usize) -> f64 {
        step_size(t, self.eta0)
    }
}

/// `η_t = η₀ / √(t+1)`.
pub fn step_size(t: usize, eta0: f64) -> f64 {
    eta0 / ((t + 1) as f64).sqrt()
}

/// Elementwise `max(v, 0)`. NaN entries pass through so callers can detect them.
pub fn positive_part(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 || x.is_nan() { x } else { 0.0 }).collect()
}

/// `L(x, λ) = f(x) + ⟨λ, h(x)⟩ − (α/2)‖λ‖²`.
pub fn lagrangian<P: SaddleProblem>(problem: &P, x: &P::Point, dual: &DualVector, alpha: f64) -> Result<f64> {
    let h = problem.constraints(x);
    check_dim("constraint vector", dual.len(), h.len())?;
    let inner: f64 = dual.values().iter().zip(&h).map(|(l, v)| l * v).sum();
    let sq: f64 = dual.values().iter().map(|l| l * l).sum();
    Ok(problem.objective(x) + inner - 0.5 * alpha * sq)
}

/// `λ⁺ = [(1 − ηα)λ + η h]₊`, i.e. projected ascent along `h − αλ`.
pub fn dual_ascent_step(dual: &DualVector, h_val: &[f64], eta: f64, alpha: f64) -> Result<DualVector> {
    check_dim("constraint vector", dual.len(), h_val.len())?;
    check_step(eta, alpha)?;
    if h_val.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite constraint value in dual step".into()));
    }
    let keep = 1.0 - eta * alpha;
    let raw: Vec<f64> = dual.values().iter().zip(h_val).map(|(l, h)| keep * l + eta * h).collect();
    Ok(DualVector(positive_part(&raw)))
}

pub(crate) fn check_step(eta: f64, alpha: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("step size must be positive, got {eta}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("regularization must be nonnegative, got {alpha}")));
    }
    if alpha * eta > 1.0 {
        return Err(Error::Config(format!("alpha * eta = {} exceeds 1", alpha * eta)));
    }
    Ok(())
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome<P> {
    pub trace: RunTrace,
    /// `x_T`, or `x₀` when no iterations ran.
    pub final_point: P,
    /// The iterate selected by [`RunTrace::best_index`], or `x₀`.
    pub best_point: P,
    /// `λ_T`.
    pub final_dual: DualVector,
}

/// What an observer sees after each completed iteration.
pub struct Iterate<'a, P> {
    pub record: &'a IterationRecord,
    /// `x_{t+1}`.
    pub point: &'a P,
    /// `λ_{t+1}`.
    pub dual: &'a DualVector,
}

pub fn run<P: SaddleProblem>(problem: &P, x0: P::Point, config: &SolverConfig) -> Result<RunOutcome<P::Point>> {
    run_observed(problem, x0, config, |_| {})
}

/// [`run`] with a callback after every iteration.
pub fn run_observed<P, F>(
    problem: &P,
    x0: P::Point,
    config: &SolverConfig,
    mut observer: F,
) -> Result<RunOutcome<P::Point>>
where
    P: SaddleProblem,
    F: FnMut(&Iterate<'_, P::Point>),
{
    config.validate()?;
    let m = problem.constraint_count();
    let self_dist = problem.distance_sq(&x0, &x0)?;
    if self_dist.abs() > 1e-9 {
        return Err(Error::InvariantViolation(format!("distance_sq(x0, x0) = {self_dist:e}, expected 0")));
    }

    let settings = config.inner_settings();
    let mut trace = RunTrace::default();
    let mut x = x0.clone();
    let mut best_point = x0;
    let mut dual = DualVector::zeros(m);

    for t in 0..config.max_outer_iters {
        let eta = config.eta(t);
        let next = match problem.inner_minimize(&x, &dual, eta, &settings) {
            Ok(p) => p,
            Err(e) => return Err(diverged(t, format!("inner minimizer failed: {e}"), trace)),
        };
        let f = problem.objective(&next);
        let h = problem.constraints(&next);
        if h.len() != m {
            return Err(Error::InvariantViolation(format!("constraints returned {} values, expected {m}", h.len())));
        }
        if !f.is_finite() {
            return Err(diverged(t, format!("objective is {f}"), trace));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(diverged(t, "constraint values are not finite".into(), trace));
        }
        let record = IterationRecord::new(t, eta, f, h, dual.norm());
        let new_dual = match problem.dual_update(&dual, &record.h, eta, config.alpha) {
            Ok(d) => d,
            Err(e) => return Err(diverged(t, format!("dual update failed: {e}"), trace)),
        };
        observer(&Iterate { record: &record, point: &next, dual: &new_dual });
        if trace.push(record) {
            best_point = next.clone();
        }
        x = next;
        dual = new_dual;
    }

    Ok(RunOutcome { trace, final_point: x, best_point, final_dual: dual })
}

fn diverged(iteration: usize, reason: String, trace: RunTrace) -> Error {
    Error::Diverged { iteration, reason, trace: Box::new(trace) }
}
