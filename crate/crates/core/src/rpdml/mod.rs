//! Metric learning with pairwise distance constraints.
//!
//! Learns an SPD matrix `W` close (in LogDet divergence) to a reference
//! `W0`, subject to soft constraints: squared distances `(x_i − x_j)ᵀ W (x_i − x_j)`
//! of same-label pairs at most `u(1 + ξ)`, and of different-label pairs at
//! least `l(1 − ξ)`. Each outer iteration runs, in order:
//!
//! 1. `W`: Riemannian gradient descent on the proximal subproblem ([`inner_solve_w`]);
//! 2. `ξ`: closed form ([`update_slack`]);
//! 3. `λ`: projected ascent on the pair constraints ([`update_lambda`]);
//! 4. `γ`: projected ascent on `−ξ ≤ 0` ([`update_gamma`]).

mod constraints;
mod inner;
mod pairs;
mod updates;

pub use constraints::{eval_h, eval_h_with, grad_h_contraction, grad_h_contraction_with};
pub use inner::{inner_solve_w, InnerObjective, InnerReport};
pub use pairs::{build_pairs, compute_bounds, Bounds, PairConstraints};
pub use updates::{update_gamma, update_lambda, update_slack, SlackState};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::eval::mahalanobis_metric;
use crate::par::Execution;
use crate::solver::{self, DualVector, InnerSettings, RunOutcome, RunTrace, SaddleProblem, SolverConfig};
use crate::spd::{logdet_divergence, quad_form, MatrixJson, SpdMatrix};
use inner::Factored;

/// Whether the inner objective carries the proximal term `d²(W, W_t)/(2η)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxTermMode {
    /// The full proximal subproblem of the outer algorithm.
    #[default]
    Include,
    /// Only `½ d²(W, W0) + ⟨λ, h(W)⟩`.
    Omit,
}

/// Reference metric `W0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W0Mode {
    /// Euclidean distance.
    #[default]
    Identity,
    /// Mahalanobis distance of the training features.
    InverseCovariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpdmlConfig {
    /// Slack penalty C₁.
    pub c1: f64,
    /// Dual regularization C₂.
    pub c2: f64,
    pub eta0: f64,
    pub outer_iters: usize,
    pub inner_tolerance: f64,
    pub inner_max_iters: usize,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    pub prox_term_mode: ProxTermMode,
    pub w0_mode: W0Mode,
    pub max_pairs_per_class: usize,
    pub seed: u64,
}

impl Default for RpdmlConfig {
    fn default() -> Self {
        RpdmlConfig {
            c1: 100.0,
            c2: 1.0,
            eta0: 0.001,
            outer_iters: 200,
            inner_tolerance: solver::DEFAULT_INNER_TOLERANCE,
            inner_max_iters: solver::DEFAULT_INNER_MAX_ITERS,
            percentile_lo: 5.0,
            percentile_hi: 95.0,
            prox_term_mode: ProxTermMode::Include,
            w0_mode: W0Mode::Identity,
            max_pairs_per_class: 200,
            seed: 0,
        }
    }
}

impl RpdmlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) || !self.c1.is_finite() {
            return Err(Error::Config(format!("c1 must be positive, got {}", self.c1)));
        }
        if !(0.0 < self.percentile_lo && self.percentile_lo < self.percentile_hi && self.percentile_hi < 100.0) {
            return Err(Error::Config(format!(
                "percentiles must satisfy 0 < {} < {} < 100",
                self.percentile_lo, self.percentile_hi
            )));
        }
        if self.max_pairs_per_class == 0 {
            return Err(Error::Config("max_pairs_per_class must be positive".into()));
        }
        self.solver_config().map(|_| ())
    }

    /// The outer-loop settings; `α = C₂`.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        if !(self.c2 > 0.0) {
            return Err(Error::Config(format!("c2 must be positive, got {}", self.c2)));
        }
        SolverConfig::new(self.c2, self.eta0, self.outer_iters)?.with_inner(self.inner_tolerance, self.inner_max_iters)
    }
}

/// Primal iterate `(W, ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RpdmlPoint {
    pub w: SpdMatrix,
    pub xi: SlackState,
}

/// The metric-learning problem in the generic saddle-point form.
///
/// Constraints are `[h(W, ξ); −ξ]` and the duals `[λ; γ]`, so the constraint
/// count is twice the number of pairs.
#[derive(Clone, Debug)]
pub struct RpdmlProblem {
    pc: PairConstraints,
    w0: SpdMatrix,
    w0f: Factored,
    c1: f64,
    mode: ProxTermMode,
    exec: Execution,
}

impl RpdmlProblem {
    pub fn new(pc: PairConstraints, w0: SpdMatrix, c1: f64, mode: ProxTermMode, exec: Execution) -> Result<Self> {
        check_dim("reference metric", pc.dim(), w0.dim())?;
        pc.bounds()?;
        let w0f = Factored::of(&w0)?;
        Ok(RpdmlProblem { pc, w0, w0f, c1, mode, exec })
    }

    pub fn pairs(&self) -> &PairConstraints {
        &self.pc
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.w0
    }

    pub fn start(&self) -> RpdmlPoint {
        RpdmlPoint { w: self.w0.clone(), xi: SlackState::zeros(self.pc.len()) }
    }

    fn split(&self, dual: &DualVector) -> Result<(DualVector, DualVector)> {
        check_dim("dual vector", 2 * self.pc.len(), dual.len())?;
        Ok(dual.split_at(self.pc.len()))
    }
}

impl SaddleProblem for RpdmlProblem {
    type Point = RpdmlPoint;

    fn constraint_count(&self) -> usize {
        2 * self.pc.len()
    }

    /// `½ d²(W, W0) + (C₁/2)‖ξ‖²`; NaN when the divergence cannot be evaluated.
    fn objective(&self, x: &RpdmlPoint) -> f64 {
        match logdet_divergence(&x.w, &self.w0) {
            Ok(d) => 0.5 * d + 0.5 * self.c1 * x.xi.norm_sq(),
            Err(_) => f64::NAN,
        }
    }

    fn constraints(&self, x: &RpdmlPoint) -> Vec<f64> {
        let mut h = match eval_h_with(self.exec, &x.w, &x.xi, &self.pc) {
            Ok(h) => h,
            Err(_) => vec![f64::NAN; self.pc.len()],
        };
        h.extend(x.xi.values().iter().map(|v| -v));
        h
    }

    fn distance_sq(&self, x: &RpdmlPoint, y: &RpdmlPoint) -> Result<f64> {
        check_dim("slack vector", x.xi.len(), y.xi.len())?;
        let slack: f64 = x.xi.values().iter().zip(y.xi.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(logdet_divergence(&x.w, &y.w)? + slack)
    }

    fn inner_minimize(
        &self,
        x_t: &RpdmlPoint,
        dual: &DualVector,
        eta: f64,
        settings: &InnerSettings,
    ) -> Result<RpdmlPoint> {
        let (lambda, gamma) = self.split(dual)?;
        let objective =
            InnerObjective::build(self.exec, &x_t.w, &lambda, &self.w0, &self.w0f, eta, &self.pc, self.mode)?;
        let report = inner::descend(&objective, &x_t.w, eta, settings)?;
        if !report.converged {
            log::debug!(
                "inner solve stopped after {} iterations with gradient norm {:.3e}",
                report.iterations,
                report.grad_norm
            );
        }
        let xi = update_slack(&x_t.xi, &lambda, &gamma, eta, self.c1, &self.pc)?;
        Ok(RpdmlPoint { w: report.w, xi })
    }

    /// `λ` and `γ` through their own update rules. `h_val` ends with `−ξ⁺`.
    fn dual_update(&self, dual: &DualVector, h_val: &[f64], eta: f64, alpha: f64) -> Result<DualVector> {
        let (lambda, gamma) = self.split(dual)?;
        check_dim("constraint vector", dual.len(), h_val.len())?;
        let n = self.pc.len();
        let xi_next = SlackState::new(h_val[n..].iter().map(|v| -v).collect())?;
        let lambda = update_lambda(&lambda, &h_val[..n], eta, alpha)?;
        let gamma = update_gamma(&gamma, &xi_next, eta, alpha)?;
        Ok(DualVector::concat(&lambda, &gamma))
    }
}

/// A learned metric and how it was obtained.
#[derive(Clone, Debug)]
pub struct MetricModel {
    pub w: SpdMatrix,
    pub w0: SpdMatrix,
    pub u: f64,
    pub l: f64,
    pub trace: RunTrace,
    /// `‖[h(W0, 0)]₊‖₁`, the violation before training.
    pub initial_violation: f64,
}

/// On-disk model: `{dim, w, w0, u, l}` with row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub dim: usize,
    pub w: Vec<f64>,
    pub w0: Vec<f64>,
    pub u: f64,
    pub l: f64,
}

impl MetricModel {
    pub fn to_json(&self) -> ModelJson {
        ModelJson { dim: self.w.dim(), w: self.w.to_row_major(), w0: self.w0.to_row_major(), u: self.u, l: self.l }
    }

    /// Rebuild from JSON. The trace is not stored and comes back empty.
    pub fn from_json(j: &ModelJson) -> Result<Self> {
        let w = SpdMatrix::try_from(MatrixJson { dim: j.dim, data: j.w.clone() })?;
        let w0 = SpdMatrix::try_from(MatrixJson { dim: j.dim, data: j.w0.clone() })?;
        Ok(MetricModel { w, w0, u: j.u, l: j.l, trace: RunTrace::default(), initial_violation: f64::NAN })
    }

    /// `‖[h]₊‖₁` of the last iterate, or the initial violation if untrained.
    pub fn final_violation(&self) -> f64 {
        self.trace.last().map_or(self.initial_violation, |r| r.h_violation)
    }
}

/// `(a − b)ᵀ W (a − b)`.
pub fn metric_distance(model: &MetricModel, a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("point", model.w.dim(), a.len())?;
    check_dim("point", model.w.dim(), b.len())?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(quad_form(model.w.as_matrix(), &d).max(0.0))
}

/// Learn a metric from labeled features. Features are used as given; any
/// normalization is the caller's job.
pub fn train(features: &DMatrix<f64>, labels: &[i64], config: &RpdmlConfig) -> Result<MetricModel> {
    train_with(Execution::default(), features, labels, config)
}

pub fn train_with(
    exec: Execution,
    features: &DMatrix<f64>,
    labels: &[i64],
    config: &RpdmlConfig,
) -> Result<MetricModel> {
    train_observed(exec, features, labels, config, |_| {})
}

/// [`train_with`] with a callback receiving each iterate.
pub fn train_observed<F>(
    exec: Execution,
    features: &DMatrix<f64>,
    labels: &[i64],
    config: &RpdmlConfig,
    observer: F,
) -> Result<MetricModel>
where
    F: FnMut(&solver::Iterate<'_, RpdmlPoint>),
{
    config.validate()?;
    let solver_cfg = config.solver_config()?;
    let (problem, initial_violation) = setup(exec, features, labels, config)?;
    let bounds = problem.pc.bounds()?;
    let RunOutcome { trace, final_point, .. } = solver::run_observed(&problem, problem.start(), &solver_cfg, observer)?;
    Ok(MetricModel { w: final_point.w, w0: problem.w0, u: bounds.u, l: bounds.l, trace, initial_violation })
}

/// Build the problem: reference metric, pairs, and bounds from `W0` distances.
/// Also returns the initial aggregate violation.
pub fn setup(
    exec: Execution,
    features: &DMatrix<f64>,
    labels: &[i64],
    config: &RpdmlConfig,
) -> Result<(RpdmlProblem, f64)> {
    let w0 = match config.w0_mode {
        W0Mode::Identity => SpdMatrix::identity(features.ncols()),
        W0Mode::InverseCovariance => mahalanobis_metric(features)?,
    };
    let pc = build_pairs(features, labels, config.max_pairs_per_class, config.seed)?;
    let (pc, dropped) = pc.drop_degenerate()?;
    if dropped > 0 {
        log::warn!("dropped {dropped} pair(s) with zero difference vectors");
    }
    let dist = pc.pair_distances(&w0)?;
    let bounds = compute_bounds(&dist, config.percentile_lo, config.percentile_hi)?;
    let pc = pc.with_bounds(bounds);
    let h0 = eval_h_with(exec, &w0, &SlackState::zeros(pc.len()), &pc)?;
    let initial_violation = h0.iter().filter(|v| **v > 0.0).fold(0.0, |a, v| a + v);
    let problem = RpdmlProblem::new(pc, w0, config.c1, config.prox_term_mode, exec)?;
    Ok((problem, initial_violation))
}
