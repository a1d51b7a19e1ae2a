//! The W-subproblem: Riemannian gradient descent with Armijo backtracking.

use nalgebra::DMatrix;

use super::constraints::grad_h_contraction_with;
use super::pairs::PairConstraints;
use super::ProxTermMode;
use crate::error::{check_dim, Error, Result};
use crate::par::Execution;
use crate::solver::{DualVector, InnerSettings};
use crate::spd::{cholesky_logdet, inverse_and_logdet, retract, symmetrize, SpdMatrix};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// A fixed SPD matrix together with its inverse and log-determinant.
#[derive(Clone, Debug)]
pub(crate) struct Factored {
    pub inv: DMatrix<f64>,
    pub logdet: f64,
}

impl Factored {
    pub fn of(w: &SpdMatrix) -> Result<Self> {
        let (inv, logdet) = inverse_and_logdet(w.as_matrix())
            .ok_or_else(|| Error::Numeric("Cholesky factorization of an SPD matrix failed".into()))?;
        Ok(Factored { inv, logdet })
    }
}

/// `J(W) = ½ d²(W, W0) + ⟨λ, h(W)⟩ [+ d²(W, W_t)/(2η)]`, dropping terms that
/// do not depend on `W`.
///
/// Every piece is linear in `W` except the log-determinants, so
/// `J(W) = ⟨M, W⟩ − c·logdet W + const` with
/// `M = ½W0⁻¹ + Σ±λ x xᵀ [+ W_t⁻¹/(2η)]` and `c = ½ [+ 1/(2η)]`.
#[derive(Clone, Debug)]
pub struct InnerObjective {
    linear: DMatrix<f64>,
    barrier: f64,
    constant: f64,
}

impl InnerObjective {
    pub fn new(
        w_t: &SpdMatrix,
        lambda: &DualVector,
        w0: &SpdMatrix,
        eta: f64,
        pc: &PairConstraints,
        mode: ProxTermMode,
    ) -> Result<Self> {
        Self::build(Execution::default(), w_t, lambda, w0, &Factored::of(w0)?, eta, pc, mode)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        exec: Execution,
        w_t: &SpdMatrix,
        lambda: &DualVector,
        w0: &SpdMatrix,
        w0f: &Factored,
        eta: f64,
        pc: &PairConstraints,
        mode: ProxTermMode,
    ) -> Result<Self> {
        let n = w0.dim();
        check_dim("W_t", n, w_t.dim())?;
        check_dim("pair dimension", n, pc.dim())?;
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        let nf = n as f64;
        let mut linear = w0f.inv.scale(0.5) + grad_h_contraction_with(exec, lambda, pc)?;
        let mut barrier = 0.5;
        let mut constant = 0.5 * (w0f.logdet - nf);
        if mode == ProxTermMode::Include {
            let k = 0.5 / eta;
            let wtf = Factored::of(w_t)?;
            linear += wtf.inv.scale(k);
            barrier += k;
            constant += k * (wtf.logdet - nf);
        }
        Ok(InnerObjective { linear: symmetrize(&linear), barrier, constant })
    }

    fn value_with_logdet(&self, w: &DMatrix<f64>, logdet: f64) -> f64 {
        self.linear.dot(w) - self.barrier * logdet + self.constant
    }

    /// `J(W)`.
    pub fn value(&self, w: &SpdMatrix) -> Result<f64> {
        let f = Factored::of(w)?;
        Ok(self.value_with_logdet(w.as_matrix(), f.logdet))
    }

    fn gradient_with_inverse(&self, w_inv: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.linear - w_inv.scale(self.barrier)))
    }

    /// Riemannian gradient, `M − c W⁻¹` projected to the symmetric matrices.
    pub fn gradient(&self, w: &SpdMatrix) -> Result<DMatrix<f64>> {
        Ok(self.gradient_with_inverse(&Factored::of(w)?.inv))
    }

    /// `J` is bounded below iff `M` is positive definite.
    pub fn is_bounded_below(&self) -> bool {
        self.linear.clone().cholesky().is_some()
    }

    /// The exact minimizer `c·M⁻¹`, or `None` when `J` is unbounded below.
    pub fn minimizer(&self) -> Option<Result<SpdMatrix>> {
        let inv = self.linear.clone().cholesky()?.inverse();
        Some(SpdMatrix::new(symmetrize(&inv.scale(self.barrier))))
    }
}

/// Diagnostics of one inner solve.
#[derive(Clone, Debug)]
pub struct InnerReport {
    pub w: SpdMatrix,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// `J` at `W_t` followed by `J` after every accepted step.
    pub objective_history: Vec<f64>,
}

/// Minimize [`InnerObjective`] from `W_t`.
///
/// Each step retracts `W − s·Grad`, starting from `s = η` and halving until
/// the Armijo condition holds. Stops when `‖Grad‖_F ≤ tolerance` or after
/// `max_iters` steps.
pub fn inner_solve_w(
    w_t: &SpdMatrix,
    lambda: &DualVector,
    w0: &SpdMatrix,
    eta: f64,
    pc: &PairConstraints,
    mode: ProxTermMode,
    settings: &InnerSettings,
) -> Result<SpdMatrix> {
    let objective = InnerObjective::new(w_t, lambda, w0, eta, pc, mode)?;
    Ok(descend(&objective, w_t, eta, settings)?.w)
}

pub(crate) fn descend(
    objective: &InnerObjective,
    w_t: &SpdMatrix,
    eta: f64,
    settings: &InnerSettings,
) -> Result<InnerReport> {
    if !objective.is_bounded_below() {
        // Descent would run off to infinity along a negative direction of M.
        return Err(Error::InnerSolve(
            "subproblem is unbounded below: the dual-weighted constraint term outweighs the proximal terms".into(),
        ));
    }
    let mut w = w_t.clone();
    let mut f = Factored::of(&w)?;
    let mut j = objective.value_with_logdet(w.as_matrix(), f.logdet);
    if !j.is_finite() {
        return Err(Error::InnerSolve(format!("objective is {j} at the starting point")));
    }
    let mut history = vec![j];
    let mut grad_norm = f64::INFINITY;

    for it in 0..settings.max_iters {
        let grad = objective.gradient_with_inverse(&f.inv);
        grad_norm = grad.norm();
        if grad_norm <= settings.tolerance {
            return Ok(InnerReport { w, iterations: it, grad_norm, converged: true, objective_history: history });
        }
        let mut step = eta;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = retract(&w, &grad.scale(-step))?;
            if let Some(logdet) = cholesky_logdet(candidate.as_matrix()) {
                let jc = objective.value_with_logdet(candidate.as_matrix(), logdet);
                if jc <= j - ARMIJO * step * grad_norm * grad_norm {
                    let cf = Factored::of(&candidate)?;
                    accepted = Some((candidate, cf, jc));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cf, jc)) => {
                w = cand;
                f = cf;
                j = jc;
                history.push(j);
            }
            None => {
                // No decrease at any step length: either the gradient is at
                // round-off level (done) or the model is broken.
                let scale = objective.linear.norm() + objective.barrier * f.inv.norm();
                if grad_norm <= 1e-10 * scale.max(1.0) {
                    return Ok(InnerReport {
                        w,
                        iterations: it,
                        grad_norm,
                        converged: true,
                        objective_history: history,
                    });
                }
                return Err(Error::InnerSolve(format!(
                    "backtracking exhausted at inner iteration {it} with gradient norm {grad_norm:e}"
                )));
            }
        }
    }
    let grad = objective.gradient_with_inverse(&f.inv);
    grad_norm = grad_norm.min(grad.norm());
    let converged = grad.norm() <= settings.tolerance;
    Ok(InnerReport { w, iterations: settings.max_iters, grad_norm, converged, objective_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::rpdml::pairs::Bounds;
    use crate::spd::{logdet_divergence, quad_form, random_spd};
    use rand::Rng;

    fn instance(n: usize, seed: u64) -> (SpdMatrix, SpdMatrix, PairConstraints, DualVector) {
        let mut rng = stream_rng(seed, Stream::Probe);
        let w0 = random_spd(&mut rng, n);
        let wt = random_spd(&mut rng, n);
        let mut rows = |k: usize| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let s = rows(6);
        let d = rows(5);
        let pc = PairConstraints::from_diffs(n, &s, &d).unwrap().with_bounds(Bounds::new(0.5, 2.0).unwrap());
        // small dissimilar duals keep M definite even without the prox term
        let lam: Vec<f64> = (0..11).map(|k| if k < 6 { 0.05 * k as f64 } else { 0.01 }).collect();
        (w0, wt, pc, DualVector::new(lam).unwrap())
    }

    /// `J` assembled from the public divergence and quadratic forms.
    fn oracle_j(
        w: &SpdMatrix,
        w0: &SpdMatrix,
        wt: &SpdMatrix,
        lam: &DualVector,
        pc: &PairConstraints,
        eta: f64,
        mode: ProxTermMode,
    ) -> f64 {
        let mut j = 0.5 * logdet_divergence(w, w0).unwrap();
        for k in 0..pc.len() {
            let s = if pc.is_similar(k) { 1.0 } else { -1.0 };
            j += s * lam.values()[k] * quad_form(w.as_matrix(), pc.row(k));
        }
        if mode == ProxTermMode::Include {
            j += logdet_divergence(w, wt).unwrap() / (2.0 * eta);
        }
        j
    }

    #[test]
    fn value_matches_oracle_up_to_constant() {
        for mode in [ProxTermMode::Include, ProxTermMode::Omit] {
            let (w0, wt, pc, lam) = instance(4, 2);
            let obj = InnerObjective::new(&wt, &lam, &w0, 0.3, &pc, mode).unwrap();
            let w = random_spd(&mut stream_rng(5, Stream::Probe), 4);
            let a = obj.value(&w).unwrap() - obj.value(&wt).unwrap();
            let b = oracle_j(&w, &w0, &wt, &lam, &pc, 0.3, mode) - oracle_j(&wt, &w0, &wt, &lam, &pc, 0.3, mode);
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{mode:?}: {a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-5;
        for mode in [ProxTermMode::Include, ProxTermMode::Omit] {
            for (n, seed) in [(3, 1), (5, 2), (3, 3), (5, 4)] {
                let (w0, wt, pc, lam) = instance(n, seed);
                let eta = 0.7;
                let obj = InnerObjective::new(&wt, &lam, &w0, eta, &pc, mode).unwrap();
                let w = random_spd(&mut stream_rng(seed + 100, Stream::Probe), n);
                let g = obj.gradient(&w).unwrap();
                let mut fd = DMatrix::zeros(n, n);
                for i in 0..n {
                    for k in 0..n {
                        let mut e = DMatrix::zeros(n, n);
                        e[(i, k)] += 0.5;
                        e[(k, i)] += 0.5;
                        let plus = SpdMatrix::new(w.as_matrix() + e.scale(h)).unwrap();
                        let minus = SpdMatrix::new(w.as_matrix() - e.scale(h)).unwrap();
                        fd[(i, k)] = (oracle_j(&plus, &w0, &wt, &lam, &pc, eta, mode)
                            - oracle_j(&minus, &w0, &wt, &lam, &pc, eta, mode))
                            / (2.0 * h);
                    }
                }
                let rel = (&g - &fd).norm() / fd.norm().max(1e-12);
                assert!(rel <= 1e-5, "{mode:?} n={n}: relative error {rel:e}");
            }
        }
    }

    #[test]
    fn stationary_start_is_returned() {
        let (w0, _, pc, _) = instance(3, 7);
        let out =
            inner_solve_w(&w0, &DualVector::zeros(11), &w0, 0.5, &pc, ProxTermMode::Include, &InnerSettings::default())
                .unwrap();
        assert_eq!(out, w0);
    }

    #[test]
    fn omitted_prox_converges_to_reference() {
        let w0 = SpdMatrix::from_row_slice(3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]).unwrap();
        let wt = SpdMatrix::identity(3);
        let pc = PairConstraints::from_diffs(3, &[vec![1.0, 0.0, 0.0]], &[vec![0.0, 1.0, 1.0]])
            .unwrap()
            .with_bounds(Bounds::new(1.0, 2.0).unwrap());
        let settings = InnerSettings { tolerance: 1e-9, max_iters: 2000 };
        let out = inner_solve_w(&wt, &DualVector::zeros(2), &w0, 1.0, &pc, ProxTermMode::Omit, &settings).unwrap();
        assert!((out.as_matrix() - w0.as_matrix()).norm() < 1e-4);
    }

    #[test]
    fn converges_to_closed_form_minimizer() {
        for mode in [ProxTermMode::Include, ProxTermMode::Omit] {
            let (w0, wt, pc, lam) = instance(4, 11);
            let obj = InnerObjective::new(&wt, &lam, &w0, 2.0, &pc, mode).unwrap();
            let exact = obj.minimizer().unwrap().unwrap();
            let settings = InnerSettings { tolerance: 1e-7, max_iters: 50_000 };
            let rep = descend(&obj, &wt, 2.0, &settings).unwrap();
            assert!(rep.converged, "{mode:?}: {} iterations, gradient {:e}", rep.iterations, rep.grad_norm);
            assert!((rep.w.as_matrix() - exact.as_matrix()).norm() <= 1e-5 * exact.as_matrix().norm(), "{mode:?}");
        }
    }

    #[test]
    fn unbounded_subproblem_is_an_error() {
        // M = ½I + I/(2η) − 5·e₂e₂ᵀ has a negative eigenvalue.
        let pc = PairConstraints::from_diffs(2, &[vec![1.0, 0.0]], &[vec![0.0, 1.0]])
            .unwrap()
            .with_bounds(Bounds::new(0.5, 2.0).unwrap());
        let id = SpdMatrix::identity(2);
        let lam = DualVector::new(vec![0.0, 5.0]).unwrap();
        let obj = InnerObjective::new(&id, &lam, &id, 0.5, &pc, ProxTermMode::Include).unwrap();
        assert!(!obj.is_bounded_below());
        assert!(obj.minimizer().is_none());
        let err = inner_solve_w(&id, &lam, &id, 0.5, &pc, ProxTermMode::Include, &InnerSettings::default());
        assert!(matches!(err, Err(Error::InnerSolve(_))));
        // a smaller dual keeps M = diag(1.5, 0.5) definite
        let lam = DualVector::new(vec![0.0, 1.0]).unwrap();
        assert!(inner_solve_w(&id, &lam, &id, 0.5, &pc, ProxTermMode::Include, &InnerSettings::default()).is_ok());
    }

    #[test]
    fn objective_never_increases() {
        for mode in [ProxTermMode::Include, ProxTermMode::Omit] {
            let (w0, wt, pc, lam) = instance(5, 9);
            let obj = InnerObjective::new(&wt, &lam.clone(), &w0, 0.2, &pc, mode).unwrap();
            let rep = descend(&obj, &wt, 0.2, &InnerSettings::default()).unwrap();
            assert!(rep.objective_history.windows(2).all(|p| p[1] <= p[0] + 1e-12));
            assert!(rep.w.min_eigenvalue() >= crate::EPS_PD);
        }
    }
}
