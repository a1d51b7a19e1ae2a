use serde::{Deserialize, Serialize};

use super::pairs::PairConstraints;
use crate::error::{check_dim, Error, Result};
use crate::solver::{check_step, dual_ascent_step, positive_part, DualVector};

/// Nonnegative slacks `ξ = [ξ₊; ξ₋]`, one per pair constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SlackState(Vec<f64>);

impl SlackState {
    pub fn zeros(n: usize) -> Self {
        SlackState(vec![0.0; n])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvariantViolation("slack entries must be finite and nonnegative".into()));
        }
        Ok(SlackState(values))
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

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl TryFrom<Vec<f64>> for SlackState {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SlackState::new(v)
    }
}

impl From<SlackState> for Vec<f64> {
    fn from(s: SlackState) -> Self {
        s.0
    }
}

/// `ξ⁺ = [(η ξ + γ + λ ⊙ (u; l)) / (C₁ + η)]₊`.
///
/// This is the closed form as printed, with coefficient `η` on the proximal
/// term; differentiating `‖ξ − ξ_t‖²/(2η)` would give `1/η` instead.
pub fn update_slack(
    xi_t: &SlackState,
    lambda: &DualVector,
    gamma: &DualVector,
    eta: f64,
    c1: f64,
    pc: &PairConstraints,
) -> Result<SlackState> {
    let n = pc.len();
    check_dim("slack vector", n, xi_t.len())?;
    check_dim("constraint duals", n, lambda.len())?;
    check_dim("slack duals", n, gamma.len())?;
    if !(c1 + eta > 0.0) {
        return Err(Error::Config(format!("C1 + eta must be positive, got {}", c1 + eta)));
    }
    let b = pc.bounds()?;
    let denom = c1 + eta;
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let bound = if pc.is_similar(k) { b.u } else { b.l };
            (eta * xi_t.values()[k] + gamma.values()[k] + lambda.values()[k] * bound) / denom
        })
        .collect();
    SlackState::new(positive_part(&raw))
}

/// `λ⁺ = [(1 − C₂η)λ + η h]₊`.
pub fn update_lambda(lambda: &DualVector, h_val: &[f64], eta: f64, c2: f64) -> Result<DualVector> {
    dual_ascent_step(lambda, h_val, eta, c2)
}

/// `γ⁺ = [(1 − C₂η)γ − η ξ⁺]₊`, the dual step for the constraint `−ξ ≤ 0`.
pub fn update_gamma(gamma: &DualVector, xi_next: &SlackState, eta: f64, c2: f64) -> Result<DualVector> {
    check_dim("slack vector", gamma.len(), xi_next.len())?;
    check_step(eta, c2)?;
    let keep = 1.0 - c2 * eta;
    let raw: Vec<f64> = gamma.values().iter().zip(xi_next.values()).map(|(g, x)| keep * g - eta * x).collect();
    DualVector::new(positive_part(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpdml::pairs::Bounds;
    use proptest::prelude::*;

    fn one_similar(u: f64) -> PairConstraints {
        PairConstraints::from_diffs(1, &[vec![1.0]], &[vec![3.0]])
            .unwrap()
            .with_bounds(Bounds::new(u, 2.0 * u + 1.0).unwrap())
    }

    fn dv(v: &[f64]) -> DualVector {
        DualVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn slack_examples() {
        let pc = one_similar(1.0);
        let z =
            update_slack(&SlackState::zeros(2), &DualVector::zeros(2), &DualVector::zeros(2), 0.5, 1.0, &pc).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0]);
        let x = update_slack(&SlackState::zeros(2), &dv(&[0.2, 0.0]), &dv(&[0.1, 0.0]), 0.5, 1.0, &pc).unwrap();
        assert!((x.values()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn slack_uses_lower_bound_for_dissimilar_rows() {
        let pc = one_similar(1.0); // l = 3
        let x = update_slack(&SlackState::zeros(2), &dv(&[0.0, 0.5]), &DualVector::zeros(2), 1.0, 2.0, &pc).unwrap();
        assert!((x.values()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_examples() {
        let l = update_lambda(&dv(&[0.5]), &[-0.3], 0.5, 0.2).unwrap();
        assert!((l.values()[0] - 0.3).abs() < 1e-15);
        assert_eq!(update_lambda(&dv(&[0.0]), &[-0.1], 0.5, 0.2).unwrap().values(), &[0.0]);
        assert_eq!(update_lambda(&dv(&[0.1]), &[-10.0], 0.5, 0.2).unwrap().values(), &[0.0]);
        assert!(matches!(update_lambda(&dv(&[0.1]), &[1.0], 2.0, 0.6), Err(Error::Config(_))));
    }

    #[test]
    fn gamma_examples() {
        let g = update_gamma(&dv(&[0.4]), &SlackState::new(vec![0.1]).unwrap(), 0.5, 0.2).unwrap();
        assert!((g.values()[0] - 0.31).abs() < 1e-15);
        let z = update_gamma(&dv(&[0.0]), &SlackState::new(vec![0.7]).unwrap(), 0.5, 0.2).unwrap();
        assert_eq!(z.values(), &[0.0]);
        let s = update_gamma(&dv(&[0.4]), &SlackState::zeros(1), 0.5, 0.2).unwrap();
        assert_eq!(s.values(), &[0.9 * 0.4]);
        assert!(update_gamma(&dv(&[0.4]), &SlackState::zeros(1), 1.0, 2.0).is_err());
    }

    #[test]
    fn gamma_matches_generic_dual_step() {
        let gamma = dv(&[0.4, 0.0, 1.3]);
        let xi = SlackState::new(vec![0.1, 0.2, 0.0]).unwrap();
        let neg: Vec<f64> = xi.values().iter().map(|v| -v).collect();
        assert_eq!(update_gamma(&gamma, &xi, 0.3, 0.7).unwrap(), dual_ascent_step(&gamma, &neg, 0.3, 0.7).unwrap());
    }

    proptest! {
        #[test]
        fn slack_is_nonnegative_and_monotone_in_gamma(
            xi in 0.0f64..5.0, lam in 0.0f64..5.0, g in 0.0f64..5.0, dg in 0.0f64..1.0,
            eta in 0.01f64..2.0, c1 in 0.01f64..10.0,
        ) {
            let pc = one_similar(0.7);
            let xi = SlackState::new(vec![xi, xi]).unwrap();
            let lam = dv(&[lam, lam]);
            let a = update_slack(&xi, &lam, &dv(&[g, g]), eta, c1, &pc).unwrap();
            let b = update_slack(&xi, &lam, &dv(&[g + dg, g + dg]), eta, c1, &pc).unwrap();
            prop_assert!(a.values().iter().all(|&v| v >= 0.0));
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x <= y));
        }
    }
}
