use proptest::prelude::*;

use rpdml::solver::toy::{grid_search_optimum, ToyProblem, ToyStudy};
use rpdml::solver::{corollary1_sums, step_sums, SolverConfig};

fn f_star(p: &ToyProblem) -> f64 {
    grid_search_optimum(p, 0.0, 10.0, 1e-4).unwrap().1
}

#[test]
fn bound_holds_at_every_horizon_from_several_starts() {
    let p = ToyProblem::default();
    let fs = f_star(&p);
    for x0 in [0.1, 0.5, 1.0, 2.5, 4.0] {
        let study = ToyStudy::run(p, x0, &ToyProblem::default_config(300)).unwrap();
        for t in 1..=300 {
            let c = study.bound_check(t, fs).unwrap();
            assert!(c.holds, "x0 = {x0}, T = {t}: gap {} > bound {}", c.gap, c.bound);
        }
    }
}

#[test]
fn unconstrained_toy_reaches_target() {
    let p = ToyProblem::unconstrained(3.0);
    let study = ToyStudy::run(p, 0.5, &ToyProblem::default_config(200)).unwrap();
    let best = study.outcome.trace.best().unwrap();
    assert!(best.f < 1e-6, "{}", best.f);
    assert!(study.duals.iter().all(|&l| l == 0.0));
}

#[test]
fn best_gap_is_nonincreasing_once_feasible() {
    let p = ToyProblem::default();
    let fs = f_star(&p);
    let study = ToyStudy::run(p, 0.5, &ToyProblem::default_config(400)).unwrap();
    let trace = &study.outcome.trace;
    let mut prev: Option<f64> = None;
    for t in 1..=400 {
        let i = trace.best_index_within(t).unwrap();
        if !trace.records[i].is_feasible() {
            continue;
        }
        let g = study.best_gap(t, fs).unwrap();
        if let Some(p) = prev {
            assert!(g <= p, "T = {t}: {g} > {p}");
        }
        prev = Some(g);
    }
    assert!(prev.is_some());
}

#[test]
fn step_sums_respect_closed_form_envelopes() {
    for t in [1, 2, 3, 10, 100, 1000, 100_000] {
        let (s, s2) = step_sums(t, 1.0);
        let (lo, hi) = corollary1_sums(t).unwrap();
        assert!(lo <= s && s2 <= hi, "T = {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn duals_stay_nonnegative(x0 in 0.05f64..6.0, eta0 in 0.05f64..4.0, alpha in 1e-4f64..0.2, cap in 0.2f64..3.0) {
        prop_assume!(eta0 * alpha < 1.0);
        let cfg = SolverConfig::new(alpha, eta0, 60).unwrap();
        let study = ToyStudy::run(ToyProblem::constrained(2.0, cap), x0, &cfg).unwrap();
        prop_assert!(study.duals.iter().all(|&l| l >= 0.0));
        prop_assert!(study.points.iter().all(|&x| x > 0.0));
    }
}
