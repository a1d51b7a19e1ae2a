use nalgebra::DMatrix;

use super::pairs::PairConstraints;
use super::updates::SlackState;
use crate::error::{check_dim, Result};
use crate::par::{chunked_reduce, map_indexed, Execution, REDUCTION_CHUNK};
use crate::solver::DualVector;
use crate::spd::{quad_form, SpdMatrix};

/// `h = [diag(X₊WX₊ᵀ) − u(e + ξ₊); −diag(X₋WX₋ᵀ) + l(e − ξ₋)]`.
pub fn eval_h(w: &SpdMatrix, xi: &SlackState, pc: &PairConstraints) -> Result<Vec<f64>> {
    eval_h_with(Execution::default(), w, xi, pc)
}

pub fn eval_h_with(exec: Execution, w: &SpdMatrix, xi: &SlackState, pc: &PairConstraints) -> Result<Vec<f64>> {
    check_dim("metric", pc.dim(), w.dim())?;
    check_dim("slack vector", pc.len(), xi.len())?;
    let b = pc.bounds()?;
    let n = pc.len();
    let xi = xi.values();
    let chunks = map_indexed(exec, n.div_ceil(REDUCTION_CHUNK), |c| {
        let end = ((c + 1) * REDUCTION_CHUNK).min(n);
        (c * REDUCTION_CHUNK..end)
            .map(|k| {
                let d = quad_form(w.as_matrix(), pc.row(k));
                if pc.is_similar(k) {
                    d - b.u * (1.0 + xi[k])
                } else {
                    -d + b.l * (1.0 - xi[k])
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.concat())
}

/// `Σ_{C⁺} λ_i x_i x_iᵀ − Σ_{C⁻} λ_j x_j x_jᵀ`, the derivative of `⟨λ, h⟩` in `W`.
pub fn grad_h_contraction(lambda: &DualVector, pc: &PairConstraints) -> Result<DMatrix<f64>> {
    grad_h_contraction_with(Execution::default(), lambda, pc)
}

pub fn grad_h_contraction_with(exec: Execution, lambda: &DualVector, pc: &PairConstraints) -> Result<DMatrix<f64>> {
    check_dim("dual vector", pc.len(), lambda.len())?;
    let d = pc.dim();
    let lam = lambda.values();
    // Accumulate the upper triangle only and mirror it, so the result is
    // exactly symmetric.
    let mut acc = chunked_reduce(
        exec,
        pc.len(),
        || DMatrix::<f64>::zeros(d, d),
        |m, k| {
            if lam[k] == 0.0 {
                return;
            }
            let c = if pc.is_similar(k) { lam[k] } else { -lam[k] };
            let x = pc.row(k);
            for j in 0..d {
                let cx = c * x[j];
                for i in 0..=j {
                    m[(i, j)] += cx * x[i];
                }
            }
        },
        |a, b| a + b,
    );
    for j in 0..d {
        for i in 0..j {
            acc[(j, i)] = acc[(i, j)];
        }
    }
    Ok(acc)
}
