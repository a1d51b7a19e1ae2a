//! The manifold of n×n symmetric positive definite matrices.
//!
//! Points are [`SpdMatrix`] values. The geometry used here is the one needed
//! by the primal-dual solver: the LogDet divergence
//!
//! ```text
//! d²(W, W0) = tr(W W0⁻¹) − log det(W W0⁻¹) − n
//! ```
//!
//! as the proximal distance, tangent projection by symmetrization (the
//! tangent space at a full-rank SPD point is all of Sym(n)), and the
//! retraction that maps `W + ξ` back to the cone by clipping eigenvalues at
//! [`EPS_PD`].
//!
//! Every operation that produces a point symmetrizes its output with
//! `(A + Aᵀ)/2` before the invariant check.

mod io;

pub use io::{matrix_from_csv, matrix_to_csv, MatrixJson};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Eigenvalue floor for SPD points. Retraction clips to this value so the
/// iterate stays invertible.
pub const EPS_PD: f64 = 1e-8;

/// Relative tolerance of the symmetry invariant.
pub const SYMMETRY_RTOL: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITERS: usize = 10_000;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `max |A[i,j] − A[j,i]|`.
pub fn symmetry_residual(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_square(what: &str, a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!("{what} must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("{what} must be non-empty")));
    }
    Ok(())
}

fn check_symmetric(what: &str, a: &DMatrix<f64>) -> Result<()> {
    let tol = SYMMETRY_RTOL * max_abs(a).max(1.0);
    let res = symmetry_residual(a);
    if res > tol {
        return Err(Error::InvariantViolation(format!("{what} is not symmetric: residual {res:e} > {tol:e}")));
    }
    Ok(())
}

/// A symmetric positive definite matrix with smallest eigenvalue at least
/// [`EPS_PD`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates `m` and stores its symmetrized copy.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square("SPD matrix", &m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("SPD matrix has non-finite entries".into()));
        }
        check_symmetric("SPD matrix", &m)?;
        let sym = symmetrize(&m);
        let min = sym.symmetric_eigenvalues().min();
        if min < EPS_PD {
            return Err(Error::InvariantViolation(format!("smallest eigenvalue {min:e} is below {EPS_PD:e}")));
        }
        Ok(SpdMatrix { inner: sym })
    }

    /// Caller guarantees the invariants already hold.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix { inner: symmetrize(&m) }
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix { inner: DMatrix::identity(n, n) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("scale factor must be positive, got {c}")));
        }
        Self::new(&self.inner * c)
    }

    pub fn eigen(&self) -> Result<EigenDecomposition> {
        EigenDecomposition::of(&self.inner)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.inner.symmetric_eigenvalues().min()
    }

    /// `vᵀ W v`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        check_dim("vector length", self.dim(), v.len())?;
        Ok(quad_form(&self.inner, v))
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }
}

/// `vᵀ A v` without forming intermediate vectors.
pub(crate) fn quad_form(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = a.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += v[i] * col[i];
        }
        acc += s * v[j];
    }
    acc
}

/// Symmetric eigendecomposition `A = Q diag(σ) Qᵀ`, eigenvalues descending.
///
/// Eigenvector signs are normalized so the first component with magnitude
/// above `1e-12` is positive, which makes reconstructions reproducible.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn of(a: &DMatrix<f64>) -> Result<Self> {
        check_square("matrix", a)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("eigendecomposition of a non-finite matrix".into()));
        }
        let sym = symmetrize(a);
        let eig = SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITERS)
            .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
        let n = a.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));

        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvalues.push(eig.eigenvalues[src]);
            let col = eig.eigenvectors.column(src);
            let sign = col.iter().find(|v| v.abs() > 1e-12).map_or(1.0, |v| v.signum());
            eigenvectors.set_column(dst, &(col * sign));
        }
        Ok(EigenDecomposition { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }

    /// `Σ f(σ_i) q_i q_iᵀ`, symmetrized.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, &s) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(f(s));
        }
        symmetrize(&(scaled * self.eigenvectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|s| s)
    }
}

/// `d²(W, W0) = tr(W W0⁻¹) − log det(W W0⁻¹) − n`.
///
/// Evaluated through the eigenvalues `μ` of `L⁻¹ W L⁻ᵀ` (with `W0 = L Lᵀ`) as
/// `Σ (μ − 1) − ln(μ)`, which is termwise nonnegative and avoids the
/// cancellation of the direct trace/logdet form near `W = W0`.
pub fn logdet_divergence(w: &SpdMatrix, w0: &SpdMatrix) -> Result<f64> {
    check_dim("LogDet divergence operands", w0.dim(), w.dim())?;
    let chol = w0
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvariantViolation("reference matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l.solve_lower_triangular(w.as_matrix()).ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let m = l.solve_lower_triangular(&x.transpose()).ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mu = symmetrize(&m).symmetric_eigenvalues();
    let mut total = 0.0;
    for &v in mu.iter() {
        if !(v > 0.0) {
            return Err(Error::Numeric(format!("relative eigenvalue {v:e} is not positive")));
        }
        let delta = v - 1.0;
        total += (delta - delta.ln_1p()).max(0.0);
    }
    Ok(total)
}

/// `∂d²(W, W0)/∂W = W0⁻¹ − W⁻¹`, unscaled.
pub fn logdet_divergence_gradient(w: &SpdMatrix, w0: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_dim("LogDet gradient operands", w0.dim(), w.dim())?;
    let w_inv = spd_inverse(w)?;
    let w0_inv = spd_inverse(w0)?;
    Ok(symmetrize(&(w0_inv.as_matrix() - w_inv.as_matrix())))
}

/// Tangent-space projection at a full-rank point: `(G + Gᵀ)/2`.
pub fn project_to_tangent(euclidean_grad: &DMatrix<f64>, w: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_square("gradient", euclidean_grad)?;
    check_dim("gradient dimension", w.dim(), euclidean_grad.nrows())?;
    Ok(symmetrize(euclidean_grad))
}

/// `R_W(ξ)`: the nearest point of the clipped cone to `W + ξ`.
///
/// If `W + ξ` already has all eigenvalues ≥ [`EPS_PD`] it is returned as is
/// (symmetrized); otherwise eigenvalues below the floor are raised to it.
pub fn retract(w: &SpdMatrix, step: &DMatrix<f64>) -> Result<SpdMatrix> {
    check_square("retraction step", step)?;
    check_dim("retraction step dimension", w.dim(), step.nrows())?;
    check_symmetric("retraction step", step)?;
    let candidate = symmetrize(&(w.as_matrix() + step));
    // Cheap interior test: if `candidate − τI` factors, every eigenvalue is
    // above the floor (τ covers Cholesky's backward error) and the clip is a no-op.
    let n = candidate.nrows();
    let tau = EPS_PD + 16.0 * n as f64 * f64::EPSILON * candidate.norm();
    let mut shifted = candidate.clone();
    for i in 0..n {
        shifted[(i, i)] -= tau;
    }
    if shifted.cholesky().is_some() {
        return Ok(SpdMatrix::from_trusted(candidate));
    }
    let eig = EigenDecomposition::of(&candidate)?;
    if eig.min_eigenvalue() >= EPS_PD {
        return Ok(SpdMatrix::from_trusted(candidate));
    }
    // Rounding in Q diag(σ) Qᵀ can push a clipped eigenvalue a few ulps of
    // σ_max below the floor; lift the floor by that margin.
    let n = eig.dim() as f64;
    let top = eig.eigenvalues[0].abs();
    let floor = EPS_PD + 8.0 * n * f64::EPSILON * top;
    let clipped = eig.reconstruct_with(|s| s.max(floor));
    let mut shifted = clipped.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] -= EPS_PD;
    }
    if shifted.cholesky().is_some() {
        return Ok(SpdMatrix::from_trusted(clipped));
    }
    let min = clipped.symmetric_eigenvalues().min();
    if min < EPS_PD {
        return Err(Error::Numeric(format!("retraction produced eigenvalue {min:e} below the floor")));
    }
    Ok(SpdMatrix::from_trusted(clipped))
}

/// Inverse through the eigendecomposition, so the result is exactly symmetric.
pub fn spd_inverse(w: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = w.eigen()?;
    let min = eig.min_eigenvalue();
    if min < EPS_PD {
        return Err(Error::InvariantViolation(format!("cannot invert: eigenvalue {min:e} below {EPS_PD:e}")));
    }
    let top = eig.eigenvalues[0];
    if 1.0 / top < EPS_PD {
        return Err(Error::InvariantViolation(format!(
            "inverse would have eigenvalue {:e} below {EPS_PD:e}",
            1.0 / top
        )));
    }
    Ok(SpdMatrix::from_trusted(eig.reconstruct_with(|s| 1.0 / s)))
}

/// Inverse and log-determinant from one Cholesky factorization. Used on the
/// hot path of the inner solver, where the eigen route is too slow.
/// `log det A` via Cholesky; `None` if `A` is not numerically PD.
pub(crate) fn cholesky_logdet(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..a.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub(crate) fn inverse_and_logdet(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let n = a.nrows();
    let mut logdet = 0.0;
    for i in 0..n {
        logdet += l[(i, i)].ln();
    }
    let inv = symmetrize(&chol.inverse());
    Some((inv, 2.0 * logdet))
}

/// A random SPD matrix `B Bᵀ/n + δ I` with Gaussian `B` and `δ ∈ [0.1, 1)`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> SpdMatrix {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = rng.random_range(0.1..1.0);
    let m = (&b * b.transpose()) / n as f64 + DMatrix::identity(n, n) * shift;
    SpdMatrix::from_trusted(m)
}

/// A random symmetric matrix with standard normal entries.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    symmetrize(&b)
}
