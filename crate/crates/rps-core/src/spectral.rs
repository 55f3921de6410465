//! Symmetric eigendecomposition and the hyperbolic stable/unstable
//! splitting that drives every forward/backward integral in this crate.
//!
//! For a symmetric matrix `A` with no eigenvalue inside `(-eps_hyp, eps_hyp)`
//! the state space splits into the span of eigenvectors with positive
//! eigenvalues (modes damped by `exp(-A t)` forward in time, "stable") and
//! the span of eigenvectors with negative eigenvalues (damped backward in
//! time, "unstable"). The semigroup is applied exactly in the eigenbasis,
//! so downstream quadrature is limited only by how the integrand is frozen,
//! never by matrix-exponential error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default half-width of the forbidden spectral band around zero.
pub const DEFAULT_EPS_HYP: f64 = 1e-8;

/// Relative symmetry tolerance for `decompose` inputs.
const SYMMETRY_RTOL: f64 = 1e-10;
/// Relative off-diagonal target for the Jacobi sweep.
const JACOBI_RTOL: f64 = 1e-12;
/// Maximum number of Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 100;
/// Relative eigenpair residual accepted after the sweep converges.
const RESIDUAL_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(
        "matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {defect:.3e} exceeds {tol:.3e}"
    )]
    NotSymmetric { i: usize, j: usize, defect: f64, tol: f64 },
    #[error("matrix is not hyperbolic: eigenvalue {value:.6e} lies within {eps:.3e} of zero")]
    NotHyperbolic { value: f64, eps: f64 },
    #[error(
        "eigensolve failed: off-diagonal norm {off:.3e} above target {target:.3e} \
         after {sweeps} sweeps"
    )]
    EigensolveFailure { off: f64, target: f64, sweeps: usize },
}

/// Which half of the hyperbolic splitting an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    /// Positive eigenvalues: damped by the semigroup forward in time.
    Stable,
    /// Negative eigenvalues: damped backward in time.
    Unstable,
}

/// Eigendecomposition of a symmetric hyperbolic matrix together with the
/// spectral projectors onto its stable and unstable subspaces.
///
/// Eigenvalues are sorted ascending, so indices `0..n_unstable` are the
/// negative (unstable) directions and the rest are positive (stable).
#[derive(Debug, Clone)]
pub struct HyperbolicSplitting {
    dim: usize,
    eigenvalues: DVector<f64>,
    basis: DMatrix<f64>,
    n_unstable: usize,
    proj_stable: DMatrix<f64>,
    proj_unstable: DMatrix<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted ascending and the matching orthonormal basis
/// as columns. Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||A||_F` (at most 100 sweeps). Robust and dependency-free for
/// the moderate dimensions this crate targets.
pub fn symmetric_eigendecomposition(
    a: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), SpectralError> {
    assert_eq!(a.nrows(), a.ncols(), "eigendecomposition needs a square matrix");
    let n = a.nrows();
    let norm = a.norm();
    let sym_tol = SYMMETRY_RTOL * norm.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let defect = (a[(i, j)] - a[(j, i)]).abs();
            if defect > sym_tol {
                return Err(SpectralError::NotSymmetric { i, j, defect, tol: sym_tol });
            }
        }
    }

    let mut m = DMatrix::zeros(n, n);
    // Work on the symmetrized copy so the sweep sees an exactly symmetric input.
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut v = DMatrix::identity(n, n);
    let target = JACOBI_RTOL * norm;

    let off_norm = |m: &DMatrix<f64>| {
        let mut sum = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                sum += 2.0 * m[(p, q)] * m[(p, q)];
            }
        }
        sum.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > target {
        if sweeps >= MAX_SWEEPS {
            return Err(SpectralError::EigensolveFailure {
                off: off_norm(&m),
                target,
                sweeps,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Exact update of the rotated pair; off-diagonal entry vanishes.
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = m[(k, p)];
                        let akq = m[(k, q)];
                        m[(k, p)] = c * akp - s * akq;
                        m[(p, k)] = m[(k, p)];
                        m[(k, q)] = s * akp + c * akq;
                        m[(q, k)] = m[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut basis = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &v.column(src));
    }

    // Eigenpair residual guards against a converged-but-wrong sweep.
    let res_tol = RESIDUAL_RTOL * norm.max(f64::MIN_POSITIVE);
    for i in 0..n {
        let col = basis.column(i);
        let res = (a * col - eigenvalues[i] * col).norm();
        if res > res_tol {
            return Err(SpectralError::EigensolveFailure { off: res, target: res_tol, sweeps });
        }
    }

    Ok((eigenvalues, basis))
}

/// Decompose a symmetric matrix and split its spectrum about zero.
///
/// Fails with [`SpectralError::NotHyperbolic`] if any eigenvalue lies within
/// `eps_hyp` of zero; either subspace (but not both) may be trivial.
pub fn decompose(a: &DMatrix<f64>, eps_hyp: f64) -> Result<HyperbolicSplitting, SpectralError> {
    let (eigenvalues, basis) = symmetric_eigendecomposition(a)?;
    let dim = eigenvalues.len();
    for i in 0..dim {
        if eigenvalues[i].abs() < eps_hyp {
            return Err(SpectralError::NotHyperbolic { value: eigenvalues[i], eps: eps_hyp });
        }
    }
    let n_unstable = (0..dim).filter(|&i| eigenvalues[i] < 0.0).count();

    let mut proj_stable = DMatrix::zeros(dim, dim);
    let mut proj_unstable = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let col = basis.column(i);
        let outer = col * col.transpose();
        if eigenvalues[i] > 0.0 {
            proj_stable += outer;
        } else {
            proj_unstable += outer;
        }
    }

    Ok(HyperbolicSplitting { dim, eigenvalues, basis, n_unstable, proj_stable, proj_unstable })
}

impl HyperbolicSplitting {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Eigenvalues sorted ascending; the first `n_unstable` are negative.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenbasis, one column per eigenvalue.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn n_unstable(&self) -> usize {
        self.n_unstable
    }

    pub fn n_stable(&self) -> usize {
        self.dim - self.n_unstable
    }

    /// Index `i` belongs to the stable (positive eigenvalue) subspace.
    pub fn is_stable_index(&self, i: usize) -> bool {
        i >= self.n_unstable
    }

    /// Smallest positive eigenvalue: the slowest forward decay rate.
    /// `None` when the stable subspace is trivial.
    pub fn mu_stable(&self) -> Option<f64> {
        if self.n_unstable < self.dim {
            Some(self.eigenvalues[self.n_unstable])
        } else {
            None
        }
    }

    /// Largest negative eigenvalue: the slowest backward decay rate
    /// (a negative number). `None` when the unstable subspace is trivial.
    pub fn mu_unstable(&self) -> Option<f64> {
        if self.n_unstable > 0 {
            Some(self.eigenvalues[self.n_unstable - 1])
        } else {
            None
        }
    }

    /// Decay prefactor in the semigroup bounds; exactly 1 for symmetric
    /// matrices because the eigenbasis is orthonormal.
    pub fn decay_c(&self) -> f64 {
        1.0
    }

    pub fn projector(&self, subspace: Subspace) -> &DMatrix<f64> {
        match subspace {
            Subspace::Stable => &self.proj_stable,
            Subspace::Unstable => &self.proj_unstable,
        }
    }

    pub fn project(&self, subspace: Subspace, v: &DVector<f64>) -> DVector<f64> {
        self.projector(subspace) * v
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn to_eigen(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * v
    }

    /// Reassemble a vector from eigenbasis coordinates.
    pub fn from_eigen(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.basis * coeffs
    }

    /// Apply `exp(-A t)` exactly: scale each eigencoordinate by
    /// `exp(-mu_i t)`. Valid for either sign of `t`.
    pub fn semigroup_apply(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.to_eigen(v);
        for i in 0..self.dim {
            coeffs[i] *= (-self.eigenvalues[i] * t).exp();
        }
        self.from_eigen(&coeffs)
    }
}
