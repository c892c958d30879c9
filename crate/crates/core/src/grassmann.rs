//! Subspace geometry on the Grassmann manifold `Gr(K, p)`.
//!
//! A point is the span of an orthonormal basis; every function here depends
//! on the basis only through its projection matrix `P = VVᵀ`, so results are
//! unchanged when the basis is rotated by any `K x K` orthogonal matrix.
//!
//! The barycenter of points `V_1 … V_m` under the projection metric,
//!
//! ```text
//! argmin_{VᵀV = I} Σ_i |VVᵀ - V_i V_iᵀ|_F²
//! ```
//!
//! is the span of the top-`K` eigenvectors of the average projection
//! `Σ̃ = (1/m) Σ_i V_i V_iᵀ`: expanding the squares leaves
//! `-2 tr(Vᵀ (Σ_i P_i) V)` as the only term that depends on `V`.

use crate::error::{Error, Result};
use crate::matrix::{sym_eig_topk, OrthonormalBasis, SymMatrix, DEFAULT_TOL};

/// Representative of an equivalence class of bases with a common span.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePoint {
    basis: OrthonormalBasis,
}

impl SubspacePoint {
    pub fn new(basis: OrthonormalBasis) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn into_basis(self) -> OrthonormalBasis {
        self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.ambient_dim()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

impl From<OrthonormalBasis> for SubspacePoint {
    fn from(basis: OrthonormalBasis) -> Self {
        Self::new(basis)
    }
}

/// `P = VVᵀ`.
pub fn projection(v: &SubspacePoint) -> SymMatrix {
    let cols = v.basis.columns();
    let (p, k) = cols.shape();
    SymMatrix::from_upper_fn(p, |i, j| (0..k).map(|c| cols.get(i, c) * cols.get(j, c)).sum())
        .expect("orthonormal entries are bounded")
}

fn check_compatible(a: &SubspacePoint, b: &SubspacePoint) -> Result<()> {
    if a.ambient_dim() != b.ambient_dim() || a.rank() != b.rank() {
        return Err(Error::Dimension(format!(
            "subspaces of Gr({}, {}) and Gr({}, {})",
            a.rank(),
            a.ambient_dim(),
            b.rank(),
            b.ambient_dim()
        )));
    }
    Ok(())
}

/// Projection metric `ρ(A, B) = |AAᵀ - BBᵀ|_F`, in `[0, sqrt(2K)]`.
pub fn rho(a: &SubspacePoint, b: &SubspacePoint) -> Result<f64> {
    check_compatible(a, b)?;
    projection(a).sub(&projection(b)).map(|d| d.frobenius_norm())
}

/// `|AᵀB|_F² = tr(AAᵀBBᵀ)`.
fn overlap(a: &SubspacePoint, b: &SubspacePoint) -> Result<f64> {
    let g = a.basis.columns().t_matmul(b.basis.columns())?;
    Ok(g.as_slice().iter().map(|x| x * x).sum())
}

/// Normalized distance `ρ₁ = sqrt(1 - tr(AAᵀBBᵀ)/K)`, in `[0, 1]`:
/// 0 for equal spans, 1 for orthogonal spans, and `ρ = sqrt(2K) ρ₁`.
pub fn rho1(a: &SubspacePoint, b: &SubspacePoint) -> Result<f64> {
    check_compatible(a, b)?;
    let k = a.rank() as f64;
    let radicand = 1.0 - overlap(a, b)? / k;
    debug_assert!(radicand >= -1e-12, "negative radicand {radicand}");
    Ok(radicand.clamp(0.0, 1.0).sqrt())
}

/// Average projection `(1/m) Σ_i V_i V_iᵀ`.
pub fn average_projection(points: &[SubspacePoint]) -> Result<SymMatrix> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot average an empty set of subspaces".into()))?;
    for q in points {
        check_compatible(first, q)?;
    }
    let p = first.ambient_dim();
    let k = first.rank();
    let mut acc = vec![0.0; p * p];
    for q in points {
        let cols = q.basis.columns();
        for j in 0..p {
            for i in 0..=j {
                acc[j * p + i] += (0..k).map(|c| cols.get(i, c) * cols.get(j, c)).sum::<f64>();
            }
        }
    }
    let m = points.len() as f64;
    SymMatrix::from_upper_fn(p, |i, j| acc[j * p + i] / m)
}

/// Barycenter of `points` under the projection metric together with the
/// average projection it was computed from.
pub fn barycenter(points: &[SubspacePoint], k: usize) -> Result<(SubspacePoint, SymMatrix)> {
    let avg = average_projection(points)?;
    if k != points[0].rank() {
        return Err(Error::Dimension(format!(
            "barycenter rank {k} differs from the points' rank {}",
            points[0].rank()
        )));
    }
    let eig = sym_eig_topk(&avg, k, DEFAULT_TOL)?;
    Ok((SubspacePoint::new(eig.basis), avg))
}

/// `Σ_i ρ(V, V_i)²`, the barycenter objective.
pub fn sum_sq_rho(v: &SubspacePoint, points: &[SubspacePoint]) -> Result<f64> {
    points.iter().map(|q| rho(v, q).map(|r| r * r)).sum()
}
