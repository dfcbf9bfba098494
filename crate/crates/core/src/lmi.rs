//! Feasibility of affine linear matrix inequalities by alternating
//! projections.
//!
//! Each constraint is `F_i(x) = F_i0 + Σ_k x_k F_ik ⪰ f_i·I` with symmetric
//! coefficients. The iteration alternates between projecting every `F_i(x)`
//! onto its shifted semidefinite cone and projecting the resulting targets
//! back onto the range of the affine map, a least-squares solve whose normal
//! equations are factored once. Steps are extrapolated along the
//! least-squares correction, which keeps the iteration Fejér-monotone while
//! cutting the iteration count on thin feasible sets by orders of magnitude.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Cap on the extrapolation factor of a single step.
const MAX_EXTRAPOLATION: f64 = 1e4;

/// A symmetric-matrix-valued affine map `x ↦ base + Σ x_k coeffs[k]`.
#[derive(Debug, Clone)]
pub struct AffineSym<T: Real> {
    pub base: DMatrix<T>,
    pub coeffs: Vec<DMatrix<T>>,
}

impl<T: Real> AffineSym<T> {
    pub fn new(base: DMatrix<T>, coeffs: Vec<DMatrix<T>>) -> Result<Self> {
        let n = base.nrows();
        if base.ncols() != n || coeffs.iter().any(|c| c.shape() != (n, n)) {
            return Err(Error::domain("affine LMI terms must be square and share a size"));
        }
        Ok(AffineSym { base, coeffs })
    }

    pub fn size(&self) -> usize {
        self.base.nrows()
    }

    pub fn eval(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut out = self.base.clone();
        for (c, &xk) in self.coeffs.iter().zip(x.iter()) {
            if xk != T::zero() {
                out += c * xk;
            }
        }
        linalg::symmetrize(&out)
    }
}

/// One constraint `map(x) ⪰ accept·I`. Iterates are pulled toward the
/// tighter cone `⪰ target·I` so that acceptance is reached in finitely many
/// steps.
#[derive(Debug, Clone)]
pub struct LmiBlock<T: Real> {
    pub map: AffineSym<T>,
    pub target: T,
    pub accept: T,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub max_iter: usize,
    /// Iterations between stagnation checks.
    pub stall_window: usize,
    /// Minimum relative decrease of the smallest cone distance seen, per
    /// window, before the problem is declared infeasible.
    pub stall_decrease: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            max_iter: 50_000,
            stall_window: 1_000,
            stall_decrease: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    /// The distance to the cones stopped decreasing while bounded away from 0.
    Infeasible,
    /// Budget exhausted while still making progress.
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult<T: Real> {
    pub x: DVector<T>,
    pub verdict: Verdict,
    pub iterations: usize,
    /// Frobenius distance of the final iterate to the target cones.
    pub distance: T,
    /// `min_i (λ_min(F_i(x)) − accept_i)`; non-negative when feasible.
    pub margin: T,
}

/// Packed, weighted upper triangle so that Euclidean norms of packed vectors
/// equal Frobenius norms of the matrices.
fn pack<T: Real>(m: &DMatrix<T>, out: &mut Vec<T>) {
    let r2 = T::lit(std::f64::consts::SQRT_2);
    for j in 0..m.ncols() {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { m[(i, j)] * r2 });
        }
    }
}

fn unpack<T: Real>(v: &[T], n: usize) -> DMatrix<T> {
    let r2 = T::lit(std::f64::consts::SQRT_2);
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let x = if i == j { v[k] } else { v[k] / r2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Projects onto `{S ⪰ floor·I}` and reports `λ_min`.
fn project_with_min<T: Real>(s: &DMatrix<T>, floor: T) -> (DMatrix<T>, T) {
    let eig = SymmetricEigen::new(s.clone());
    let lmin = eig.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| if b < a { b } else { a });
    if lmin >= floor {
        return (s.clone(), lmin);
    }
    let v = &eig.eigenvectors;
    let clipped = eig.eigenvalues.map(|l| if l < floor { floor } else { l });
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * clipped[j]);
    (linalg::symmetrize(&(scaled * v.transpose())), lmin)
}

/// Searches for `x` with `F_i(x) ⪰ accept_i·I` for every block.
pub fn alternating_projections<T: Real>(
    blocks: &[LmiBlock<T>],
    x0: DVector<T>,
    opts: ProjectionOptions,
) -> Result<ProjectionResult<T>> {
    let m = x0.len();
    if blocks.iter().any(|b| b.map.coeffs.len() != m) {
        return Err(Error::domain("every LMI block needs one coefficient per variable"));
    }
    if blocks.iter().any(|b| b.target < b.accept) {
        return Err(Error::domain("projection target must be at least the acceptance floor"));
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| b.map.size()).collect();
    let rows: usize = sizes.iter().map(|n| n * (n + 1) / 2).sum();

    let mut base = Vec::with_capacity(rows);
    for b in blocks {
        pack(&b.map.base, &mut base);
    }
    let base = DVector::from_vec(base);
    let mut a = DMatrix::<T>::zeros(rows, m);
    for k in 0..m {
        let mut col = Vec::with_capacity(rows);
        for b in blocks {
            pack(&b.map.coeffs[k], &mut col);
        }
        a.set_column(k, &DVector::from_vec(col));
    }
    let mut gram = a.transpose() * &a;
    let ridge = T::lit(1e-14) * (T::one() + gram.trace());
    for i in 0..m {
        gram[(i, i)] += ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("normal equations of the LMI map are not positive definite"))?;
    let pinv = chol.solve(&a.transpose());

    let mut x = x0;
    let mut checkpoint = T::max_value().unwrap();
    let mut best = T::max_value().unwrap();
    let mut distance = T::zero();
    let mut margin = T::zero();
    for it in 0..opts.max_iter {
        let f = &base + &a * &x;
        let mut targets = Vec::with_capacity(rows);
        let mut dist2 = T::zero();
        margin = T::max_value().unwrap();
        let mut off = 0;
        for (b, &n) in blocks.iter().zip(&sizes) {
            let len = n * (n + 1) / 2;
            let s = unpack(&f.as_slice()[off..off + len], n);
            let (proj, lmin) = project_with_min(&s, b.target);
            let gap = lmin - b.accept;
            if gap < margin {
                margin = gap;
            }
            dist2 += (&proj - &s).norm_squared();
            pack(&proj, &mut targets);
            off += len;
        }
        distance = dist2.sqrt();
        if margin >= T::zero() {
            return Ok(ProjectionResult {
                x,
                verdict: Verdict::Feasible,
                iterations: it,
                distance,
                margin,
            });
        }
        if !distance.is_finite() {
            return Err(Error::numerical("alternating projections diverged"));
        }
        if distance < best {
            best = distance;
        }
        if it > 0 && it % opts.stall_window == 0 {
            if best > checkpoint * (T::one() - T::lit(opts.stall_decrease)) {
                return Ok(ProjectionResult {
                    x,
                    verdict: Verdict::Infeasible,
                    iterations: it,
                    distance,
                    margin,
                });
            }
            checkpoint = best;
        }
        // Extrapolated step: with r = targets − F(x) and d = A⁺r, moving by
        // λ = ‖r‖²/‖Ad‖² ≥ 1 along d stays Fejér-monotone w.r.t. the
        // intersection (the supporting halfspaces of the cones still contain it).
        let r = DVector::from_vec(targets) - &f;
        let d = &pinv * &r;
        let ad = (&a * &d).norm_squared();
        let lambda = if ad > T::zero() { (dist2 / ad).min(T::lit(MAX_EXTRAPOLATION)).max(T::one()) } else { T::one() };
        x += d * lambda;
    }
    Ok(ProjectionResult {
        x,
        verdict: Verdict::Undetermined,
        iterations: opts.max_iter,
        distance,
        margin,
    })
}

/// Basis of symmetric `n×n` matrices, ordered by the packed upper triangle.
pub fn sym_basis<T: Real>(n: usize) -> Vec<DMatrix<T>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = T::one();
            e[(j, i)] = T::one();
            out.push(e);
        }
    }
    out
}

/// Coordinates of a symmetric matrix in [`sym_basis`].
pub fn sym_coords<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Basis of general `r×c` matrices, column-major.
pub fn full_basis<T: Real>(r: usize, c: usize) -> Vec<DMatrix<T>> {
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            let mut e = DMatrix::zeros(r, c);
            e[(i, j)] = T::one();
            out.push(e);
        }
    }
    out
}
