//! Dense linear-algebra helpers on top of nalgebra: symmetric spectra,
//! semidefinite projections, block assembly, and an ordered real Schur form.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

const SCHUR_MAX_ITER: usize = 10_000;

/// Real Schur factorization of `m`. The Francis iteration occasionally
/// cycles on matrices with exact spectral symmetry (Hamiltonians); in that
/// case the factorization of a Householder-rotated copy `H m H` is returned
/// together with `H`, so that `m = (H Z) S (H Z)ᵀ`.
fn real_schur<T: Real>(m: &DMatrix<T>) -> Result<(Option<DMatrix<T>>, Schur<T, nalgebra::Dyn>)> {
    for factor in [1.0, 64.0] {
        if let Some(s) = Schur::try_new(m.clone(), T::eps() * T::lit(factor), SCHUR_MAX_ITER) {
            return Ok((None, s));
        }
    }
    let n = m.nrows();
    for seed in 1..=4 {
        let v = DVector::from_fn(n, |i, _| T::lit(((i + 1) * (seed + 2)) as f64).sin());
        let h = DMatrix::identity(n, n) - &v * v.transpose() * (T::lit(2.0) / v.norm_squared());
        let rotated = &h * m * &h;
        if let Some(s) = Schur::try_new(rotated, T::eps() * T::lit(8.0), SCHUR_MAX_ITER) {
            return Ok((Some(h), s));
        }
    }
    Err(Error::numerical("Schur iteration did not converge"))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut ev: Vec<T> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(ev)
}

pub fn lambda_min<T: Real>(m: &DMatrix<T>) -> T {
    let ev = sym_eigenvalues(m);
    if ev.is_empty() {
        T::zero()
    } else {
        ev[0]
    }
}

pub fn lambda_max<T: Real>(m: &DMatrix<T>) -> T {
    let ev = sym_eigenvalues(m);
    if ev.is_empty() {
        T::zero()
    } else {
        ev[ev.len() - 1]
    }
}

/// Projection (Frobenius) of a symmetric matrix onto `{S : S ⪰ floor·I}`.
pub fn project_psd<T: Real>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let clipped = eig.eigenvalues.map(|l| if l < floor { floor } else { l });
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * clipped[j]);
    symmetrize(&(scaled * v.transpose()))
}

pub fn singular_values<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

pub fn sigma_max<T: Real>(m: &DMatrix<T>) -> T {
    singular_values(m).iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a })
}

pub fn sigma_min<T: Real>(m: &DMatrix<T>) -> T {
    let s = singular_values(m);
    if s.is_empty() {
        return T::zero();
    }
    s.iter().copied().fold(s[0], |a, b| if b < a { b } else { a })
}

/// Modulus of a complex number.
pub fn cabs<T: Real>(z: &Complex<T>) -> T {
    z.re.hypot(z.im)
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &b| if b.abs() > a { b.abs() } else { a })
}

pub fn max_abs_diff<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    max_abs(&(a - b))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let (_, schur) = real_schur(m)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let ev = eigenvalues(m)?;
    ev.iter()
        .map(|z| z.re)
        .reduce(|a, b| if b > a { b } else { a })
        .ok_or_else(|| Error::domain("empty matrix has no spectrum"))
}

pub fn inverse<T: Real>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::domain(format!("{what} is singular")))
}

/// Solves `m X = rhs` by LU with partial pivoting.
pub fn solve<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::domain(format!("{what} is singular")))
}

/// Assembles a block matrix from row-major blocks. Every block in a block
/// row must share its row count and every block column its column count.
pub fn block<T: Real>(rows: &[&[&DMatrix<T>]]) -> DMatrix<T> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (bi, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), widths.len(), "ragged block row {bi}");
        let mut c0 = 0;
        for (bj, b) in row.iter().enumerate() {
            assert_eq!(
                (b.nrows(), b.ncols()),
                (heights[bi], widths[bj]),
                "block ({bi},{bj}) has inconsistent shape"
            );
            out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(*b);
            c0 += widths[bj];
        }
        r0 += heights[bi];
    }
    out
}

pub fn block_diag<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn sub<T: Real>(m: &DMatrix<T>, r: usize, c: usize, nr: usize, nc: usize) -> DMatrix<T> {
    m.view((r, c), (nr, nc)).into_owned()
}

pub fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

/// Solves the Lyapunov equation `AᵀX + XA + Q = 0` through its Kronecker
/// form; intended for the small orders handled here.
pub fn lyapunov<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    // vec(AᵀX + XA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X), column-major.
    let op = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|&v| -v));
    let x = solve(&op, &rhs, "Lyapunov operator")?;
    Ok(symmetrize(&DMatrix::from_iterator(n, n, x.iter().copied())))
}

/// Balancing transformation of a stable realization by the square-root
/// method: with `x = T x̃`, the Gramians of `(T⁻¹AT, T⁻¹B, CT)` are equal and
/// diagonal. Returns `(T, T⁻¹)`, or `None` when a Gramian is numerically
/// singular or the transformation is too ill-conditioned to be useful.
pub fn balancing_transform<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
    let wc = lyapunov(&a.transpose(), &(b * b.transpose())).ok()?;
    let wo = lyapunov(a, &(c.transpose() * c)).ok()?;
    let lc = wc.cholesky()?.unpack();
    let lo = wo.cholesky()?.unpack();
    let svd = (lo.transpose() * &lc).svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(T::zero(), |x, y| x.max(y));
    if s.iter().any(|&v| !(v > smax * T::lit(1e-10))) {
        return None;
    }
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let inv_root = DMatrix::from_diagonal(&s.map(|v| T::one() / v.sqrt()));
    let t = &lc * v * &inv_root;
    let t_inv = &inv_root * u.transpose() * lo.transpose();
    Some((t, t_inv))
}

/// Real Schur form `M = Z S Zᵀ` whose leading `n_selected` columns of `Z`
/// span the invariant subspace of the selected eigenvalues.
#[derive(Debug, Clone)]
pub struct OrderedSchur<T: Real> {
    pub z: DMatrix<T>,
    pub s: DMatrix<T>,
    pub n_selected: usize,
    pub eigenvalues: Vec<Complex<T>>,
}

/// Computes a real Schur decomposition and reorders it so that eigenvalues
/// for which `select` is true come first. Adjacent diagonal blocks are
/// swapped with orthogonal transformations built from the small Sylvester
/// equation coupling them.
pub fn ordered_schur<T: Real>(
    m: &DMatrix<T>,
    select: impl Fn(Complex<T>) -> bool,
) -> Result<OrderedSchur<T>> {
    let n = m.nrows();
    let (rotation, schur) = real_schur(m)?;
    let (mut z, mut s) = schur.unpack();
    if let Some(h) = rotation {
        z = h * z;
    }
    for j in 0..n {
        for i in (j + 2)..n {
            s[(i, j)] = T::zero();
        }
    }

    // Partition the quasi-triangular factor into 1x1 and 2x2 diagonal blocks.
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && s[(i + 1, i)] != T::zero() {
            sizes.push(2);
            i += 2;
        } else {
            sizes.push(1);
            i += 1;
        }
    }
    let block_eigs = |s: &DMatrix<T>, start: usize, size: usize| -> Vec<Complex<T>> {
        if size == 1 {
            vec![Complex::new(s[(start, start)], T::zero())]
        } else {
            let (a, b, c, d) = (
                s[(start, start)],
                s[(start, start + 1)],
                s[(start + 1, start)],
                s[(start + 1, start + 1)],
            );
            let half_tr = (a + d) * T::lit(0.5);
            let disc = (a - d) * (a - d) * T::lit(0.25) + b * c;
            if disc >= T::zero() {
                let r = disc.sqrt();
                vec![Complex::new(half_tr + r, T::zero()), Complex::new(half_tr - r, T::zero())]
            } else {
                let r = (-disc).sqrt();
                vec![Complex::new(half_tr, r), Complex::new(half_tr, -r)]
            }
        }
    };
    let selected = |s: &DMatrix<T>, start: usize, size: usize| -> bool {
        block_eigs(s, start, size).into_iter().any(&select)
    };

    // Bubble selected blocks towards the top.
    let mut changed = true;
    while changed {
        changed = false;
        let mut start = 0;
        for k in 0..sizes.len().saturating_sub(1) {
            let (p, q) = (sizes[k], sizes[k + 1]);
            if !selected(&s, start, p) && selected(&s, start + p, q) {
                swap_blocks(&mut s, &mut z, start, p, q)?;
                sizes.swap(k, k + 1);
                changed = true;
                start += q;
            } else {
                start += p;
            }
        }
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut n_selected = 0;
    let mut start = 0;
    let mut counting = true;
    for &size in &sizes {
        let eigs = block_eigs(&s, start, size);
        if counting && eigs.iter().any(|e| select(*e)) {
            n_selected += size;
        } else {
            counting = false;
        }
        eigenvalues.extend(eigs);
        start += size;
    }
    Ok(OrderedSchur {
        z,
        s,
        n_selected,
        eigenvalues,
    })
}

/// Swaps the adjacent diagonal blocks of sizes `p` and `q` starting at `k`.
fn swap_blocks<T: Real>(
    s: &mut DMatrix<T>,
    z: &mut DMatrix<T>,
    k: usize,
    p: usize,
    q: usize,
) -> Result<()> {
    let n = s.nrows();
    let a11 = sub(s, k, k, p, p);
    let a12 = sub(s, k, k + p, p, q);
    let a22 = sub(s, k + p, k + p, q, q);

    // A11 X - X A22 = -A12, vectorised column-major.
    let pq = p * q;
    let mut kron = DMatrix::<T>::zeros(pq, pq);
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                kron[(row, j * p + l)] += a11[(i, l)];
            }
            for l in 0..q {
                kron[(row, l * p + i)] -= a22[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(pq, (0..q).flat_map(|j| (0..p).map(move |i| (i, j))).map(|(i, j)| -a12[(i, j)]));
    let x = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("Schur block swap: blocks share eigenvalues"))?;

    // Square completion of [X; I] so that the QR factor is a full orthogonal matrix.
    let mut basis = DMatrix::<T>::zeros(p + q, p + q);
    for j in 0..q {
        for i in 0..p {
            basis[(i, j)] = x[j * p + i];
        }
        basis[(p + j, j)] = T::one();
    }
    for i in 0..p {
        basis[(i, q + i)] = T::one();
    }
    let qf = basis.qr().q();

    let w = p + q;
    let rows = sub(s, k, 0, w, n);
    s.view_mut((k, 0), (w, n)).copy_from(&(qf.transpose() * rows));
    let cols = sub(s, 0, k, n, w);
    s.view_mut((0, k), (n, w)).copy_from(&(cols * &qf));
    let zc = sub(z, 0, k, n, w);
    z.view_mut((0, k), (n, w)).copy_from(&(zc * &qf));

    for j in k..(k + q) {
        for i in (k + q)..(k + w) {
            s[(i, j)] = T::zero();
        }
    }
    for j in 0..n {
        for i in (j + 2)..n {
            s[(i, j)] = T::zero();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ordered_schur_puts_stable_block_first() {
        for seed in 0..40 {
            let n = 2 + (seed as usize % 7);
            let m = random(n, seed);
            let os = ordered_schur(&m, |e| e.re < 0.0).unwrap();
            let back = &os.z * &os.s * os.z.transpose();
            assert!(max_abs_diff(&back, &m) < 1e-10, "seed {seed}");
            let ortho = os.z.transpose() * &os.z;
            assert!(max_abs_diff(&ortho, &DMatrix::identity(n, n)) < 1e-12);
            let n_stable = eigenvalues(&m).unwrap().iter().filter(|e| e.re < 0.0).count();
            assert_eq!(os.n_selected, n_stable, "seed {seed}");
            for (i, e) in os.eigenvalues.iter().enumerate() {
                assert_eq!(e.re < 0.0, i < n_stable, "seed {seed}: {:?}", os.eigenvalues);
            }
            // Leading columns span an invariant subspace.
            let k = os.n_selected;
            if k > 0 && k < n {
                let z1 = sub(&os.z, 0, 0, n, k);
                let mz = &m * &z1;
                let proj = &z1 * (z1.transpose() * &mz);
                assert!(max_abs_diff(&mz, &proj) < 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn psd_projection_is_idempotent_and_floored() {
        let m = symmetrize(&random(5, 3));
        let p = project_psd(&m, 0.1);
        assert!(lambda_min(&p) >= 0.1 - 1e-12);
        assert!(max_abs_diff(&project_psd(&p, 0.1), &p) < 1e-12);
    }

    #[test]
    fn block_assembly_places_blocks() {
        let a = DMatrix::from_element(1, 2, 1.0);
        let b = DMatrix::from_element(1, 1, 2.0);
        let c = DMatrix::from_element(2, 2, 3.0);
        let d = DMatrix::from_element(2, 1, 4.0);
        let m = block(&[&[&a, &b], &[&c, &d]]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(2, 0)], 3.0);
        assert_eq!(m[(2, 2)], 4.0);
    }

    #[test]
    fn spectral_abscissa_of_triangular() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -3.0]);
        assert_relative_eq!(spectral_abscissa(&m).unwrap(), -1.0, epsilon = 1e-14);
    }
}
