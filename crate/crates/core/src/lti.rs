//! Continuous-time state-space data: plant, full-order dynamic controller,
//! closed-loop assembly, stability and frequency response.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block};
use crate::scalar::Real;

/// Slack added to the stability margin so that marginal spectra
/// (eigenvalues on the imaginary axis up to roundoff) are classified as unstable.
pub const STABILITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nw: usize,
    pub nu: usize,
    pub nz: usize,
    pub ny: usize,
}

/// Generalized plant
/// ```text
/// ẋ = A x + B1 w + B2 u
/// z = C1 x + D11 w + D12 u
/// y = C2 x + D21 w
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Plant<T: Real> {
    pub a: DMatrix<T>,
    pub b1: DMatrix<T>,
    pub b2: DMatrix<T>,
    pub c1: DMatrix<T>,
    pub d11: DMatrix<T>,
    pub d12: DMatrix<T>,
    pub c2: DMatrix<T>,
    pub d21: DMatrix<T>,
    /// Result of [`Plant::check_assumption`], if it has been run.
    pub assumption_checked: Option<bool>,
}

fn expect_shape<T: Real>(block: &'static str, m: &DMatrix<T>, r: usize, c: usize) -> Result<()> {
    if m.shape() == (r, c) {
        Ok(())
    } else {
        Err(Error::Dimension {
            block,
            expected: (r, c),
            found: m.shape(),
        })
    }
}

impl<T: Real> Plant<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<T>,
        b1: DMatrix<T>,
        b2: DMatrix<T>,
        c1: DMatrix<T>,
        d11: DMatrix<T>,
        d12: DMatrix<T>,
        c2: DMatrix<T>,
        d21: DMatrix<T>,
    ) -> Result<Self> {
        let plant = Plant {
            a,
            b1,
            b2,
            c1,
            d11,
            d12,
            c2,
            d21,
            assumption_checked: None,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.a.nrows(),
            nw: self.b1.ncols(),
            nu: self.b2.ncols(),
            nz: self.c1.nrows(),
            ny: self.c2.nrows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if d.nx == 0 {
            return Err(Error::domain("plant state dimension must be at least 1"));
        }
        expect_shape("A", &self.a, d.nx, d.nx)?;
        expect_shape("B1", &self.b1, d.nx, d.nw)?;
        expect_shape("B2", &self.b2, d.nx, d.nu)?;
        expect_shape("C1", &self.c1, d.nz, d.nx)?;
        expect_shape("D11", &self.d11, d.nz, d.nw)?;
        expect_shape("D12", &self.d12, d.nz, d.nu)?;
        expect_shape("C2", &self.c2, d.ny, d.nx)?;
        expect_shape("D21", &self.d21, d.ny, d.nw)?;
        Ok(())
    }

    /// The plant used in the non-degeneracy experiment:
    /// `ẋ = −x + [1 0] w + u`, `z = [x; u]`, `y = x + [0 1] w`.
    pub fn example() -> Self {
        let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, &v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>());
        Plant::new(
            m(1, 1, &[-1.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[1.0]),
            m(2, 1, &[1.0, 0.0]),
            m(2, 2, &[0.0, 0.0, 0.0, 0.0]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 1, &[1.0]),
            m(1, 2, &[0.0, 1.0]),
        )
        .expect("example plant is consistent")
    }

    /// Numerical check of the standing controllability/observability
    /// assumption: `(A,B1)`, `(A,B2)` controllable and `(C1,A)`, `(C2,A)`
    /// observable, by rank of the Kalman matrices at relative tolerance `tol`.
    pub fn check_assumption(&mut self, tol: T) -> bool {
        let at = self.a.transpose();
        let ok = full_rank_krylov(&self.a, &self.b1, tol)
            && full_rank_krylov(&self.a, &self.b2, tol)
            && full_rank_krylov(&at, &self.c1.transpose(), tol)
            && full_rank_krylov(&at, &self.c2.transpose(), tol);
        self.assumption_checked = Some(ok);
        ok
    }
}

fn full_rank_krylov<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, tol: T) -> bool {
    let n = a.nrows();
    if b.ncols() == 0 {
        return false;
    }
    let mut cols = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        cols.push(cur.clone());
        cur = a * cur;
    }
    let refs: Vec<&DMatrix<T>> = cols.iter().collect();
    let k = block(&[&refs[..]]);
    let s = linalg::singular_values(&k);
    let smax = s.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    s.iter().filter(|&&x| x > tol * smax).count() >= n
}

/// Full-order dynamic controller stored as the block matrix
/// `K = [D_K C_K; B_K A_K]` of shape `(nu + nx) × (ny + nx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller<T: Real> {
    k: DMatrix<T>,
    nu: usize,
    ny: usize,
}

impl<T: Real> Controller<T> {
    pub fn from_block(k: DMatrix<T>, nu: usize, ny: usize) -> Result<Self> {
        if k.nrows() <= nu || k.ncols() <= ny || k.nrows() - nu != k.ncols() - ny {
            return Err(Error::Dimension {
                block: "K",
                expected: (nu + k.ncols().saturating_sub(ny), k.ncols()),
                found: k.shape(),
            });
        }
        Ok(Controller { k, nu, ny })
    }

    pub fn from_parts(dk: &DMatrix<T>, ck: &DMatrix<T>, bk: &DMatrix<T>, ak: &DMatrix<T>) -> Result<Self> {
        let (nu, ny, nx) = (dk.nrows(), dk.ncols(), ak.nrows());
        expect_shape("AK", ak, nx, nx)?;
        expect_shape("BK", bk, nx, ny)?;
        expect_shape("CK", ck, nu, nx)?;
        Ok(Controller {
            k: block(&[&[dk, ck], &[bk, ak]]),
            nu,
            ny,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Controller {
            k: DMatrix::zeros(dims.nu + dims.nx, dims.ny + dims.nx),
            nu: dims.nu,
            ny: dims.ny,
        }
    }

    /// Scalar-plant controller `[dk ck; bk ak]`.
    pub fn scalar(dk: T, ck: T, bk: T, ak: T) -> Self {
        Controller {
            k: DMatrix::from_row_slice(2, 2, &[dk, ck, bk, ak]),
            nu: 1,
            ny: 1,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.k
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.k.nrows() - self.nu
    }

    pub fn dk(&self) -> DMatrix<T> {
        linalg::sub(&self.k, 0, 0, self.nu, self.ny)
    }

    pub fn ck(&self) -> DMatrix<T> {
        linalg::sub(&self.k, 0, self.ny, self.nu, self.nx())
    }

    pub fn bk(&self) -> DMatrix<T> {
        linalg::sub(&self.k, self.nu, 0, self.nx(), self.ny)
    }

    pub fn ak(&self) -> DMatrix<T> {
        linalg::sub(&self.k, self.nu, self.ny, self.nx(), self.nx())
    }

    /// `K + t V` for a controller-shaped direction `V`.
    pub fn perturbed(&self, v: &DMatrix<T>, t: T) -> Self {
        Controller {
            k: &self.k + v * t,
            nu: self.nu,
            ny: self.ny,
        }
    }

    /// Controller state change `ξ → S ξ`.
    pub fn similarity(&self, s: &DMatrix<T>) -> Result<Self> {
        let s_inv = linalg::inverse(s, "similarity transform")?;
        Controller::from_parts(&self.dk(), &(self.ck() * &s_inv), &(s * self.bk()), &(s * self.ak() * &s_inv))
    }

    pub fn norm(&self) -> T {
        self.k.norm()
    }

    pub fn check_against(&self, plant: &Plant<T>) -> Result<()> {
        let d = plant.dims();
        expect_shape("K", &self.k, d.nu + d.nx, d.ny + d.nx)?;
        if self.nu != d.nu || self.ny != d.ny {
            return Err(Error::Dimension {
                block: "K",
                expected: (d.nu, d.ny),
                found: (self.nu, self.ny),
            });
        }
        Ok(())
    }
}

/// Closed-loop realization `(A_cl, B_cl, C_cl, D_cl)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
}

impl<T: Real> ClosedLoop<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        expect_shape("Acl", &a, n, n)?;
        expect_shape("Bcl", &b, n, b.ncols())?;
        expect_shape("Ccl", &c, c.nrows(), n)?;
        expect_shape("Dcl", &d, c.nrows(), b.ncols())?;
        Ok(ClosedLoop { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_abscissa(&self) -> Result<T> {
        linalg::spectral_abscissa(&self.a)
    }

    pub fn is_stable(&self, margin: T) -> Result<bool> {
        Ok(self.spectral_abscissa()? < -(margin + T::lit(STABILITY_SLACK)))
    }

    pub(crate) fn require_stable(&self) -> Result<()> {
        let abscissa = self.spectral_abscissa()?;
        if abscissa < -T::lit(STABILITY_SLACK) {
            Ok(())
        } else {
            Err(Error::Unstable {
                abscissa: abscissa.as_f64(),
            })
        }
    }

    /// `T(jω) = C (jωI − A)⁻¹ B + D`, via a linear solve.
    pub fn eval_transfer(&self, omega: T) -> Result<DMatrix<Complex<T>>> {
        let n = self.order();
        let mut m = linalg::to_complex(&(-&self.a));
        for i in 0..n {
            m[(i, i)] += Complex::new(T::zero(), omega);
        }
        let x = m
            .lu()
            .solve(&linalg::to_complex(&self.b))
            .ok_or(Error::PoleOnAxis { omega: omega.as_f64() })?;
        if x.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::PoleOnAxis { omega: omega.as_f64() });
        }
        Ok(linalg::to_complex(&self.c) * x + linalg::to_complex(&self.d))
    }

    /// Largest singular value of `T(jω)`.
    pub fn sigma_max_at(&self, omega: T) -> Result<T> {
        Ok(complex_singular_values(&self.eval_transfer(omega)?)
            .iter()
            .copied()
            .fold(T::zero(), |a, b| if b > a { b } else { a }))
    }

    /// Same system with outputs scaled by `s`.
    pub fn scale_output(&self, s: T) -> Self {
        ClosedLoop {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * s,
            d: &self.d * s,
        }
    }
}

pub(crate) fn complex_singular_values<T: Real>(m: &DMatrix<Complex<T>>) -> DVector<T> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Assembles the closed loop of `plant` and `k`.
pub fn assemble_closed_loop<T: Real>(plant: &Plant<T>, k: &Controller<T>) -> Result<ClosedLoop<T>> {
    plant.validate()?;
    k.check_against(plant)?;
    let (dk, ck, bk, ak) = (k.dk(), k.ck(), k.bk(), k.ak());
    let p = plant;
    let a = block(&[
        &[&(&p.a + &p.b2 * &dk * &p.c2), &(&p.b2 * &ck)],
        &[&(&bk * &p.c2), &ak],
    ]);
    let b = block(&[&[&(&p.b1 + &p.b2 * &dk * &p.d21)], &[&(&bk * &p.d21)]]);
    let c = block(&[&[&(&p.c1 + &p.d12 * &dk * &p.c2), &(&p.d12 * &ck)]]);
    let d = &p.d11 + &p.d12 * &dk * &p.d21;
    Ok(ClosedLoop { a, b, c, d })
}

/// Affine structure of the closed loop in `K`:
/// `A_cl = Ā + B̄ K C̄`, `B_cl = B̄₁ + B̄ K D̄₂₁`, `C_cl = C̄₁ + D̄₁₂ K C̄`,
/// `D_cl = D11 + D̄₁₂ K D̄₂₁`.
#[derive(Debug, Clone)]
pub struct AffineLoop<T: Real> {
    pub a0: DMatrix<T>,
    pub b_bar: DMatrix<T>,
    pub c_bar: DMatrix<T>,
    pub b1_0: DMatrix<T>,
    pub d21_bar: DMatrix<T>,
    pub c1_0: DMatrix<T>,
    pub d12_bar: DMatrix<T>,
    pub d11: DMatrix<T>,
}

impl<T: Real> AffineLoop<T> {
    pub fn of(plant: &Plant<T>) -> Self {
        let d = plant.dims();
        let z = |r, c| DMatrix::<T>::zeros(r, c);
        let i = DMatrix::<T>::identity(d.nx, d.nx);
        AffineLoop {
            a0: linalg::block_diag(&[&plant.a, &z(d.nx, d.nx)]),
            b_bar: linalg::block_diag(&[&plant.b2, &i]),
            c_bar: linalg::block_diag(&[&plant.c2, &i]),
            b1_0: block(&[&[&plant.b1], &[&z(d.nx, d.nw)]]),
            d21_bar: block(&[&[&plant.d21], &[&z(d.nx, d.nw)]]),
            c1_0: block(&[&[&plant.c1, &z(d.nz, d.nx)]]),
            d12_bar: block(&[&[&plant.d12, &z(d.nz, d.nx)]]),
            d11: plant.d11.clone(),
        }
    }
}

/// Stability of the closed loop with margin: `max Re λ(A_cl) < −margin` (minus a 1e-10 slack).
pub fn is_stabilizing<T: Real>(plant: &Plant<T>, k: &Controller<T>, margin: T) -> Result<bool> {
    if margin < T::zero() {
        return Err(Error::domain("stability margin must be non-negative"));
    }
    assemble_closed_loop(plant, k)?.is_stable(margin)
}

/// Grid estimate of the second-order resolvent remainder
/// `max_ω ‖(jω−A−Δ)⁻¹ − (jω−A)⁻¹ − (jω−A)⁻¹Δ(jω−A)⁻¹‖₂`.
pub fn frechet_remainder<T: Real>(a: &DMatrix<T>, delta: &DMatrix<T>, omegas: &[T]) -> Result<T> {
    let n = a.nrows();
    expect_shape("Delta", delta, n, n)?;
    let perturbed = a + delta;
    for (m, what) in [(a, "A"), (&perturbed, "A + Delta")] {
        if linalg::spectral_abscissa(m)? >= -T::lit(STABILITY_SLACK) {
            return Err(Error::domain(format!("{what} is not stable")));
        }
    }
    let dc = linalg::to_complex(delta);
    let mut worst = T::zero();
    for &w in omegas {
        let r0 = resolvent(a, w)?;
        let r1 = resolvent(&perturbed, w)?;
        // R₁ − R₀ − R₀ΔR₀ = R₀ΔR₀ΔR₁ (second resolvent identity), free of cancellation.
        let rem = &r0 * &dc * &r0 * &dc * &r1;
        let s = complex_singular_values(&rem).iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
        if s > worst {
            worst = s;
        }
    }
    Ok(worst)
}

/// Closed-form bound `‖R‖³‖Δ‖²/(1 − ‖R‖‖Δ‖)` on the resolvent remainder with
/// `‖R‖ = max_ω ‖(jω−A)⁻¹‖₂` over `omegas`. `None` when `‖R‖‖Δ‖ ≥ 1`.
pub fn frechet_remainder_bound<T: Real>(a: &DMatrix<T>, delta: &DMatrix<T>, omegas: &[T]) -> Result<Option<T>> {
    let mut r_norm = T::zero();
    for &w in omegas {
        let s = complex_singular_values(&resolvent(a, w)?).iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
        if s > r_norm {
            r_norm = s;
        }
    }
    let d_norm = linalg::sigma_max(delta);
    let q = r_norm * d_norm;
    if q >= T::one() {
        return Ok(None);
    }
    Ok(Some(r_norm * r_norm * r_norm * d_norm * d_norm / (T::one() - q)))
}

/// `(jωI − A)⁻¹`.
pub fn resolvent<T: Real>(a: &DMatrix<T>, omega: T) -> Result<DMatrix<Complex<T>>> {
    let n = a.nrows();
    let mut m = linalg::to_complex(&(-a));
    for i in 0..n {
        m[(i, i)] += Complex::new(T::zero(), omega);
    }
    m.try_inverse().ok_or(Error::PoleOnAxis { omega: omega.as_f64() })
}

// ---------------------------------------------------------------------------
// JSON documents

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[allow(non_snake_case)]
pub struct PlantDoc {
    pub A: Vec<Vec<f64>>,
    pub B1: Vec<Vec<f64>>,
    pub B2: Vec<Vec<f64>>,
    pub C1: Vec<Vec<f64>>,
    pub D11: Vec<Vec<f64>>,
    pub D12: Vec<Vec<f64>>,
    pub C2: Vec<Vec<f64>>,
    pub D21: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[allow(non_snake_case)]
pub struct ControllerDoc {
    pub AK: Vec<Vec<f64>>,
    pub BK: Vec<Vec<f64>>,
    pub CK: Vec<Vec<f64>>,
    pub DK: Vec<Vec<f64>>,
}

pub fn matrix_to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect()).collect()
}

/// Builds a matrix from row-major nested arrays. `cols_hint` supplies the
/// column count when there are no rows to infer it from.
pub fn matrix_from_rows<T: Real>(name: &'static str, rows: &[Vec<f64>], cols_hint: Option<usize>) -> Result<DMatrix<T>> {
    let ncols = rows.first().map(|r| r.len()).or(cols_hint).unwrap_or(0);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{name}: row {bad} has {} entries, expected {ncols}", rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| T::lit(rows[i][j])))
}

impl PlantDoc {
    pub fn from_plant<T: Real>(p: &Plant<T>) -> Self {
        PlantDoc {
            A: matrix_to_rows(&p.a),
            B1: matrix_to_rows(&p.b1),
            B2: matrix_to_rows(&p.b2),
            C1: matrix_to_rows(&p.c1),
            D11: matrix_to_rows(&p.d11),
            D12: matrix_to_rows(&p.d12),
            C2: matrix_to_rows(&p.c2),
            D21: matrix_to_rows(&p.d21),
        }
    }

    pub fn to_plant<T: Real>(&self) -> Result<Plant<T>> {
        let nx = self.A.len();
        let nw = self.B1.first().map(|r| r.len());
        let nu = self.B2.first().map(|r| r.len());
        Plant::new(
            matrix_from_rows("A", &self.A, Some(nx))?,
            matrix_from_rows("B1", &self.B1, nw)?,
            matrix_from_rows("B2", &self.B2, nu)?,
            matrix_from_rows("C1", &self.C1, Some(nx))?,
            matrix_from_rows("D11", &self.D11, nw)?,
            matrix_from_rows("D12", &self.D12, nu)?,
            matrix_from_rows("C2", &self.C2, Some(nx))?,
            matrix_from_rows("D21", &self.D21, nw)?,
        )
    }
}

impl ControllerDoc {
    pub fn from_controller<T: Real>(k: &Controller<T>) -> Self {
        ControllerDoc {
            AK: matrix_to_rows(&k.ak()),
            BK: matrix_to_rows(&k.bk()),
            CK: matrix_to_rows(&k.ck()),
            DK: matrix_to_rows(&k.dk()),
        }
    }

    pub fn to_controller<T: Real>(&self) -> Result<Controller<T>> {
        let nx = self.AK.len();
        let ny = self.DK.first().map(|r| r.len());
        Controller::from_parts(
            &matrix_from_rows("DK", &self.DK, ny)?,
            &matrix_from_rows("CK", &self.CK, Some(nx))?,
            &matrix_from_rows("BK", &self.BK, ny)?,
            &matrix_from_rows("AK", &self.AK, Some(nx))?,
        )
    }
}

pub fn plant_from_json<T: Real>(text: &str) -> Result<Plant<T>> {
    let doc: PlantDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.to_plant()
}

pub fn plant_to_json<T: Real>(p: &Plant<T>) -> String {
    serde_json::to_string_pretty(&PlantDoc::from_plant(p)).expect("plain data serializes")
}

pub fn controller_from_json<T: Real>(text: &str) -> Result<Controller<T>> {
    let doc: ControllerDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.to_controller()
}

pub fn controller_to_json<T: Real>(k: &Controller<T>) -> String {
    serde_json::to_string_pretty(&ControllerDoc::from_controller(k)).expect("plain data serializes")
}
