//! Convex lifting of certified controllers.
//!
//! A certified triple `(K, P, γ)` with `P ≻ 0`, `P₁₂` invertible and
//! `𝒩(K, P, γ) ⪯ 0` is mapped by `Φ` to `(Ξ, Z)` with `Ξ = P₁₂` and
//! `Z = (X, Y, M, H, F, G, γ)` in the convex set
//!
//! ```text
//! ℱ = { Z : [X I; I Y] ≻ 0,  𝓜(Z) ⪯ 0 },
//! ```
//!
//! where `𝓜` is affine in `Z`. `Ψ` inverts `Φ` for any invertible `Ξ`. Moving
//! `Z` along a segment inside `ℱ` and mapping back gives a smooth curve of
//! certified controllers along which `γ` decreases linearly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::brl;
use crate::error::{Error, Result};
use crate::linalg::{self, block, sub};
use crate::lti::{matrix_from_rows, matrix_to_rows, Controller, ControllerDoc, Plant};
use crate::scalar::Real;

/// Relative tolerance for membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Floor on `λ_min([X I; I Y])` for strict positivity.
pub const STRICT_FLOOR: f64 = 1e-10;
/// Default step of the finite-difference descent direction.
pub const DIRECTION_STEP: f64 = 1e-6;

/// The convex component `Z = (X, Y, M, H, F, G, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVars<T: Real> {
    pub x: DMatrix<T>,
    pub y: DMatrix<T>,
    pub m: DMatrix<T>,
    pub h: DMatrix<T>,
    pub f: DMatrix<T>,
    pub g: DMatrix<T>,
    pub gamma: T,
}

impl<T: Real> LiftedVars<T> {
    /// `self + s (other − self)`.
    pub fn lerp(&self, other: &Self, s: T) -> Self {
        let mix = |a: &DMatrix<T>, b: &DMatrix<T>| a + (b - a) * s;
        LiftedVars {
            x: mix(&self.x, &other.x),
            y: mix(&self.y, &other.y),
            m: mix(&self.m, &other.m),
            h: mix(&self.h, &other.h),
            f: mix(&self.f, &other.f),
            g: mix(&self.g, &other.g),
            gamma: self.gamma + (other.gamma - self.gamma) * s,
        }
    }

    fn blocks(&self) -> [&DMatrix<T>; 6] {
        [&self.x, &self.y, &self.m, &self.h, &self.f, &self.g]
    }

    /// `1 + max(‖·‖₂ over blocks, |γ|)`.
    pub fn scale(&self) -> T {
        T::one() + self.blocks().iter().map(|b| linalg::sigma_max(b)).fold(self.gamma.abs(), |a, b| a.max(b))
    }

    /// Largest absolute entrywise difference over all components.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .map(|(a, b)| linalg::max_abs_diff(a, b))
            .fold((self.gamma - other.gamma).abs(), |a, b| a.max(b))
    }
}

/// A point of `𝒢 = GL × ℱ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint<T: Real> {
    pub xi: DMatrix<T>,
    pub z: LiftedVars<T>,
}

/// A controller together with a bounded-real certificate at level `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedTriple<T: Real> {
    pub k: Controller<T>,
    pub p: DMatrix<T>,
    pub gamma: T,
}

impl<T: Real> CertifiedTriple<T> {
    pub fn scale(&self) -> T {
        T::one() + self.k.norm().max(linalg::sigma_max(&self.p)).max(self.gamma.abs())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        linalg::max_abs_diff(self.k.matrix(), other.k.matrix())
            .max(linalg::max_abs_diff(&self.p, &other.p))
            .max((self.gamma - other.gamma).abs())
    }
}

/// The affine matrix `𝓜(X, Y, M, H, F, G, γ)`.
pub fn assemble_m<T: Real>(plant: &Plant<T>, z: &LiftedVars<T>) -> Result<DMatrix<T>> {
    let d = plant.dims();
    let shapes = [
        ("X", &z.x, (d.nx, d.nx)),
        ("Y", &z.y, (d.nx, d.nx)),
        ("M", &z.m, (d.nx, d.nx)),
        ("H", &z.h, (d.nx, d.ny)),
        ("F", &z.f, (d.nu, d.nx)),
        ("G", &z.g, (d.nu, d.ny)),
    ];
    for (name, m, shape) in shapes {
        if m.shape() != shape {
            return Err(Error::Dimension {
                block: name,
                expected: shape,
                found: m.shape(),
            });
        }
    }
    let p = plant;
    let (x, y) = (&z.x, &z.y);
    let ax = &p.a * x + &p.b2 * &z.f;
    let abar = &p.a + &p.b2 * &z.g * &p.c2;
    let ya = y * &p.a + &z.h * &p.c2;
    let b1 = &p.b1 + &p.b2 * &z.g * &p.d21;
    let yb = y * &p.b1 + &z.h * &p.d21;
    let c1x = &p.c1 * x + &p.d12 * &z.f;
    let c1 = &p.c1 + &p.d12 * &z.g * &p.c2;
    let d11 = &p.d11 + &p.d12 * &z.g * &p.d21;
    let gw = DMatrix::<T>::identity(d.nw, d.nw) * -z.gamma;
    let gz = DMatrix::<T>::identity(d.nz, d.nz) * -z.gamma;
    Ok(block(&[
        &[&(&ax + ax.transpose()), &(z.m.transpose() + &abar), &b1, &c1x.transpose()],
        &[&(&z.m + abar.transpose()), &(&ya + ya.transpose()), &yb, &c1.transpose()],
        &[&b1.transpose(), &yb.transpose(), &gw, &d11.transpose()],
        &[&c1x, &c1, &d11, &gz],
    ]))
}

/// Membership diagnostics for `ℱ`.
#[derive(Debug, Clone, Copy)]
pub struct FMembership<T> {
    /// `λ_min([X I; I Y])`.
    pub coupling_min_eig: T,
    /// `λ_max(𝓜)`.
    pub m_max_eig: T,
    pub tol: T,
    pub member: bool,
}

/// Tests `[X I; I Y] ≻ 0` (floor [`STRICT_FLOOR`]) and `𝓜 ⪯ tol·I`, with
/// `tol` defaulting to `1e-8·(1 + ‖𝓜‖₂)`.
pub fn f_membership<T: Real>(plant: &Plant<T>, z: &LiftedVars<T>, lmi_tol: Option<T>) -> Result<FMembership<T>> {
    let big_m = assemble_m(plant, z)?;
    let n = z.x.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let coupling = block(&[&[&z.x, &eye], &[&eye, &z.y]]);
    let coupling_min_eig = linalg::lambda_min(&coupling);
    let m_max_eig = linalg::lambda_max(&big_m);
    let tol = lmi_tol.unwrap_or_else(|| T::lit(MEMBERSHIP_TOL) * (T::one() + linalg::sigma_max(&big_m)));
    Ok(FMembership {
        coupling_min_eig,
        m_max_eig,
        tol,
        member: coupling_min_eig >= T::lit(STRICT_FLOOR) && m_max_eig <= tol,
    })
}

pub fn in_f<T: Real>(plant: &Plant<T>, z: &LiftedVars<T>, lmi_tol: Option<T>) -> Result<bool> {
    Ok(f_membership(plant, z, lmi_tol)?.member)
}

/// Membership diagnostics for the certified set: `P ≻ 0`, `P₁₂` invertible,
/// `𝒩(K, P, γ) ⪯ tol·I`.
#[derive(Debug, Clone, Copy)]
pub struct SndMembership<T> {
    pub lambda_min_p: T,
    pub p12_sigma_min: T,
    pub lmi_max_eig: T,
    pub tol: T,
    pub member: bool,
}

pub fn snd_membership<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>, lmi_tol: Option<T>) -> Result<SndMembership<T>> {
    let nx = plant.dims().nx;
    let n = brl::assemble_n(plant, &t.k, &t.p, t.gamma)?;
    let lambda_min_p = linalg::lambda_min(&t.p);
    let p12_sigma_min = linalg::sigma_min(&sub(&t.p, 0, nx, nx, nx));
    let lmi_max_eig = linalg::lambda_max(&n);
    let tol = lmi_tol.unwrap_or_else(|| T::lit(MEMBERSHIP_TOL) * (T::one() + linalg::sigma_max(&n)));
    let symmetric = linalg::max_abs_diff(&t.p, &t.p.transpose()) <= T::lit(1e-12) * t.scale();
    Ok(SndMembership {
        lambda_min_p,
        p12_sigma_min,
        lmi_max_eig,
        tol,
        member: symmetric && lambda_min_p > T::zero() && p12_sigma_min > T::zero() && lmi_max_eig <= tol,
    })
}

fn check_triple_shapes<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>) -> Result<usize> {
    t.k.check_against(plant)?;
    let nx = plant.dims().nx;
    if t.p.shape() != (2 * nx, 2 * nx) {
        return Err(Error::Dimension {
            block: "P",
            expected: (2 * nx, 2 * nx),
            found: t.p.shape(),
        });
    }
    Ok(nx)
}

/// `Φ(K, P, γ) = (P₁₂, (P⁻¹)₁₁, P₁₁, Φ_M, Φ_H, Φ_F, D_K, γ)`.
pub fn phi<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>) -> Result<LiftedPoint<T>> {
    let nx = check_triple_shapes(plant, t)?;
    let lmin = linalg::lambda_min(&t.p);
    if !(lmin > T::zero()) {
        return Err(Error::domain(format!("P is not positive definite (lambda_min = {lmin:e})")));
    }
    let xi = sub(&t.p, 0, nx, nx, nx);
    let s12 = linalg::sigma_min(&xi);
    if !(s12 > T::eps() * linalg::sigma_max(&t.p)) {
        return Err(Error::domain(format!("P12 is singular (sigma_min = {s12:e})")));
    }
    let pinv = linalg::inverse(&t.p, "P")?;
    let x = linalg::symmetrize(&sub(&pinv, 0, 0, nx, nx));
    let pi21 = sub(&pinv, nx, 0, nx, nx);
    let y = sub(&t.p, 0, 0, nx, nx);
    let (dk, ck, bk, ak) = (t.k.dk(), t.k.ck(), t.k.bk(), t.k.ak());
    let p = plant;
    let m = &xi * &bk * &p.c2 * &x + &y * &p.b2 * &ck * &pi21 + &y * (&p.a + &p.b2 * &dk * &p.c2) * &x + &xi * &ak * &pi21;
    let h = &y * &p.b2 * &dk + &xi * &bk;
    let f = &dk * &p.c2 * &x + &ck * &pi21;
    Ok(LiftedPoint {
        xi,
        z: LiftedVars {
            x,
            y,
            m,
            h,
            f,
            g: dk,
            gamma: t.gamma,
        },
    })
}

/// `Ψ(Ξ, Z)`: the controller
/// `[I 0; YB₂ Ξ]⁻¹ [G F; H M−YAX] [I C₂X; 0 Π]⁻¹` with `Π = −Ξ⁻¹(Y−X⁻¹)X`,
/// and `P = [Y Ξ; Ξᵀ Ξᵀ(Y−X⁻¹)⁻¹Ξ]`.
pub fn psi<T: Real>(plant: &Plant<T>, xi: &DMatrix<T>, z: &LiftedVars<T>) -> Result<CertifiedTriple<T>> {
    assemble_m(plant, z)?;
    let d = plant.dims();
    let nx = d.nx;
    if xi.shape() != (nx, nx) {
        return Err(Error::Dimension {
            block: "Xi",
            expected: (nx, nx),
            found: xi.shape(),
        });
    }
    let xmin = linalg::lambda_min(&z.x);
    if !(xmin > T::zero()) {
        return Err(Error::domain(format!("X is not positive definite (lambda_min = {xmin:e})")));
    }
    let x_inv = linalg::inverse(&z.x, "X")?;
    let gap = linalg::symmetrize(&(&z.y - &x_inv));
    let gmin = linalg::lambda_min(&gap);
    if !(gmin > T::zero()) {
        return Err(Error::domain(format!("Y - X^-1 is not positive definite (lambda_min = {gmin:e})")));
    }
    let xi_inv = linalg::inverse(xi, "Xi")?;
    let pi = -(&xi_inv * &gap * &z.x);
    let p = plant;
    let eye_u = DMatrix::<T>::identity(d.nu, d.nu);
    let eye_y = DMatrix::<T>::identity(d.ny, d.ny);
    let zeros = |r, c| DMatrix::<T>::zeros(r, c);
    let left = block(&[&[&eye_u, &zeros(d.nu, nx)], &[&(&z.y * &p.b2), xi]]);
    let mid = block(&[&[&z.g, &z.f], &[&z.h, &(&z.m - &z.y * &p.a * &z.x)]]);
    let right = block(&[&[&eye_y, &(&p.c2 * &z.x)], &[&zeros(nx, d.ny), &pi]]);
    let lk = linalg::solve(&left, &mid, "[I 0; YB2 Xi]")?;
    // K = lk · right⁻¹  ⇔  rightᵀ Kᵀ = lkᵀ.
    let k = linalg::solve(&right.transpose(), &lk.transpose(), "[I C2X; 0 Pi]")?.transpose();
    let p22 = linalg::symmetrize(&(xi.transpose() * linalg::solve(&gap, xi, "Y - X^-1")?));
    let pm = linalg::symmetrize(&block(&[&[&z.y, xi], &[&xi.transpose(), &p22]]));
    Ok(CertifiedTriple {
        k: Controller::from_block(k, d.nu, d.ny)?,
        p: pm,
        gamma: z.gamma,
    })
}

/// Residuals of the congruence identities behind `Φ`, each as a max-abs
/// entrywise difference, with the scale they should be compared against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Congruence {
    /// `𝓜 − diag(T, I, I)ᵀ 𝒩 diag(T, I, I)`.
    pub big_m: f64,
    /// `TᵀPT − [X I; I Y]`.
    pub tpt: f64,
    /// `PT − [I P₁₁; 0 P₁₂ᵀ]`.
    pub pt: f64,
    /// `TᵀPA_clT − [AX+B₂F  A+B₂GC₂; M  YA+HC₂]`.
    pub tpat: f64,
    /// `TᵀPB_cl − [B₁+B₂GD₂₁; YB₁+HD₂₁]`.
    pub tpb: f64,
    /// `C_clT − [C₁X+D₁₂F  C₁+D₁₂GC₂]`.
    pub ct: f64,
    /// `1 + max(‖𝒩‖₂, ‖T‖₂², ‖P‖₂)`.
    pub scale: f64,
}

impl Congruence {
    pub fn max(&self) -> f64 {
        [self.big_m, self.tpt, self.pt, self.tpat, self.tpb, self.ct].into_iter().fold(0.0, f64::max)
    }
}

/// Evaluates the identities relating `𝒩(K, P, γ)` and `𝓜(Φ(K, P, γ))`
/// through `T = [(P⁻¹)₁₁ I; (P⁻¹)₂₁ 0]`.
pub fn congruence_check<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>) -> Result<Congruence> {
    let lifted = phi(plant, t)?;
    let z = &lifted.z;
    let nx = plant.dims().nx;
    let pinv = linalg::inverse(&t.p, "P")?;
    let eye = DMatrix::<T>::identity(nx, nx);
    let zero = DMatrix::<T>::zeros(nx, nx);
    let tm = block(&[&[&sub(&pinv, 0, 0, nx, nx), &eye], &[&sub(&pinv, nx, 0, nx, nx), &zero]]);
    let cl = crate::lti::assemble_closed_loop(plant, &t.k)?;
    let d = plant.dims();
    let big_t = linalg::block_diag(&[&tm, &DMatrix::identity(d.nw, d.nw), &DMatrix::identity(d.nz, d.nz)]);
    let n = brl::assemble_n(plant, &t.k, &t.p, t.gamma)?;
    let big_m = assemble_m(plant, z)?;
    let p = plant;
    let diff = |a: &DMatrix<T>, b: &DMatrix<T>| linalg::max_abs_diff(a, b).as_f64();
    let pt_expected = block(&[&[&eye, &z.y], &[&zero, &lifted.xi.transpose()]]);
    let tpt_expected = block(&[&[&z.x, &eye], &[&eye, &z.y]]);
    let tpat_expected = block(&[
        &[&(&p.a * &z.x + &p.b2 * &z.f), &(&p.a + &p.b2 * &z.g * &p.c2)],
        &[&z.m, &(&z.y * &p.a + &z.h * &p.c2)],
    ]);
    let tpb_expected = block(&[&[&(&p.b1 + &p.b2 * &z.g * &p.d21)], &[&(&z.y * &p.b1 + &z.h * &p.d21)]]);
    let ct_expected = block(&[&[&(&p.c1 * &z.x + &p.d12 * &z.f), &(&p.c1 + &p.d12 * &z.g * &p.c2)]]);
    let tt = tm.transpose();
    let scale = T::one() + linalg::sigma_max(&n).max(linalg::sigma_max(&tm).powi(2)).max(linalg::sigma_max(&t.p));
    Ok(Congruence {
        big_m: diff(&big_m, &(big_t.transpose() * &n * &big_t)),
        tpt: diff(&(&tt * &t.p * &tm), &tpt_expected),
        pt: diff(&(&t.p * &tm), &pt_expected),
        tpat: diff(&(&tt * &t.p * &cl.a * &tm), &tpat_expected),
        tpb: diff(&(&tt * &t.p * &cl.b), &tpb_expected),
        ct: diff(&(&cl.c * &tm), &ct_expected),
        scale: scale.as_f64(),
    })
}

fn require_descent<T: Real>(t: &CertifiedTriple<T>, better: &CertifiedTriple<T>) -> Result<()> {
    if !(better.gamma < t.gamma) {
        return Err(Error::domain(format!(
            "descent needs a strictly better certificate (gamma {:e} vs {:e})",
            better.gamma.as_f64(),
            t.gamma.as_f64()
        )));
    }
    Ok(())
}

/// `ψ(s) = Ψ(Ξ, Z + s(Z′ − Z))` with `Ξ = P₁₂` of `t`, `s ∈ [0, 1]`.
pub fn descent_curve<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>, better: &CertifiedTriple<T>, s: T) -> Result<CertifiedTriple<T>> {
    require_descent(t, better)?;
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::domain("curve parameter must lie in [0, 1]"));
    }
    let start = phi(plant, t)?;
    let end = phi(plant, better)?;
    psi(plant, &start.xi, &start.z.lerp(&end.z, s))
}

/// Finite-difference tangent `(K(ψ(h)) − K(ψ(0)))/h` of the descent curve.
/// The quotient is recomputed at `h/2` and `h/4`; the successive changes
/// must shrink, otherwise the step is outside the asymptotic regime.
pub fn descent_direction<T: Real>(plant: &Plant<T>, t: &CertifiedTriple<T>, better: &CertifiedTriple<T>, h: T) -> Result<DMatrix<T>> {
    require_descent(t, better)?;
    if !(h > T::zero() && h <= T::lit(0.5)) {
        return Err(Error::domain("finite-difference step must lie in (0, 0.5]"));
    }
    let start = phi(plant, t)?;
    let end = phi(plant, better)?;
    let k0 = psi(plant, &start.xi, &start.z)?.k.into_matrix();
    let quotient = |step: T| -> Result<DMatrix<T>> {
        let ks = psi(plant, &start.xi, &start.z.lerp(&end.z, step))?.k.into_matrix();
        Ok((ks - &k0) / step)
    };
    let v = quotient(h)?;
    let v2 = quotient(h / T::lit(2.0))?;
    let v4 = quotient(h / T::lit(4.0))?;
    let vn = linalg::sigma_max(&v);
    if !(vn > T::lit(1e-10)) {
        return Err(Error::numerical(format!(
            "descent direction vanishes (norm {vn:e}); try a smaller step or the point is near-optimal"
        )));
    }
    let (e1, e2) = ((&v - &v2).norm(), (&v2 - &v4).norm());
    let noise = T::lit(1e-6) * v.norm();
    if e2 > e1 + noise {
        return Err(Error::numerical(format!(
            "finite-difference direction did not settle (|V_h - V_h/2| = {e1:e}, |V_h/2 - V_h/4| = {e2:e})"
        )));
    }
    Ok(v)
}

/// JSON document for a lifted point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LiftedDoc {
    pub Xi: Vec<Vec<f64>>,
    pub X: Vec<Vec<f64>>,
    pub Y: Vec<Vec<f64>>,
    pub M: Vec<Vec<f64>>,
    pub H: Vec<Vec<f64>>,
    pub F: Vec<Vec<f64>>,
    pub G: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl LiftedDoc {
    pub fn from_point<T: Real>(p: &LiftedPoint<T>) -> Self {
        let z = &p.z;
        LiftedDoc {
            Xi: matrix_to_rows(&p.xi),
            X: matrix_to_rows(&z.x),
            Y: matrix_to_rows(&z.y),
            M: matrix_to_rows(&z.m),
            H: matrix_to_rows(&z.h),
            F: matrix_to_rows(&z.f),
            G: matrix_to_rows(&z.g),
            gamma: z.gamma.as_f64(),
        }
    }

    pub fn to_point<T: Real>(&self, plant: &Plant<T>) -> Result<LiftedPoint<T>> {
        let d = plant.dims();
        Ok(LiftedPoint {
            xi: matrix_from_rows("Xi", &self.Xi, Some(d.nx))?,
            z: LiftedVars {
                x: matrix_from_rows("X", &self.X, Some(d.nx))?,
                y: matrix_from_rows("Y", &self.Y, Some(d.nx))?,
                m: matrix_from_rows("M", &self.M, Some(d.nx))?,
                h: matrix_from_rows("H", &self.H, Some(d.ny))?,
                f: matrix_from_rows("F", &self.F, Some(d.nx))?,
                g: matrix_from_rows("G", &self.G, Some(d.ny))?,
                gamma: T::lit(self.gamma),
            },
        })
    }
}

/// JSON document for a certified triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct TripleDoc {
    pub controller: ControllerDoc,
    pub P: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TripleDoc {
    pub fn from_triple<T: Real>(t: &CertifiedTriple<T>) -> Self {
        TripleDoc {
            controller: ControllerDoc::from_controller(&t.k),
            P: matrix_to_rows(&t.p),
            gamma: t.gamma.as_f64(),
        }
    }

    pub fn to_triple<T: Real>(&self) -> Result<CertifiedTriple<T>> {
        let k: Controller<T> = self.controller.to_controller()?;
        let n = 2 * k.nx();
        Ok(CertifiedTriple {
            k,
            p: matrix_from_rows("P", &self.P, Some(n))?,
            gamma: T::lit(self.gamma),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn hand_triple() -> CertifiedTriple<f64> {
        CertifiedTriple {
            k: Controller::scalar(0.0, 1.0, 0.0, -1.0),
            p: m(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            gamma: 3.0,
        }
    }

    #[test]
    fn phi_hand_example() {
        let l = phi(&Plant::example(), &hand_triple()).unwrap();
        assert_relative_eq!(l.xi[(0, 0)], 1.0);
        assert_relative_eq!(l.z.x[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(l.z.y[(0, 0)], 2.0);
        assert_relative_eq!(l.z.m[(0, 0)], -5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(l.z.h[(0, 0)], 0.0);
        assert_relative_eq!(l.z.f[(0, 0)], -1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(l.z.g[(0, 0)], 0.0);
        assert_eq!(l.z.gamma, 3.0);
    }

    #[test]
    fn psi_inverts_phi_on_hand_example() {
        let plant = Plant::example();
        let t = hand_triple();
        let l = phi(&plant, &t).unwrap();
        let back = psi(&plant, &l.xi, &l.z).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-14);
    }

    #[test]
    fn m_structure() {
        let plant = Plant::example();
        let z = LiftedVars {
            x: m(1, 1, &[1.0]),
            y: m(1, 1, &[1.0]),
            m: m(1, 1, &[0.0]),
            h: m(1, 1, &[0.0]),
            f: m(1, 1, &[0.0]),
            g: m(1, 1, &[0.0]),
            gamma: 3.0,
        };
        let big = assemble_m(&plant, &z).unwrap();
        assert_eq!(big.nrows(), 6);
        assert_eq!(big[(0, 0)], -2.0);
        assert_eq!(sub(&big, 4, 4, 2, 2), DMatrix::identity(2, 2) * -3.0);
        let z2 = LiftedVars { gamma: 5.0, ..z.clone() };
        let diff = assemble_m(&plant, &z).unwrap() - assemble_m(&plant, &z2).unwrap();
        let expected = linalg::block_diag(&[&DMatrix::zeros(2, 2), &(DMatrix::identity(4, 4) * 2.0)]);
        assert_eq!(diff, expected);
    }

    #[test]
    fn coupling_must_be_positive() {
        let plant = Plant::example();
        let z = LiftedVars {
            x: m(1, 1, &[0.0]),
            y: m(1, 1, &[0.0]),
            m: m(1, 1, &[0.0]),
            h: m(1, 1, &[0.0]),
            f: m(1, 1, &[0.0]),
            g: m(1, 1, &[0.0]),
            gamma: 10.0,
        };
        assert!(!in_f(&plant, &z, None).unwrap());
        assert!(psi(&plant, &m(1, 1, &[1.0]), &z).is_err());
    }

    #[test]
    fn descent_requires_ordering() {
        let plant = Plant::example();
        let t = hand_triple();
        assert!(descent_direction(&plant, &t, &t, 1e-6).is_err());
    }
}
