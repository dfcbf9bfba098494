//! Bounded-real certificates: the matrix `𝒩(K, P, γ)`, certificate checks,
//! construction of `P` from the Riccati equation with an LMI fallback, and
//! the non-degeneracy test (`P ≻ 0` with invertible off-diagonal block).
//!
//! ```text
//! 𝒩 = [ AᵀP + PA   PB    Cᵀ  ]
//!     [ BᵀP        −γI   Dᵀ  ]      ⪯ 0,   P ≻ 0   ⇒   ‖T‖∞ ≤ γ
//!     [ C          D     −γI ]
//! ```

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{self, AffineSym, LmiBlock, ProjectionOptions, Verdict};
use crate::lti::{assemble_closed_loop, ClosedLoop, Controller, Plant};
use crate::norm::{self, hamiltonian};
use crate::scalar::Real;

/// Lower bound `μ` imposed on `P` by the LMI search.
pub const P_FLOOR: f64 = 1e-6;
/// Relative tolerance on the Riccati residual.
pub const RICCATI_RESIDUAL_TOL: f64 = 1e-8;
/// Default eigenvalue floor on `P` for non-degeneracy.
pub const EIG_FLOOR: f64 = 1e-4;
/// Default floor on `σ_min(P₁₂)` in the non-degeneracy test.
pub const P12_FLOOR: f64 = 1e-8;
/// Hamiltonian eigenvalues with `|Re λ| ≤ AXIS_TOL·max|H|` count as imaginary.
const AXIS_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertMethod {
    Riccati,
    Lmi,
    /// Supplied by the caller and only checked.
    Given,
}

impl fmt::Display for CertMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMethod::Riccati => "riccati",
            CertMethod::Lmi => "lmi",
            CertMethod::Given => "given",
        })
    }
}

/// An accepted bounded-real certificate.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate<T: Real> {
    #[serde(serialize_with = "ser_matrix")]
    pub p: DMatrix<T>,
    #[serde(serialize_with = "norm::ser_real")]
    pub gamma: T,
    #[serde(serialize_with = "norm::ser_real")]
    pub lambda_min_p: T,
    /// `λ_max(𝒩(K, P, γ))`.
    #[serde(serialize_with = "norm::ser_real")]
    pub lmi_max_eig: T,
    /// `σ_min(P₁₂)`; absent for certificates of a bare closed loop.
    #[serde(serialize_with = "ser_opt")]
    pub p12_sigma_min: Option<T>,
    pub method: CertMethod,
}

fn ser_matrix<T: Real, S: serde::Serializer>(m: &DMatrix<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::lti::matrix_to_rows(m).serialize(s)
}

fn ser_opt<T: Real, S: serde::Serializer>(x: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    x.map(|v| v.as_f64()).serialize(s)
}

/// Why a certificate could not be produced. Diagnostics are in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub enum CertFailure {
    /// The candidate failed `P ≻ 0`, symmetry, or `λ_max(𝒩) ≤ tol`.
    Rejected { lambda_min_p: f64, lmi_max_eig: f64, tol: f64 },
    /// `γ²I − DᵀD` is not positive definite.
    IllPosed,
    /// The Hamiltonian has eigenvalues on (or numerically at) the imaginary axis.
    ImaginaryAxis { min_abs_re: f64 },
    /// The stable invariant subspace has no graph representation.
    RankDeficient { sigma_min: f64 },
    NotPositiveDefinite { lambda_min: f64 },
    /// The Riccati residual exceeds its relative bound.
    Residual { residual: f64, bound: f64 },
    /// Alternating projections stalled or ran out of budget.
    Projection { verdict: Verdict, distance: f64, iterations: usize },
}

impl fmt::Display for CertFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertFailure::Rejected { lambda_min_p, lmi_max_eig, tol } => write!(
                f,
                "certificate rejected: lambda_min(P) = {lambda_min_p:e}, lambda_max(N) = {lmi_max_eig:e} (tol {tol:e})"
            ),
            CertFailure::IllPosed => f.write_str("gamma^2 I - D'D is not positive definite"),
            CertFailure::ImaginaryAxis { min_abs_re } => {
                write!(f, "Hamiltonian has imaginary-axis eigenvalues (min |Re| = {min_abs_re:e})")
            }
            CertFailure::RankDeficient { sigma_min } => {
                write!(f, "stable subspace basis is rank deficient (sigma_min = {sigma_min:e})")
            }
            CertFailure::NotPositiveDefinite { lambda_min } => {
                write!(f, "Riccati solution is not positive definite (lambda_min = {lambda_min:e})")
            }
            CertFailure::Residual { residual, bound } => {
                write!(f, "Riccati residual {residual:e} exceeds {bound:e}")
            }
            CertFailure::Projection { verdict, distance, iterations } => write!(
                f,
                "LMI search ended {verdict:?} after {iterations} iterations (distance {distance:e})"
            ),
        }
    }
}

/// `Ok` carries a certificate, `Err` the reason none was found.
pub type Outcome<T> = std::result::Result<Certificate<T>, CertFailure>;

/// `𝒩` for a closed loop given in state-space form.
pub fn assemble_n_loop<T: Real>(cl: &ClosedLoop<T>, p: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    let n = cl.order();
    if p.shape() != (n, n) {
        return Err(Error::Dimension {
            block: "P",
            expected: (n, n),
            found: p.shape(),
        });
    }
    let (nw, nz) = (cl.inputs(), cl.outputs());
    let pa = p * &cl.a;
    let pb = p * &cl.b;
    let gw = DMatrix::<T>::identity(nw, nw) * -gamma;
    let gz = DMatrix::<T>::identity(nz, nz) * -gamma;
    Ok(linalg::block(&[
        &[&(pa.transpose() + &pa), &pb, &cl.c.transpose()],
        &[&pb.transpose(), &gw, &cl.d.transpose()],
        &[&cl.c, &cl.d, &gz],
    ]))
}

/// `𝒩(K, P, γ)` for the closed loop of `plant` and `k`.
pub fn assemble_n<T: Real>(plant: &Plant<T>, k: &Controller<T>, p: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    if gamma <= T::zero() {
        return Err(Error::domain("gamma must be positive"));
    }
    assemble_n_loop(&assemble_closed_loop(plant, k)?, p, gamma)
}

/// Scale-aware acceptance tolerance `1e-8·(1 + ‖𝒩‖₂)`.
pub fn default_lmi_tol<T: Real>(n: &DMatrix<T>) -> T {
    T::lit(1e-8) * (T::one() + linalg::sigma_max(n))
}

fn checked<T: Real>(cl: &ClosedLoop<T>, p: &DMatrix<T>, gamma: T, lmi_tol: Option<T>, method: CertMethod) -> Result<Outcome<T>> {
    let n = assemble_n_loop(cl, p, gamma)?;
    let tol = lmi_tol.unwrap_or_else(|| default_lmi_tol(&n));
    let lambda_min_p = linalg::lambda_min(p);
    let lmi_max_eig = linalg::lambda_max(&n);
    let asym = linalg::max_abs_diff(p, &p.transpose());
    let symmetric = asym <= T::lit(1e-12) * (T::one() + linalg::max_abs(p));
    if symmetric && lambda_min_p > T::zero() && lmi_max_eig <= tol {
        Ok(Ok(Certificate {
            p: p.clone(),
            gamma,
            lambda_min_p,
            lmi_max_eig,
            p12_sigma_min: None,
            method,
        }))
    } else {
        Ok(Err(CertFailure::Rejected {
            lambda_min_p: lambda_min_p.as_f64(),
            lmi_max_eig: lmi_max_eig.as_f64(),
            tol: tol.as_f64(),
        }))
    }
}

/// Accepts iff `P` is symmetric, `λ_min(P) > 0` and `λ_max(𝒩) ≤ lmi_tol`
/// (default [`default_lmi_tol`]).
pub fn check_certificate_loop<T: Real>(cl: &ClosedLoop<T>, p: &DMatrix<T>, gamma: T, lmi_tol: Option<T>) -> Result<Outcome<T>> {
    checked(cl, p, gamma, lmi_tol, CertMethod::Given)
}

pub fn check_certificate<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    p: &DMatrix<T>,
    gamma: T,
    lmi_tol: Option<T>,
) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    Ok(check_certificate_loop(&cl, p, gamma, lmi_tol)?.map(|c| with_p12(c, plant.dims().nx)))
}

fn with_p12<T: Real>(mut c: Certificate<T>, nx: usize) -> Certificate<T> {
    if c.p.nrows() == 2 * nx && nx > 0 {
        c.p12_sigma_min = Some(linalg::sigma_min(&linalg::sub(&c.p, 0, nx, nx, nx)));
    }
    c
}

/// Residual `AᵀQ + QA + (QB + CᵀD)R⁻¹(QB + CᵀD)ᵀ + CᵀC` with `R = γ²I − DᵀD`.
pub fn riccati_residual<T: Real>(cl: &ClosedLoop<T>, q: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    let nw = cl.inputs();
    let r = DMatrix::<T>::identity(nw, nw) * (gamma * gamma) - cl.d.transpose() * &cl.d;
    let l = q * &cl.b + cl.c.transpose() * &cl.d;
    let rl = linalg::solve(&r, &l.transpose(), "gamma^2 I - D'D")?;
    Ok(linalg::symmetrize(
        &(cl.a.transpose() * q + q * &cl.a + &l * rl + cl.c.transpose() * &cl.c),
    ))
}

/// Closed-loop matrix `A + B R⁻¹(BᵀQ + DᵀC)` of the Riccati solution.
fn riccati_feedback<T: Real>(cl: &ClosedLoop<T>, q: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    let nw = cl.inputs();
    let r = DMatrix::<T>::identity(nw, nw) * (gamma * gamma) - cl.d.transpose() * &cl.d;
    let gain = linalg::solve(&r, &(cl.b.transpose() * q + cl.d.transpose() * &cl.c), "gamma^2 I - D'D")?;
    Ok(&cl.a + &cl.b * gain)
}

/// Bounded-real Riccati certificate at level `γ(1 + slack)`, from the stable
/// invariant subspace of the Hamiltonian. Returns `P = Q/level`.
pub fn certify_riccati_loop<T: Real>(cl: &ClosedLoop<T>, gamma: T, slack: T) -> Result<Outcome<T>> {
    if gamma <= T::zero() || slack < T::zero() {
        return Err(Error::domain("gamma must be positive and slack non-negative"));
    }
    let level = gamma * (T::one() + slack);
    let (q, res) = match stabilizing_riccati(cl, level, true)? {
        Ok(sol) => sol,
        Err(why) => return Ok(Err(why)),
    };
    let ctc_norm = linalg::sigma_max(&(cl.c.transpose() * &cl.c));
    let bound = T::lit(RICCATI_RESIDUAL_TOL) * ctc_norm;
    if !(res <= bound) {
        return Ok(Err(CertFailure::Residual {
            residual: res.as_f64(),
            bound: bound.as_f64(),
        }));
    }
    let lambda_min = linalg::lambda_min(&q);
    if !(lambda_min > T::zero()) {
        return Ok(Err(CertFailure::NotPositiveDefinite {
            lambda_min: lambda_min.as_f64(),
        }));
    }
    checked(cl, &(q / level), level, None, CertMethod::Riccati)
}

/// Stabilizing solution `Q` of the bounded-real Riccati equation at `level`
/// (after Newton refinement) and its residual norm; not yet validated.
/// `axis_filter` enables the imaginary-axis pre-filter on the spectrum.
fn stabilizing_riccati<T: Real>(cl: &ClosedLoop<T>, level: T, axis_filter: bool) -> Result<std::result::Result<(DMatrix<T>, T), CertFailure>> {
    let n = cl.order();
    let nw = cl.inputs();
    let r = DMatrix::<T>::identity(nw, nw) * (level * level) - cl.d.transpose() * &cl.d;
    if linalg::lambda_min(&r) <= T::lit(1e-12) * level * level {
        return Ok(Err(CertFailure::IllPosed));
    }
    let Some(h) = hamiltonian(cl, level) else {
        return Ok(Err(CertFailure::IllPosed));
    };
    // Only a pre-filter: whatever passes is verified below. The tolerance is
    // kept at the rounding level of H, which grows like 1/λ_min(R) when the
    // feedthrough nearly attains the level.
    let axis_tol = if axis_filter {
        T::lit(AXIS_TOL) * linalg::max_abs(&h).max(T::one())
    } else {
        T::zero()
    };
    let schur = linalg::ordered_schur(&h, |z| z.re < T::zero())?;
    let min_abs_re = schur.eigenvalues.iter().map(|z| z.re.abs()).fold(T::max_value().unwrap(), |a, b| a.min(b));
    if min_abs_re <= axis_tol || schur.n_selected != n {
        return Ok(Err(CertFailure::ImaginaryAxis {
            min_abs_re: min_abs_re.as_f64(),
        }));
    }
    let u1 = linalg::sub(&schur.z, 0, 0, n, n);
    let u2 = linalg::sub(&schur.z, n, 0, n, n);
    let s1 = linalg::sigma_min(&u1);
    if s1 <= T::lit(1e-12) {
        return Ok(Err(CertFailure::RankDeficient { sigma_min: s1.as_f64() }));
    }
    // Q = U₂U₁⁻¹, i.e. U₁ᵀQ = U₂ᵀ for symmetric Q.
    let q = linalg::symmetrize(&linalg::solve(&u1.transpose(), &u2.transpose(), "U1")?);

    let ctc_norm = linalg::sigma_max(&(cl.c.transpose() * &cl.c));
    let bound = T::lit(RICCATI_RESIDUAL_TOL) * ctc_norm;
    let (q, res) = newton_refine(cl, q, level, bound * T::lit(1e-3), 3)?;
    Ok(Ok((q, res)))
}

/// Newton steps `(A_q)ᵀΔ + ΔA_q = −Res(Q)` on the Riccati equation at
/// `level`, kept only while the residual norm decreases.
fn newton_refine<T: Real>(cl: &ClosedLoop<T>, mut q: DMatrix<T>, level: T, target: T, steps: usize) -> Result<(DMatrix<T>, T)> {
    let mut res = linalg::sigma_max(&riccati_residual(cl, &q, level)?);
    for _ in 0..steps {
        if res <= target {
            break;
        }
        let ac = riccati_feedback(cl, &q, level)?;
        let Ok(delta) = linalg::lyapunov(&ac, &riccati_residual(cl, &q, level)?) else {
            break;
        };
        let q_new = linalg::symmetrize(&(&q + delta));
        let res_new = linalg::sigma_max(&riccati_residual(cl, &q_new, level)?);
        if !(res_new < res) {
            break;
        }
        q = q_new;
        res = res_new;
    }
    Ok((q, res))
}

pub fn certify_riccati<T: Real>(plant: &Plant<T>, k: &Controller<T>, gamma: T, slack: T) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    Ok(certify_riccati_loop(&cl, gamma, slack)?.map(|c| with_p12(c, plant.dims().nx)))
}

/// Riccati certificate in the interior of the certificate set at level
/// `gamma > J`. The Riccati equation is solved for the loop with the extra
/// output `δx`, which adds `−δ²I` to the residual, so the returned `P` makes
/// `𝒩` strictly negative in the state directions and keeps `P` away from
/// singularity. `δ` is halved from `max(1, ‖C‖)` until the augmented norm is
/// at most `(J + γ)/2`.
pub fn certify_riccati_interior<T: Real>(plant: &Plant<T>, k: &Controller<T>, gamma: T) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    let j = norm::hinf_norm(&cl, T::lit(1e-10))?.gamma;
    if !(gamma > j) {
        return Err(Error::domain("interior certificates need gamma above the norm"));
    }
    let n = cl.order();
    let target = (j + gamma) * T::lit(0.5);
    let mut delta = linalg::sigma_max(&cl.c).max(T::one());
    for _ in 0..60 {
        let aug = ClosedLoop::new(
            cl.a.clone(),
            cl.b.clone(),
            linalg::block(&[&[&cl.c], &[&(DMatrix::identity(n, n) * delta)]]),
            linalg::block(&[&[&cl.d], &[&DMatrix::zeros(n, cl.inputs())]]),
        )?;
        if norm::hinf_norm(&aug, T::lit(1e-8))?.gamma <= target {
            let outcome = certify_riccati_loop(&aug, gamma, T::zero())?;
            return Ok(match outcome {
                Ok(c) => checked(&cl, &c.p, gamma, None, CertMethod::Riccati)?.map(|c| with_p12(c, plant.dims().nx)),
                Err(e) => Err(e),
            });
        }
        delta *= T::lit(0.5);
    }
    certify_riccati(plant, k, gamma, T::zero())
}

#[derive(Debug, Clone, Copy)]
pub struct LmiOptions<T> {
    pub max_iter: usize,
    /// Acceptance tolerance on `λ_max(𝒩)`; `None` selects the scale-aware default.
    pub lmi_tol: Option<T>,
    /// Lower bound `μ` on `P`.
    pub p_floor: T,
}

impl<T: Real> Default for LmiOptions<T> {
    fn default() -> Self {
        LmiOptions {
            max_iter: 50_000,
            lmi_tol: None,
            p_floor: T::lit(P_FLOOR),
        }
    }
}

/// Searches for `P ⪰ μI` with `𝒩(P, γ) ⪯ lmi_tol·I` by alternating
/// projections, starting from a Lyapunov solution.
///
/// The search runs on a balanced realization rescaled to unit level,
/// `(T⁻¹AT, T⁻¹B/√γ, CT/√γ, D/γ)`, whose `𝒩` at level 1 is congruent to the
/// original one under `P = T⁻ᵀP̃T⁻¹`; this keeps the `−γI` blocks and badly
/// scaled states from dominating the projection geometry. The floor `μ`
/// applies in the search coordinates; the returned `P` is validated as is.
pub fn certify_lmi_loop<T: Real>(cl: &ClosedLoop<T>, gamma: T, opts: LmiOptions<T>) -> Result<Outcome<T>> {
    lmi_search(cl, gamma, opts, None)
}

/// [`certify_lmi_loop`] started from `p_start` instead of a Lyapunov
/// solution, e.g. a Riccati certificate at a slightly higher level.
pub fn certify_lmi_loop_from<T: Real>(cl: &ClosedLoop<T>, gamma: T, opts: LmiOptions<T>, p_start: &DMatrix<T>) -> Result<Outcome<T>> {
    if p_start.shape() != (cl.order(), cl.order()) {
        return Err(Error::Dimension {
            block: "P",
            expected: (cl.order(), cl.order()),
            found: p_start.shape(),
        });
    }
    lmi_search(cl, gamma, opts, Some(p_start))
}

fn lmi_search<T: Real>(cl: &ClosedLoop<T>, gamma: T, opts: LmiOptions<T>, p_start: Option<&DMatrix<T>>) -> Result<Outcome<T>> {
    if gamma <= T::zero() {
        return Err(Error::domain("gamma must be positive"));
    }
    let n = cl.order();
    let root = gamma.sqrt();
    let (t, t_inv) = linalg::balancing_transform(&cl.a, &cl.b, &cl.c)
        .unwrap_or_else(|| (DMatrix::identity(n, n), DMatrix::identity(n, n)));
    let scaled = ClosedLoop::new(&t_inv * &cl.a * &t, &t_inv * &cl.b / root, &cl.c * &t / root, &cl.d / gamma)?;
    let zero = DMatrix::<T>::zeros(n, n);
    let n0 = assemble_n_loop(&scaled, &zero, T::one())?;
    let basis = lmi::sym_basis::<T>(n);
    let mut n_coeffs = Vec::with_capacity(basis.len());
    for e in &basis {
        n_coeffs.push(-(assemble_n_loop(&scaled, e, T::one())? - &n0));
    }
    let p0 = match p_start {
        Some(p) => linalg::symmetrize(&(t.transpose() * p * &t)),
        None => {
            let q0 = scaled.c.transpose() * &scaled.c + DMatrix::<T>::identity(n, n);
            linalg::lyapunov(&scaled.a, &q0)?
        }
    };
    let to_original = |pb: &DMatrix<T>| linalg::symmetrize(&(t_inv.transpose() * pb * &t_inv));
    let tol = match opts.lmi_tol {
        Some(t) => t,
        None => default_lmi_tol(&assemble_n_loop(cl, &to_original(&p0), gamma)?),
    };
    // λ_max(𝒩) ≤ max(1, γ)·λ_max(𝒩_scaled) when the latter is non-negative.
    let tol_scaled = tol / gamma.max(T::one());
    let blocks = vec![
        LmiBlock {
            map: AffineSym::new(zero.clone(), basis)?,
            target: opts.p_floor * T::lit(2.0),
            accept: opts.p_floor,
        },
        LmiBlock {
            map: AffineSym::new(-n0, n_coeffs)?,
            target: tol_scaled * T::lit(0.5),
            accept: -tol_scaled,
        },
    ];
    let x0 = DVector::from_vec(lmi::sym_coords(&p0));
    let popts = ProjectionOptions {
        max_iter: opts.max_iter,
        ..ProjectionOptions::default()
    };
    let res = lmi::alternating_projections(&blocks, x0, popts)?;
    if res.verdict != Verdict::Feasible {
        return Ok(Err(CertFailure::Projection {
            verdict: res.verdict,
            distance: res.distance.as_f64(),
            iterations: res.iterations,
        }));
    }
    let p = to_original(&blocks[0].map.eval(&res.x));
    checked(cl, &p, gamma, Some(tol.max(default_lmi_tol(&assemble_n_loop(cl, &p, gamma)?))), CertMethod::Lmi)
}

pub fn certify_lmi<T: Real>(plant: &Plant<T>, k: &Controller<T>, gamma: T, opts: LmiOptions<T>) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    Ok(certify_lmi_loop(&cl, gamma, opts)?.map(|c| with_p12(c, plant.dims().nx)))
}

pub fn certify_lmi_from<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    gamma: T,
    opts: LmiOptions<T>,
    p_start: &DMatrix<T>,
) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    Ok(certify_lmi_loop_from(&cl, gamma, opts, p_start)?.map(|c| with_p12(c, plant.dims().nx)))
}

/// Riccati first, LMI fallback, both at level `gamma`.
pub fn certify<T: Real>(plant: &Plant<T>, k: &Controller<T>, gamma: T, opts: LmiOptions<T>) -> Result<Outcome<T>> {
    match certify_riccati(plant, k, gamma, T::zero())? {
        Ok(c) => Ok(Ok(c)),
        Err(why) => {
            log::debug!("Riccati certificate failed ({why}); trying LMI");
            certify_fallback(plant, k, gamma, opts)
        }
    }
}

/// Relative level raises tried for a warm start of the LMI search.
const WARM_RAISES: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Certificate at `gamma` from the stabilizing Riccati solution at the
/// smallest raised level `γ(1 + δ)` where it can be computed: first by Newton
/// continuation back to `gamma`, then as the warm start of an LMI search,
/// finally by a cold LMI search. Close to the norm the Hamiltonian becomes too
/// ill-conditioned to resolve, while a certificate slightly above it is
/// accurate and only needs a small correction.
pub fn certify_fallback<T: Real>(plant: &Plant<T>, k: &Controller<T>, gamma: T, opts: LmiOptions<T>) -> Result<Outcome<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    for raise in WARM_RAISES {
        let level = gamma * (T::one() + T::lit(raise));
        // The LMI search validates whatever it starts from, so the raw
        // stabilizing solution is good enough as a seed.
        if let Ok((q, _)) = stabilizing_riccati(&cl, level, false)? {
            // Continuation: Newton steps from the raised level down to `gamma`
            // often land on a valid certificate directly.
            let (q_cont, _) = newton_refine(&cl, q.clone(), gamma, T::zero(), 8)?;
            if let Ok(c) = checked(&cl, &(q_cont / gamma), gamma, None, CertMethod::Riccati)? {
                return Ok(Ok(with_p12(c, plant.dims().nx)));
            }
            match certify_lmi_from(plant, k, gamma, opts, &(q / level))? {
                Ok(c) => return Ok(Ok(c)),
                Err(why) => log::debug!("warm-started LMI failed ({why})"),
            }
            break;
        }
    }
    certify_lmi(plant, k, gamma, opts)
}

#[derive(Debug, Clone)]
pub struct Nondegeneracy<T: Real> {
    pub nondegenerate: bool,
    /// `γ̂ = J(K)` from the norm computation.
    pub gamma_hat: T,
    /// Certificate level `γ̂/(1 − rel_tol)`.
    pub level: T,
    pub certificate: Option<Certificate<T>>,
}

/// Non-degeneracy test: certify at `γ̂/(1 − rel_tol)` and require
/// `λ_min(P) ≥ eig_floor` and `σ_min(P₁₂) ≥ p12_floor`.
pub fn is_nondegenerate<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    rel_tol: T,
    eig_floor: T,
    p12_floor: T,
) -> Result<Nondegeneracy<T>> {
    let gamma_hat = norm::cost(plant, k, rel_tol)?.gamma;
    let level = gamma_hat / (T::one() - rel_tol);
    let certificate = certify(plant, k, level, LmiOptions::default())?.ok();
    let nondegenerate = certificate
        .as_ref()
        .is_some_and(|c| c.lambda_min_p >= eig_floor && c.p12_sigma_min.is_some_and(|s| s >= p12_floor && s > T::zero()));
    Ok(Nondegeneracy {
        nondegenerate,
        gamma_hat,
        level,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn first_order() -> ClosedLoop<f64> {
        ClosedLoop::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.0])).unwrap()
    }

    #[test]
    fn n_matches_hand_example() {
        let n = assemble_n_loop(&first_order(), &m(1, 1, &[1.0]), 2.0).unwrap();
        assert_eq!(n, m(3, 3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 0.0, 1.0, 0.0, -2.0]));
        let c = check_certificate_loop(&first_order(), &m(1, 1, &[1.0]), 2.0, None).unwrap().unwrap();
        assert!(c.lmi_max_eig < 0.0);
        assert!(check_certificate_loop(&first_order(), &m(1, 1, &[-1.0]), 2.0, None).unwrap().is_err());
    }

    #[test]
    fn riccati_hand_example() {
        let c = certify_riccati_loop(&first_order(), 2.0, 0.0).unwrap().unwrap();
        assert_relative_eq!(c.p[(0, 0)], (4.0 - 12f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_eq!(c.method, CertMethod::Riccati);
        assert!(matches!(
            certify_riccati_loop(&first_order(), 0.5, 0.0).unwrap(),
            Err(CertFailure::ImaginaryAxis { .. })
        ));
    }

    #[test]
    fn lmi_hand_example() {
        let c = certify_lmi_loop(&first_order(), 2.0, LmiOptions::default()).unwrap().unwrap();
        assert!(c.lambda_min_p >= 1e-6);
        assert!(certify_lmi_loop(&first_order(), 0.5, LmiOptions::default()).unwrap().is_err());
    }

    #[test]
    fn feedthrough_at_level_is_ill_posed() {
        let cl = ClosedLoop::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[2.0])).unwrap();
        assert_eq!(certify_riccati_loop(&cl, 2.0, 0.0).unwrap().unwrap_err(), CertFailure::IllPosed);
    }

    #[test]
    fn example_plant_is_nondegenerate_off_the_line() {
        let p = Plant::example();
        let k = Controller::scalar(0.0, 1.0, 0.0, -1.0);
        let nd = is_nondegenerate(&p, &k, 1e-9, 1e-4, 0.0).unwrap();
        assert!(nd.nondegenerate);
        assert_relative_eq!(nd.gamma_hat, 1.0, epsilon = 1e-9);
        let cert = nd.certificate.unwrap();
        assert!(cert.p12_sigma_min.unwrap() > 0.1);
    }
}
