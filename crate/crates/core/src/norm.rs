//! H∞ norm of a stable closed loop, its active frequencies, and first-order
//! sensitivity of the norm with respect to the controller.
//!
//! The norm is computed with a level-set iteration on the Hamiltonian
//!
//! ```text
//! H(γ) = [ A + B R⁻¹DᵀC           B R⁻¹Bᵀ          ]
//!        [ −Cᵀ(I + D R⁻¹Dᵀ)C     −(A + B R⁻¹DᵀC)ᵀ  ],   R = γ²I − DᵀD,
//! ```
//! which has an eigenvalue `jω` exactly when `γ` is a singular value of
//! `T(jω)`. Each pass evaluates `σ_max` at the midpoints of consecutive
//! crossing frequencies, which raises the lower bound quadratically.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{assemble_closed_loop, AffineLoop, ClosedLoop, Controller, Plant};
use crate::scalar::Real;

/// Relative separation below the norm at which a second local maximum of
/// `σ_max(T(jω))` counts as an additional peak.
pub const PEAK_MERGE_TOL: f64 = 1e-6;
/// Relative gap between the two largest singular values below which the top
/// singular value is treated as repeated.
pub const GAP_TOL: f64 = 1e-6;
/// Relative tolerance on `|Re λ|` for an eigenvalue of the Hamiltonian to be
/// considered purely imaginary.
pub const IMAG_TOL: f64 = 1e-8;
/// Norm accuracy used internally for derivative estimates.
pub const FD_REL_TOL: f64 = 1e-12;

const MAX_ITER: usize = 200;
const N_SEEDS: usize = 20;

/// A frequency on the extended imaginary axis; `Infinite` marks a supremum
/// approached as ω → ∞ (attained by the feedthrough `D`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Frequency<T> {
    pub fn as_f64(&self) -> f64 {
        match self {
            Frequency::Finite(w) => w.as_f64(),
            Frequency::Infinite => f64::INFINITY,
        }
    }
}

impl<T: Real> Serialize for Frequency<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Frequency::Finite(w) => s.serialize_f64(w.as_f64()),
            Frequency::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NormResult<T: Real> {
    /// `J(K) = ‖T_zw‖∞`; an attained value of `σ_max(T(jω))`.
    #[serde(serialize_with = "ser_real")]
    pub gamma: T,
    /// Frequencies attaining the norm within [`PEAK_MERGE_TOL`], ascending.
    pub peak_omegas: Vec<Frequency<T>>,
    #[serde(serialize_with = "ser_real")]
    pub rel_tol: T,
    /// Certified bracket `γ_lo ≤ J ≤ γ_hi`.
    #[serde(serialize_with = "ser_pair")]
    pub bracket: (T, T),
    pub iterations: usize,
}

pub(crate) fn ser_real<T: Real, S: Serializer>(x: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(x.as_f64())
}

fn ser_pair<T: Real, S: Serializer>(x: &(T, T), s: S) -> std::result::Result<S::Ok, S::Error> {
    (x.0.as_f64(), x.1.as_f64()).serialize(s)
}

impl<T: Real> NormResult<T> {
    pub fn is_single_peak(&self) -> bool {
        self.peak_omegas.len() == 1
    }
}

/// Outcome of the Hamiltonian level test at level `γ`.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelTest<T> {
    /// `‖T‖∞ < γ`: no imaginary-axis eigenvalue.
    Below,
    /// `‖T‖∞ ≥ γ`. Holds the non-negative crossing frequencies, ascending;
    /// empty when `γ ≤ σ_max(D)`.
    Above(Vec<T>),
}

/// The γ-level Hamiltonian; `None` when `γ ≤ σ_max(D)`.
pub fn hamiltonian<T: Real>(cl: &ClosedLoop<T>, gamma: T) -> Option<DMatrix<T>> {
    let nw = cl.inputs();
    let nz = cl.outputs();
    let dtd = cl.d.transpose() * &cl.d;
    let r = DMatrix::<T>::identity(nw, nw) * (gamma * gamma) - &dtd;
    let chol = r.clone().cholesky()?;
    if linalg::lambda_min(&r) <= T::eps() * gamma * gamma {
        return None;
    }
    let r_inv = chol.inverse();
    let ar = &cl.a + &cl.b * &r_inv * cl.d.transpose() * &cl.c;
    let s = &cl.b * &r_inv * cl.b.transpose();
    let q = cl.c.transpose() * (DMatrix::<T>::identity(nz, nz) + &cl.d * &r_inv * cl.d.transpose()) * &cl.c;
    Some(linalg::block(&[&[&ar, &s], &[&(-q), &(-ar.transpose())]]))
}

/// Imaginary-axis eigenvalues of `h` as non-negative frequencies, ascending
/// and deduplicated.
pub(crate) fn imaginary_frequencies<T: Real>(h: &DMatrix<T>, imag_tol: T) -> Result<Vec<T>> {
    let mut out: Vec<T> = linalg::eigenvalues(h)?
        .into_iter()
        .filter(|z| z.re.abs() <= imag_tol * (T::one() + linalg::cabs(z)))
        .map(|z| z.im.abs())
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-12) * (T::one() + b.abs()));
    Ok(out)
}

/// Decides whether `‖T‖∞ ≥ γ`.
pub fn level_test<T: Real>(cl: &ClosedLoop<T>, gamma: T, imag_tol: T) -> Result<LevelTest<T>> {
    match hamiltonian(cl, gamma) {
        None => Ok(LevelTest::Above(Vec::new())),
        Some(h) => {
            let w = imaginary_frequencies(&h, imag_tol)?;
            Ok(if w.is_empty() { LevelTest::Below } else { LevelTest::Above(w) })
        }
    }
}

fn seed_frequencies<T: Real>(cl: &ClosedLoop<T>) -> Result<Vec<T>> {
    let poles = linalg::eigenvalues(&cl.a)?;
    let mut seeds = vec![T::zero()];
    // Lightly damped poles first, then a log sweep around the spectral scale.
    let mut by_damping: Vec<_> = poles.iter().filter(|p| p.im > T::zero()).collect();
    by_damping.sort_by(|a, b| {
        let da = (a.re / linalg::cabs(a)).abs();
        let db = (b.re / linalg::cabs(b)).abs();
        da.partial_cmp(&db).unwrap()
    });
    for p in by_damping.into_iter().take(N_SEEDS / 2) {
        seeds.push(linalg::cabs(p));
    }
    let scale = spectral_scale(cl)?;
    let n_log = N_SEEDS - seeds.len();
    for i in 0..n_log {
        let e = -3.0 + 6.0 * i as f64 / (n_log.max(2) - 1) as f64;
        seeds.push(scale * T::lit(10f64.powf(e)));
    }
    Ok(seeds)
}

fn spectral_scale<T: Real>(cl: &ClosedLoop<T>) -> Result<T> {
    let rho = linalg::eigenvalues(&cl.a)?.iter().map(|z| linalg::cabs(z)).fold(T::zero(), |a, b| if b > a { b } else { a });
    Ok(if rho > T::eps() { rho } else { T::one() })
}

/// Maximizes `σ_max(T(jω))` over `[lo, hi]` by golden-section search.
fn golden_max<T: Real>(cl: &ClosedLoop<T>, mut lo: T, mut hi: T, iters: usize) -> Result<(T, T)> {
    let r = T::lit(0.618_033_988_749_894_8);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = cl.sigma_max_at(x1)?;
    let mut f2 = cl.sigma_max_at(x2)?;
    for _ in 0..iters {
        if (hi - lo).abs() <= T::lit(1e-13) * (T::one() + hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = cl.sigma_max_at(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = cl.sigma_max_at(x1)?;
        }
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for end in [lo, hi] {
        let f = cl.sigma_max_at(end)?;
        if f > best.1 {
            best = (end, f);
        }
    }
    Ok(best)
}

/// `‖T‖∞` to relative accuracy `rel_tol`, with the set of peak frequencies.
pub fn hinf_norm<T: Real>(cl: &ClosedLoop<T>, rel_tol: T) -> Result<NormResult<T>> {
    if !(rel_tol > T::zero() && rel_tol <= T::lit(1e-2)) {
        return Err(Error::domain("rel_tol must lie in (0, 1e-2]"));
    }
    cl.require_stable()?;
    let imag_tol = T::lit(IMAG_TOL);
    let sigma_d = linalg::sigma_max(&cl.d);

    let mut lo = sigma_d;
    let mut best_omega = Frequency::Infinite;
    for w in seed_frequencies(cl)? {
        let s = cl.sigma_max_at(w)?;
        if s > lo {
            lo = s;
            best_omega = Frequency::Finite(w);
        }
    }
    if lo == T::zero() {
        return Ok(NormResult {
            gamma: T::zero(),
            peak_omegas: vec![Frequency::Finite(T::zero())],
            rel_tol,
            bracket: (T::zero(), T::zero()),
            iterations: 0,
        });
    }

    let mut hi = None;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let test = lo * (T::one() + rel_tol);
        let crossings = match level_test(cl, test, imag_tol)? {
            LevelTest::Below => {
                hi = Some(test);
                break;
            }
            LevelTest::Above(w) => w,
        };
        let mut probes = vec![T::zero()];
        probes.extend(crossings.windows(2).map(|p| (p[0] + p[1]) * T::lit(0.5)));
        let mut improved = false;
        for w in probes {
            let s = cl.sigma_max_at(w)?;
            if s > lo {
                lo = s;
                best_omega = Frequency::Finite(w);
                improved = true;
            }
        }
        if !improved {
            // Spurious crossings: search the bracketed intervals directly.
            let mut edges = vec![T::zero()];
            edges.extend(crossings.iter().copied());
            if let Some(&last) = crossings.last() {
                edges.push(last * T::lit(2.0) + T::one());
            }
            for e in edges.windows(2) {
                let (w, s) = golden_max(cl, e[0], e[1], 60)?;
                if s > lo {
                    lo = s;
                    best_omega = Frequency::Finite(w);
                    improved = true;
                }
            }
        }
        if !improved {
            log::debug!("norm iteration stalled at {lo:e}; accepting level {test:e}");
            hi = Some(test);
            break;
        }
    }
    let hi = hi.ok_or(Error::NoConvergence {
        lo: lo.as_f64(),
        hi: f64::INFINITY,
        iterations,
    })?;

    let (gamma, peak_omegas) = locate_peaks(cl, lo, hi, best_omega, sigma_d, imag_tol)?;
    Ok(NormResult {
        gamma,
        peak_omegas,
        rel_tol,
        bracket: (gamma, hi),
        iterations,
    })
}

/// Finds every local maximum of `σ_max(T(jω))` within [`PEAK_MERGE_TOL`] of
/// the norm, refining each to full precision.
fn locate_peaks<T: Real>(
    cl: &ClosedLoop<T>,
    lo: T,
    hi: T,
    best_omega: Frequency<T>,
    sigma_d: T,
    imag_tol: T,
) -> Result<(T, Vec<Frequency<T>>)> {
    let merge = T::lit(PEAK_MERGE_TOL);
    let level = lo * (T::one() - merge);
    let mut candidates: Vec<(Frequency<T>, T)> = Vec::new();
    if let LevelTest::Above(crossings) = level_test(cl, level, imag_tol)? {
        let mut edges = vec![T::zero()];
        edges.extend(crossings.iter().copied().filter(|&w| w > T::zero()));
        if let Some(&last) = edges.last() {
            if sigma_d < level {
                // Beyond the last crossing σ stays below the level.
            } else {
                edges.push(last * T::lit(2.0) + T::one());
            }
        }
        for e in edges.windows(2) {
            let mid = (e[0] + e[1]) * T::lit(0.5);
            if cl.sigma_max_at(mid)? > level || cl.sigma_max_at(e[0])? > level {
                let (w, s) = golden_max(cl, e[0], e[1], 200)?;
                candidates.push((Frequency::Finite(w), s));
            }
        }
    }
    if let Frequency::Finite(w) = best_omega {
        let s = cl.sigma_max_at(w)?;
        if !candidates.iter().any(|(f, _)| close(*f, best_omega)) {
            candidates.push((Frequency::Finite(w), s));
        }
    }
    if sigma_d >= level {
        candidates.push((Frequency::Infinite, sigma_d));
    }
    let top = candidates.iter().map(|c| c.1).fold(lo, |a, b| if b > a { b } else { a });
    let gamma = if top > hi { hi } else { top };
    let mut peaks: Vec<(Frequency<T>, T)> = candidates.into_iter().filter(|c| c.1 >= top * (T::one() - merge)).collect();
    peaks.sort_by(|a, b| a.0.as_f64().partial_cmp(&b.0.as_f64()).unwrap());
    let mut merged: Vec<(Frequency<T>, T)> = Vec::new();
    for p in peaks {
        match merged.last_mut() {
            Some(last) if close(last.0, p.0) => {
                if p.1 > last.1 {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }
    if merged.is_empty() {
        merged.push((best_omega, gamma));
    }
    Ok((gamma, merged.into_iter().map(|p| p.0).collect()))
}

fn close<T: Real>(a: Frequency<T>, b: Frequency<T>) -> bool {
    match (a, b) {
        (Frequency::Infinite, Frequency::Infinite) => true,
        (Frequency::Finite(x), Frequency::Finite(y)) => {
            let scale = if x.abs() > y.abs() { x.abs() } else { y.abs() };
            (x - y).abs() <= T::lit(1e-5) * (T::one() + scale)
        }
        _ => false,
    }
}

/// Brute-force lower bound on `‖T‖∞`: `σ_max` on a log-spaced grid over
/// `[1e-4ρ, 1e4ρ] ∪ {0}` (ρ the spectral radius of `A`), plus `σ_max(D)`,
/// refined by golden-section search around the best grid point.
pub fn hinf_norm_grid_oracle<T: Real>(cl: &ClosedLoop<T>, n_points: usize) -> Result<T> {
    if n_points < 1000 {
        return Err(Error::domain("grid oracle needs at least 1000 points"));
    }
    let rho = spectral_scale(cl)?.as_f64();
    let (l0, l1) = ((1e-4 * rho).log10(), (1e4 * rho).log10());
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..n_points).map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (n_points - 1) as f64)))
        .collect();
    let values: Vec<T> = grid
        .par_iter()
        .map(|&w| cl.sigma_max_at(T::lit(w)))
        .collect::<Result<Vec<T>>>()?;
    let (arg, &best) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("grid is nonempty");
    let lo = grid[arg.saturating_sub(1)];
    let hi = grid[(arg + 1).min(grid.len() - 1)];
    let (_, refined) = golden_max(cl, T::lit(lo), T::lit(hi), 200)?;
    let mut out = if refined > best { refined } else { best };
    let sd = linalg::sigma_max(&cl.d);
    if sd > out {
        out = sd;
    }
    Ok(out)
}

/// Gradient of `J` with respect to the controller block matrix, or the
/// marker for a point where `J` is not differentiable.
#[derive(Debug, Clone, PartialEq)]
pub enum Gradient<T: Real> {
    Smooth(DMatrix<T>),
    Nonsmooth,
}

impl<T: Real> Gradient<T> {
    pub fn smooth(self) -> Option<DMatrix<T>> {
        match self {
            Gradient::Smooth(g) => Some(g),
            Gradient::Nonsmooth => None,
        }
    }
}

/// Gradient of `J(K) = ‖T_zw‖∞` at `k`, given its norm evaluation.
///
/// With a single peak `ω*` and a simple top singular triplet `(σ, u, v)`,
/// `∂J/∂K_pq = Re(u* (∂T/∂K_pq)(jω*) v)`. Writing `T = C_cl R B_cl + D_cl` with
/// `R = (jω − A_cl)⁻¹`, the derivative in direction `V` factors as
/// `L V M` with `L = D̄₁₂ + C_cl R B̄` and `M = C̄ R B_cl + D̄₂₁`.
pub fn hinf_gradient<T: Real>(plant: &Plant<T>, k: &Controller<T>, norm: &NormResult<T>) -> Result<Gradient<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    if !norm.is_single_peak() {
        return Ok(Gradient::Nonsmooth);
    }
    gradient_at(plant, &cl, norm.peak_omegas[0], norm.gamma)
}

/// Gradient at the highest of the candidate peaks in `norm`, for use at
/// points drawn at random. `J` is differentiable wherever the maximizing
/// frequency is unique, so only peaks tying the top one within `tie_tol`
/// (relative) mark the point nonsmooth; near-ties closer than
/// [`PEAK_MERGE_TOL`] are common on nearly flat responses and are resolved by
/// the exact `σ_max` values.
pub fn hinf_gradient_top<T: Real>(plant: &Plant<T>, k: &Controller<T>, norm: &NormResult<T>, tie_tol: T) -> Result<Gradient<T>> {
    let cl = assemble_closed_loop(plant, k)?;
    cl.require_stable()?;
    let sigma = |w: &Frequency<T>| match w {
        Frequency::Finite(w) => cl.sigma_max_at(*w),
        Frequency::Infinite => Ok(linalg::sigma_max(&cl.d)),
    };
    let mut peaks = Vec::with_capacity(norm.peak_omegas.len());
    for w in &norm.peak_omegas {
        peaks.push((sigma(w)?, *w));
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let Some(&(top, w)) = peaks.first() else {
        return Ok(Gradient::Nonsmooth);
    };
    if peaks.len() > 1 && top - peaks[1].0 <= tie_tol * top {
        return Ok(Gradient::Nonsmooth);
    }
    gradient_at(plant, &cl, w, top)
}

/// Gradient of `σ_max(T(jω))` in `K` at a fixed frequency. Returns the
/// nonsmooth marker when the top singular value is not simple.
pub fn gradient_at<T: Real>(plant: &Plant<T>, cl: &ClosedLoop<T>, omega: Frequency<T>, gamma: T) -> Result<Gradient<T>> {
    let aff = AffineLoop::of(plant);
    let cx = linalg::to_complex;
    let (t, l, m) = match omega {
        Frequency::Infinite => (cx(&cl.d), cx(&aff.d12_bar), cx(&aff.d21_bar)),
        Frequency::Finite(w) => {
            let n = cl.order();
            let mut res = cx(&(-&cl.a));
            for i in 0..n {
                res[(i, i)] += Complex::new(T::zero(), w);
            }
            let lu = res.lu();
            let rb = lu.solve(&cx(&cl.b)).ok_or(Error::PoleOnAxis { omega: w.as_f64() })?;
            let rbbar = lu.solve(&cx(&aff.b_bar)).ok_or(Error::PoleOnAxis { omega: w.as_f64() })?;
            let t = cx(&cl.c) * &rb + cx(&cl.d);
            let l = cx(&aff.d12_bar) + cx(&cl.c) * rbbar;
            let m = cx(&aff.c_bar) * rb + cx(&aff.d21_bar);
            (t, l, m)
        }
    };
    let svd = t.svd(true, true);
    let s = &svd.singular_values;
    if s.len() > 1 && s[0] - s[1] < T::lit(GAP_TOL) * gamma {
        return Ok(Gradient::Nonsmooth);
    }
    let u = svd.u.as_ref().expect("requested").column(0).into_owned();
    let v = svd.v_t.as_ref().expect("requested").row(0).adjoint();
    let left = u.adjoint() * l; // 1 × (nu+nx)
    let right = m * v; // (ny+nx) × 1
    let g = DMatrix::from_fn(left.ncols(), right.nrows(), |p, q| (left[(0, p)] * right[(q, 0)]).re);
    Ok(Gradient::Smooth(g))
}

/// Norm of the closed loop formed by `plant` and `k`; errors if unstable.
pub fn cost<T: Real>(plant: &Plant<T>, k: &Controller<T>, rel_tol: T) -> Result<NormResult<T>> {
    hinf_norm(&assemble_closed_loop(plant, k)?, rel_tol)
}

#[derive(Debug, Clone)]
pub struct DirectionalDerivative<T> {
    pub estimate: T,
    /// `(J(K + tV) − J(K))/t` for each step.
    pub quotients: Vec<T>,
}

/// One-sided finite-difference estimate of `lim_{t↓0} (J(K+tV) − J(K))/t`
/// over a decreasing step ladder, with Richardson extrapolation on the two
/// smallest steps.
pub fn directional_derivative_fd<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    v: &DMatrix<T>,
    steps: &[T],
) -> Result<DirectionalDerivative<T>> {
    if steps.is_empty() {
        return Err(Error::domain("empty step ladder"));
    }
    let tol = T::lit(FD_REL_TOL);
    let j0 = cost(plant, k, tol)?.gamma;
    let mut quotients = Vec::with_capacity(steps.len());
    for &t in steps {
        let kt = k.perturbed(v, t);
        let cl = assemble_closed_loop(plant, &kt)?;
        if !cl.is_stable(T::zero())? {
            return Err(Error::LeftStabilizingSet { step: t.as_f64() });
        }
        let jt = hinf_norm(&cl, tol)?.gamma;
        quotients.push((jt - j0) / t);
    }
    let estimate = match (steps.len(), quotients.len()) {
        (n, _) if n >= 2 => {
            let (ta, tb) = (steps[n - 2], steps[n - 1]);
            let (qa, qb) = (quotients[n - 2], quotients[n - 1]);
            (ta * qb - tb * qa) / (ta - tb)
        }
        _ => quotients[0],
    };
    Ok(DirectionalDerivative { estimate, quotients })
}
