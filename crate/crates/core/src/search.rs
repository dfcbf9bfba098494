//! Nonsmooth policy search on `J(K)` by gradient sampling, and a sampled
//! estimate of the distance from 0 to the Clarke subdifferential.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lti::{assemble_closed_loop, Controller, Dims, Plant};
use crate::norm::{self, Frequency, Gradient};
use crate::scalar::Real;

/// Relative accuracy of norm evaluations during the search.
pub const NORM_TOL: f64 = 1e-10;
/// Sufficient-decrease constant of the Armijo test.
pub const ARMIJO_C: f64 = 1e-4;
/// Stopping tolerance of the hull subproblem, relative to the largest
/// squared gradient norm.
pub const HULL_TOL: f64 = 1e-8;
/// Relative gap below which two peaks of a sample count as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Redraws allowed per sample that lands on a nonsmooth point.
const RESAMPLE_LIMIT: usize = 20;
const MIN_STEP: f64 = 1e-12;

/// Minimum-norm element of the convex hull of `points` (Wolfe's algorithm).
/// Returns the convex weights and the element.
pub fn min_norm_element<T: Real>(points: &[DVector<T>]) -> Result<(Vec<T>, DVector<T>)> {
    let Some(first) = points.first() else {
        return Err(Error::domain("no points"));
    };
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::domain("points differ in dimension"));
    }
    let scale = points.iter().map(|p| p.norm_squared()).fold(T::zero(), |a, b| a.max(b));
    if scale == T::zero() {
        let mut w = vec![T::zero(); points.len()];
        w[0] = T::one();
        return Ok((w, DVector::zeros(dim)));
    }
    let tol = T::lit(HULL_TOL) * scale;
    let combine = |set: &[usize], w: &[T]| {
        set.iter().zip(w).fold(DVector::zeros(dim), |acc: DVector<T>, (&i, &wi)| acc + &points[i] * wi)
    };

    let start = (0..points.len())
        .min_by(|&a, &b| points[a].norm_squared().partial_cmp(&points[b].norm_squared()).unwrap())
        .expect("nonempty");
    let mut set = vec![start];
    let mut w = vec![T::one()];
    for _ in 0..(100 * points.len() + 100) {
        let x = combine(&set, &w);
        let xx = x.norm_squared();
        let (j, xpj) = (0..points.len())
            .map(|j| (j, x.dot(&points[j])))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("nonempty");
        if xx - xpj <= tol || set.contains(&j) {
            return Ok((expand(points.len(), &set, &w), x));
        }
        set.push(j);
        w.push(T::zero());
        loop {
            let v = affine_min_norm(points, &set)?;
            if v.iter().all(|&vi| vi > T::zero()) {
                w = v;
                break;
            }
            // Move from w toward v until the first weight hits zero.
            let theta = w
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi <= T::zero())
                .map(|(&wi, &vi)| wi / (wi - vi))
                .fold(T::one(), |a, b| a.min(b));
            for (wi, &vi) in w.iter_mut().zip(&v) {
                *wi += theta * (vi - *wi);
            }
            let keep: Vec<bool> = w.iter().map(|&wi| wi > T::lit(1e-14)).collect();
            let mut k = 0;
            set.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            let mut k = 0;
            w.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            let total = w.iter().fold(T::zero(), |a, &b| a + b);
            w.iter_mut().for_each(|wi| *wi /= total);
            if set.len() == 1 {
                w = vec![T::one()];
                break;
            }
        }
    }
    Err(Error::NoConvergence {
        lo: 0.0,
        hi: 0.0,
        iterations: 100 * points.len() + 100,
    })
}

fn expand<T: Real>(n: usize, set: &[usize], w: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for (&i, &wi) in set.iter().zip(w) {
        out[i] = wi;
    }
    out
}

/// Weights of the minimum-norm point of the affine hull of `points[set]`.
fn affine_min_norm<T: Real>(points: &[DVector<T>], set: &[usize]) -> Result<Vec<T>> {
    let k = set.len();
    let mut kkt = DMatrix::<T>::zeros(k + 1, k + 1);
    for (a, &i) in set.iter().enumerate() {
        for (b, &j) in set.iter().enumerate() {
            kkt[(a, b)] = points[i].dot(&points[j]);
        }
        kkt[(a, k)] = T::one();
        kkt[(k, a)] = T::one();
    }
    let mut rhs = DVector::<T>::zeros(k + 1);
    rhs[k] = T::one();
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .or_else(|| kkt.svd(true, true).solve(&rhs, T::eps()).ok())
        .ok_or_else(|| Error::numerical("affine hull subproblem is singular"))?;
    Ok(sol.iter().take(k).copied().collect())
}

/// Sampled stationarity estimate at one radius.
#[derive(Debug, Clone)]
pub struct Stationarity<T: Real> {
    /// `‖g‖` for the minimum-norm element `g` of the sampled gradient hull.
    pub measure: T,
    pub direction: DMatrix<T>,
    pub radius: T,
    /// Gradients that entered the hull (the centre's first when smooth).
    pub gradients: usize,
    /// Samples redrawn because they hit a nonsmooth point.
    pub resampled: usize,
}

fn flat<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(m.len(), m.iter().copied())
}

fn ball_point<T: Real>(rng: &mut ChaCha8Rng, shape: (usize, usize), radius: T) -> DMatrix<T> {
    let n = shape.0 * shape.1;
    let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let u: f64 = rng.random();
    let r = radius.as_f64() * u.powf(1.0 / n as f64) / g.norm().max(f64::MIN_POSITIVE);
    DMatrix::from_iterator(shape.0, shape.1, g.iter().map(|&x| T::lit(x * r)))
}

/// Gradient of `J` at `k` if `k` stabilizes and `J` is differentiable there.
/// `Ok(None)` marks a nonsmooth point, `Err` an unstable one.
fn sample_gradient<T: Real>(plant: &Plant<T>, k: &Controller<T>) -> Result<Option<DMatrix<T>>> {
    let cl = assemble_closed_loop(plant, k)?;
    if !cl.is_stable(T::zero())? {
        return Err(Error::LeftStabilizingSet { step: 0.0 });
    }
    let nr = norm::hinf_norm(&cl, T::lit(NORM_TOL))?;
    Ok(match norm::hinf_gradient_top(plant, k, &nr, T::lit(TIE_TOL))? {
        Gradient::Smooth(g) => Some(g),
        Gradient::Nonsmooth => None,
    })
}

/// Gradients at the centre: the gradient of every peak branch that can
/// become active within the ball to first order, i.e. whose `σ_max` lies
/// within `radius·L` of the top (`L` the largest branch gradient norm). With
/// one clear peak this is just `∇J(K)`; on a ridge where two frequencies
/// nearly tie it adds both sides, which random samples in a thin slab would
/// often miss.
fn centre_gradients<T: Real>(plant: &Plant<T>, k: &Controller<T>, radius: T) -> Result<Vec<DMatrix<T>>> {
    let cl = assemble_closed_loop(plant, k)?;
    if !cl.is_stable(T::zero())? {
        return Err(Error::LeftStabilizingSet { step: 0.0 });
    }
    let nr = norm::hinf_norm(&cl, T::lit(NORM_TOL))?;
    let mut branches = Vec::with_capacity(nr.peak_omegas.len());
    for &w in &nr.peak_omegas {
        let sigma = match w {
            Frequency::Finite(w) => cl.sigma_max_at(w)?,
            Frequency::Infinite => crate::linalg::sigma_max(&cl.d),
        };
        if let Gradient::Smooth(g) = norm::gradient_at(plant, &cl, w, sigma)? {
            branches.push((sigma, g));
        }
    }
    let top = branches.iter().map(|b| b.0).fold(T::zero(), |a, b| a.max(b));
    let lip = branches.iter().map(|b| b.1.norm()).fold(T::zero(), |a, b| a.max(b));
    Ok(branches
        .into_iter()
        .filter(|(sigma, _)| top - *sigma <= radius * lip)
        .map(|(_, g)| g)
        .collect())
}

/// Gradient-sampling estimate of `dist(0, ∂J(K))`: the norm of the
/// minimum-norm element of the convex hull of the gradients at `k` (see
/// `centre_gradients`) and at `n_samples` uniform draws from the radius ball around `k`.
/// Samples that hit a nonsmooth point are redrawn.
pub fn stationarity_measure<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    radius: T,
    n_samples: usize,
    seed: u64,
) -> Result<Stationarity<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stationarity_with(plant, k, radius, n_samples, &mut rng)
}

fn stationarity_with<T: Real>(
    plant: &Plant<T>,
    k: &Controller<T>,
    radius: T,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Stationarity<T>> {
    k.check_against(plant)?;
    if !(radius > T::zero()) || n_samples == 0 {
        return Err(Error::domain("radius must be positive and n_samples at least 1"));
    }
    let shape = k.matrix().shape();
    let exits = || {
        Error::domain(format!(
            "the sampling ball of radius {:e} leaves the stabilizing set; use a smaller radius",
            radius.as_f64()
        ))
    };
    let centre = match centre_gradients(plant, k, radius) {
        Ok(g) => g,
        Err(Error::LeftStabilizingSet { .. }) => return Err(Error::domain("controller is not stabilizing")),
        Err(e) => return Err(e),
    };

    // Draw sequentially, evaluate in parallel, redraw nonsmooth hits in
    // index order: the result depends on the seed only.
    let mut offsets: Vec<DMatrix<T>> = (0..n_samples).map(|_| ball_point(rng, shape, radius)).collect();
    let mut grads: Vec<Option<DMatrix<T>>> = vec![None; n_samples];
    let mut pending: Vec<usize> = (0..n_samples).collect();
    let mut resampled = 0;
    for round in 0..=RESAMPLE_LIMIT {
        let evals: Vec<Result<Option<DMatrix<T>>>> = pending
            .par_iter()
            .map(|&i| sample_gradient(plant, &k.perturbed(&offsets[i], T::one())))
            .collect();
        let mut next = Vec::new();
        for (&i, e) in pending.iter().zip(evals) {
            match e {
                Ok(Some(g)) => grads[i] = Some(g),
                Ok(None) => next.push(i),
                Err(Error::LeftStabilizingSet { .. }) | Err(Error::Unstable { .. }) => return Err(exits()),
                Err(e) => return Err(e),
            }
        }
        if next.is_empty() || round == RESAMPLE_LIMIT {
            break;
        }
        resampled += next.len();
        for &i in &next {
            offsets[i] = ball_point(rng, shape, radius);
        }
        pending = next;
    }
    let mut points: Vec<DVector<T>> = centre.iter().map(flat).collect();
    points.extend(grads.iter().flatten().map(flat));
    if points.is_empty() {
        return Err(Error::numerical("every gradient sample landed on a nonsmooth point"));
    }
    let (_, g) = min_norm_element(&points)?;
    Ok(Stationarity {
        measure: g.norm(),
        direction: DMatrix::from_iterator(shape.0, shape.1, g.iter().copied()),
        radius,
        gradients: points.len(),
        resampled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    /// No acceptable step at the smallest radius of the ladder.
    Stalled,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchParams<T> {
    /// Samples per iteration; `None` selects `2·dim(K) + 1`.
    pub n_samples: Option<usize>,
    /// Initial radius; `None` selects `1e-2·(1 + ‖K₀‖)`.
    pub radius: Option<T>,
    /// The radius is divided by `shrink` at each rung of the ladder.
    pub shrink: T,
    /// Number of rungs (radii `r, r/shrink, …`).
    pub rungs: usize,
    pub tol_stat: T,
    pub armijo_c: T,
}

impl<T: Real> Default for SearchParams<T> {
    fn default() -> Self {
        SearchParams {
            n_samples: None,
            radius: None,
            shrink: T::lit(10.0),
            rungs: 3,
            tol_stat: T::lit(1e-5),
            armijo_c: T::lit(ARMIJO_C),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Iterate<T: Real> {
    pub k: Controller<T>,
    pub j: T,
    pub measure: T,
    pub radius: T,
    /// Step length that produced this iterate (0 for the start).
    pub step: T,
}

#[derive(Debug, Clone)]
pub struct SearchTrace<T: Real> {
    pub iterates: Vec<Iterate<T>>,
    pub status: SearchStatus,
    pub seed: u64,
}

impl<T: Real> SearchTrace<T> {
    pub fn last(&self) -> &Iterate<T> {
        self.iterates.last().expect("a trace holds at least its start")
    }
}

/// Gradient sampling with Armijo backtracking. Each iteration estimates the
/// stationarity measure at the current radius; when it drops below
/// `tol_stat`, or no step along the negative hull element is acceptable,
/// the radius moves one rung down the ladder. The search converges when the
/// measure is below `tol_stat` on the last rung. Every trial point is checked
/// for stability before `J` is evaluated; accepted steps satisfy
/// `J(K + αd) ≤ J(K) − c·α·‖d‖²` with `d` the negative hull element.
pub fn search<T: Real>(
    plant: &Plant<T>,
    k0: &Controller<T>,
    budget: usize,
    seed: u64,
    params: SearchParams<T>,
) -> Result<SearchTrace<T>> {
    k0.check_against(plant)?;
    if !assemble_closed_loop(plant, k0)?.is_stable(T::zero())? {
        return Err(Error::domain("initial controller is not stabilizing"));
    }
    if params.rungs == 0 || !(params.shrink > T::one()) || !(params.tol_stat > T::zero()) {
        return Err(Error::domain("search needs rungs ≥ 1, shrink > 1 and tol_stat > 0"));
    }
    let n_samples = params.n_samples.unwrap_or(2 * k0.matrix().len() + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radius = params.radius.unwrap_or(T::lit(1e-2) * (T::one() + k0.norm()));
    let mut rung = 0;
    let mut k = k0.clone();
    let mut j = norm::cost(plant, &k, T::lit(NORM_TOL))?.gamma;
    let mut iterates = Vec::new();
    let mut step = T::zero();

    for _ in 0..budget {
        // Shrink the ball until it fits inside the stabilizing set.
        let st = loop {
            match stationarity_with(plant, &k, radius, n_samples, &mut rng) {
                Ok(st) => break st,
                Err(Error::Domain(msg)) if msg.contains("leaves the stabilizing set") => {
                    radius /= params.shrink;
                    if radius < T::lit(MIN_STEP) {
                        return Err(Error::domain(msg));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        iterates.push(Iterate {
            k: k.clone(),
            j,
            measure: st.measure,
            radius,
            step,
        });
        log::debug!("search: J={j:e} measure={:e} radius={radius:e}", st.measure);
        if st.measure <= params.tol_stat {
            if rung + 1 >= params.rungs {
                return Ok(SearchTrace {
                    iterates,
                    status: SearchStatus::Converged,
                    seed,
                });
            }
            rung += 1;
            radius /= params.shrink;
            step = T::zero();
            continue;
        }
        let d = -&st.direction;
        let slope = params.armijo_c * d.norm_squared();
        let mut alpha = T::one();
        let mut accepted = None;
        while alpha > T::lit(MIN_STEP) {
            let trial = k.perturbed(&d, alpha);
            let cl = assemble_closed_loop(plant, &trial)?;
            if cl.is_stable(T::zero())? {
                let jt = norm::hinf_norm(&cl, T::lit(NORM_TOL))?.gamma;
                if jt <= j - alpha * slope {
                    accepted = Some((trial, jt));
                    break;
                }
            }
            alpha *= T::lit(0.5);
        }
        match accepted {
            Some((kt, jt)) => {
                k = kt;
                j = jt;
                step = alpha;
            }
            None => {
                if rung + 1 >= params.rungs {
                    return Ok(SearchTrace {
                        iterates,
                        status: SearchStatus::Stalled,
                        seed,
                    });
                }
                rung += 1;
                radius /= params.shrink;
                step = T::zero();
            }
        }
    }
    Ok(SearchTrace {
        iterates,
        status: SearchStatus::BudgetExhausted,
        seed,
    })
}

/// Closed intervals for the entries of each controller block.
#[derive(Debug, Clone, Copy)]
pub struct ControllerBox<T> {
    pub dk: (T, T),
    pub ck: (T, T),
    pub bk: (T, T),
    pub ak: (T, T),
}

impl<T: Real> ControllerBox<T> {
    /// `A_K ∈ [−2,2]`, `B_K ∈ [−4,4]`, `D_K ∈ [−1.5,1.5]`, `C_K = 1`.
    pub fn example() -> Self {
        ControllerBox {
            dk: (T::lit(-1.5), T::lit(1.5)),
            ck: (T::one(), T::one()),
            bk: (T::lit(-4.0), T::lit(4.0)),
            ak: (T::lit(-2.0), T::lit(2.0)),
        }
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, (lo, hi): (T, T)) -> T {
    let u: f64 = rng.random();
    lo + (hi - lo) * T::lit(u)
}

/// Rejection sampling of a stabilizing controller with entries uniform in
/// `bounds`; deterministic per seed.
pub fn random_stabilizing<T: Real>(plant: &Plant<T>, seed: u64, bounds: &ControllerBox<T>, cap: usize) -> Result<Controller<T>> {
    for (name, (lo, hi)) in [("D_K", bounds.dk), ("C_K", bounds.ck), ("B_K", bounds.bk), ("A_K", bounds.ak)] {
        if !(lo <= hi) {
            return Err(Error::domain(format!("empty range for {name}")));
        }
    }
    let Dims { nx, nu, ny, .. } = plant.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cap {
        let mut draw = |r, c, range| DMatrix::from_fn(r, c, |_, _| uniform(&mut rng, range));
        let dk = draw(nu, ny, bounds.dk);
        let ck = draw(nu, nx, bounds.ck);
        let bk = draw(nx, ny, bounds.bk);
        let ak = draw(nx, nx, bounds.ak);
        let k = Controller::from_parts(&dk, &ck, &bk, &ak)?;
        if assemble_closed_loop(plant, &k)?.is_stable(T::zero())? {
            return Ok(k);
        }
    }
    Err(Error::domain(format!(
        "no stabilizing controller in {cap} draws; enlarge the box or supply a warm start"
    )))
}
