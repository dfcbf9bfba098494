//! Seeded generators for random test systems.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::lti::{assemble_closed_loop, ClosedLoop, Controller, Dims, Plant};
use crate::scalar::Real;

/// Matrix with i.i.d. `N(0, scale²)` entries.
pub fn gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(scale * z)
    })
}

/// Gaussian `n×n` matrix shifted so that its spectral abscissa equals `abscissa`.
pub fn shifted<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, abscissa: f64) -> DMatrix<T> {
    let a: DMatrix<T> = gaussian(rng, n, n, 1.0 / (n as f64).sqrt());
    let alpha = linalg::spectral_abscissa(&a).expect("n > 0").as_f64();
    a - DMatrix::identity(n, n) * T::lit(alpha - abscissa)
}

/// Random stable closed loop with decay rate drawn from `[0.05, 1]` and a
/// feedthrough of moderate size.
pub fn stable_loop<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, nw: usize, nz: usize) -> ClosedLoop<T> {
    let decay = rng.random_range(0.05..1.0);
    let a = shifted(rng, n, -decay);
    let b = gaussian(rng, n, nw, 1.0);
    let c = gaussian(rng, nz, n, 1.0);
    let d = gaussian(rng, nz, nw, 0.3);
    ClosedLoop::new(a, b, c, d).expect("shapes are consistent")
}

/// Random plant with open-loop spectral abscissa in `[−1, −0.1]`.
pub fn plant<T: Real, R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> Plant<T> {
    let decay = rng.random_range(0.1..1.0);
    Plant::new(
        shifted(rng, dims.nx, -decay),
        gaussian(rng, dims.nx, dims.nw, 1.0),
        gaussian(rng, dims.nx, dims.nu, 1.0),
        gaussian(rng, dims.nz, dims.nx, 1.0),
        gaussian(rng, dims.nz, dims.nw, 0.3),
        gaussian(rng, dims.nz, dims.nu, 1.0),
        gaussian(rng, dims.ny, dims.nx, 1.0),
        gaussian(rng, dims.ny, dims.nw, 1.0),
    )
    .expect("shapes are consistent")
}

/// Full-order controller with small gains and a stable `A_K`, redrawn until
/// the closed loop is stable (at most `tries` draws).
pub fn stabilizing_controller<T: Real, R: Rng + ?Sized>(rng: &mut R, plant: &Plant<T>, tries: usize) -> Option<Controller<T>> {
    let d = plant.dims();
    for _ in 0..tries {
        let decay = rng.random_range(0.2..1.5);
        let k = Controller::from_parts(
            &gaussian(rng, d.nu, d.ny, 0.3),
            &gaussian(rng, d.nu, d.nx, 0.5),
            &gaussian(rng, d.nx, d.ny, 0.5),
            &shifted(rng, d.nx, -decay),
        )
        .expect("shapes are consistent");
        if assemble_closed_loop(plant, &k).ok()?.is_stable(T::zero()).unwrap_or(false) {
            return Some(k);
        }
    }
    None
}
