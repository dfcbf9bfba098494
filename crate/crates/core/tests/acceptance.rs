//! Acceptance suite: one PASS/FAIL line per criterion at pinned tolerances.
//!
//! Run with `cargo test -p hinfland-core --test acceptance`. Set
//! `ACCEPTANCE_ONLY=1,3` to run a subset, and `ACCEPTANCE_STRICT=1` to exit
//! non-zero when any criterion fails (otherwise the verdicts are only printed,
//! so the remaining test targets still run).

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hinfland::brl::{self, LmiOptions, EIG_FLOOR, P12_FLOOR};
use hinfland::lift::{self, CertifiedTriple};
use hinfland::lti::{frechet_remainder, frechet_remainder_bound, Dims, Plant};
use hinfland::norm;
use hinfland::norm::{hinf_norm, hinf_norm_grid_oracle};
use hinfland::scan::{self, ScanConfig, LOW_QUANTILE};
use hinfland::search::{self, ControllerBox, SearchParams};
use hinfland::synth::{self, FeasibilityOptions, SynthesisResult};
use hinfland::{linalg, sample};

struct Verdict {
    pass: bool,
    detail: String,
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let (nw, nz) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let cl = sample::stable_loop::<f64, _>(&mut rng, n, nw, nz);
        let gamma = hinf_norm(&cl, 1e-9).expect("norm").gamma;
        let oracle = hinf_norm_grid_oracle(&cl, 100_000).expect("oracle");
        worst = worst.max((gamma - oracle).abs() / oracle);
    }
    let elapsed = start.elapsed();
    Verdict {
        pass: worst <= 1e-6 && elapsed <= Duration::from_secs(60),
        detail: format!("max rel. deviation {worst:.2e} (tol 1e-6), {:.1}s (limit 60s)", elapsed.as_secs_f64()),
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for i in 0..200 {
        let n = rng.random_range(1..=4);
        let (nw, nz) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let cl = sample::stable_loop::<f64, _>(&mut rng, n, nw, nz);
        let j = hinf_norm(&cl, 1e-10).expect("norm").gamma;
        let ric_hi = brl::certify_riccati_loop(&cl, 1.01 * j, 0.0).expect("riccati").is_ok();
        let ric_lo = brl::certify_riccati_loop(&cl, 0.99 * j, 0.0).expect("riccati").is_ok();
        let lmi_hi = brl::certify_lmi_loop(&cl, 1.01 * j, LmiOptions::default()).expect("lmi").is_ok();
        let lmi_lo = brl::certify_lmi_loop(&cl, 0.99 * j, LmiOptions::default()).expect("lmi").is_ok();
        if !(ric_hi && !ric_lo && lmi_hi && !lmi_lo) {
            failures.push(format!("#{i}(ric {ric_hi}/{ric_lo}, lmi {lmi_hi}/{lmi_lo})"));
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        pass: failures.is_empty() && elapsed <= Duration::from_secs(300),
        detail: format!(
            "{} of 200 systems inconsistent{}, {:.1}s (limit 300s)",
            failures.len(),
            if failures.is_empty() { String::new() } else { format!(" [{}]", failures.iter().take(5).cloned().collect::<Vec<_>>().join(", ")) },
            elapsed.as_secs_f64()
        ),
    }
}

/// Random plant, stabilizing controller, γ = 1.1·J and an interior Riccati certificate.
fn random_triples(seed: u64, count: usize) -> Vec<(Plant<f64>, CertifiedTriple<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let dims = Dims {
            nx: rng.random_range(1..=3),
            nw: rng.random_range(1..=2),
            nu: rng.random_range(1..=2),
            nz: rng.random_range(1..=2),
            ny: rng.random_range(1..=2),
        };
        let plant: Plant<f64> = sample::plant(&mut rng, dims);
        let Some(k) = sample::stabilizing_controller(&mut rng, &plant, 200) else { continue };
        let j = norm::cost(&plant, &k, 1e-10).expect("norm").gamma;
        let Ok(cert) = brl::certify_riccati_interior(&plant, &k, 1.1 * j).expect("riccati") else { continue };
        out.push((plant, CertifiedTriple { k, p: cert.p, gamma: cert.gamma }));
    }
    out
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_psi_phi = 0.0f64;
    let mut worst_phi_psi = 0.0f64;
    let mut not_in_f = 0;
    let mut not_snd = 0;
    for (plant, t) in random_triples(3, 100) {
        let lifted = lift::phi(&plant, &t).expect("phi");
        if !lift::in_f(&plant, &lifted.z, None).expect("membership") {
            not_in_f += 1;
        }
        let back = lift::psi(&plant, &lifted.xi, &lifted.z).expect("psi");
        worst_psi_phi = worst_psi_phi.max(back.max_abs_diff(&t) / t.scale());

        // A different Ξ gives a different (similar) controller.
        let nx = plant.dims().nx;
        let mut xi: DMatrix<f64> = sample::gaussian(&mut rng, nx, nx, 1.0);
        xi += DMatrix::identity(nx, nx) * 2.0;
        let other = lift::psi(&plant, &xi, &lifted.z).expect("psi");
        if !lift::snd_membership(&plant, &other, None).expect("membership").member
            || !lift::snd_membership(&plant, &back, None).expect("membership").member
        {
            not_snd += 1;
        }
        let again = lift::phi(&plant, &other).expect("phi");
        let scale = lifted.z.scale().max(1.0 + linalg::sigma_max(&xi));
        let diff = again.z.max_abs_diff(&lifted.z).max(linalg::max_abs_diff(&again.xi, &xi));
        worst_phi_psi = worst_phi_psi.max(diff / scale);
    }
    Verdict {
        pass: worst_psi_phi <= 1e-8 && worst_phi_psi <= 1e-8 && not_in_f == 0 && not_snd == 0,
        detail: format!(
            "max |Psi(Phi(t)) - t|/scale {worst_psi_phi:.2e}, max |Phi(Psi(xi,Z)) - (xi,Z)|/scale {worst_phi_psi:.2e} (tol 1e-8); {not_in_f} lifts outside F, {not_snd} inverses outside S_nd"
        ),
    }
}

fn criterion_4() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_parts = String::new();
    for (plant, t) in random_triples(3, 100) {
        let c = lift::congruence_check(&plant, &t).expect("congruence");
        let r = c.max() / c.scale;
        if r > worst {
            worst = r;
            worst_parts = format!("M {:.1e}, TtPT {:.1e}, PT {:.1e}", c.big_m / c.scale, c.tpt / c.scale, c.pt / c.scale);
        }
    }
    Verdict {
        pass: worst <= 1e-10,
        detail: format!("max residual/scale {worst:.2e} (tol 1e-10) [{worst_parts}]"),
    }
}

fn example_optimum(plant: &Plant<f64>) -> SynthesisResult<f64> {
    synth::min_gamma(plant, 1e-6, FeasibilityOptions::default()).expect("synthesis")
}

fn criterion_5() -> Verdict {
    let plant = Plant::<f64>::example();
    let opt = example_optimum(&plant);
    let better = CertifiedTriple { k: opt.k_star.clone(), p: opt.cert.p.clone(), gamma: opt.gamma_star };
    let bounds = ControllerBox::example();
    let mut starts = 0;
    let mut bad = Vec::new();
    let mut worst_dd = f64::NEG_INFINITY;
    let mut worst_curve = f64::NEG_INFINITY;
    for seed in 0..1000u64 {
        if starts == 20 {
            break;
        }
        let k = search::random_stabilizing(&plant, seed, &bounds, 1000).expect("start");
        let nd = brl::is_nondegenerate(&plant, &k, 1e-9, EIG_FLOOR, P12_FLOOR).expect("nondegeneracy");
        // Suboptimal by a margin the finite differences can resolve.
        let Some(cert) = nd.certificate.filter(|_| nd.nondegenerate && nd.gamma_hat > 1.01 * opt.gamma_star) else { continue };
        starts += 1;
        let t = CertifiedTriple { k: k.clone(), p: cert.p, gamma: cert.gamma };
        let mut ok = true;
        match lift::descent_direction(&plant, &t, &better, 1e-4) {
            Ok(v) => {
                let step = k.norm() / linalg::sigma_max(&v);
                let dd = norm::directional_derivative_fd(&plant, &k, &v, &[1e-5 * step, 1e-6 * step]);
                let stepped = norm::cost(&plant, &k.perturbed(&v, 1e-3 * step), 1e-10);
                match (dd, stepped) {
                    (Ok(dd), Ok(j)) => {
                        worst_dd = worst_dd.max(dd.estimate);
                        ok &= dd.estimate < 0.0 && j.gamma < nd.gamma_hat;
                    }
                    _ => ok = false,
                }
            }
            Err(_) => ok = false,
        }
        for i in 1..=9 {
            let s = i as f64 / 10.0;
            let bound = (1.0 - s) * t.gamma + s * better.gamma;
            match lift::descent_curve(&plant, &t, &better, s).and_then(|c| norm::cost(&plant, &c.k, 1e-10)) {
                Ok(j) => {
                    worst_curve = worst_curve.max(j.gamma - bound);
                    ok &= j.gamma <= bound + 1e-6;
                }
                Err(_) => ok = false,
            }
        }
        if !ok {
            bad.push(seed);
        }
    }
    Verdict {
        pass: starts == 20 && bad.is_empty(),
        detail: format!(
            "{starts} starts, failing seeds {bad:?}; max directional derivative {worst_dd:.3e} (< 0), max J(curve) - chord {worst_curve:.2e} (tol 1e-6)"
        ),
    }
}

fn criterion_6() -> Verdict {
    let plant = Plant::<f64>::example();
    let gamma_star = example_optimum(&plant).gamma_star;
    let bounds = ControllerBox::example();
    let mut failures = Vec::new();
    let mut worst_measure = 0.0f64;
    let mut worst_gap = 0.0f64;
    for seed in 0..10u64 {
        let k0 = search::random_stabilizing(&plant, seed, &bounds, 1000).expect("start");
        let trace = search::search(&plant, &k0, 2000, seed, SearchParams::default()).expect("search");
        let last = trace.last();
        let gap = (last.j - gamma_star) / gamma_star;
        let nd = brl::is_nondegenerate(&plant, &last.k, 1e-9, EIG_FLOOR, P12_FLOOR).expect("nondegeneracy");
        worst_measure = worst_measure.max(last.measure);
        worst_gap = worst_gap.max(gap.abs());
        let mut why = Vec::new();
        if last.measure > 1e-4 || last.measure.is_nan() {
            why.push(format!("measure {:.1e}", last.measure));
        }
        if gap.abs() > 0.01 || gap.is_nan() {
            why.push(format!("gap {gap:.1e}"));
        }
        if !nd.nondegenerate {
            let lmin = nd.certificate.as_ref().map_or(f64::NAN, |c| c.lambda_min_p);
            why.push(format!("degenerate (lambda_min(P) {lmin:.1e})"));
        }
        if !why.is_empty() {
            failures.push(format!("seed {seed}: {}", why.join(", ")));
        }
    }
    Verdict {
        pass: failures.is_empty(),
        detail: format!(
            "gamma* {gamma_star:.7}; max measure {worst_measure:.1e} (tol 1e-4), max |J - gamma*|/gamma* {worst_gap:.1e} (tol 1e-2){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    }
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let plant = Plant::<f64>::example();
    let cfg = ScanConfig::desk();
    let records = scan::run_scan(&plant, &cfg).expect("scan");
    let stabilizing = records.iter().filter(|r| r.stabilizing).count();
    let uncertified = records
        .iter()
        .filter(|r| r.stabilizing)
        .filter(|r| !(r.lambda_min_p.is_some_and(|l| l >= cfg.eig_floor) && r.lmi_max_eig.is_some()))
        .count();
    let diagonal = cfg.ak.span().hypot(cfg.bk.span());
    let mut worst = 0.0f64;
    let mut bad_slices = Vec::new();
    for d_k in cfg.dk.values() {
        match scan::fit_degenerate_line(&scan::slice(&records, d_k), cfg.ck, LOW_QUANTILE) {
            Ok(fit) => {
                worst = worst.max(fit.max_perp_dist / diagonal);
                if fit.max_perp_dist > 0.05 * diagonal {
                    bad_slices.push(format!("{d_k}"));
                }
            }
            Err(_) => bad_slices.push(format!("{d_k} (no fit)")),
        }
    }
    let elapsed = start.elapsed();
    let a = uncertified == 0;
    let b = bad_slices.is_empty();
    Verdict {
        pass: a && b && elapsed <= Duration::from_secs(900),
        detail: format!(
            "(a) {} {uncertified} of {stabilizing} stabilizing points uncertified; (b) {} max perp. distance {:.1}% of diagonal (tol 5%){}; {:.0}s (limit 900s)",
            if a { "PASS" } else { "FAIL" },
            if b { "PASS" } else { "FAIL" },
            100.0 * worst,
            if b { String::new() } else { format!(", slices {}", bad_slices.join(", ")) },
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let omegas: Vec<f64> = std::iter::once(0.0)
        .chain((0..400).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 399.0)))
        .collect();
    let ts = [1e-2, 1e-3, 1e-4];
    let mut bad = 0;
    let mut worst_ratio = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let decay = rng.random_range(0.2..1.0);
        let a = sample::shifted::<f64, _>(&mut rng, n, -decay);
        let delta: DMatrix<f64> = sample::gaussian(&mut rng, n, n, 1.0);
        let delta = &delta / linalg::sigma_max(&delta);
        let mut ratios = Vec::new();
        let mut ok = true;
        for &t in &ts {
            let d = &delta * t;
            let rem = frechet_remainder(&a, &d, &omegas).expect("remainder");
            let bound = frechet_remainder_bound(&a, &d, &omegas).expect("bound");
            let ratio = rem / (t * t);
            match bound {
                Some(b) => {
                    ok &= rem <= b * (1.0 + 1e-12);
                    worst_ratio = worst_ratio.max(rem / b);
                }
                None => ok = false,
            }
            ratios.push(ratio);
        }
        // Bounded and settling: successive changes of the ratio shrink.
        let d1 = (ratios[1] - ratios[0]).abs();
        let d2 = (ratios[2] - ratios[1]).abs();
        ok &= d2 <= d1 + 1e-6 * ratios[2].abs().max(1.0);
        if !ok {
            bad += 1;
        }
    }
    Verdict {
        pass: bad == 0,
        detail: format!("{bad} of 50 pairs violate bound or settling; max remainder/bound {worst_ratio:.3}"),
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: Vec<(u32, &str, fn() -> Verdict)> = vec![
        (1, "norm agrees with dense-grid oracle", criterion_1),
        (2, "bounded-real certificates consistent at 1.01/0.99 x norm", criterion_2),
        (3, "lifting round trip and set membership", criterion_3),
        (4, "congruence identities", criterion_4),
        (5, "descent direction and curve on the example plant", criterion_5),
        (6, "gradient sampling reaches the global optimum", criterion_6),
        (7, "desk-scale scan: certificates and degenerate line", criterion_7),
        (8, "resolvent remainder bounded by closed form", criterion_8),
    ];
    let (mut run_count, mut failed) = (0, Vec::new());
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = run();
        run_count += 1;
        if !v.pass {
            failed.push(id);
        }
        println!("criterion {id} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {run_count} criteria passed; failed: {failed:?}", run_count - failed.len());
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
