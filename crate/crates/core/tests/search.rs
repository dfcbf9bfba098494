use hinfland::lti::{assemble_closed_loop, Plant};
use hinfland::search::{self, ControllerBox, SearchParams, SearchStatus};
use hinfland::synth::{self, FeasibilityOptions};
use hinfland::{brl, norm};

const GAMMA_STAR: f64 = 0.732_050_807_568_877_2; // √3 − 1

#[test]
fn random_starts_are_deterministic_and_stabilizing() {
    let plant = Plant::<f64>::example();
    let b = ControllerBox::example();
    for seed in 0..5 {
        let k = search::random_stabilizing(&plant, seed, &b, 1000).unwrap();
        assert_eq!(k, search::random_stabilizing(&plant, seed, &b, 1000).unwrap());
        assert!(assemble_closed_loop(&plant, &k).unwrap().is_stable(0.0).unwrap());
    }
}

#[test]
fn search_is_reproducible_and_monotone() {
    let plant = Plant::<f64>::example();
    let k0 = search::random_stabilizing(&plant, 1, &ControllerBox::example(), 1000).unwrap();
    let a = search::search(&plant, &k0, 150, 9, SearchParams::default()).unwrap();
    let b = search::search(&plant, &k0, 150, 9, SearchParams::default()).unwrap();
    assert_eq!(a.iterates.len(), b.iterates.len());
    for (x, y) in a.iterates.iter().zip(&b.iterates) {
        assert_eq!(x.k, y.k);
        assert_eq!(x.j, y.j);
    }
    for w in a.iterates.windows(2) {
        assert!(w[1].j <= w[0].j);
        assert!(assemble_closed_loop(&plant, &w[1].k).unwrap().is_stable(0.0).unwrap());
    }
}

#[test]
fn search_from_a_static_start_reaches_the_optimum() {
    let plant = Plant::<f64>::example();
    let k0 = hinfland::lti::Controller::scalar(0.0, 1.0, 0.0, -1.0);
    let trace = search::search(&plant, &k0, 2000, 0, SearchParams::default()).unwrap();
    let last = trace.last();
    assert!((last.j - GAMMA_STAR) / GAMMA_STAR < 1e-2, "J = {}", last.j);
    assert!(trace.status == SearchStatus::Converged || last.measure < 1e-3);
}

#[test]
fn rejects_destabilizing_start() {
    let plant = Plant::<f64>::example();
    let k0 = hinfland::lti::Controller::scalar(5.0, 0.0, 0.0, -1.0);
    assert!(search::search(&plant, &k0, 10, 0, SearchParams::default()).is_err());
}

#[test]
fn measure_is_large_far_from_the_optimum() {
    let plant = Plant::<f64>::example();
    let k = hinfland::lti::Controller::scalar(-0.2, 1.0, 0.5, -1.0);
    let s = search::stationarity_measure(&plant, &k, 1e-3, 9, 0).unwrap();
    assert!(s.measure > 1e-2);
}

#[test]
fn feasibility_is_monotone_in_the_level() {
    let plant = Plant::<f64>::example();
    let levels = [0.5, 0.7, 0.74, 0.8, 1.0, 2.0];
    let verdicts: Vec<bool> = levels
        .iter()
        .map(|&g| synth::feasibility_f(&plant, g, None, FeasibilityOptions::default()).unwrap().verdict == hinfland::lmi::Verdict::Feasible)
        .collect();
    assert_eq!(verdicts, [false, false, true, true, true, true]);
}

#[test]
fn synthesized_controller_is_certified() {
    let plant = Plant::<f64>::example();
    let r = synth::min_gamma(&plant, 1e-4, FeasibilityOptions::default()).unwrap();
    assert!(r.gamma_star >= GAMMA_STAR * (1.0 - 1e-6));
    assert!(r.gamma_star <= GAMMA_STAR * 1.01);
    let j = norm::cost(&plant, &r.k_star, 1e-9).unwrap().gamma;
    assert!(j <= r.gamma_star * (1.0 + 1e-9));
    assert!(brl::check_certificate(&plant, &r.k_star, &r.cert.p, r.cert.gamma, None).unwrap().is_ok());
}
