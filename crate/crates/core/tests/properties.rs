//! Randomized invariants of the norm, the certificates and the lifting.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hinfland::brl::{self, LmiOptions};
use hinfland::lift::{self, CertifiedTriple};
use hinfland::lti::{assemble_closed_loop, Dims, Plant};
use hinfland::{linalg, norm, sample};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn norm_scales_with_output(seed in any::<u64>(), n in 1usize..5, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = sample::stable_loop::<f64, _>(&mut rng, n, 2, 2);
        let j = norm::hinf_norm(&cl, 1e-10).unwrap().gamma;
        let js = norm::hinf_norm(&cl.scale_output(s), 1e-10).unwrap().gamma;
        prop_assert!((js - s * j).abs() <= 1e-8 * s * j);
    }

    #[test]
    fn norm_bounds_sampled_frequencies(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = sample::stable_loop::<f64, _>(&mut rng, n, 2, 1);
        let r = norm::hinf_norm(&cl, 1e-9).unwrap();
        for k in 0..50 {
            let w = 10f64.powf(-3.0 + 6.0 * k as f64 / 49.0);
            prop_assert!(cl.sigma_max_at(w).unwrap() <= r.bracket.1 * (1.0 + 1e-12));
        }
        prop_assert!(r.bracket.0 <= r.gamma && r.gamma <= r.bracket.1);
    }

    #[test]
    fn certificates_bracket_the_norm(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = sample::stable_loop::<f64, _>(&mut rng, n, 1, 2);
        let j = norm::hinf_norm(&cl, 1e-10).unwrap().gamma;
        let above = brl::certify_riccati_loop(&cl, 1.05 * j, 0.0).unwrap();
        let below = brl::certify_riccati_loop(&cl, 0.95 * j, 0.0).unwrap();
        prop_assert!(above.is_ok());
        prop_assert!(below.is_err());
        let lmi = brl::certify_lmi_loop(&cl, 1.05 * j, LmiOptions::default()).unwrap();
        prop_assert!(lmi.is_ok());
        let c = lmi.unwrap();
        prop_assert!(c.lambda_min_p > 0.0);
        prop_assert!(brl::check_certificate_loop(&cl, &c.p, c.gamma, None).unwrap().is_ok());
    }

    #[test]
    fn lifting_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { nx: 2, nw: 1, nu: 1, nz: 2, ny: 1 };
        let plant: Plant<f64> = sample::plant(&mut rng, dims);
        let Some(k) = sample::stabilizing_controller(&mut rng, &plant, 200) else { return Ok(()) };
        let j = norm::cost(&plant, &k, 1e-10).unwrap().gamma;
        let Ok(cert) = brl::certify_riccati_interior(&plant, &k, 1.2 * j).unwrap() else { return Ok(()) };
        let t = CertifiedTriple { k, p: cert.p, gamma: cert.gamma };
        let lifted = lift::phi(&plant, &t).unwrap();
        prop_assert!(lift::in_f(&plant, &lifted.z, None).unwrap());
        let back = lift::psi(&plant, &lifted.xi, &lifted.z).unwrap();
        prop_assert!(back.max_abs_diff(&t) <= 1e-8 * t.scale());
    }

    #[test]
    fn similarity_transports_certificates(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { nx: 2, nw: 2, nu: 1, nz: 1, ny: 1 };
        let plant: Plant<f64> = sample::plant(&mut rng, dims);
        let Some(k) = sample::stabilizing_controller(&mut rng, &plant, 200) else { return Ok(()) };
        let j = norm::cost(&plant, &k, 1e-10).unwrap().gamma;
        let Ok(cert) = brl::certify_riccati(&plant, &k, 1.1 * j, 0.0).unwrap() else { return Ok(()) };
        let mut s = sample::gaussian::<f64, _>(&mut rng, 2, 2, 0.3);
        s += nalgebra::DMatrix::identity(2, 2);
        prop_assume!(linalg::sigma_min(&s) > 0.1);
        let ks = k.similarity(&s).unwrap();
        let js = norm::cost(&plant, &ks, 1e-10).unwrap().gamma;
        prop_assert!((js - j).abs() <= 1e-7 * j);
        prop_assert!(assemble_closed_loop(&plant, &ks).unwrap().is_stable(0.0).unwrap());
        // x_K ↦ S x_K maps P to blkdiag(I, S⁻ᵀ) P blkdiag(I, S⁻¹).
        let s_inv = s.clone().try_inverse().unwrap();
        let mut t = nalgebra::DMatrix::<f64>::identity(4, 4);
        t.view_mut((2, 2), (2, 2)).copy_from(&s_inv);
        let p = t.transpose() * &cert.p * &t;
        let p = (&p + p.transpose()) * 0.5;
        prop_assert!(brl::check_certificate(&plant, &ks, &p, cert.gamma, None).unwrap().is_ok());
    }
}
