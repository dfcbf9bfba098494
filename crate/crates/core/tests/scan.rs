use hinfland::brl::CertMethod;
use hinfland::lti::Plant;
use hinfland::scan::{self, Axis, ScanConfig, CSV_HEADER};

fn small() -> ScanConfig {
    ScanConfig {
        ak: Axis::new(-2.0, 2.0, 9).unwrap(),
        bk: Axis::new(-4.0, 4.0, 9).unwrap(),
        dk: Axis::new(-1.0, 1.0, 3).unwrap(),
        ..ScanConfig::desk()
    }
}

#[test]
fn serial_and_parallel_scans_agree() {
    let plant = Plant::<f64>::example();
    let serial = scan::run_scan(&plant, &ScanConfig { workers: Some(1), ..small() }).unwrap();
    let parallel = scan::run_scan(&plant, &ScanConfig { workers: Some(3), ..small() }).unwrap();
    assert_eq!(serial.len(), 9 * 9 * 3);
    assert_eq!(scan::to_csv(&serial).unwrap(), scan::to_csv(&parallel).unwrap());
}

#[test]
fn records_follow_grid_order() {
    let cfg = small();
    let records = scan::run_scan(&Plant::<f64>::example(), &cfg).unwrap();
    for (i, r) in records.iter().enumerate() {
        assert_eq!((r.a_k, r.b_k, r.d_k), cfg.point(i));
    }
}

#[test]
fn stabilizing_points_carry_valid_certificates() {
    let cfg = small();
    let records = scan::run_scan(&Plant::<f64>::example(), &cfg).unwrap();
    let stabilizing: Vec<_> = records.iter().filter(|r| r.stabilizing).collect();
    assert!(!stabilizing.is_empty());
    for r in stabilizing {
        assert!(r.gamma.unwrap() > 0.0);
        assert!(r.lambda_min_p.unwrap() >= cfg.eig_floor);
        assert!(matches!(r.cert_method, Some(CertMethod::Riccati | CertMethod::Lmi)));
        assert!(r.ln_abs_p12.is_some());
    }
    for r in records.iter().filter(|r| !r.stabilizing) {
        assert!(r.gamma.is_none() && r.cert_method.is_none());
    }
}

#[test]
fn csv_round_trips() {
    let records = scan::run_scan(&Plant::<f64>::example(), &small()).unwrap();
    let text = scan::to_csv(&records).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert!(!text.contains('\r'));
    let back = scan::parse_csv(&text).unwrap();
    assert_eq!(scan::to_csv(&back).unwrap(), text);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    scan::emit_csv(&records, &path).unwrap();
    assert_eq!(scan::read_csv(&path).unwrap().len(), records.len());
}

#[test]
fn svg_has_one_cell_per_slice_point() {
    let records = scan::run_scan(&Plant::<f64>::example(), &small()).unwrap();
    let slice = scan::slice(&records, 0.0);
    assert_eq!(slice.len(), 81);
    let svg = scan::svg_heatmap(&slice, "ln_abs_p12").unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), 81);
    assert!(svg.contains("A_K") && svg.contains("B_K"));
}

#[test]
fn degenerate_line_passes_near_the_points() {
    let cfg = ScanConfig { dk: Axis::new(-0.75, 0.75, 3).unwrap(), ..ScanConfig::desk() };
    let records = scan::run_scan(&Plant::<f64>::example(), &cfg).unwrap();
    let diagonal = cfg.ak.span().hypot(cfg.bk.span());
    for d_k in cfg.dk.values() {
        let fit = scan::fit_degenerate_line(&scan::slice(&records, d_k), cfg.ck, scan::LOW_QUANTILE).unwrap();
        assert!(fit.max_perp_dist <= 0.05 * diagonal, "slice {d_k}: {fit:?}");
    }
}

#[test]
fn rejects_plants_with_more_than_one_state() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let dims = hinfland::lti::Dims { nx: 2, nw: 1, nu: 1, nz: 1, ny: 1 };
    let plant: Plant<f64> = hinfland::sample::plant(&mut rng, dims);
    assert!(scan::run_scan(&plant, &small()).is_err());
}
