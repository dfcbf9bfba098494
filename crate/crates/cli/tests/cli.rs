use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hinfland(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinfland")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const K_STATIC_FREE: &str = r#"{"AK": [[-1]], "BK": [[0]], "CK": [[1]], "DK": [[0]]}"#;

#[test]
fn help_lists_every_flag_with_its_default() {
    let cases: &[(&str, &[(&str, Option<&str>)])] = &[
        ("norm", &[("--plant", None), ("--controller", None), ("--rel-tol", Some("1e-9")), ("--out", None)]),
        (
            "certify",
            &[("--plant", None), ("--controller", None), ("--gamma", None), ("--rel-tol", Some("1e-9")), ("--eps", Some("1e-9")), ("--eig-floor", Some("1e-4")), ("--out", None)],
        ),
        (
            "scan",
            &[
                ("--plant", None),
                ("--grid", Some("aK:-2:2:41,bK:-4:4:41,dK:-1.5:1.5:13")),
                ("--ck", Some("1")),
                ("--eps", Some("1e-9")),
                ("--eig-floor", Some("1e-4")),
                ("--workers", None),
                ("--out", None),
            ],
        ),
        ("descend", &[("--plant", None), ("--controller", None), ("--seed", Some("0")), ("--budget", Some("2000")), ("--out", None)]),
        ("stationarity", &[("--plant", None), ("--controller", None), ("--seed", Some("0")), ("--out", None)]),
        ("synthesize", &[("--plant", None), ("--rel-tol", Some("1e-6")), ("--out", None)]),
        ("fitline", &[("--ck", Some("1")), ("--quantile", Some("0.02")), ("--out", None)]),
    ];
    for (cmd, flags) in cases {
        let out = hinfland(&[cmd, "--help"]);
        assert!(out.status.success());
        let help = stdout(&out);
        for (flag, default) in *flags {
            // The flag's line plus any wrapped continuation lines.
            let mut lines = help.lines().skip_while(|l| !l.trim_start().starts_with(&format!("{flag} ")));
            let line = lines
                .next()
                .into_iter()
                .chain(lines.take_while(|l| !l.trim_start().starts_with('-')))
                .collect::<Vec<_>>()
                .join(" ");
            assert!(!line.is_empty(), "{cmd}: {flag} missing from help:\n{help}");
            if *flag == "--controller" && *cmd != "descend" {
                continue;
            }
            match default {
                Some(d) => assert!(line.contains(&format!("[default: {d}]")), "{cmd} {flag}: {line}"),
                None => assert!(line.contains("[default:"), "{cmd} {flag} lacks a default: {line}"),
            }
        }
    }
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = hinfland(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unreadable_input_is_a_usage_error() {
    let out = hinfland(&["norm", "--controller", "/nonexistent/k.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn norm_and_certify_on_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let plant = dir.path().join("eq13.json");
    let o = hinfland(&["example-plant", "--out", plant.to_str().unwrap()]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&plant).unwrap()).unwrap();
    assert_eq!(doc["A"], serde_json::json!([[-1.0]]));
    assert_eq!(doc["B1"], serde_json::json!([[1.0, 0.0]]));

    let k = write(dir.path(), "k.json", K_STATIC_FREE);
    let o = hinfland(&["norm", "--plant", plant.to_str().unwrap(), "--controller", &k]);
    assert!(o.status.success());
    let gamma = json(&o)["gamma"].as_f64().unwrap();
    assert!((gamma - 1.0).abs() < 1e-9);

    let o = hinfland(&["certify", "--plant", plant.to_str().unwrap(), "--controller", &k, "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));

    let o = hinfland(&["certify", "--controller", &k, "--gamma", "1.5"]);
    assert!(o.status.success());
    let c = json(&o);
    assert!(c["lambda_min_p"].as_f64().unwrap() > 0.0);
    assert_eq!(c["gamma"].as_f64().unwrap(), 1.5);
}

#[test]
fn unstable_controller_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let k = write(dir.path(), "k.json", r#"{"AK": [[1]], "BK": [[0]], "CK": [[0]], "DK": [[0]]}"#);
    let o = hinfland(&["norm", "--controller", &k]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn lift_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let k = write(dir.path(), "k.json", K_STATIC_FREE);
    let o = hinfland(&["lift", "--controller", &k, "--gamma", "2"]);
    assert!(o.status.success());
    assert_eq!(json(&o)["in_F"], Value::Bool(true));
    let o = hinfland(&["roundtrip", "--controller", &k, "--gamma", "2"]);
    let r = json(&o);
    assert!(r["psi_phi_error"].as_f64().unwrap() < 1e-10);
    assert_eq!(r["in_S_nd"], Value::Bool(true));
}

#[test]
fn scan_is_reproducible_and_feeds_fitline() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let svg = dir.path().join("s.svg");
    let grid = "aK:-2:2:21,bK:-4:4:21,dK:-1:1:3";
    let o = hinfland(&["scan", "--grid", grid, "--workers", "2", "--out", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let again = hinfland(&["scan", "--grid", grid, "--workers", "1"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(stdout(&again), text);
    assert_eq!(text.lines().count(), 1 + 21 * 21 * 3);
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("class=\"cell\"").count(), 21 * 21);

    let o = hinfland(&["fitline", csv.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(json(&o)["slices"].as_array().unwrap().len(), 3);
}

#[test]
fn scan_rejects_malformed_grid() {
    let o = hinfland(&["scan", "--grid", "aK:-2:2:21,bK:-4:4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scan_reads_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "scan.json",
        r#"{"ak": {"lo": -1, "hi": 1, "n": 3}, "bk": {"lo": -1, "hi": 1, "n": 3}, "dk": {"lo": 0, "hi": 0.5, "n": 2},
            "ck": 1.0, "rel_tol": 1e-9, "eig_floor": 1e-4, "workers": null}"#,
    );
    let o = hinfland(&["scan", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 18);
}

#[test]
fn descend_and_stationarity_are_seeded() {
    let a = hinfland(&["descend", "--seed", "3", "--budget", "50"]);
    let b = hinfland(&["descend", "--seed", "3", "--budget", "50"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let r = json(&a);
    let trace: Vec<f64> = r["J_trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));

    let dir = tempfile::tempdir().unwrap();
    let k = write(dir.path(), "k.json", r#"{"AK": [[-1]], "BK": [[0.5]], "CK": [[1]], "DK": [[-0.2]]}"#);
    let s = hinfland(&["stationarity", "--controller", &k, "--seed", "4"]);
    assert!(s.status.success());
    let ladder = json(&s)["ladder"].as_array().unwrap().clone();
    assert_eq!(ladder.len(), 3);
    assert!(ladder.iter().all(|r| r["measure"].as_f64().unwrap() > 1e-2));
}
