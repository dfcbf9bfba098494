//! `hinfland`: command-line front end for H∞ norm computation, bounded-real
//! certificates, the convex lifting, synthesis, policy search and the
//! controller-space scan.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use hinfland::brl::{self, LmiOptions, EIG_FLOOR, P12_FLOOR};
use hinfland::lift::{self, CertifiedTriple, LiftedDoc, TripleDoc};
use hinfland::lti::{self, matrix_to_rows, Controller, ControllerDoc, Plant, PlantDoc};
use hinfland::scan::{self, Axis, ScanConfig};
use hinfland::search::{self, ControllerBox, SearchParams};
use hinfland::synth::{self, FeasibilityOptions};
use hinfland::{norm, Error};

#[derive(Parser, Debug)]
#[command(name = "hinfland", version, about = "H-infinity direct policy optimization toolkit")]
#[command(after_help = "Logging: set HINFLAND_LOG to error, warn, info or debug (default: warn).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the built-in single-state example plant as JSON.
    ExamplePlant(OutArgs),
    /// Closed-loop H-infinity norm J(K).
    Norm(NormArgs),
    /// Bounded-real certificate P at a given level.
    Certify(CertifyArgs),
    /// Map a certified controller to the convex lifted coordinates.
    Lift(LiftArgs),
    /// Check the lifting round trip on a certified controller.
    Roundtrip(LiftArgs),
    /// Local descent: gradient-sampling search, or the lifted descent direction.
    Descend(DescendArgs),
    /// Globally optimal level by bisection over the lifted convex set.
    Synthesize(SynthArgs),
    /// Scan a grid of scalar controllers: norm, certificate and ln|P12| per point.
    Scan(ScanArgs),
    /// Fit the degenerate line through the origin on each D_K slice of a scan CSV.
    Fitline(FitArgs),
    /// Sampled Clarke-stationarity measure over a radius ladder.
    Stationarity(StationarityArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SystemArgs {
    /// Plant JSON file [default: built-in example plant]
    #[arg(long, value_name = "PATH")]
    plant: Option<PathBuf>,
    /// Controller JSON file with AK, BK, CK, DK
    #[arg(long, value_name = "PATH")]
    controller: PathBuf,
}

#[derive(Args, Debug)]
struct NormArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Relative tolerance of the norm
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    rel_tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Certificate level [default: J/(1 - eps)]
    #[arg(long, value_parser = positive)]
    gamma: Option<f64>,
    /// Relative tolerance of the norm
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    rel_tol: f64,
    /// Relative margin of the default level above the norm
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    eps: f64,
    /// Floor on lambda_min(P) reported as `above_floor`
    #[arg(long, default_value = "1e-4", value_parser = non_negative)]
    eig_floor: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct LiftArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Certificate level [default: J/(1 - eps)]
    #[arg(long, value_parser = positive)]
    gamma: Option<f64>,
    /// Relative tolerance of the norm
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    rel_tol: f64,
    /// Relative margin of the default level above the norm
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    eps: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DescendMethod {
    /// Gradient sampling with Armijo backtracking.
    Search,
    /// Lifted descent direction toward the synthesized optimum.
    Direction,
}

#[derive(Args, Debug)]
struct DescendArgs {
    /// Plant JSON file [default: built-in example plant]
    #[arg(long, value_name = "PATH")]
    plant: Option<PathBuf>,
    /// Start controller JSON [default: random stabilizing controller drawn with --seed]
    #[arg(long, value_name = "PATH")]
    controller: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DescendMethod::Search)]
    method: DescendMethod,
    /// Seed for the start controller and the gradient samples
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of search iterations
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    /// Relative tolerance of the norm and of the synthesis bracket
    #[arg(long, default_value = "1e-6", value_parser = positive)]
    rel_tol: f64,
    /// Finite-difference step of the lifted descent direction
    #[arg(long, default_value = "1e-4", value_parser = positive)]
    step: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Plant JSON file [default: built-in example plant]
    #[arg(long, value_name = "PATH")]
    plant: Option<PathBuf>,
    /// Relative width of the final bisection bracket
    #[arg(long, default_value = "1e-6", value_parser = positive)]
    rel_tol: f64,
    /// Strictness floor of the lifted LMIs
    #[arg(long, default_value = "1e-6", value_parser = positive)]
    eps: f64,
    /// Iteration budget of each feasibility probe
    #[arg(long, default_value_t = 50_000)]
    budget: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Plant JSON file (one state, one input, one output) [default: built-in example plant]
    #[arg(long, value_name = "PATH")]
    plant: Option<PathBuf>,
    /// JSON scan configuration; explicit flags override it [default: none]
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Grid axes as aK:lo:hi:n,bK:lo:hi:n,dK:lo:hi:n
    #[arg(long, default_value = "aK:-2:2:41,bK:-4:4:41,dK:-1.5:1.5:13")]
    grid: String,
    /// Use the 101x101x61 grid over the default box
    #[arg(long, conflicts_with = "grid")]
    full_grid: bool,
    /// Fixed controller output gain C_K
    #[arg(long, default_value = "1")]
    ck: f64,
    /// Relative tolerance of the norm; certificates are sought at J/(1 - eps)
    #[arg(long, default_value = "1e-9", value_parser = positive)]
    eps: f64,
    /// Floor on lambda_min(P) for an accepted certificate
    #[arg(long, default_value = "1e-4", value_parser = non_negative)]
    eig_floor: f64,
    /// Worker threads [default: all cores]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// CSV output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write an SVG heatmap of --field [default: none]
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
    /// Field shown in the heatmap
    #[arg(long, default_value = "ln_abs_p12", value_parser = ["gamma", "ln_abs_p12", "lambda_min_p", "lmi_max_eig"])]
    field: String,
    /// D_K slice shown in the heatmap [default: grid value closest to 0]
    #[arg(long, allow_negative_numbers = true)]
    dk: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Scan CSV file
    csv: PathBuf,
    /// C_K used by the scan
    #[arg(long, default_value = "1")]
    ck: f64,
    /// Fraction of lowest ln|P12| points per slice used in the fit
    #[arg(long, default_value = "0.02", value_parser = positive)]
    quantile: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct StationarityArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Comma-separated sampling radii
    #[arg(long, default_value = "1e-2,1e-3,1e-4", value_delimiter = ',', value_parser = positive)]
    radius: Vec<f64>,
    /// Gradient samples per radius [default: 2 dim(K) + 1]
    #[arg(long)]
    samples: Option<usize>,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be positive and finite".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be non-negative and finite".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// A failed command: usage problems exit with 2, everything else with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_plant(path: Option<&Path>) -> Result<Plant<f64>, Failure> {
    match path {
        None => Ok(Plant::example()),
        Some(p) => Ok(lti::plant_from_json(&read(p)?)?),
    }
}

fn load_controller(path: &Path) -> Result<Controller<f64>, Failure> {
    Ok(lti::controller_from_json(&read(path)?)?)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn emit_text(text: &str, out: Option<&Path>) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Domain(format!("stdout: {e}")))
        }
    }
}

fn emit<S: Serialize>(value: &S, out: &OutArgs) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Domain(e.to_string()))?;
    text.push('\n');
    emit_text(&text, out.out.as_deref())
}

fn system(args: &SystemArgs) -> Result<(Plant<f64>, Controller<f64>), Failure> {
    let plant = load_plant(args.plant.as_deref())?;
    let k = load_controller(&args.controller)?;
    k.check_against(&plant)?;
    Ok((plant, k))
}

/// Certificate at `gamma`, or at `J/(1 − eps)` when no level is given.
fn certificate(
    plant: &Plant<f64>,
    k: &Controller<f64>,
    gamma: Option<f64>,
    rel_tol: f64,
    eps: f64,
) -> Result<brl::Certificate<f64>, Failure> {
    let level = match gamma {
        Some(g) => g,
        None => norm::cost(plant, k, rel_tol)?.gamma / (1.0 - eps),
    };
    brl::certify(plant, k, level, LmiOptions::default())?
        .map_err(|why| Failure::Domain(format!("infeasible at gamma = {level:e}: {why}")))
}

fn triple(plant: &Plant<f64>, k: &Controller<f64>, gamma: Option<f64>, rel_tol: f64, eps: f64) -> Result<CertifiedTriple<f64>, Failure> {
    let cert = certificate(plant, k, gamma, rel_tol, eps)?;
    Ok(CertifiedTriple { k: k.clone(), p: cert.p, gamma: cert.gamma })
}

fn example_plant(args: OutArgs) -> CmdResult {
    let doc = PlantDoc::from_plant(&Plant::<f64>::example());
    let mut value = serde_json::to_value(doc).map_err(|e| Failure::Domain(e.to_string()))?;
    value["equations"] = json!([
        "x'(t) = -x(t) + [1 0] w(t) + u(t)",
        "z(t) = [1; 0] x(t) + [0; 1] u(t)",
        "y(t) = x(t) + [0 1] w(t)"
    ]);
    emit(&value, &args)
}

fn norm_cmd(args: NormArgs) -> CmdResult {
    let (plant, k) = system(&args.system)?;
    let r = norm::cost(&plant, &k, args.rel_tol)?;
    emit(&r, &args.out)
}

fn certify_cmd(args: CertifyArgs) -> CmdResult {
    let (plant, k) = system(&args.system)?;
    let cert = certificate(&plant, &k, args.gamma, args.rel_tol, args.eps)?;
    let above = cert.lambda_min_p >= args.eig_floor;
    let mut value = serde_json::to_value(&cert).map_err(|e| Failure::Domain(e.to_string()))?;
    value["above_floor"] = json!(above);
    emit(&value, &args.out)
}

fn lift_cmd(args: LiftArgs) -> CmdResult {
    let (plant, k) = system(&args.system)?;
    let t = triple(&plant, &k, args.gamma, args.rel_tol, args.eps)?;
    let lifted = lift::phi(&plant, &t)?;
    let member = lift::in_f(&plant, &lifted.z, None)?;
    let mut value = serde_json::to_value(LiftedDoc::from_point(&lifted)).map_err(|e| Failure::Domain(e.to_string()))?;
    value["in_F"] = json!(member);
    emit(&value, &args.out)
}

fn roundtrip_cmd(args: LiftArgs) -> CmdResult {
    let (plant, k) = system(&args.system)?;
    let t = triple(&plant, &k, args.gamma, args.rel_tol, args.eps)?;
    let lifted = lift::phi(&plant, &t)?;
    let back = lift::psi(&plant, &lifted.xi, &lifted.z)?;
    let again = lift::phi(&plant, &back)?;
    let scale = lifted.z.scale();
    emit(
        &json!({
            "triple": TripleDoc::from_triple(&t),
            "psi_phi_error": back.max_abs_diff(&t) / t.scale(),
            "phi_psi_error": again.z.max_abs_diff(&lifted.z) / scale,
            "in_F": lift::in_f(&plant, &lifted.z, None)?,
            "in_S_nd": lift::snd_membership(&plant, &back, None)?.member,
        }),
        &args.out,
    )
}

fn descend_cmd(args: DescendArgs) -> CmdResult {
    let plant = load_plant(args.plant.as_deref())?;
    let k0 = match &args.controller {
        Some(p) => {
            let k = load_controller(p)?;
            k.check_against(&plant)?;
            k
        }
        None => search::random_stabilizing(&plant, args.seed, &ControllerBox::example(), 10_000)?,
    };
    match args.method {
        DescendMethod::Search => {
            let trace = search::search(&plant, &k0, args.budget, args.seed, SearchParams::default())?;
            let last = trace.last();
            let j: Vec<f64> = trace.iterates.iter().map(|i| i.j).collect();
            emit(
                &json!({
                    "status": trace.status,
                    "seed": trace.seed,
                    "iterations": trace.iterates.len() - 1,
                    "start": ControllerDoc::from_controller(&k0),
                    "controller": ControllerDoc::from_controller(&last.k),
                    "J": last.j,
                    "stationarity": last.measure,
                    "radius": last.radius,
                    "J_trace": j,
                }),
                &args.out,
            )
        }
        DescendMethod::Direction => {
            let t = triple(&plant, &k0, None, args.rel_tol.min(1e-9), 1e-9)?;
            let opt = synth::min_gamma(&plant, args.rel_tol, FeasibilityOptions::default())?;
            let better = CertifiedTriple { k: opt.k_star.clone(), p: opt.cert.p.clone(), gamma: opt.gamma_star };
            let v = lift::descent_direction(&plant, &t, &better, args.step)?;
            let step = k0.norm() / hinfland::linalg::sigma_max(&v);
            let dd = norm::directional_derivative_fd(&plant, &k0, &v, &[1e-5 * step, 1e-6 * step])?;
            let j_step = norm::cost(&plant, &k0.perturbed(&v, 1e-3 * step), 1e-10)?.gamma;
            emit(
                &json!({
                    "J": t.gamma,
                    "gamma_better": better.gamma,
                    "direction": matrix_to_rows(&v),
                    "directional_derivative": dd.estimate,
                    "tau": 1e-3 * step,
                    "J_after_step": j_step,
                }),
                &args.out,
            )
        }
    }
}

fn synth_cmd(args: SynthArgs) -> CmdResult {
    let plant = load_plant(args.plant.as_deref())?;
    let opts = FeasibilityOptions { strict_floor: args.eps, max_iter: args.budget };
    let r = synth::min_gamma(&plant, args.rel_tol, opts)?;
    let nd = brl::is_nondegenerate(&plant, &r.k_star, 1e-9, EIG_FLOOR, P12_FLOOR)?;
    let mut value = serde_json::to_value(&r).map_err(|e| Failure::Domain(e.to_string()))?;
    value["nondegenerate"] = json!(nd.nondegenerate);
    emit(&value, &OutArgs { out: args.out.out })
}

/// Parses `aK:lo:hi:n,bK:lo:hi:n,dK:lo:hi:n` (any order, names case-insensitive).
fn parse_grid(spec: &str) -> Result<(Axis, Axis, Axis), Failure> {
    let usage = |msg: String| Failure::Usage(format!("--grid: {msg}"));
    let (mut a, mut b, mut d) = (None, None, None);
    for part in spec.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        let [name, lo, hi, n] = fields[..] else {
            return Err(usage(format!("'{part}' is not name:lo:hi:n")));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| usage(format!("'{s}': {e}")));
        let n = n.parse::<usize>().map_err(|e| usage(format!("'{n}': {e}")))?;
        let axis = Axis::new(num(lo)?, num(hi)?, n).map_err(|e| usage(e.to_string()))?;
        let slot = match name.to_ascii_lowercase().as_str() {
            "ak" => &mut a,
            "bk" => &mut b,
            "dk" => &mut d,
            other => return Err(usage(format!("unknown axis '{other}'"))),
        };
        if slot.replace(axis).is_some() {
            return Err(usage(format!("axis '{name}' given twice")));
        }
    }
    match (a, b, d) {
        (Some(a), Some(b), Some(d)) => Ok((a, b, d)),
        _ => Err(usage("all of aK, bK and dK are required".into())),
    }
}

fn scan_cmd(args: ScanArgs, matches: &clap::ArgMatches) -> CmdResult {
    let plant = load_plant(args.plant.as_deref())?;
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str::<ScanConfig>(&read(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None if args.full_grid => ScanConfig::full(),
        None => ScanConfig::desk(),
    };
    // With a config file only explicitly given flags override it.
    let explicit = |id: &str| args.config.is_none() || matches.value_source(id) == Some(clap::parser::ValueSource::CommandLine);
    if explicit("grid") && !args.full_grid {
        (cfg.ak, cfg.bk, cfg.dk) = parse_grid(&args.grid)?;
    }
    if explicit("ck") {
        cfg.ck = args.ck;
    }
    if explicit("eps") {
        cfg.rel_tol = args.eps;
    }
    if explicit("eig_floor") {
        cfg.eig_floor = args.eig_floor;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w as usize);
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let records = scan::run_scan(&plant, &cfg)?;
    if let Some(svg) = &args.svg {
        let d_k = args.dk.unwrap_or(0.0);
        let nearest = cfg
            .dk
            .values()
            .into_iter()
            .min_by(|x, y| (x - d_k).abs().total_cmp(&(y - d_k).abs()))
            .expect("axis has points");
        scan::emit_svg_heatmap(&scan::slice(&records, nearest), &args.field, svg)?;
    }
    emit_text(&scan::to_csv(&records)?, args.out.as_deref())
}

fn fitline_cmd(args: FitArgs) -> CmdResult {
    if args.quantile >= 0.5 {
        return Err(Failure::Usage("--quantile must be below 0.5".into()));
    }
    let records = scan::read_csv(&args.csv)?;
    let mut slices: Vec<f64> = records.iter().map(|r| r.d_k).collect();
    slices.sort_by(f64::total_cmp);
    slices.dedup();
    let fits: Vec<_> = slices
        .iter()
        .map(|&d_k| match scan::fit_degenerate_line(&scan::slice(&records, d_k), args.ck, args.quantile) {
            Ok(fit) => json!({ "d_k": d_k, "fit": fit }),
            Err(e) => json!({ "d_k": d_k, "error": e.to_string() }),
        })
        .collect();
    emit(&json!({ "ck": args.ck, "quantile": args.quantile, "slices": fits }), &args.out)
}

fn stationarity_cmd(args: StationarityArgs) -> CmdResult {
    let (plant, k) = system(&args.system)?;
    let n = args.samples.unwrap_or(2 * k.matrix().len() + 1);
    let mut rows = Vec::new();
    for &r in &args.radius {
        let s = search::stationarity_measure(&plant, &k, r, n, args.seed)?;
        rows.push(json!({
            "radius": r,
            "measure": s.measure,
            "gradients": s.gradients,
            "resampled": s.resampled,
        }));
    }
    emit(&json!({ "J": norm::cost(&plant, &k, 1e-9)?.gamma, "samples": n, "seed": args.seed, "ladder": rows }), &args.out)
}

fn run(cli: Cli, matches: &clap::ArgMatches) -> CmdResult {
    match cli.command {
        Command::ExamplePlant(a) => example_plant(a),
        Command::Norm(a) => norm_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Lift(a) => lift_cmd(a),
        Command::Roundtrip(a) => roundtrip_cmd(a),
        Command::Descend(a) => descend_cmd(a),
        Command::Synthesize(a) => synth_cmd(a),
        Command::Scan(a) => scan_cmd(a, matches.subcommand_matches("scan").expect("scan matches")),
        Command::Fitline(a) => fitline_cmd(a),
        Command::Stationarity(a) => stationarity_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HINFLAND_LOG", "warn")).init();
    let matches = match <Cli as clap::CommandFactory>::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("hinfland: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("hinfland: {msg}");
            ExitCode::from(1)
        }
    }
}
