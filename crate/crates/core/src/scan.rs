//! Grid scan over scalar controllers `(A_K, B_K, D_K)` with fixed `C_K`:
//! norm, boundary certificate and `ln σ_min(P₁₂)` per grid point, with CSV
//! and SVG output and a through-origin line fit of the low-`P₁₂` locus.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brl::{self, CertMethod, Certificate, LmiOptions};
use crate::error::{Error, Result};
use crate::lti::{assemble_closed_loop, Controller, Plant};
use crate::norm;
use crate::scalar::Real;

pub const CSV_HEADER: &str = "a_k,b_k,d_k,stabilizing,gamma,ln_abs_p12,lambda_min_p,cert_method,lmi_max_eig";
/// Default selection quantile for [`fit_degenerate_line`].
pub const LOW_QUANTILE: f64 = 0.02;

/// `n` equally spaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("axis needs lo < hi and at least 2 points, got {lo}:{hi}:{n}")));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn at(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.at(i)).collect()
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanConfig {
    pub ak: Axis,
    pub bk: Axis,
    pub dk: Axis,
    pub ck: f64,
    /// Relative tolerance of the norm; certificates are sought at `γ̂/(1 − rel_tol)`.
    pub rel_tol: f64,
    pub eig_floor: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ScanConfig {
    /// 41×41×13 grid over `[−2,2]×[−4,4]×[−1.5,1.5]`, `C_K = 1`.
    pub fn desk() -> Self {
        Self::with_counts(41, 41, 13)
    }

    /// 101×101×61 grid over the same box.
    pub fn full() -> Self {
        Self::with_counts(101, 101, 61)
    }

    fn with_counts(na: usize, nb: usize, nd: usize) -> Self {
        ScanConfig {
            ak: Axis { lo: -2.0, hi: 2.0, n: na },
            bk: Axis { lo: -4.0, hi: 4.0, n: nb },
            dk: Axis { lo: -1.5, hi: 1.5, n: nd },
            ck: 1.0,
            rel_tol: 1e-9,
            eig_floor: brl::EIG_FLOOR,
            workers: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ak.n * self.bk.n * self.dk.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid point `i` in output order: `D_K` slowest, then `A_K`, then `B_K`.
    pub fn point(&self, i: usize) -> (f64, f64, f64) {
        let ib = i % self.bk.n;
        let ia = (i / self.bk.n) % self.ak.n;
        let id = i / (self.bk.n * self.ak.n);
        (self.ak.at(ia), self.bk.at(ib), self.dk.at(id))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ax) in [("A_K", self.ak), ("B_K", self.bk), ("D_K", self.dk)] {
            Axis::new(ax.lo, ax.hi, ax.n).map_err(|e| Error::domain(format!("{name}: {e}")))?;
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1e-2) {
            return Err(Error::domain("rel_tol must lie in (0, 1e-2)"));
        }
        if !(self.eig_floor >= 0.0) || !self.ck.is_finite() {
            return Err(Error::domain("eig_floor must be non-negative and C_K finite"));
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub a_k: f64,
    pub b_k: f64,
    pub d_k: f64,
    pub stabilizing: bool,
    pub gamma: Option<f64>,
    pub ln_abs_p12: Option<f64>,
    pub lambda_min_p: Option<f64>,
    pub cert_method: Option<CertMethod>,
    pub lmi_max_eig: Option<f64>,
}

impl ScanRecord {
    fn bare(a_k: f64, b_k: f64, d_k: f64) -> Self {
        ScanRecord {
            a_k,
            b_k,
            d_k,
            stabilizing: false,
            gamma: None,
            ln_abs_p12: None,
            lambda_min_p: None,
            cert_method: None,
            lmi_max_eig: None,
        }
    }
}

/// Certificate at `level` whose `P` clears `eig_floor`: Riccati first, then
/// the LMI fallback with its floor raised until the mapped-back `P` clears it.
pub fn boundary_certificate<T: Real>(plant: &Plant<T>, k: &Controller<T>, level: T, eig_floor: T) -> Result<Option<Certificate<T>>> {
    match brl::certify_riccati(plant, k, level, T::zero())? {
        Ok(c) if c.lambda_min_p >= eig_floor => return Ok(Some(c)),
        Ok(c) => log::debug!("Riccati certificate below floor (lambda_min {:e})", c.lambda_min_p),
        Err(why) => log::debug!("Riccati certificate failed: {why}"),
    }
    let mut p_floor = eig_floor.max(T::lit(brl::P_FLOOR));
    for _ in 0..3 {
        let opts = LmiOptions {
            p_floor,
            ..LmiOptions::default()
        };
        match brl::certify_fallback(plant, k, level, opts)? {
            Ok(c) if c.lambda_min_p >= eig_floor => return Ok(Some(c)),
            Ok(_) => p_floor *= T::lit(10.0),
            Err(why) => {
                log::debug!("LMI certificate failed: {why}");
                break;
            }
        }
    }
    Ok(None)
}

fn scan_point<T: Real>(plant: &Plant<T>, cfg: &ScanConfig, (a_k, b_k, d_k): (f64, f64, f64)) -> Result<ScanRecord> {
    let mut rec = ScanRecord::bare(a_k, b_k, d_k);
    let k = Controller::scalar(T::lit(d_k), T::lit(cfg.ck), T::lit(b_k), T::lit(a_k));
    let cl = assemble_closed_loop(plant, &k)?;
    if !cl.is_stable(T::zero())? {
        return Ok(rec);
    }
    rec.stabilizing = true;
    let rel_tol = T::lit(cfg.rel_tol);
    let gamma = match norm::hinf_norm(&cl, rel_tol) {
        Ok(r) => r.gamma,
        Err(e) => {
            log::warn!("norm failed at ({a_k}, {b_k}, {d_k}): {e}");
            return Ok(rec);
        }
    };
    rec.gamma = Some(gamma.as_f64());
    let level = gamma / (T::one() - rel_tol);
    let cert = match boundary_certificate(plant, &k, level, T::lit(cfg.eig_floor)) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("certification failed at ({a_k}, {b_k}, {d_k}): {e}");
            None
        }
    };
    if let Some(c) = cert {
        rec.ln_abs_p12 = c.p12_sigma_min.map(|s| s.as_f64().ln());
        rec.lambda_min_p = Some(c.lambda_min_p.as_f64());
        rec.cert_method = Some(c.method);
        rec.lmi_max_eig = Some(c.lmi_max_eig.as_f64());
    }
    Ok(rec)
}

/// Evaluates every grid point; records come back in grid order whatever the
/// worker count. Per-point numerical failures are recorded, not raised.
pub fn run_scan<T: Real>(plant: &Plant<T>, cfg: &ScanConfig) -> Result<Vec<ScanRecord>> {
    cfg.validate()?;
    let d = plant.dims();
    if (d.nx, d.nu, d.ny) != (1, 1, 1) {
        return Err(Error::domain("the scan grid parameterizes scalar controllers; the plant needs nx = nu = ny = 1"));
    }
    let work = || (0..cfg.len()).into_par_iter().map(|i| scan_point(plant, cfg, cfg.point(i))).collect::<Result<Vec<_>>>();
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::numerical(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Records of the slice `D_K = d_k` (exact match on the grid value).
pub fn slice(records: &[ScanRecord], d_k: f64) -> Vec<ScanRecord> {
    records.iter().filter(|r| r.d_k == d_k).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    /// Normal angle: the line is `cos θ·A_K + sin θ·B_K C_K = 0`, `θ ∈ (−π/2, π/2]`.
    pub theta: f64,
    pub max_perp_dist: f64,
    pub n_low: usize,
    /// The `ln|P₁₂|` value at the selection quantile.
    pub threshold: f64,
}

/// Total-least-squares line through the origin in `(A_K, B_K C_K)` through
/// the records whose `ln|P₁₂|` lies at or below the `low_quantile` of the
/// slice. Errors with "insufficient data" when fewer than 3 points qualify.
pub fn fit_degenerate_line(records: &[ScanRecord], ck: f64, low_quantile: f64) -> Result<LineFit> {
    if !(low_quantile > 0.0 && low_quantile < 0.5) {
        return Err(Error::domain("low_quantile must lie in (0, 0.5)"));
    }
    let mut vals: Vec<(f64, f64, f64)> = records
        .iter()
        .filter_map(|r| r.ln_abs_p12.filter(|v| !v.is_nan()).map(|v| (v, r.a_k, r.b_k * ck)))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_low = ((low_quantile * vals.len() as f64).ceil() as usize).min(vals.len());
    if n_low < 3 {
        return Err(Error::domain(format!(
            "insufficient data: {n_low} points below the {low_quantile} quantile (need 3)"
        )));
    }
    let low = &vals[..n_low];
    let mut s = Matrix2::<f64>::zeros();
    for &(_, x, y) in low {
        s += Matrix2::new(x * x, x * y, x * y, y * y);
    }
    let eig = s.symmetric_eigen();
    let i = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    let (mut c, mut sn) = (eig.eigenvectors[(0, i)], eig.eigenvectors[(1, i)]);
    if c < 0.0 || (c == 0.0 && sn < 0.0) {
        c = -c;
        sn = -sn;
    }
    let theta = sn.atan2(c);
    let max_perp_dist = low.iter().map(|&(_, x, y)| (c * x + sn * y).abs()).fold(0.0, f64::max);
    Ok(LineFit {
        theta,
        max_perp_dist,
        n_low,
        threshold: low[n_low - 1].0,
    })
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed,
/// exponent form outside `[1e-4, 1e12)`.
pub fn fmt_g(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..DIGITS).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mant), sign, exp.abs())
    } else {
        trim(&format!("{:.*}", (DIGITS - 1 - exp) as usize, x))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

/// CSV text with the fixed header and LF line endings.
pub fn to_csv(records: &[ScanRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::numerical(format!("csv: {e}"));
    w.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for r in records {
        w.write_record([
            fmt_g(r.a_k),
            fmt_g(r.b_k),
            fmt_g(r.d_k),
            r.stabilizing.to_string(),
            opt(r.gamma),
            opt(r.ln_abs_p12),
            opt(r.lambda_min_p),
            r.cert_method.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
            opt(r.lmi_max_eig),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::numerical(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::numerical(format!("csv: {e}")))
}

pub fn emit_csv(records: &[ScanRecord], path: &Path) -> Result<()> {
    let text = to_csv(records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => field
            .parse()
            .map_err(|_| Error::Parse(format!("line {line}: bad {what} value {field:?}"))),
    }
}

fn parse_opt(field: &str, what: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, what, line).map(Some)
    }
}

/// Parses CSV text produced by [`to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ScanRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::Parse(format!("expected header {CSV_HEADER:?}"))),
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate().skip(1) {
        let line = i + 1;
        let row = row.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        if row.len() != 9 {
            return Err(Error::Parse(format!("line {line}: expected 9 fields, found {}", row.len())));
        }
        let stabilizing = match &row[3] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Parse(format!("line {line}: bad stabilizing value {other:?}"))),
        };
        let cert_method = match &row[7] {
            "riccati" => Some(CertMethod::Riccati),
            "lmi" => Some(CertMethod::Lmi),
            "given" => Some(CertMethod::Given),
            "none" => None,
            other => return Err(Error::Parse(format!("line {line}: bad cert_method {other:?}"))),
        };
        out.push(ScanRecord {
            a_k: parse_f64(&row[0], "a_k", line)?,
            b_k: parse_f64(&row[1], "b_k", line)?,
            d_k: parse_f64(&row[2], "d_k", line)?,
            stabilizing,
            gamma: parse_opt(&row[4], "gamma", line)?,
            ln_abs_p12: parse_opt(&row[5], "ln_abs_p12", line)?,
            lambda_min_p: parse_opt(&row[6], "lambda_min_p", line)?,
            cert_method,
            lmi_max_eig: parse_opt(&row[8], "lmi_max_eig", line)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<ScanRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Numeric field of a record by CSV column name.
pub fn field(r: &ScanRecord, name: &str) -> Result<Option<f64>> {
    Ok(match name {
        "gamma" => r.gamma,
        "ln_abs_p12" => r.ln_abs_p12,
        "lambda_min_p" => r.lambda_min_p,
        "lmi_max_eig" => r.lmi_max_eig,
        "a_k" => Some(r.a_k),
        "b_k" => Some(r.b_k),
        "d_k" => Some(r.d_k),
        _ => return Err(Error::domain(format!("no numeric column named {name:?}"))),
    })
}

/// Anchors of the colormap (dark blue → teal → green → yellow), sampled from
/// viridis; luminance increases monotonically along it.
const COLORMAP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];
/// Fill for cells with no finite value.
const MISSING: &str = "#bdbdbd";

/// Color at `t ∈ [0, 1]` by piecewise-linear interpolation of [`COLORMAP`].
pub fn colormap(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// SVG heatmap of `field` over one `D_K` slice: one `rect` per record on the
/// `(A_K, B_K)` grid, colored linearly over the finite range of the field.
pub fn svg_heatmap(records: &[ScanRecord], field_name: &str) -> Result<String> {
    let mut a: Vec<f64> = records.iter().map(|r| r.a_k).collect();
    let mut b: Vec<f64> = records.iter().map(|r| r.b_k).collect();
    for v in [&mut a, &mut b] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let values: Vec<Option<f64>> = records
        .iter()
        .map(|r| field(r, field_name).map(|v| v.filter(|x| x.is_finite())))
        .collect::<Result<_>>()?;
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (cell, margin) = (8.0, 60.0);
    let (w, h) = (a.len() as f64 * cell, b.len() as f64 * cell);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        w + 2.0 * margin,
        h + 2.0 * margin,
        w + 2.0 * margin,
        h + 2.0 * margin
    );
    let title = records.first().map(|r| format!("{field_name}, D_K = {}", fmt_g(r.d_k))).unwrap_or_default();
    let _ = writeln!(s, r#"<title>{title}</title>"#);
    let _ = writeln!(s, r#"<g id="cells" transform="translate({margin},{margin})">"#);
    for (r, v) in records.iter().zip(&values) {
        let i = a.partition_point(|&x| x < r.a_k);
        let j = b.partition_point(|&x| x < r.b_k);
        let fill = match v {
            Some(v) if hi > lo => colormap((v - lo) / (hi - lo)),
            Some(_) => colormap(0.5),
            None => MISSING.to_string(),
        };
        // B_K grows upward.
        let y = h - (j as f64 + 1.0) * cell;
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>"#,
            i as f64 * cell
        );
    }
    let _ = writeln!(s, "</g>");
    let (x0, y1) = (margin, margin + h);
    let fmt_end = |v: Option<&f64>| v.map(|x| fmt_g(*x)).unwrap_or_default();
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">A_K</text>"#,
        x0 + w / 2.0,
        y1 + 40.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 {} {})">B_K</text>"#,
        x0 - 40.0,
        margin + h / 2.0,
        x0 - 40.0,
        margin + h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-size="10">{}</text>"#, y1 + 15.0, fmt_end(a.first()));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
        x0 + w,
        y1 + 15.0,
        fmt_end(a.last())
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{y1}" font-size="10" text-anchor="end">{}</text>"#,
        x0 - 5.0,
        fmt_end(b.first())
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
        x0 - 5.0,
        margin + 10.0,
        fmt_end(b.last())
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{title} (range {} to {})</text>"#,
        x0 + w / 2.0,
        margin - 20.0,
        fmt_g(lo),
        fmt_g(hi)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg_heatmap(records: &[ScanRecord], field_name: &str, path: &Path) -> Result<()> {
    let text = svg_heatmap(records, field_name)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format_matches_c() {
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(-2.5), "-2.5");
        assert_eq!(fmt_g(0.1), "0.1");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_g(123456789012.0), "123456789012");
        assert_eq!(fmt_g(1234567890123.0), "1.23456789012e+12");
        assert_eq!(fmt_g(1e-5), "1e-05");
        assert_eq!(fmt_g(1.5e-6), "1.5e-06");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_g(9.9999999999999e-5), "0.0001");
    }

    #[test]
    fn grid_order_is_dk_ak_bk() {
        let cfg = ScanConfig::with_counts(3, 2, 2);
        assert_eq!(cfg.point(0), (-2.0, -4.0, -1.5));
        assert_eq!(cfg.point(1), (-2.0, 4.0, -1.5));
        assert_eq!(cfg.point(2), (0.0, -4.0, -1.5));
        assert_eq!(cfg.point(6), (-2.0, -4.0, 1.5));
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), "#440154");
        assert_eq!(colormap(1.0), "#fde725");
    }
}
