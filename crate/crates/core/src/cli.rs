//! `divkit` command line.
//!
//! Exit codes: 0 success or consistent, 1 refuted or witness found, 2 input
//! error, 3 numeric degeneracy.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::characterization::{
    beta_necessity_probe, counterexample_search, theta_scan, ProbeOutcome, SearchConfig,
    ThetaGrid, Verdict, SCHEMA,
};
use crate::divergence::{self, format_extended, DivergenceValue, IndexTriple};
use crate::error::Error;
use crate::generator::{standardize, GeneratorSpec, StandardizedGenerator};
use crate::grid::{Grid, GridDensity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REFUTED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Tuning parameters used by `limit-check`.
pub const LIMIT_ALPHAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// Largest accepted gap to KL at the smallest alpha in `limit-check`.
pub const LIMIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "divkit", version, about = "Bregman / DPD / LDPD divergences and logarithmic Bregman diagnostics")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a divergence between two density files.
    Compute(ComputeArgs),
    /// Scan the uniform-density identity over theta for a generator and weights.
    Diagnose(DiagnoseArgs),
    /// Search for densities that break the logarithmic Bregman divergence.
    Search(SearchArgs),
    /// Check that DPD and LDPD approach KL as alpha shrinks.
    LimitCheck(LimitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DivKind {
    Bregman,
    Dpd,
    Ldpd,
    Kl,
    #[value(name = "logbregman")]
    LogBregman,
}

impl DivKind {
    fn name(self) -> &'static str {
        match self {
            DivKind::Bregman => "bregman",
            DivKind::Dpd => "dpd",
            DivKind::Ldpd => "ldpd",
            DivKind::Kl => "kl",
            DivKind::LogBregman => "logbregman",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long, value_enum)]
    pub div: DivKind,
    /// Density CSV for f (the model density).
    #[arg(long)]
    pub f: PathBuf,
    /// Density CSV for g (the data density).
    #[arg(long)]
    pub g: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Index triple a0,a1,a2.
    #[arg(long)]
    pub idx: Option<String>,
    /// Generator JSON file.
    #[arg(long = "gen")]
    pub generator: Option<PathBuf>,
    /// Resample both densities onto lo,hi,n.
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long = "gen")]
    pub generator: PathBuf,
    #[arg(long)]
    pub idx: String,
    /// Log-spaced probes lo,hi,n.
    #[arg(long = "theta-range")]
    pub theta_range: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long = "gen")]
    pub generator: PathBuf,
    #[arg(long)]
    pub idx: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Probes for equal uniform densities, lo,hi,n.
    #[arg(long = "theta-range")]
    pub theta_range: Option<String>,
    /// Grid lo,hi,n for the random smooth pairs.
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[arg(long)]
    pub f: PathBuf,
    #[arg(long)]
    pub g: PathBuf,
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let mut ctx = Ctx { out, err };
    let result = match &cfg.command {
        Command::Compute(a) => cmd_compute(&mut ctx, a),
        Command::Diagnose(a) => cmd_diagnose(&mut ctx, a),
        Command::Search(a) => cmd_search(&mut ctx, a),
        Command::LimitCheck(a) => cmd_limit_check(&mut ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DegenerateIntegral { .. } | Error::DegenerateDensity => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.err, "warning: {msg}");
    }

    fn emit(&mut self, path: Option<&Path>, body: &str) -> Result<(), Error> {
        match path {
            Some(p) => std::fs::write(p, body).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            }),
            None => self.out.write_all(body.as_bytes()).map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            }),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn parse_grid(s: &str) -> Result<Grid, Error> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::param(format!("grid '{s}' must be lo,hi,n"));
    match parts[..] {
        [lo, hi, n] => Grid::new(
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
            n.parse().map_err(|_| bad())?,
        ),
        _ => Err(bad()),
    }
}

fn load_generator(path: &Path) -> Result<StandardizedGenerator, Error> {
    let spec = GeneratorSpec::load(path)?;
    let b = spec.build().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    standardize(&b)
}

fn load_density(ctx: &mut Ctx, path: &Path) -> Result<GridDensity, Error> {
    let loaded = GridDensity::load_csv(path)?;
    for w in &loaded.warnings {
        ctx.warn(&format!("{}: {w}", path.display()));
    }
    Ok(loaded.density)
}

fn resample(ctx: &mut Ctx, d: GridDensity, target: Grid, name: &str) -> Result<GridDensity, Error> {
    if d.grid().is_compatible(&target) {
        return Ok(d);
    }
    let (r, residual) = d.resample(target)?;
    ctx.warn(&format!(
        "resampled {name} onto [{}, {}] x {} by linear interpolation; max interpolation residual (mass before renormalizing) {residual:e}",
        target.lo(),
        target.hi(),
        target.len()
    ));
    Ok(r)
}

/// Loads f and g onto a common grid: `--grid` when given, else f's grid.
fn load_pair(
    ctx: &mut Ctx,
    f: &Path,
    g: &Path,
    grid: Option<&str>,
) -> Result<(GridDensity, GridDensity), Error> {
    let f = load_density(ctx, f)?;
    let g = load_density(ctx, g)?;
    match grid.map(parse_grid).transpose()? {
        Some(target) => Ok((resample(ctx, f, target, "f")?, resample(ctx, g, target, "g")?)),
        None => {
            let target = *f.grid();
            let g = resample(ctx, g, target, "g")?;
            Ok((f, g))
        }
    }
}

fn require<T: Clone>(v: &Option<T>, flag: &str, div: DivKind) -> Result<T, Error> {
    v.clone()
        .ok_or_else(|| Error::param(format!("--div {} requires --{flag}", div.name())))
}

#[derive(Serialize)]
struct ComputeReport<'a> {
    schema: &'static str,
    command: &'static str,
    divergence: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    idx: Option<IndexTriple>,
    #[serde(flatten)]
    result: &'a DivergenceValue,
}

fn cmd_compute(ctx: &mut Ctx, a: &ComputeArgs) -> Result<i32, Error> {
    let (f, g) = load_pair(ctx, &a.f, &a.g, a.grid.as_deref())?;
    let mut generator = None;
    let mut idx = None;
    let mut alpha = None;
    let value = match a.div {
        DivKind::Bregman => {
            let b = load_generator(&require(&a.generator, "gen", a.div)?)?;
            let v = divergence::bregman(&b, &g, &f)?;
            generator = Some(b);
            v
        }
        DivKind::Dpd => {
            alpha = Some(require(&a.alpha, "alpha", a.div)?);
            divergence::dpd(&g, &f, alpha.unwrap())?
        }
        DivKind::Ldpd => {
            alpha = Some(require(&a.alpha, "alpha", a.div)?);
            divergence::ldpd(&g, &f, alpha.unwrap())?
        }
        DivKind::Kl => divergence::kl(&g, &f)?,
        DivKind::LogBregman => {
            let b = load_generator(&require(&a.generator, "gen", a.div)?)?;
            let t = IndexTriple::parse(&require(&a.idx, "idx", a.div)?)?;
            let v = divergence::log_bregman(&b, &g, &f, &t)?;
            generator = Some(b);
            idx = Some(t);
            v
        }
    };
    let body = match a.output.format {
        Format::Json => to_json(&ComputeReport {
            schema: SCHEMA,
            command: "compute",
            divergence: a.div.name(),
            generator: generator.as_ref().map(|b| b.label()),
            alpha,
            idx,
            result: &value,
        }),
        Format::Csv => {
            let mut s = String::from("quantity,value\n");
            s.push_str(&format!("{},{}\n", a.div.name(), format_extended(value.value)));
            for t in &value.terms {
                s.push_str(&format!("{},{}\n", t.name, format_extended(t.value)));
            }
            s
        }
    };
    ctx.emit(a.output.out.as_deref(), &body)?;
    Ok(EXIT_OK)
}

fn theta_values(range: Option<&str>) -> Result<Vec<f64>, Error> {
    Ok(match range {
        Some(s) => ThetaGrid::parse(s)?,
        None => ThetaGrid::default(),
    }
    .values())
}

fn cmd_diagnose(ctx: &mut Ctx, a: &DiagnoseArgs) -> Result<i32, Error> {
    let b = load_generator(&a.generator)?;
    let idx = IndexTriple::parse(&a.idx)?;
    let thetas = theta_values(a.theta_range.as_deref())?;
    let mut report = theta_scan(&b, &idx, &thetas)?;
    if !idx.is_balanced() {
        if let ProbeOutcome::Witness(w) = beta_necessity_probe(&b, &idx)? {
            if report.verdict.is_consistent() {
                report.verdict = Verdict::Refuted {
                    theta: w.theta.unwrap_or(f64::NAN),
                    defect: w.value,
                };
            }
            report.beta_witness = Some(w);
        }
    }
    for w in &report.warnings {
        ctx.warn(w);
    }
    let body = match a.output.format {
        Format::Json => to_json(&report),
        Format::Csv => report.to_csv(),
    };
    ctx.emit(a.output.out.as_deref(), &body)?;
    Ok(if report.verdict.is_consistent() {
        EXIT_OK
    } else {
        EXIT_REFUTED
    })
}

#[derive(Serialize)]
struct SearchReport<'a> {
    schema: &'static str,
    command: &'static str,
    generator: &'a str,
    idx: IndexTriple,
    seed: u64,
    outcome: &'a ProbeOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    density_files: Option<DensityFiles>,
}

#[derive(Serialize)]
struct DensityFiles {
    f: String,
    g: String,
}

/// `dir/name.json` -> `dir/name.<tag>.csv`.
pub fn witness_density_path(out: &Path, tag: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "witness".into());
    out.with_file_name(format!("{stem}.{tag}.csv"))
}

fn cmd_search(ctx: &mut Ctx, a: &SearchArgs) -> Result<i32, Error> {
    let b = load_generator(&a.generator)?;
    let idx = IndexTriple::parse(&a.idx)?;
    let mut cfg = SearchConfig::with_seed(a.seed);
    if a.theta_range.is_some() {
        cfg.thetas = theta_values(a.theta_range.as_deref())?;
    }
    if let Some(g) = &a.grid {
        cfg.smooth_grid = parse_grid(g)?;
    }
    let outcome = counterexample_search(&b, &idx, &cfg)?;

    let mut density_files = None;
    if let (ProbeOutcome::Witness(w), Some(out)) = (&outcome, &a.output.out) {
        if let (Some(fs), Some(gs)) = (&w.f_spec, &w.g_spec) {
            let (fp, gp) = (witness_density_path(out, "f"), witness_density_path(out, "g"));
            fs.build()?.write_csv(&fp)?;
            gs.build()?.write_csv(&gp)?;
            let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            density_files = Some(DensityFiles {
                f: name(&fp),
                g: name(&gp),
            });
        }
    }

    let body = match a.output.format {
        Format::Json => to_json(&SearchReport {
            schema: SCHEMA,
            command: "search",
            generator: b.label(),
            idx,
            seed: a.seed,
            outcome: &outcome,
            density_files,
        }),
        Format::Csv => match &outcome {
            ProbeOutcome::Witness(w) => format!(
                "result,kind,theta,value\nwitness,{},{},{}\n",
                serde_json::to_value(w.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                w.theta.map(format_extended).unwrap_or_default(),
                format_extended(w.value)
            ),
            ProbeOutcome::Exhausted { probes, .. } => {
                format!("result,kind,theta,value\nexhausted,,,{probes}\n")
            }
        },
    };
    ctx.emit(a.output.out.as_deref(), &body)?;
    Ok(match outcome {
        ProbeOutcome::Witness(_) => EXIT_REFUTED,
        ProbeOutcome::Exhausted { .. } => EXIT_OK,
    })
}

#[derive(Serialize)]
struct LimitRow {
    alpha: f64,
    dpd: f64,
    ldpd: f64,
    dpd_gap: f64,
    ldpd_gap: f64,
}

#[derive(Serialize)]
struct LimitReport {
    schema: &'static str,
    command: &'static str,
    #[serde(serialize_with = "divergence::serialize_extended")]
    kl: f64,
    rows: Vec<LimitRow>,
    dpd_monotone: bool,
    ldpd_monotone: bool,
    tolerance: f64,
    converged: bool,
}

fn cmd_limit_check(ctx: &mut Ctx, a: &LimitArgs) -> Result<i32, Error> {
    let (f, g) = load_pair(ctx, &a.f, &a.g, a.grid.as_deref())?;
    let kl = divergence::kl(&g, &f)?.value;
    if !kl.is_finite() {
        return Err(Error::Precondition(
            "KL is infinite for this pair; the limit check needs f > 0 wherever g > 0".into(),
        ));
    }
    let mut rows = Vec::new();
    for alpha in LIMIT_ALPHAS {
        let dpd = divergence::dpd(&g, &f, alpha)?.value;
        let ldpd = divergence::ldpd(&g, &f, alpha)?.value;
        rows.push(LimitRow {
            alpha,
            dpd,
            ldpd,
            dpd_gap: (dpd - kl).abs(),
            ldpd_gap: (ldpd - kl).abs(),
        });
    }
    let decreasing = |gap: fn(&LimitRow) -> f64| rows.windows(2).all(|w| gap(&w[1]) < gap(&w[0]));
    let dpd_monotone = decreasing(|r| r.dpd_gap);
    let ldpd_monotone = decreasing(|r| r.ldpd_gap);
    let last = rows.last().expect("alphas");
    let converged = dpd_monotone
        && ldpd_monotone
        && last.dpd_gap < LIMIT_TOLERANCE
        && last.ldpd_gap < LIMIT_TOLERANCE;
    let report = LimitReport {
        schema: SCHEMA,
        command: "limit-check",
        kl,
        rows,
        dpd_monotone,
        ldpd_monotone,
        tolerance: LIMIT_TOLERANCE,
        converged,
    };
    let body = match a.output.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut s = String::from("alpha,dpd,ldpd,kl,dpd_gap,ldpd_gap\n");
            for r in &report.rows {
                s.push_str(&format!(
                    "{:?},{:?},{:?},{:?},{:?},{:?}\n",
                    r.alpha, r.dpd, r.ldpd, kl, r.dpd_gap, r.ldpd_gap
                ));
            }
            s
        }
    };
    ctx.emit(a.output.out.as_deref(), &body)?;
    Ok(if converged { EXIT_OK } else { EXIT_REFUTED })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("divkit").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("compute"));
    }

    #[test]
    fn unknown_flag_is_input_error() {
        let (code, _, err) = run_args(&["compute", "--bogus"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(!err.is_empty());
    }

    #[test]
    fn missing_file_is_input_error() {
        let (code, _, err) = run_args(&[
            "compute", "--div", "kl", "--f", "/nonexistent/f.csv", "--g", "/nonexistent/g.csv",
        ]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("error"));
    }

    #[test]
    fn grid_flag_parsing() {
        assert!(parse_grid("0,1,11").is_ok());
        assert!(parse_grid("0,1").is_err());
        assert!(parse_grid("1,0,11").is_err());
    }

    #[test]
    fn witness_paths() {
        let p = witness_density_path(Path::new("/tmp/run/w.json"), "f");
        assert_eq!(p, PathBuf::from("/tmp/run/w.f.csv"));
    }

    #[test]
    fn degenerate_integrals_map_to_exit_three() {
        let e = Error::DegenerateIntegral {
            term: "I1",
            value: 0.0,
        };
        assert_eq!(exit_code(&e), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::param("x")), EXIT_INPUT);
    }
}
