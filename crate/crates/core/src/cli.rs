//! Command-line front end.
//!
//! Options come from flags, an optional `--config` file of `key = value`
//! lines and, for the seed, the `MAXDEFICIT_SEED` environment variable. Flags
//! win over the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::allocate::{
    invariance_check, kkt_certificate, method1_exponential, method2_generic, method2_two_line,
    rho1_two_line, rho2_two_line, AllocationProblem, WeightedLine,
};
use crate::deficit::DeficitFunctional;
use crate::distortion::Distortion;
use crate::error::Error;
use crate::measures::{
    coherent_measure, convex_measure, critical_threshold, ear_convex_measure, premium_lower_bound,
    proportional_measure, proportional_measure_bracketed, Branch, MeasureResult, Method,
};
use crate::model::ExponentialLine;
use crate::numerics::Tolerance;
use crate::simulate::{estimate_finite_ruin, rolling_requirement, simulate_max_loss, PathState, SimBatch};

pub const SEED_ENV: &str = "MAXDEFICIT_SEED";
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "maxdeficit", version, about = "Distorted expected maximum deficit risk measures and reserve allocation")]
pub struct Cli {
    #[command(flatten)]
    pub opts: Options,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Business line as `lambda,mu,c`; repeat for several lines
    #[arg(long = "line", global = true, value_name = "LAMBDA,MU,C")]
    pub lines: Vec<String>,

    /// Distortion: identity, ph:p, tvar:alpha, varstep:alpha
    #[arg(long, global = true)]
    pub g: Option<String>,

    /// Absolute deficit tolerance for the convex and EAR measures
    #[arg(long = "A", global = true, value_name = "A", allow_negative_numbers = true)]
    pub a_level: Option<f64>,

    /// Proportional margin
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub delta: Option<f64>,

    /// Level for `--g tvar` / `--g varstep` given without a parameter
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,

    /// Capital: total budget for `allocate`, evaluation points for `simulate`
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub u: Vec<f64>,

    /// Finite horizon; omitted means infinite
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub t: Option<f64>,

    /// Number of simulated paths
    #[arg(long, global = true)]
    pub n: Option<usize>,

    /// Seed (falls back to MAXDEFICIT_SEED)
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Significant digits in numeric output
    #[arg(long, global = true)]
    pub precision: Option<usize>,

    /// Method-1 distortion exponents, one per line
    #[arg(long, global = true, value_delimiter = ',')]
    pub gamma: Vec<f64>,

    /// Allocation method: 1 (marginal sum) or 2 (aggregate minimum)
    #[arg(long, global = true)]
    pub method: Option<u8>,

    /// Mean claim size for `figure`
    #[arg(long, global = true)]
    pub mu: Option<f64>,

    /// Adjustment-coefficient grid for `figure`: `start:stop:step` or a comma list
    #[arg(long, global = true)]
    pub grid: Option<String>,

    /// `key = value` file supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureKind {
    Coherent,
    Convex,
    Proportional,
    Ear,
    PremiumBound,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a risk measure for each `--line`
    Measure {
        #[arg(value_enum)]
        kind: MeasureKind,
    },
    /// Allocate `--u` across the `--line`s
    Allocate,
    /// Regenerate one of the reference tables
    Table {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        which: u8,
    },
    /// Capital requirements over an adjustment-coefficient grid
    Figure,
    /// Simulate maximum losses and report finite-horizon ruin probabilities
    Simulate,
    /// Run the invariant suite
    Check,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_convergence() => 4,
            CliError::Lib(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    2
                }
            };
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let opts = resolve(cli.opts)?;
    let (report, code) = match cli.command {
        Command::Measure { kind } => (cmd_measure(&opts, kind, stderr)?, 0),
        Command::Allocate => (cmd_allocate(&opts)?, 0),
        Command::Table { which } => (cmd_table(&opts, which)?, 0),
        Command::Figure => (cmd_figure(&opts)?, 0),
        Command::Simulate => (cmd_simulate(&opts)?, 0),
        Command::Check => {
            let report = cmd_check()?;
            let failed = report.rows.iter().any(|r| matches!(&r[1], Cell::Text(s) if s == "FAIL"));
            (report, if failed { 1 } else { 0 })
        }
    };
    let text = report.render(opts.format, opts.precision)?;
    match (&opts.out, report.kind) {
        (Some(path), ReportKind::Data) => std::fs::write(path, text)?,
        _ => stdout.write_all(text.as_bytes())?,
    }
    Ok(code)
}

/// Options after merging the config file, environment and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub lines: Vec<ExponentialLine>,
    pub g: Option<String>,
    pub a_level: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub u: Vec<f64>,
    pub t: Option<f64>,
    pub n: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub precision: usize,
    pub gamma: Vec<f64>,
    pub method: u8,
    pub mu: f64,
    pub grid: Option<String>,
}

const CONFIG_KEYS: &[&str] = &[
    "line", "g", "A", "delta", "alpha", "u", "t", "n", "seed", "out", "format", "precision", "gamma",
    "method", "mu", "grid",
];

/// Parse a `key = value` config file. `line` may repeat; other keys may not.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(usage(format!("config line {}: unknown key '{k}'", i + 1)));
        }
        let slot = map.entry(k.to_string()).or_default();
        if !slot.is_empty() && k != "line" {
            return Err(usage(format!("config line {}: duplicate key '{k}'", i + 1)));
        }
        slot.push(v.to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("invalid value '{v}' for {key}")))
}

fn parse_list(key: &str, v: &str) -> CliResult<Vec<f64>> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

pub fn parse_line(spec: &str) -> CliResult<ExponentialLine> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("--line expects lambda,mu,c, got '{spec}'")));
    }
    let lambda = parse_num("--line", parts[0])?;
    let mu = parse_num("--line", parts[1])?;
    let c = parse_num("--line", parts[2])?;
    Ok(ExponentialLine::new(lambda, mu, c)?)
}

pub fn resolve(opts: Options) -> CliResult<Resolved> {
    let cfg = match &opts.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let one = |k: &str| cfg.get(k).and_then(|v| v.first()).map(String::as_str);
    fn pick<T>(flag: Option<T>, cfg: Option<&str>, key: &str) -> CliResult<Option<T>>
    where
        T: std::str::FromStr,
    {
        match (flag, cfg) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(s)) => parse_num(key, s).map(Some),
            (None, None) => Ok(None),
        }
    }

    let line_specs: Vec<String> = if !opts.lines.is_empty() {
        opts.lines.clone()
    } else {
        cfg.get("line").cloned().unwrap_or_default()
    };
    let lines = line_specs.iter().map(|s| parse_line(s)).collect::<CliResult<Vec<_>>>()?;

    let seed = match pick(opts.seed, one("seed"), "seed")? {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(s) => parse_num(SEED_ENV, &s)?,
            Err(_) => DEFAULT_SEED,
        },
    };
    let format = match (opts.format, one("format")) {
        (Some(f), _) => f,
        (None, Some(s)) => Format::from_str(s, true).map_err(|_| usage(format!("invalid format '{s}'")))?,
        (None, None) => Format::Table,
    };
    let precision = pick(opts.precision, one("precision"), "precision")?.unwrap_or(6);
    if !(1..=17).contains(&precision) {
        return Err(usage(format!("--precision must be in 1..=17, got {precision}")));
    }
    let u = if !opts.u.is_empty() {
        opts.u.clone()
    } else {
        one("u").map(|s| parse_list("u", s)).transpose()?.unwrap_or_default()
    };
    let gamma = if !opts.gamma.is_empty() {
        opts.gamma.clone()
    } else {
        one("gamma").map(|s| parse_list("gamma", s)).transpose()?.unwrap_or_default()
    };
    let method = pick(opts.method, one("method"), "method")?.unwrap_or(1);
    if method != 1 && method != 2 {
        return Err(usage(format!("--method must be 1 or 2, got {method}")));
    }
    Ok(Resolved {
        lines,
        g: opts.g.clone().or_else(|| one("g").map(str::to_string)),
        a_level: pick(opts.a_level, one("A"), "A")?,
        delta: pick(opts.delta, one("delta"), "delta")?,
        alpha: pick(opts.alpha, one("alpha"), "alpha")?,
        u,
        t: pick(opts.t, one("t"), "t")?,
        n: pick(opts.n, one("n"), "n")?,
        seed,
        out: opts.out.clone().or_else(|| one("out").map(PathBuf::from)),
        format,
        precision,
        gamma,
        method,
        mu: pick(opts.mu, one("mu"), "mu")?.unwrap_or(1.0),
        grid: opts.grid.clone().or_else(|| one("grid").map(str::to_string)),
    })
}

impl Resolved {
    fn distortion(&self) -> CliResult<Distortion> {
        let spec = self.g.as_deref().unwrap_or("identity");
        let full = match (spec, self.alpha) {
            ("tvar" | "varstep", Some(a)) => format!("{spec}:{a}"),
            _ => spec.to_string(),
        };
        full.parse::<Distortion>().map_err(|e| match e {
            Error::Argument(m) => usage(m),
            other => CliError::Lib(other),
        })
    }

    fn need_lines(&self, cmd: &str) -> CliResult<&[ExponentialLine]> {
        if self.lines.is_empty() {
            return Err(usage(format!("{cmd} needs at least one --line")));
        }
        Ok(&self.lines)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReportKind {
    /// Goes to `--out` when given.
    Data,
    /// Always printed; `--out` names some other artifact.
    Summary,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    kind: ReportKind,
}

impl Report {
    fn new(header: &[&str]) -> Self {
        Report {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            kind: ReportKind::Data,
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn cells(&self, precision: usize) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Num(x) => format_sig(*x, precision),
                        Cell::Text(s) => s.clone(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn render(&self, format: Format, precision: usize) -> CliResult<String> {
        let cells = self.cells(precision);
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header).map_err(csv_err)?;
                for r in &cells {
                    w.write_record(r).map_err(csv_err)?;
                }
                let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
                Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
            }
            Format::Table => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
                for r in &cells {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.len());
                    }
                }
                let mut out = String::new();
                let line = |out: &mut String, row: &[String]| {
                    let parts: Vec<String> = row
                        .iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:>w$}", w = *w))
                        .collect();
                    let _ = writeln!(out, "{}", parts.join("  ").trim_end());
                };
                line(&mut out, &self.header);
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("  "));
                for r in &cells {
                    line(&mut out, r);
                }
                Ok(out)
            }
        }
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// `x` rounded to `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // exponent after rounding, so 9.9999999 becomes 10.0000 and not 9.99999
    let sci = format!("{:.*e}", digits.saturating_sub(1), x);
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("exponent");
    if !(-5..15).contains(&exp) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        // avoid "-0.000"
        return s.trim_start_matches('-').to_string();
    }
    s
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::ClosedForm => "closed_form",
        Method::RootBracketed => "root_bracketed",
        Method::LambertW => "lambert_w",
        Method::Empirical => "empirical",
    }
}

fn branch_name(b: Option<Branch>) -> &'static str {
    match b {
        None => "",
        Some(Branch::LinearSegment) => "linear_segment",
        Some(Branch::ExponentialTail) => "exponential_tail",
        Some(Branch::AnalyticContinuation) => "analytic_continuation",
    }
}

fn line_label(l: &ExponentialLine) -> String {
    format!("{},{},{}", l.lambda(), l.mu(), l.c())
}

fn deficit_for(opts: &Resolved, line: &ExponentialLine, g: Distortion) -> CliResult<DeficitFunctional> {
    match opts.t {
        None => Ok(DeficitFunctional::for_line(*line, g)?),
        Some(t) => {
            let batch = simulate_max_loss(line, t, opts.n.unwrap_or(10_000), opts.seed)?;
            Ok(DeficitFunctional::from_batch(g, &batch)?)
        }
    }
}

fn cmd_measure(opts: &Resolved, kind: MeasureKind, stderr: &mut dyn Write) -> CliResult<Report> {
    let lines = opts.need_lines("measure")?;
    if kind == MeasureKind::PremiumBound {
        let g = opts.distortion()?;
        let mut r = Report::new(&["line", "g", "estimate", "std_error", "concave"]);
        for l in lines {
            let b = premium_lower_bound(l, &g, opts.n.unwrap_or(10_000), opts.seed)?;
            if !b.concave {
                writeln!(stderr, "warning: {g} is not concave; the premium bound is not guaranteed")?;
            }
            r.push(vec![
                line_label(l).into(),
                g.to_string().into(),
                b.estimate.into(),
                b.std_error.into(),
                b.concave.to_string().into(),
            ]);
        }
        return Ok(r);
    }
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| usage(format!("measure {kind:?} needs {flag}").to_lowercase()));
    let mut r = Report::new(&["line", "g", "measure", "param", "value", "method", "residual", "branch"]);
    for l in lines {
        let (name, g_label, param, res): (&str, String, f64, MeasureResult) = match kind {
            MeasureKind::Ear => {
                if opts.t.is_some() {
                    return Err(CliError::Lib(Error::Unsupported(
                        "the EAR measure is defined for the infinite horizon only".into(),
                    )));
                }
                let a = need(opts.a_level, "--A")?;
                ("ear", "-".into(), a, ear_convex_measure(l, a)?)
            }
            _ => {
                let g = opts.distortion()?;
                let d = deficit_for(opts, l, g)?;
                match kind {
                    MeasureKind::Coherent => ("coherent", g.to_string(), f64::NAN, coherent_measure(&d)?),
                    MeasureKind::Convex => {
                        let a = need(opts.a_level, "--A")?;
                        ("convex", g.to_string(), a, convex_measure(&d, a)?)
                    }
                    MeasureKind::Proportional => {
                        let delta = need(opts.delta, "--delta")?;
                        ("proportional", g.to_string(), delta, proportional_measure(&d, delta)?)
                    }
                    _ => unreachable!(),
                }
            }
        };
        let param_cell = if param.is_nan() { Cell::from("") } else { Cell::from(param) };
        r.push(vec![
            line_label(l).into(),
            g_label.into(),
            name.into(),
            param_cell,
            res.value.into(),
            method_name(res.method).into(),
            res.residual.into(),
            branch_name(res.branch).into(),
        ]);
    }
    Ok(r)
}

fn single_budget(opts: &Resolved) -> CliResult<f64> {
    match opts.u.as_slice() {
        [u] => Ok(*u),
        [] => Err(usage("allocate needs --u")),
        _ => Err(usage("allocate takes a single --u")),
    }
}

fn weighted_lines(lines: &[ExponentialLine], gamma: &[f64]) -> CliResult<Vec<WeightedLine>> {
    if !gamma.is_empty() && gamma.len() != lines.len() {
        return Err(usage(format!(
            "--gamma has {} entries for {} lines",
            gamma.len(),
            lines.len()
        )));
    }
    Ok(lines
        .iter()
        .enumerate()
        .map(|(k, &line)| WeightedLine {
            line,
            gamma: gamma.get(k).copied().unwrap_or(1.0),
        })
        .collect())
}

fn cmd_allocate(opts: &Resolved) -> CliResult<Report> {
    let lines = opts.need_lines("allocate")?;
    let total = single_budget(opts)?;
    let res = if opts.method == 1 {
        method1_exponential(&AllocationProblem::new(weighted_lines(lines, &opts.gamma)?, total)?)?
    } else {
        if !opts.gamma.is_empty() {
            return Err(usage("--gamma applies to method 1 only"));
        }
        let g = opts.distortion()?;
        if lines.len() == 2 && g == Distortion::Identity {
            method2_two_line(&lines[0], &lines[1], total)?
        } else {
            let tol = Tolerance::new(1e-10, 1e-10, 2000)?;
            method2_generic(lines, &g, total, &tol)?
        }
    };
    let mut r = Report::new(&["line", "u_star", "marginal", "active", "threshold", "objective"]);
    for k in 0..lines.len() {
        r.push(vec![
            Cell::Text((k + 1).to_string()),
            res.u_star[k].into(),
            res.marginals[k].into(),
            res.active_set.contains(&k).to_string().into(),
            res.threshold.into(),
            res.objective.into(),
        ]);
    }
    Ok(r)
}

pub fn table1_lines() -> Vec<ExponentialLine> {
    vec![
        ExponentialLine::new(10.0, 1.0, 12.0).expect("valid line"),
        ExponentialLine::new(1.0, 10.0, 15.0).expect("valid line"),
        ExponentialLine::new(0.1, 100.0, 20.0).expect("valid line"),
    ]
}

pub fn table4_lines() -> Vec<ExponentialLine> {
    vec![
        ExponentialLine::from_ruin_constants(0.9, 0.05, 1.0).expect("valid line"),
        ExponentialLine::from_ruin_constants(0.9, 0.01, 1.0).expect("valid line"),
    ]
}

fn cmd_table(opts: &Resolved, which: u8) -> CliResult<Report> {
    let lines = |default: Vec<ExponentialLine>| {
        if opts.lines.is_empty() {
            default
        } else {
            opts.lines.clone()
        }
    };
    match which {
        1 => {
            let mut r = Report::new(&["line", "lambda", "mu", "c", "a", "b"]);
            for (k, l) in lines(table1_lines()).iter().enumerate() {
                let c = l.ruin_constants();
                r.push(vec![
                    Cell::Text((k + 1).to_string()),
                    l.lambda().into(),
                    l.mu().into(),
                    l.c().into(),
                    c.a.into(),
                    c.b.into(),
                ]);
            }
            Ok(r)
        }
        2 => {
            let ls = lines(table1_lines());
            let budgets = if opts.u.is_empty() { vec![100.0, 40.0, 10.0, 1.0] } else { opts.u.clone() };
            let labels: Vec<String> = budgets.iter().map(|u| format!("u={u}")).collect();
            let mut header = vec!["line"];
            header.extend(labels.iter().map(String::as_str));
            let mut r = Report::new(&header);
            let sols = budgets
                .iter()
                .map(|&u| method1_exponential(&AllocationProblem::undistorted(&ls, u)?))
                .collect::<crate::error::Result<Vec<_>>>()?;
            for k in 0..ls.len() {
                let mut row = vec![Cell::Text((k + 1).to_string())];
                row.extend(sols.iter().map(|s| Cell::Num(s.u_star[k])));
                r.push(row);
            }
            Ok(r)
        }
        3 => {
            let ls = lines(table1_lines());
            let total = opts.u.first().copied().unwrap_or(100.0);
            let gamma = if opts.gamma.is_empty() {
                let mut g = vec![1.0; ls.len()];
                *g.last_mut().expect("at least one line") = 2.0;
                g
            } else {
                opts.gamma.clone()
            };
            let base = method1_exponential(&AllocationProblem::undistorted(&ls, total)?)?;
            let pen = method1_exponential(&AllocationProblem::new(weighted_lines(&ls, &gamma)?, total)?)?;
            let mut r = Report::new(&["line", "gamma_baseline", "u_baseline", "gamma_penalized", "u_penalized"]);
            for k in 0..ls.len() {
                r.push(vec![
                    Cell::Text((k + 1).to_string()),
                    1.0.into(),
                    base.u_star[k].into(),
                    gamma[k].into(),
                    pen.u_star[k].into(),
                ]);
            }
            Ok(r)
        }
        _ => {
            let ls = lines(table4_lines());
            if ls.len() != 2 {
                return Err(usage("table 4 compares exactly two lines"));
            }
            let budgets = if opts.u.is_empty() { vec![30.0, 60.0, 120.0] } else { opts.u.clone() };
            let mut r = Report::new(&["u", "m1_u1", "m1_u2", "m2_u1", "m2_u2"]);
            for u in budgets {
                let m1 = method1_exponential(&AllocationProblem::undistorted(&ls, u)?)?;
                let m2 = method2_two_line(&ls[0], &ls[1], u)?;
                r.push(vec![
                    u.into(),
                    m1.u_star[0].into(),
                    m1.u_star[1].into(),
                    m2.u_star[0].into(),
                    m2.u_star[1].into(),
                ]);
            }
            Ok(r)
        }
    }
}

/// Parse `start:stop:step` or a comma list.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step): (f64, f64, f64) =
                (parse_num("--grid", start)?, parse_num("--grid", stop)?, parse_num("--grid", step)?);
            if !(step > 0.0) || stop < start {
                return Err(usage(format!("bad grid '{spec}'")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        [_] => parse_list("--grid", spec),
        _ => Err(usage(format!("bad grid '{spec}'"))),
    }
}

pub const FIGURE_A: [f64; 2] = [5.0, 20.0];
pub const FIGURE_DELTA: [f64; 2] = [0.01, 0.05];
pub const FIGURE_DEFAULT_GRID: &str = "0.02:0.88:0.02";

fn cmd_figure(opts: &Resolved) -> CliResult<Report> {
    let grid = parse_grid(opts.grid.as_deref().unwrap_or(FIGURE_DEFAULT_GRID))?;
    let alpha = opts.alpha.unwrap_or(0.01);
    let gs = [
        Distortion::Identity,
        Distortion::ProportionalHazard { exponent: 0.5 },
        Distortion::tvar(alpha)?,
    ];
    let mut header = vec!["R".to_string()];
    for g in &gs {
        header.push(format!("{g}_coherent"));
        for a in FIGURE_A {
            header.push(format!("{g}_convex_A{a}"));
        }
        for d in FIGURE_DELTA {
            header.push(format!("{g}_proportional_d{d}"));
        }
    }
    for a in FIGURE_A {
        header.push(format!("ear_A{a}"));
    }
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut r = Report::new(&hdr);
    for &rr in &grid {
        let line = ExponentialLine::from_adjustment(opts.mu, rr)?;
        let mut row = vec![Cell::Num(rr)];
        for g in &gs {
            let d = DeficitFunctional::for_line(line, *g)?;
            row.push(coherent_measure(&d)?.value.into());
            for a in FIGURE_A {
                row.push(convex_measure(&d, a)?.value.into());
            }
            for delta in FIGURE_DELTA {
                row.push(proportional_measure(&d, delta)?.value.into());
            }
        }
        for a in FIGURE_A {
            row.push(ear_convex_measure(&line, a)?.value.into());
        }
        r.push(row);
    }
    Ok(r)
}

fn cmd_simulate(opts: &Resolved) -> CliResult<Report> {
    let lines = opts.need_lines("simulate")?;
    if lines.len() != 1 {
        return Err(usage("simulate takes exactly one --line"));
    }
    let line = lines[0];
    let t = opts.t.unwrap_or(200.0);
    let n = opts.n.unwrap_or(100_000);
    let batch = simulate_max_loss(&line, t, n, opts.seed)?;
    let mut report = Report::new(&["u", "psi_t", "half_width", "psi_infinite"]);
    if let Some(path) = &opts.out {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        batch.write_to(&mut w)?;
        w.flush()?;
        report.kind = ReportKind::Summary;
    }
    let us = if opts.u.is_empty() { vec![0.0, 5.0, 10.0, 20.0] } else { opts.u.clone() };
    for u in us {
        let e = estimate_finite_ruin(&batch, u);
        report.push(vec![
            u.into(),
            e.probability.into(),
            e.half_width.into(),
            line.ultimate_ruin(u).into(),
        ]);
    }
    Ok(report)
}

/// Re-read a batch written by `simulate --out`.
pub fn load_batch(path: &std::path::Path) -> CliResult<SimBatch> {
    let file = std::fs::File::open(path)?;
    Ok(SimBatch::read_from(std::io::BufReader::new(file))?)
}

fn cmd_check() -> CliResult<Report> {
    let mut r = Report::new(&["invariant", "status", "detail"]);
    let mut record = |name: &str, ok: bool, detail: String| {
        r.push(vec![name.into(), if ok { "PASS" } else { "FAIL" }.into(), detail.into()]);
    };
    let t1 = table1_lines();

    let mut worst: f64 = 0.0;
    for l in &t1 {
        for g in [
            Distortion::Identity,
            Distortion::ProportionalHazard { exponent: 0.5 },
            Distortion::TVaR { alpha: 0.05 },
        ] {
            let cf = DeficitFunctional::for_line(*l, g)?;
            let q = DeficitFunctional::ultimate_quadrature(*l, g)?;
            for u in [0.0, 3.0, 25.0, 120.0] {
                let (a, b) = (cf.eval(u)?, q.eval(u)?);
                worst = worst.max((a - b).abs() / a.max(1.0));
            }
        }
    }
    record("closed form equals quadrature", worst <= 1e-6, format!("max rel gap {worst:.3e}"));

    let mut worst: f64 = 0.0;
    for l in &t1 {
        let d = DeficitFunctional::for_line(*l, Distortion::Identity)?;
        for delta in [0.01, 0.05, 0.2] {
            let w = proportional_measure(&d, delta)?.value;
            let b = proportional_measure_bracketed(&d, delta)?.value;
            worst = worst.max((w - b).abs());
        }
    }
    record("Lambert W equals Brent", worst <= 1e-8, format!("max gap {worst:.3e}"));

    let mut ok = true;
    for l in &t1 {
        let d = DeficitFunctional::for_line(*l, Distortion::ProportionalHazard { exponent: 0.5 })?;
        let ds = critical_threshold(&d)?;
        ok &= proportional_measure(&d, 0.5 * ds)?.value > coherent_measure(&d)?.value;
    }
    record("proportional dominates below delta*", ok, String::new());

    let mut ok = true;
    for u in [1.0, 10.0, 40.0, 100.0] {
        let res = method1_exponential(&AllocationProblem::undistorted(&t1, u)?)?;
        ok &= (res.u_star.iter().sum::<f64>() - u).abs() <= 1e-9 * u;
        for &k in &res.active_set {
            ok &= (res.marginals[k] - res.threshold).abs() <= 1e-8;
        }
    }
    record("method 1 budget and equalization", ok, String::new());

    let t4 = table4_lines();
    let mut ok = true;
    for u in [30.0, 60.0, 120.0] {
        let res = method2_two_line(&t4[0], &t4[1], u)?;
        ok &= kkt_certificate(&res).is_ok();
        for i in 0..=50 {
            let x = u * i as f64 / 50.0;
            ok &= rho2_two_line(&t4[0], &t4[1], x, u - x)? <= rho1_two_line(&t4[0], &t4[1], x, u - x)?;
            ok &= res.objective <= rho2_two_line(&t4[0], &t4[1], x, u - x)? + 1e-12;
        }
    }
    record("method 2 optimality and rho2 <= rho1", ok, String::new());

    let inv = invariance_check(&t1, &Distortion::ProportionalHazard { exponent: 0.5 }, 100.0)?;
    record("uniform distortion invariance", inv, String::new());

    let mut ok = true;
    for (l, m) in [(0.0, 0.0), (-3.0, 0.0), (7.0, 7.5)] {
        let s = PathState::new(1.0, l, m)?;
        ok &= rolling_requirement(&s, 5.0) == l + 5.0;
    }
    record("rolling decomposition", ok, String::new());

    let a = simulate_max_loss(&t1[0], 20.0, 2000, 7)?;
    let b = simulate_max_loss(&t1[0], 20.0, 2000, 7)?;
    record("simulation reproducible", a == b, String::new());

    Ok(r)
}
