//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 bad input or usage, 3 solver
//! failure. Floats are printed with 17 significant digits.

pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bounds::{
    positive_part_dual_bound, restricted_integral_bound, restriction_bound, slack, tv_power_bound, BoundsError,
    RadialProfile,
};
use crate::families::{regularity_sweep, sweep_pairs, FamilyConfig, FamilyError};
use crate::measures::{restrict_outside, DiscreteMeasure, MeasureError};
use crate::transport::{dual_value, solve, CostSpec, TransportError};
use crate::viscosity::{
    basic_idea_experiment, coupling_inequality_check, default_cp, doubling_maximize, inf_convolution,
    sup_convolution, CouplingVariant, EquationSpec, GridFunction, PenalizationSpec, ViscosityError,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "LEVY_OT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "levy-ot", version, about = "Optimal transport between Levy measures with a mass reservoir at the origin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Args)]
struct Format {
    /// Emit JSON
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV
    #[arg(long)]
    csv: bool,
}

impl Format {
    fn csv_or(self, default_csv: bool) -> bool {
        if self.json {
            false
        } else {
            self.csv || default_csv
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transport distance between two measure files
    Dist {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        format: Format,
    },
    /// Optimal dual potentials of two measure files
    Dual {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        format: Format,
    },
    /// Evaluate the closed-form bounds that apply to two measure files
    Bounds {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        p: f64,
        /// Radius for the restriction bound
        #[arg(long, default_value_t = 0.5)]
        r: f64,
        /// Radial test profile as `r:value,r:value,...`
        #[arg(long, default_value = "0.25:0,0.5:0.25,0.75:0")]
        profile: String,
        #[command(flatten)]
        format: Format,
    },
    /// Regularity sweep of a measure family
    Sweep {
        config: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        delta_min: f64,
        #[arg(long, default_value_t = 0.5)]
        delta_max: f64,
        /// Write to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
    /// Sup- or inf-convolution of a grid function file
    Convolve {
        grid: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Inf-convolution instead of sup-convolution
        #[arg(long)]
        inf: bool,
        #[command(flatten)]
        format: Format,
    },
    /// Doubling-of-variables maximum, optionally with the coupling check
    Doubling {
        u: PathBuf,
        v: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-3)]
        kappa: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, requires = "nu")]
        mu: Option<PathBuf>,
        #[arg(long, requires = "mu")]
        nu: Option<PathBuf>,
        /// Coupling constant; defaults to the sampled constant for `p`
        #[arg(long)]
        cp: Option<f64>,
        /// Full-measure variant with the total-variation term
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        format: Format,
    },
    /// Periodic linear-equation experiment with a translation family
    Experiment {
        #[arg(long, default_value_t = 512)]
        nodes: usize,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
        epsilons: Vec<f64>,
        #[command(flatten)]
        format: Format,
    },
    /// Randomized invariant suites
    Verify {
        /// metric, duality, oracle, ksupport, bounds, convolution, coupling or all
        #[arg(long, required_unless_present = "replay")]
        suite: Option<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the suite's primary tolerance
        #[arg(long)]
        tol: Option<f64>,
        /// Rerun a reproducer bundle
        #[arg(long, conflicts_with = "suite")]
        replay: Option<PathBuf>,
        /// Directory for reproducer bundles
        #[arg(long, default_value = ".")]
        repro_dir: PathBuf,
        #[command(flatten)]
        format: Format,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Solver(String),
    Failed,
    Io(std::io::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Failed => 1,
            CliError::Input(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Measure(_) | TransportError::InvalidExponent(_) => CliError::Input(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<FamilyError> for CliError {
    fn from(e: FamilyError) -> Self {
        match e {
            FamilyError::Transport(t) => t.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::Transport(t) => t.into(),
            BoundsError::Family(f) => f.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ViscosityError> for CliError {
    fn from(e: ViscosityError) -> Self {
        match e {
            ViscosityError::Transport(t) => t.into(),
            ViscosityError::Singular => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

/// `{:.16e}`: 17 significant digits, exact round trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Compact JSON with every float written by [`fmt_f64`].
struct SigFormatter;

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

/// Serializes `value` as JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter);
    value.serialize(&mut ser).expect("reports serialize");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    writeln!(out, "{}", to_json_string(value))?;
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    Ok(DiscreteMeasure::load(path)?)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_grid(path: &Path) -> Result<GridFunction, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| {
        CliError::Input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })
}

fn cost_spec(p: f64) -> Result<CostSpec, CliError> {
    Ok(CostSpec::new(p)?)
}

/// Caps the global thread pool at `LEVY_OT_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0) {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Input(m) => {
                    let _ = writeln!(err, "error: {m}");
                }
                CliError::Solver(m) => {
                    let _ = writeln!(err, "solver failure: {m}");
                }
                CliError::Io(io) => {
                    let _ = writeln!(err, "i/o error: {io}");
                }
                CliError::Failed => {}
            }
            e.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Dist { a, b, p, format } => cmd_dist(&a, &b, p, format, out),
        Command::Dual { a, b, p, format } => cmd_dual(&a, &b, p, format, out),
        Command::Bounds { a, b, p, r, profile, format } => cmd_bounds(&a, &b, p, r, &profile, format, out),
        Command::Sweep { config, p, s, pairs, seed, delta_min, delta_max, out: path, format } => {
            cmd_sweep(&config, p, s, pairs, seed, (delta_min, delta_max), path.as_deref(), format, out, err)
        }
        Command::Convolve { grid, delta, inf, format } => cmd_convolve(&grid, delta, inf, format, out),
        Command::Doubling { u, v, epsilon, kappa, p, mu, nu, cp, full, format } => {
            let spec = PenalizationSpec::new(epsilon, kappa, p)?;
            let measures = mu.zip(nu);
            cmd_doubling(&u, &v, spec, measures, cp, full, format, out)
        }
        Command::Experiment { nodes, margin, epsilons, format } => cmd_experiment(nodes, margin, &epsilons, format, out),
        Command::Verify { suite, n, seed, tol, replay, repro_dir, format } => match replay {
            Some(path) => cmd_replay(&path, format, out),
            None => cmd_verify(&suite.unwrap_or_default(), n, seed, tol, &repro_dir, format, out, err),
        },
    }
}

fn cmd_dist(a: &Path, b: &Path, p: f64, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let cost = cost_spec(p)?;
    let (mu, nu) = (load_measure(a)?, load_measure(b)?);
    let r = solve(&mu, &nu, cost)?;
    let distance = r.value.max(0.0).powf(1.0 / p);
    if format.csv_or(false) {
        writeln!(out, "p,value,distance,gap,iterations")?;
        writeln!(out, "{},{},{},{},{}", fmt_f64(p), fmt_f64(r.value), fmt_f64(distance), fmt_f64(r.gap), r.iterations)?;
        return Ok(());
    }
    let report = json!({
        "p": p,
        "value": r.value,
        "distance": distance,
        "gap": r.gap,
        "iterations": r.iterations,
        "plan": r.plan,
        "duals": r.duals,
    });
    write_json(out, &report)
}

fn cmd_dual(a: &Path, b: &Path, p: f64, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let cost = cost_spec(p)?;
    let (mu, nu) = (load_measure(a)?, load_measure(b)?);
    let r = solve(&mu, &nu, cost)?;
    let dual = dual_value(&r.duals, &mu, &nu, cost)?;
    if format.csv_or(false) {
        writeln!(out, "side,index,position,potential")?;
        for (i, (f, a)) in r.duals.phi.iter().zip(mu.atoms()).enumerate() {
            writeln!(out, "mu,{i},{},{}", join(&a.position), fmt_f64(*f))?;
        }
        for (j, (g, b)) in r.duals.psi.iter().zip(nu.atoms()).enumerate() {
            writeln!(out, "nu,{j},{},{}", join(&b.position), fmt_f64(*g))?;
        }
        return Ok(());
    }
    let report = json!({
        "p": p,
        "primal": r.value,
        "dual": dual,
        "gap": r.gap,
        "phi": r.duals.phi,
        "psi": r.duals.psi,
    });
    write_json(out, &report)
}

fn parse_profile(text: &str) -> Result<RadialProfile, CliError> {
    let points = text
        .split(',')
        .map(|pair| {
            let (r, v) = pair.split_once(':').ok_or_else(|| CliError::Input(format!("bad profile point `{pair}`")))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| CliError::Input(format!("bad profile number `{s}`: {e}")));
            Ok((parse(r)?, parse(v)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(RadialProfile::new(&points)?)
}

#[derive(Serialize)]
struct BoundRow {
    bound_name: &'static str,
    lhs: f64,
    rhs: f64,
    slack: f64,
    pass: bool,
}

impl BoundRow {
    fn new(bound_name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self { bound_name, lhs, rhs, slack: rhs - lhs, pass: lhs <= rhs + slack(rhs) }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(
    a: &Path,
    b: &Path,
    p: f64,
    r: f64,
    profile: &str,
    format: Format,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cost = cost_spec(p)?;
    let (mu, nu) = (load_measure(a)?, load_measure(b)?);
    let psi = parse_profile(profile)?;
    let value = solve(&mu, &nu, cost)?.value;
    let d = value.max(0.0).powf(1.0 / p);
    let mut rows = Vec::new();
    // bounds whose hypotheses fail for these inputs are skipped
    if let Ok(bound) = tv_power_bound(&mu, &nu, p) {
        rows.push(BoundRow::new("tv_power_bound", d, bound));
    }
    if let Ok(bound) = positive_part_dual_bound(&mu, &nu, p) {
        rows.push(BoundRow::new("positive_part_dual_bound", value, bound));
    }
    let rest = restrict_outside(&mu, r);
    rows.push(BoundRow::new("restriction_bound", solve(&mu, &rest, cost)?.value, restriction_bound(&mu, r, p)?));
    if let Ok((lhs, rhs)) = restricted_integral_bound(&mu, &nu, &psi, p) {
        rows.push(BoundRow::new("restricted_integral_bound", lhs, rhs));
    }
    if format.csv_or(true) {
        writeln!(out, "bound_name,lhs,rhs,slack,pass")?;
        for row in &rows {
            writeln!(out, "{},{},{},{},{}", row.bound_name, fmt_f64(row.lhs), fmt_f64(row.rhs), fmt_f64(row.slack), row.pass)?;
        }
    } else {
        write_json(out, &rows)?;
    }
    if rows.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    p: f64,
    s: f64,
    pairs: usize,
    seed: u64,
    deltas: (f64, f64),
    path: Option<&Path>,
    format: Format,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    cost_spec(p)?;
    if !(deltas.0 > 0.0 && deltas.0 <= deltas.1) {
        return Err(CliError::Input(format!("need 0 < delta_min <= delta_max, got {deltas:?}")));
    }
    let cfg = FamilyConfig::from_json_str(&read(config)?)?;
    let family = cfg.build()?;
    let xs = sweep_pairs(family.x_dim(), pairs, seed, deltas.0, deltas.1);
    let report = regularity_sweep(family.as_ref(), &xs, p, s)?;

    let mut buf = Vec::new();
    if format.csv_or(true) {
        writeln!(buf, "# seed={seed} p={} s={} pairs={pairs}", fmt_f64(p), fmt_f64(s))?;
        writeln!(buf, "x,y,dist_xy,distance,ratio,truncation_cost")?;
        for row in &report.rows {
            writeln!(
                buf,
                "{},{},{},{},{},{}",
                join(&row.x),
                join(&row.y),
                fmt_f64(row.dist_xy),
                fmt_f64(row.distance),
                fmt_f64(row.ratio),
                fmt_f64(row.truncation_cost)
            )?;
        }
    } else {
        write_json(&mut buf, &json!({ "seed": seed, "report": report }))?;
    }
    match path {
        Some(path) => std::fs::write(path, &buf)?,
        None => out.write_all(&buf)?,
    }
    writeln!(err, "max_ratio={}", fmt_f64(report.max_ratio))?;
    Ok(())
}

fn cmd_convolve(path: &Path, delta: f64, inf: bool, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let u = load_grid(path)?;
    let c = if inf { inf_convolution(&u, delta)? } else { sup_convolution(&u, delta)? };
    if format.csv_or(false) {
        writeln!(out, "index,node,value,argmax")?;
        for (k, (v, a)) in c.function.values().iter().zip(&c.argmax).enumerate() {
            writeln!(out, "{k},{},{},{a}", join(&c.function.node(k)), fmt_f64(*v))?;
        }
        return Ok(());
    }
    write_json(out, &json!({ "delta": delta, "kind": if inf { "inf" } else { "sup" }, "function": c.function, "argmax": c.argmax }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_doubling(
    u: &Path,
    v: &Path,
    spec: PenalizationSpec,
    measures: Option<(PathBuf, PathBuf)>,
    cp: Option<f64>,
    full: bool,
    format: Format,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (u, v) = (load_grid(u)?, load_grid(v)?);
    let Some((mu_path, nu_path)) = measures else {
        let m = doubling_maximize(&u, &v, &spec)?;
        if format.csv_or(false) {
            writeln!(out, "x_index,y_index,x_star,y_star,value")?;
            writeln!(out, "{},{},{},{},{}", m.x_index, m.y_index, join(&m.x_star), join(&m.y_star), fmt_f64(m.value))?;
            return Ok(());
        }
        return write_json(out, &json!({ "spec": spec, "max": m }));
    };
    let (mu, nu) = (load_measure(&mu_path)?, load_measure(&nu_path)?);
    let cp = cp.unwrap_or_else(|| default_cp(spec.p).cp);
    let variant = if full { CouplingVariant::Full } else { CouplingVariant::Singular };
    let r = coupling_inequality_check(&u, &v, &spec, &mu, &nu, cp, variant)?;
    if format.csv_or(false) {
        writeln!(out, "x_star,y_star,max_value,cp,lhs,transport_term,tv_term,rhs,lattice_aligned,pass")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            join(&r.x_star),
            join(&r.y_star),
            fmt_f64(r.max_value),
            fmt_f64(r.cp),
            fmt_f64(r.lhs),
            fmt_f64(r.transport_term),
            fmt_f64(r.tv_term),
            fmt_f64(r.rhs),
            r.lattice_aligned,
            r.pass
        )?;
    } else {
        write_json(out, &json!({ "spec": spec, "coupling": r }))?;
    }
    if r.pass {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

fn cmd_experiment(nodes: usize, margin: f64, epsilons: &[f64], format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let eq = EquationSpec::translation_example();
    let r = basic_idea_experiment(&eq, nodes, epsilons, margin)?;
    if format.csv_or(false) {
        writeln!(out, "epsilon,kappa,x_star,y_star,gap,penalty_term,distance_term")?;
        for row in &r.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_f64(row.epsilon),
                fmt_f64(row.kappa),
                fmt_f64(row.x_star),
                fmt_f64(row.y_star),
                fmt_f64(row.gap),
                fmt_f64(row.penalty_term),
                fmt_f64(row.distance_term)
            )?;
        }
    } else {
        write_json(out, &r)?;
    }
    if r.u_le_v && r.penalty_nonincreasing {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

fn print_outcome(o: &verify::SuiteOutcome, csv: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if csv {
        for c in &o.checks {
            writeln!(out, "{},{},{},{},{},{}", o.suite, c.check, c.instances, c.failures, fmt_f64(c.worst_margin), c.failures == 0)?;
        }
    } else {
        for c in &o.checks {
            let status = if c.failures == 0 { "PASS" } else { "FAIL" };
            writeln!(
                out,
                "{status}  {:<12} {:<20} {:>6} instances {:>4} failures  worst margin {}",
                o.suite,
                c.check,
                c.instances,
                c.failures,
                fmt_f64(c.worst_margin)
            )?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    suite: &str,
    n: usize,
    seed: u64,
    tol: Option<f64>,
    repro_dir: &Path,
    format: Format,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let names: Vec<&str> = if suite == "all" { verify::SUITES.to_vec() } else { vec![suite] };
    if names.iter().any(|s| verify::default_tol(s).is_none()) {
        return Err(CliError::Input(format!("unknown suite `{suite}`; expected one of {} or all", verify::SUITES.join(", "))));
    }
    let outcomes: Vec<verify::SuiteOutcome> =
        names.iter().map(|s| verify::run_suite(s, n, seed, tol).expect("suite name checked")).collect();
    let csv = format.csv;
    if format.json {
        write_json(out, &json!({ "seed": seed, "n": n, "suites": outcomes }))?;
    } else {
        if csv {
            writeln!(out, "# seed={seed} n={n}")?;
            writeln!(out, "suite,check,instances,failures,worst_margin,pass")?;
        } else {
            writeln!(out, "# verify suite={suite} n={n} seed={seed}")?;
        }
        for o in &outcomes {
            print_outcome(o, csv, out)?;
        }
    }
    let mut ok = true;
    for o in &outcomes {
        if let Some(r) = &o.first_failure {
            ok = false;
            let path = repro_dir.join(format!("levy-ot-repro-{}-seed{}-{}.json", r.suite, r.seed, r.instance));
            let text = to_json_string(r);
            std::fs::write(&path, text)?;
            writeln!(err, "{}: instance {} failed; reproducer written to {}", r.suite, r.instance, path.display())?;
        }
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

fn cmd_replay(path: &Path, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let r: verify::Reproducer = serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    if verify::default_tol(&r.suite).is_none() {
        return Err(CliError::Input(format!("unknown suite `{}` in reproducer", r.suite)));
    }
    let ms = verify::check_case(&r.suite, &r.case, r.tol);
    if format.json {
        write_json(out, &json!({ "suite": r.suite, "seed": r.seed, "instance": r.instance, "measurements": ms }))?;
    } else {
        writeln!(out, "# replay suite={} seed={} instance={}", r.suite, r.seed, r.instance)?;
        for m in &ms {
            let status = if m.pass { "PASS" } else { "FAIL" };
            writeln!(out, "{status}  {:<20} value {} limit {}", m.check, fmt_f64(m.value), fmt_f64(m.limit))?;
        }
    }
    if ms.iter().all(|m| m.pass) {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_with(std::iter::once("levy-ot").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn float_formatting_keeps_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        let v = json!({ "a": 0.5, "n": 3, "v": [1.25, f64::NAN] });
        assert_eq!(to_json_string(&v), r#"{"a":5.0000000000000000e-1,"n":3,"v":[1.2500000000000000e0,null]}"#);
        let back: serde_json::Value = serde_json::from_str(&to_json_string(&v)).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.5));
    }

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(run_capture(&["--help"]).0, 0);
        for sub in ["dist", "dual", "bounds", "sweep", "convolve", "doubling", "experiment", "verify"] {
            let (code, out, _) = run_capture(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("--json") && out.contains("--csv"), "{sub}");
        }
        assert_eq!(run_capture(&["dist"]).0, 2);
        let (code, _, err) = run_capture(&["verify", "--suite", "nope", "--n", "1"]);
        assert_eq!(code, 2);
        assert!(err.contains("unknown suite"));
    }

    #[test]
    fn verify_small_suite() {
        let (code, out, _) = run_capture(&["verify", "--suite", "oracle", "--n", "5", "--seed", "7"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.starts_with("# verify suite=oracle n=5 seed=7"));
        assert!(out.contains("PASS"));
    }
}
