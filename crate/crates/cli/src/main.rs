//! Command-line front end: parse crystal/perturbation specs, run
//! band/threshold/decay/spectrum/wave experiments, emit CSV or JSON.
//!
//! Exit codes: 0 success, 2 validation/parse error, 3 numerical refusal
//! (degree cap, boundary contamination, missing tail bound, lost symmetry).

mod output;
mod specfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use output::{emit, Table, Value};
use topocrystal::bloch::{estimate_thresholds, sample_bands, spectrum_h0};
use topocrystal::error::Error;
use topocrystal::perturbation::decay::{check_cm5, check_condition, Condition};
use topocrystal::perturbation::verify_decomposition;
use topocrystal::spectral::{
    count_localized_in, eigensolve_section, wave_probe, FiniteSection, WaveProbeOptions,
    DEFAULT_MAX_SECTION,
};

#[derive(Parser)]
#[command(name = "topocrystal", version, about = "Spectral experiments on perturbed topological crystals")]
struct Cli {
    /// TOML file with per-subcommand tables supplying flag defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: TOPOCRYSTAL_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample band functions on a torus grid; print spectrum and thresholds
    Bands(BandsArgs),
    /// Estimate the threshold set (band critical values) on a grid
    Thresholds(ThresholdsArgs),
    /// Probe decay conditions Cm1-Cm5 and the decomposition identity
    Verify(VerifyArgs),
    /// Decomposition identity residual on random compactly supported vectors
    DecompCheck(DecompArgs),
    /// Localized finite-section eigenvalue counts in an interval
    Spectrum(SpectrumArgs),
    /// Wave-operator Cauchy probe along a dyadic time sequence
    Wave(WaveArgs),
}

macro_rules! merge_opt {
    ($flag:expr, $cfg:expr) => {
        $flag.or($cfg)
    };
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct CommonArgs {
    /// Crystal: builtin (z1, z2, z3, toblerone) or spec file path
    #[arg(long)]
    crystal: Option<String>,
    /// Perturbation spec file (omit for the trivial perturbation)
    #[arg(long)]
    perturbation: Option<String>,
    /// Output path ("-" for stdout)
    #[arg(long)]
    out: Option<String>,
    /// Output format: csv (canonical) or json (mirror)
    #[arg(long)]
    format: Option<String>,
}

impl CommonArgs {
    fn merge(self, cfg: CommonArgs) -> CommonArgs {
        CommonArgs {
            crystal: merge_opt!(self.crystal, cfg.crystal),
            perturbation: merge_opt!(self.perturbation, cfg.perturbation),
            out: merge_opt!(self.out, cfg.out),
            format: merge_opt!(self.format, cfg.format),
        }
    }

    fn out(&self) -> &str {
        self.out.as_deref().unwrap_or("-")
    }

    fn format(&self) -> Result<&str, Error> {
        match self.format.as_deref().unwrap_or("csv") {
            "csv" => Ok("csv"),
            "json" => Ok("json"),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }

    fn crystal(&self) -> Result<topocrystal::crystal::TopologicalCrystal, Error> {
        let selector = self
            .crystal
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("--crystal is required".into()))?;
        specfile::load_crystal(selector)
    }

    fn perturbed(&self) -> Result<topocrystal::perturbation::PerturbedGraph, Error> {
        specfile::load_perturbation(self.crystal()?, self.perturbation.as_deref())
    }
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct BandsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Grid points per torus axis
    #[arg(long)]
    n: Option<usize>,
    /// Threshold clustering tolerance
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct ThresholdsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Grid points per torus axis
    #[arg(long)]
    n: Option<usize>,
    /// Threshold clustering tolerance
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Smallest dyadic level k (lambda = 2^k)
    #[arg(long)]
    kmin: Option<u32>,
    /// Largest dyadic level k
    #[arg(long)]
    kmax: Option<u32>,
    /// Weight exponent s for the Cm5 probe
    #[arg(long)]
    s: Option<f64>,
    /// Random vectors for the decomposition residual
    #[arg(long)]
    trials: Option<usize>,
    /// Support radius of the random vectors
    #[arg(long)]
    support: Option<i64>,
    /// RNG seed for the random vectors
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct DecompArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Random vectors for the decomposition residual
    #[arg(long)]
    trials: Option<usize>,
    /// Support radius of the random vectors
    #[arg(long)]
    support: Option<i64>,
    /// RNG seed for the random vectors
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse (exit 3) if the residual exceeds this bound
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Comma-separated section half-widths L
    #[arg(long)]
    l: Option<String>,
    /// Interval a,b to count localized eigenvalues in
    #[arg(long)]
    interval: Option<String>,
    /// Minimum inner-half-box mass fraction for "localized"
    #[arg(long)]
    mass: Option<f64>,
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct WaveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Interval a,b for the spectral filter E(I)
    #[arg(long)]
    interval: Option<String>,
    /// Fiber bump support lo,hi inside the band preimage of I
    #[arg(long)]
    xi_window: Option<String>,
    /// Comma-separated probe times T (each compared against 2T)
    #[arg(long)]
    times: Option<String>,
    /// Section half-width (omit for automatic light-cone choice)
    #[arg(long)]
    l: Option<i64>,
    /// Largest tolerated relative boundary mass
    #[arg(long)]
    boundary_limit: Option<f64>,
}

fn parse_pair(text: &str, what: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidParameter(format!("{what} needs the form a,b")));
    }
    let a: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad {what}: {text}")))?;
    let b: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad {what}: {text}")))?;
    if a >= b {
        return Err(Error::InvalidParameter(format!("{what} must have a < b")));
    }
    Ok((a, b))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad {what}: {text}")))
        })
        .collect()
}

fn load_config_section<T: for<'de> Deserialize<'de> + Default>(
    path: Option<&PathBuf>,
    section: &str,
) -> Result<T, Error> {
    let path = match path {
        Some(p) => p,
        None => return Ok(T::default()),
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidParameter(format!("cannot read config {}: {e}", path.display()))
    })?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("bad config: {e}")))?;
    match doc.get(section) {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| Error::InvalidParameter(format!("bad [{section}] config: {e}"))),
        None => Ok(T::default()),
    }
}

fn cmd_bands(args: BandsArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: BandsArgs = load_config_section(config, "bands")?;
    let common = args.common.merge(cfg.common);
    let n = merge_opt!(args.n, cfg.n).unwrap_or(256);
    let tol = merge_opt!(args.tol, cfg.tol).unwrap_or(1e-6);
    let crystal = common.crystal()?;
    let bs = sample_bands(crystal.quotient(), n)?;

    let d = bs.dimension;
    let mut columns: Vec<String> = vec!["index".into()];
    for a in 0..d {
        columns.push(format!("xi_{a}"));
    }
    for j in 0..bs.n_sites {
        columns.push(format!("band_{j}"));
    }
    columns.push("eig_tol".into());
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut table = Table::new(&cols);
    for flat in 0..bs.grid_points() {
        let idx = bs.unflatten(flat);
        let xi = bs.xi_at(&idx);
        let mut row = vec![Value::Int(flat as i64)];
        row.extend(xi.iter().map(|&x| Value::Float(x)));
        row.extend(bs.bands[flat].iter().map(|&l| Value::Float(l)));
        row.push(Value::Float(1e-13));
        table.push(row);
    }
    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))?;

    if common.out() != "-" {
        for (a, b) in spectrum_h0(&bs) {
            println!("spectrum interval: [{a}, {b}]");
        }
        let thresholds = estimate_thresholds(&bs, tol);
        let vals: Vec<String> = thresholds.values.iter().map(|v| v.to_string()).collect();
        println!("thresholds (tol {tol}): {}", vals.join(", "));
    }
    Ok(())
}

fn cmd_thresholds(args: ThresholdsArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: ThresholdsArgs = load_config_section(config, "thresholds")?;
    let common = args.common.merge(cfg.common);
    let n = merge_opt!(args.n, cfg.n).unwrap_or(512);
    let tol = merge_opt!(args.tol, cfg.tol).unwrap_or(1e-6);
    let crystal = common.crystal()?;
    let bs = sample_bands(crystal.quotient(), n)?;
    let estimate = estimate_thresholds(&bs, tol);
    let mut table = Table::new(&["threshold", "grid_n", "tolerance"]);
    for v in &estimate.values {
        table.push(vec![Value::Float(*v), Value::Int(n as i64), Value::Float(estimate.tolerance)]);
    }
    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))
}

fn cmd_verify(args: VerifyArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: VerifyArgs = load_config_section(config, "verify")?;
    let common = args.common.merge(cfg.common);
    let kmin = merge_opt!(args.kmin, cfg.kmin).unwrap_or(2);
    let kmax = merge_opt!(args.kmax, cfg.kmax).unwrap_or(9);
    let s = merge_opt!(args.s, cfg.s).unwrap_or(0.75);
    let trials = merge_opt!(args.trials, cfg.trials).unwrap_or(20);
    let support = merge_opt!(args.support, cfg.support).unwrap_or(6);
    let seed = merge_opt!(args.seed, cfg.seed).unwrap_or(7);
    let pg = common.perturbed()?;

    let mut table = Table::new(&[
        "record", "condition", "lambda", "value", "fitted_exponent", "exponent_stderr",
        "verdict",
    ]);
    let mut push_report = |report: &topocrystal::perturbation::decay::DecayReport| {
        let exp = report.fitted_exponent.unwrap_or(f64::NAN);
        let err = report.exponent_stderr.unwrap_or(f64::NAN);
        for (lambda, g) in &report.samples {
            table.push(vec![
                Value::Str("sample".into()),
                Value::Str(report.condition.clone()),
                Value::Float(*lambda),
                Value::Float(*g),
                Value::Float(exp),
                Value::Float(err),
                Value::Str(report.verdict.to_string()),
            ]);
        }
        table.push(vec![
            Value::Str("summary".into()),
            Value::Str(report.condition.clone()),
            Value::Float(f64::NAN),
            Value::Float(report.partial_integral),
            Value::Float(exp),
            Value::Float(err),
            Value::Str(report.verdict.to_string()),
        ]);
    };

    for cond in [Condition::Cm1, Condition::Cm2, Condition::Cm3, Condition::Cm4] {
        push_report(&check_condition(&pg, cond, kmin, kmax)?);
    }
    let cutoffs: Vec<i64> = (3..=7).map(|k| 1i64 << k).collect();
    push_report(&check_cm5(&pg, s, &cutoffs)?);

    let residual = verify_decomposition(&pg, trials, support, seed);
    table.push(vec![
        Value::Str("residual".into()),
        Value::Str("decomposition".into()),
        Value::Float(f64::NAN),
        Value::Float(residual),
        Value::Float(f64::NAN),
        Value::Float(f64::NAN),
        Value::Str(if residual <= 1e-12 { "pass".into() } else { "fail".into() }),
    ]);

    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))
}

fn cmd_decomp_check(args: DecompArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: DecompArgs = load_config_section(config, "decomp-check")?;
    let common = args.common.merge(cfg.common);
    let trials = merge_opt!(args.trials, cfg.trials).unwrap_or(20);
    let support = merge_opt!(args.support, cfg.support).unwrap_or(6);
    let seed = merge_opt!(args.seed, cfg.seed).unwrap_or(7);
    let tolerance = merge_opt!(args.tolerance, cfg.tolerance);
    let pg = common.perturbed()?;
    let residual = verify_decomposition(&pg, trials, support, seed);

    let mut table = Table::new(&["trials", "support_radius", "seed", "residual", "tolerance"]);
    table.push(vec![
        Value::Int(trials as i64),
        Value::Int(support),
        Value::Int(seed as i64),
        Value::Float(residual),
        Value::Float(tolerance.unwrap_or(f64::NAN)),
    ]);
    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))?;

    if let Some(tol) = tolerance {
        if residual > tol {
            return Err(Error::Refused(format!(
                "decomposition residual {residual:e} > {tol:e}"
            )));
        }
    }
    Ok(())
}

fn cmd_spectrum(args: SpectrumArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: SpectrumArgs = load_config_section(config, "spectrum")?;
    let common = args.common.merge(cfg.common);
    let ls: Vec<i64> = parse_list(
        &merge_opt!(args.l, cfg.l).unwrap_or_else(|| "128,256".into()),
        "L list",
    )?;
    let interval = parse_pair(
        &merge_opt!(args.interval, cfg.interval).unwrap_or_else(|| "0.5,3.5".into()),
        "interval",
    )?;
    let mass = merge_opt!(args.mass, cfg.mass).unwrap_or(0.9);
    let pg = common.perturbed()?;

    let mut table = Table::new(&[
        "half_width", "dim", "count", "interval_lo", "interval_hi", "mass_fraction",
    ]);
    for &l in &ls {
        if l < 1 {
            return Err(Error::InvalidParameter("L must be >= 1".into()));
        }
        let pg_l = pg.clone().with_enum_radius(pg.enum_radius.max(l));
        let section = FiniteSection::new(&pg_l, l, DEFAULT_MAX_SECTION)?;
        let eigen = eigensolve_section(&section)?;
        let count = count_localized_in(&section, &eigen, interval.0, interval.1, mass);
        table.push(vec![
            Value::Int(l),
            Value::Int(section.dim() as i64),
            Value::Int(count as i64),
            Value::Float(interval.0),
            Value::Float(interval.1),
            Value::Float(mass),
        ]);
    }
    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))
}

fn cmd_wave(args: WaveArgs, config: Option<&PathBuf>) -> Result<(), Error> {
    let cfg: WaveArgs = load_config_section(config, "wave")?;
    let common = args.common.merge(cfg.common);
    let interval = parse_pair(
        &merge_opt!(args.interval, cfg.interval).unwrap_or_else(|| "1,3".into()),
        "interval",
    )?;
    let xi_window = parse_pair(
        &merge_opt!(args.xi_window, cfg.xi_window).unwrap_or_else(|| "0.19,0.31".into()),
        "xi window",
    )?;
    let times: Vec<f64> = parse_list(
        &merge_opt!(args.times, cfg.times).unwrap_or_else(|| "10,20,40,80".into()),
        "times",
    )?;
    let boundary_limit = merge_opt!(args.boundary_limit, cfg.boundary_limit).unwrap_or(1e-6);
    let pg = common.perturbed()?;

    let opts = WaveProbeOptions {
        interval,
        xi_window,
        t_values: times,
        half_width: merge_opt!(args.l, cfg.l),
        boundary_limit,
        ..WaveProbeOptions::default()
    };
    let report = wave_probe(&pg, &opts)?;

    let mut table = Table::new(&[
        "t", "cauchy_norm", "wave_norm", "boundary_mass", "boundary_limit", "half_width",
        "n_grid",
    ]);
    for (i, &t) in report.t_values.iter().enumerate() {
        table.push(vec![
            Value::Float(t),
            Value::Float(report.cauchy_norms[i]),
            Value::Float(report.wave_norms[i]),
            Value::Float(report.boundary_masses[i]),
            Value::Float(boundary_limit),
            Value::Int(report.half_width),
            Value::Int(report.n_grid as i64),
        ]);
    }
    emit(&table, common.out(), common.format()?)
        .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::UnknownTail(_)
        | Error::NotHermitian { .. }
        | Error::DegreeExceeded { .. }
        | Error::BoundaryContaminated { .. }
        | Error::Refused(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("TOPOCRYSTAL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("warning: thread pool already initialized");
        }
    }

    let config = cli.config.as_ref();
    let result = match cli.command {
        Command::Bands(a) => cmd_bands(a, config),
        Command::Thresholds(a) => cmd_thresholds(a, config),
        Command::Verify(a) => cmd_verify(a, config),
        Command::DecompCheck(a) => cmd_decomp_check(a, config),
        Command::Spectrum(a) => cmd_spectrum(a, config),
        Command::Wave(a) => cmd_wave(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
