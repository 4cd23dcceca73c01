//! The `blpp` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use blpp_core::bounds::{
    change_of_measure_sanity, check_appendix_inequalities, dyson_rn_bound, dyson_slab_check, dyson_top_samples,
    erf_tail_bounds, increment_contractivity_check, lp_lower_bound_gamma, standard_appendix_grid, BoundConstants,
    NamedReport,
};
use blpp_core::densities::{rn_ratio_forms, warren_density};
use blpp_core::harness::chapman_kolmogorov_residual;
use blpp_core::lpp::lpp_profile;
use blpp_core::paths::{fmt_f64, make_grid, sample_ensemble, RngSpec, TimeGrid};
use blpp_core::reflect::{simulate_tasep, write_simulation_csv, InitialData};
use blpp_core::suites::{self, Check};
use blpp_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default output directory when neither `--out` nor `BLPP_OUT_DIR` is set.
pub const DEFAULT_OUT_DIR: &str = "blpp-out";
pub const OUT_DIR_ENV: &str = "BLPP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "blpp", version, about = "Brownian LPP, reflection systems and Warren densities")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: machine parallelism). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides BLPP_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Constants {
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long, default_value_t = 2.0)]
    d: f64,
    #[arg(long = "dm-rate", default_value_t = 1.0)]
    dm_rate: f64,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Brownian TASEP paths from initial data b, CSV `replicate,t,H1..Hm`.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_parser = parse_vec)]
        b: Option<Csv>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1024, value_parser = parse_grid)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Last passage profiles `lpp((0, m) -> (t, k))`, CSV `replicate,t,L1..Lm`.
    Lpp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1024, value_parser = parse_grid)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Warren density q_r(x; b) as JSON.
    Density {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        r: f64,
        #[arg(long, value_parser = parse_vec)]
        b: Csv,
        #[arg(long, value_parser = parse_vec)]
        x: Csv,
    },
    /// q_r(x; b) / q_r(x; 0) in both forms as JSON.
    RnRatio {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r: f64,
        #[arg(long, value_parser = parse_vec)]
        b: Csv,
        #[arg(long, value_parser = parse_vec)]
        x: Csv,
    },
    /// Bound checks as a JSON array of reports.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        constants: Constants,
        #[arg(long, value_enum)]
        suite: BoundSuite,
        /// Sample count for the Monte Carlo suites.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<usize>,
    },
    /// CSV `n,log_value` of the Gamma-product lower bound.
    Lpnorm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: f64,
        #[arg(long = "n-max")]
        n_max: usize,
    },
    /// Verification suite; JSON report with per-check outcomes.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        constants: Constants,
        #[arg(long, value_enum)]
        suite: VerifySuite,
        /// Ensemble or sample count override.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSuite {
    Dyson,
    Tasep,
    Appendix,
    Erf,
    Contractivity,
    Growth,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifySuite {
    Deterministic,
    Density,
    Markov,
    Bounds,
    Appendix,
}

/// A comma-separated vector argument, top coordinate first.
#[derive(Debug, Clone, PartialEq)]
struct Csv(Vec<f64>);

fn parse_vec(s: &str) -> Result<Csv, String> {
    if s.chars().any(char::is_whitespace) {
        return Err("vectors are comma-separated without spaces".into());
    }
    s.split(',').map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"))).collect::<Result<_, _>>().map(Csv)
}

fn parse_grid(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n == 0 || !n.is_power_of_two() {
        return Err(format!("grid step count must be a power of two, got {n}"));
    }
    Ok(n)
}

/// Provenance record written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub parameters: BTreeMap<String, String>,
    pub master_seed: u64,
    pub grid: Option<TimeGrid>,
    pub artifact_version: String,
    pub started: String,
    pub finished: String,
    pub output_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::UnsupportedSize(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(format!("json error: {e}"))
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Run {
    argv: Vec<String>,
    command: &'static str,
    seed: u64,
    started: String,
    params: BTreeMap<String, String>,
    grid: Option<TimeGrid>,
    out: Option<PathBuf>,
}

impl Run {
    fn new(argv: &[String], command: &'static str, common: &Common, always_write: bool) -> Self {
        let out = common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| always_write.then(|| PathBuf::from(DEFAULT_OUT_DIR)));
        Run {
            argv: argv.to_vec(),
            command,
            seed: common.seed,
            started: now(),
            params: BTreeMap::new(),
            grid: None,
            out,
        }
    }

    fn param(&mut self, k: &str, v: impl ToString) {
        self.params.insert(k.into(), v.to_string());
    }

    /// Writes `files` (name, bytes) and a manifest `<command>.manifest.json`.
    fn persist(&self, files: &[(String, Vec<u8>)]) -> std::io::Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in files {
            std::fs::write(dir.join(name), bytes)?;
        }
        let m = RunManifest {
            command: self.command.into(),
            argv: self.argv.clone(),
            parameters: self.params.clone(),
            master_seed: self.seed,
            grid: self.grid,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            started: self.started.clone(),
            finished: now(),
            output_files: files.iter().map(|f| f.0.clone()).collect(),
        };
        let path = dir.join(format!("{}.manifest.json", files.first().map_or(self.command, |f| stem(&f.0))));
        std::fs::write(path, serde_json::to_string_pretty(&m).expect("manifest serializes"))
    }
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn configure_threads(n: Option<usize>) -> std::result::Result<(), Failure> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&argv, cli.cmd) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `blpp --help` for usage");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CHECK_FAILED
        }
    }
}

fn initial_data(b: Vec<f64>, m: Option<usize>) -> std::result::Result<InitialData, Failure> {
    if let Some(m) = m {
        if m != b.len() {
            return Err(Failure::Usage(format!("--m {m} does not match b of length {}", b.len())));
        }
    }
    Ok(InitialData::new(b)?)
}

fn print_json<T: Serialize>(v: &T) -> std::result::Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::io::stdout().write_all(s.as_bytes())?;
    Ok(s.into_bytes())
}

fn dispatch(argv: &[String], cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Simulate { common, m, b, t, grid, n } => {
            configure_threads(common.threads)?;
            let mut run = Run::new(argv, "simulate", &common, true);
            let g = match (b, m) {
                (Some(b), m) => initial_data(b.0, m)?,
                (None, Some(m)) if m >= 1 => InitialData::zeros(m),
                (None, _) => return Err(Failure::Usage("give --m or --b".into())),
            };
            let tg = make_grid(0.0, t, grid)?;
            let spec = RngSpec::new(common.seed, 0);
            let reps = blpp_core::exec::map_indices(n, |i| simulate_tasep(tg, &g, &spec.with_stream(i as u64)).map(|x| x.1));
            let reps = reps.into_iter().collect::<blpp_core::Result<Vec<_>>>()?;
            let mut csv = Vec::new();
            write_simulation_csv(&mut csv, &reps)?;
            run.param("b", fmt_vec(g.values()));
            run.param("n", n);
            run.grid = Some(tg);
            run.persist(&[("simulate.csv".into(), csv)])?;
            let tops: Vec<f64> = reps.iter().map(|e| e.line(1).last()).collect();
            print_json(&serde_json::json!({ "replicates": n, "m": g.m(), "terminal_top": tops }))?;
            Ok(true)
        }
        Cmd::Lpp { common, m, t, grid, n } => {
            configure_threads(common.threads)?;
            let mut run = Run::new(argv, "lpp", &common, true);
            if m == 0 {
                return Err(Failure::Usage("--m must be positive".into()));
            }
            let tg = make_grid(0.0, t, grid)?;
            let spec = RngSpec::new(common.seed, 0);
            let profs = blpp_core::exec::map_indices(n, |i| {
                sample_ensemble(tg, &vec![0.0; m], 2.0, &spec.with_stream(i as u64)).and_then(|e| lpp_profile(&e, m))
            });
            let profs = profs.into_iter().collect::<blpp_core::Result<Vec<_>>>()?;
            let mut csv = String::from("replicate,t");
            for k in 1..=m {
                csv += &format!(",L{k}");
            }
            csv.push('\n');
            for (r, p) in profs.iter().enumerate() {
                for j in 0..tg.len() {
                    csv += &format!("{r},{}", fmt_f64(tg.point(j)));
                    for l in &p.lines {
                        csv += &format!(",{}", fmt_f64(l.values[j]));
                    }
                    csv.push('\n');
                }
            }
            run.param("m", m);
            run.param("n", n);
            run.grid = Some(tg);
            run.persist(&[("lpp.csv".into(), csv.into_bytes())])?;
            let values: Vec<f64> = profs.iter().map(|p| p.line(1).last()).collect();
            print_json(&serde_json::json!({ "m": m, "t": t, "lpp_top": values }))?;
            Ok(true)
        }
        Cmd::Density { common, m, r, b, x } => {
            let (g, x) = (initial_data(b.0, m)?, x.0);
            let d = warren_density(r, &x, &g)?;
            let rec = serde_json::json!({
                "m": g.m(), "r": r, "b": g.values(), "x": x,
                "density": d.value.to_f64(), "ln_density": d.value.ln_abs(), "sign": d.value.sign,
                "condition_hint": d.condition_hint,
            });
            let bytes = print_json(&rec)?;
            let mut run = Run::new(argv, "density", &common, false);
            run.param("r", fmt_f64(r));
            run.param("b", fmt_vec(g.values()));
            run.param("x", fmt_vec(&x));
            run.persist(&[("density.json".into(), bytes)])?;
            Ok(true)
        }
        Cmd::RnRatio { common, r, b, x } => {
            let (g, x) = (InitialData::new(b.0)?, x.0);
            let (q, f) = rn_ratio_forms(r, &x, &g)?;
            let rel = q.rel_diff(f);
            let rec = serde_json::json!({
                "m": g.m(), "r": r, "b": g.values(), "x": x,
                "ratio": q.to_f64(), "ln_ratio": q.ln_abs(), "f_form": f.to_f64(), "rel_diff": rel,
                "forms_agree": rel <= 1e-8,
            });
            let bytes = print_json(&rec)?;
            let mut run = Run::new(argv, "rn-ratio", &common, false);
            run.param("r", fmt_f64(r));
            run.param("b", fmt_vec(g.values()));
            run.param("x", fmt_vec(&x));
            run.persist(&[("rn-ratio.json".into(), bytes)])?;
            Ok(rel <= 1e-8)
        }
        Cmd::Bounds { common, constants, suite, n, grid } => {
            configure_threads(common.threads)?;
            let k = BoundConstants::new(constants.c, constants.d, constants.dm_rate)?;
            let mut run = Run::new(argv, "bounds", &common, true);
            run.param("suite", format!("{suite:?}").to_lowercase());
            run.param("constants", format!("{k:?}"));
            let name = format!("bounds-{}.json", format!("{suite:?}").to_lowercase());
            let (bytes, pass) = if suite == BoundSuite::Growth {
                let checks = suites::growth_suite(&k)?;
                let pass = suites::all_pass(&checks);
                (print_json(&checks)?, pass)
            } else {
                let reports = bound_reports(suite, &k, common.seed, n, grid)?;
                let pass = !reports.is_empty() && reports.iter().all(|r| r.report.satisfied);
                (print_json(&reports)?, pass)
            };
            if let Some(n) = n {
                run.param("n", n);
            }
            if let Some(g) = grid {
                run.param("grid", g);
            }
            run.persist(&[(name, bytes)])?;
            Ok(pass)
        }
        Cmd::Lpnorm { common, p, n_max } => {
            let mut csv = String::from("n,log_value\n");
            for n in 1..=n_max {
                csv += &format!("{n},{}\n", fmt_f64(lp_lower_bound_gamma(n, p)?.log_mag));
            }
            std::io::stdout().write_all(csv.as_bytes())?;
            let mut run = Run::new(argv, "lpnorm", &common, false);
            run.param("p", fmt_f64(p));
            run.param("n_max", n_max);
            run.persist(&[("lpnorm.csv".into(), csv.into_bytes())])?;
            Ok(true)
        }
        Cmd::Verify { common, constants, suite, n, grid } => {
            configure_threads(common.threads)?;
            let mut run = Run::new(argv, "verify", &common, true);
            let k = BoundConstants::new(constants.c, constants.d, constants.dm_rate)?;
            let seed = common.seed;
            let checks = verify_checks(suite, seed, &k, n, grid)?;
            let name = format!("{suite:?}").to_lowercase();
            let report = VerifyReport { suite: name.clone(), seed, pass: suites::all_pass(&checks), checks };
            let bytes = print_json(&report)?;
            run.param("suite", &name);
            if let Some(n) = n {
                run.param("n", n);
            }
            if let Some(g) = grid {
                run.param("grid", g);
            }
            run.persist(&[(format!("verify-{name}.json"), bytes)])?;
            Ok(report.pass)
        }
    }
}

fn bound_reports(
    suite: BoundSuite,
    k: &BoundConstants,
    seed: u64,
    n: Option<usize>,
    grid: Option<usize>,
) -> blpp_core::Result<Vec<NamedReport>> {
    let named = |name: String, report| NamedReport { name, report };
    match suite {
        BoundSuite::Dyson => {
            let tops = dyson_top_samples(2, 1.0, n.unwrap_or(20_000), grid.unwrap_or(256), &RngSpec::new(seed, 0))?;
            let slabs: Vec<f64> = (0..20).map(|i| -1.0 + 0.15 * i as f64).collect();
            dyson_slab_check(2, 1.0, 2.0, &slabs, 0.1, &tops, k)
        }
        BoundSuite::Tasep => {
            let b = InitialData::new(vec![1.0, 0.0])?;
            let rep = change_of_measure_sanity(1.0, 2.0, &b, n.unwrap_or(10_000), &RngSpec::new(seed, 0), k)?;
            Ok(vec![named("tasep-two-time-rn worst point".into(), rep)])
        }
        BoundSuite::Appendix => check_appendix_inequalities(&standard_appendix_grid(), k),
        BoundSuite::Erf => {
            let mut out = Vec::new();
            for l in [0.1f64, 0.5, 1.0, 4.0, 25.0] {
                for i in 0..=80 {
                    let r = (6.0 * l).sqrt() * (1.0 + 0.05 * i as f64);
                    let (a, b) = erf_tail_bounds(l, r)?;
                    if let Some(a) = a {
                        out.push(named(format!("erf-first L={l} r={r}"), a));
                    }
                    if let Some(b) = b {
                        out.push(named(format!("erf-second L={l} r={r}"), b));
                    }
                }
            }
            Ok(out)
        }
        BoundSuite::Contractivity => {
            let (ell, r) = (0.5, 1.5);
            Ok(vec![
                named("f=1 p=3".into(), increment_contractivity_check(|_, _| 1.0, ell, r, 3.0)?),
                named(
                    "f=(x+ + 1)(y+ + 1) p=2".into(),
                    increment_contractivity_check(|x, y| (x.max(0.0) + 1.0) * (y.max(0.0) + 1.0), ell, r, 2.0)?,
                ),
                named(
                    "f=dyson n=2 p=2".into(),
                    increment_contractivity_check(
                        |x, y| dyson_rn_bound(2, ell, r, x, y, k).map_or(f64::NAN, |v| v.to_f64()),
                        ell,
                        r,
                        2.0,
                    )?,
                ),
            ])
        }
        BoundSuite::Growth => unreachable!("growth is reported as checks"),
    }
}

fn verify_checks(
    suite: VerifySuite,
    seed: u64,
    k: &BoundConstants,
    n: Option<usize>,
    grid: Option<usize>,
) -> blpp_core::Result<Vec<Check>> {
    match suite {
        VerifySuite::Deterministic => suites::deterministic_suite(seed, n.unwrap_or(200), grid.unwrap_or(1 << 12)),
        VerifySuite::Density => {
            let mut out = suites::density_identity_suite(seed)?;
            out.extend(suites::simulation_suite(seed, n.unwrap_or(10_000), grid.unwrap_or(1 << 16))?);
            Ok(out)
        }
        VerifySuite::Markov => {
            let mut out = vec![Check::at_most(
                "chapman-kolmogorov m=1",
                chapman_kolmogorov_residual(1, 0.3, 0.8, &InitialData::new(vec![0.4])?)?,
                1e-8,
            )];
            for b in [vec![0.0, 0.0], vec![1.0, 0.0]] {
                let v = chapman_kolmogorov_residual(2, 0.5, 0.5, &InitialData::new(b.clone())?)?;
                out.push(Check::at_most(format!("chapman-kolmogorov m=2 b={b:?}"), v, 1e-4));
            }
            out.extend(suites::change_of_measure_suite(seed, n.unwrap_or(100_000), 10_000)?);
            out.extend(suites::random_depth_suite(seed, n.unwrap_or(10_000).min(10_000), grid.unwrap_or(1 << 8))?);
            Ok(out)
        }
        VerifySuite::Bounds => {
            let mut out = suites::bounds_suite(seed, k)?;
            out.extend(suites::growth_suite(k)?);
            Ok(out)
        }
        VerifySuite::Appendix => suites::appendix_suite(k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_parsing() {
        assert_eq!(parse_vec("1,0").unwrap(), Csv(vec![1.0, 0.0]));
        assert!(parse_vec("1, 0").is_err());
        assert!(parse_vec("1,a").is_err());
        assert!(parse_grid("1024").is_ok());
        assert!(parse_grid("1000").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            command: "simulate".into(),
            argv: vec!["blpp".into(), "simulate".into()],
            parameters: BTreeMap::from([("b".into(), "1.0000000000000000e0".into())]),
            master_seed: u64::MAX,
            grid: Some(make_grid(0.0, 1.0, 8).unwrap()),
            artifact_version: "0.1.0".into(),
            started: now(),
            finished: now(),
            output_files: vec!["simulate.csv".into()],
        };
        let s = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["blpp", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["blpp", "density", "--r", "1", "--b", "0", "--x", "0", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["blpp", "density", "--m", "2", "--r", "1", "--b", "0", "--x", "0"]), EXIT_USAGE);
        assert_eq!(run(["blpp", "density", "--r", "1", "--b", "0,1", "--x", "1,0"]), EXIT_USAGE);
    }
}
