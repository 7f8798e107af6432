//! Command-line front end. Exit codes: 0 success, 1 configuration or usage
//! error, 2 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    default_gmm, default_ratio_grid, log_grid, log_log_slope, mean_component_variance, median, run_gaussian_bench,
    run_gmm_bench, score_ratio_curve, BenchCell, BenchOutput, BenchmarkReport, CondGaussianBench, GmmBench, Sweep,
    BENCH_ETA, CSV_HEADER, DEFAULT_RHO, DEFAULT_Y,
};
use crate::error::{Error, Result};
use crate::fld::LanPaintConfig;
use crate::parallel::ExecMode;
use crate::samplers::Method;
use crate::scores::{GaussianTarget, GmmTarget};
use crate::state::{Mask, State};
use crate::svg::Plot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lanpaint", version, about = "Conditional diffusion sampling benchmarks on analytic targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Conditional 2-D Gaussian: KL of moment-fitted samples vs the exact conditional.
    BenchGaussian(GaussianArgs),
    /// 500-component mixture: histogram KL and trapping fraction.
    BenchGmm(GmmArgs),
    /// Deviation between the ideal and the guided observed-region score.
    ScoreRatio(RatioArgs),
}

#[derive(Debug, Args, Default)]
struct CommonArgs {
    /// Comma-separated methods: replace, repaint, langevin, lanpaint.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated outer step counts.
    #[arg(long)]
    steps: Option<String>,
    /// Comma-separated inner iteration counts.
    #[arg(long)]
    inner: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    /// Friction scale γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Guidance scale λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Expected noise α.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated master seeds.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, env = "LANPAINT_THREADS")]
    threads: Option<usize>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG of KL against outer steps.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Flat `key = value` file mirroring the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fill the wall_time_s column (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct GaussianArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Correlation of the joint.
    #[arg(long)]
    rho: Option<f64>,
    /// Conditioning value of y.
    #[arg(long = "y")]
    y_value: Option<f64>,
}

#[derive(Debug, Args)]
struct GmmArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Mixture file (default: the built-in 500-component mixture).
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Condition every sample on this y instead of the y-marginal.
    #[arg(long)]
    slice_y: Option<f64>,
    /// Scatter SVG of the slice samples over the mixture.
    #[arg(long)]
    slice_plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatioArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "y")]
    y_value: Option<f64>,
    /// `lo:hi:count` for 1−ᾱ, log-spaced.
    #[arg(long)]
    grid: Option<String>,
    /// Draws per grid point.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

const COMMON_KEYS: &[&str] = &[
    "method", "steps", "inner", "eta", "gamma", "lambda", "alpha", "samples", "seed", "threads", "out", "plot",
    "timing",
];
const GAUSSIAN_KEYS: &[&str] = &["rho", "y"];
const GMM_KEYS: &[&str] = &["gmm", "slice-y", "slice-plot"];
const RATIO_KEYS: &[&str] = &["lambda", "rho", "y", "grid", "samples", "seed", "out", "plot"];

/// Parsed `key = value` config document.
#[derive(Debug, Default)]
struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>, allowed: &[&[&str]]) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, allowed)
    }

    fn parse(text: &str, allowed: &[&[&str]]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let key = k.trim().replace('_', "-");
            if !allowed.iter().any(|set| set.contains(&key.as_str())) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key {key:?}")));
            }
        }
        Ok(ConfigFile(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::InvalidConfig(format!("config {key}: cannot parse {v:?}"))))
            .transpose()
    }
}

fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let out: Vec<T> = s
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| Error::InvalidConfig(format!("{what}: cannot parse {t:?}"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("{what}: empty list")));
    }
    Ok(out)
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').map(|t| t.parse::<Method>()).collect()
}

/// Fully resolved settings shared by both benchmarks.
struct BenchSettings {
    sweep: Sweep,
    samples: usize,
    exec: ExecMode,
    out: Option<PathBuf>,
    plot: Option<PathBuf>,
    timing: bool,
}

struct Defaults {
    inner: usize,
    samples: usize,
    alpha: f64,
}

fn resolve_common(a: CommonArgs, cfg: &ConfigFile, d: Defaults) -> Result<BenchSettings> {
    let methods = match pick(a.method, cfg, "method")? {
        Some(s) => parse_methods(&s)?,
        None => Method::ALL.to_vec(),
    };
    let steps = match pick(a.steps, cfg, "steps")? {
        Some(s) => parse_list::<usize>(&s, "steps")?,
        None => vec![20],
    };
    let inner = match pick(a.inner, cfg, "inner")? {
        Some(s) => parse_list::<usize>(&s, "inner")?,
        None => vec![d.inner],
    };
    let seeds = match pick(a.seed, cfg, "seed")? {
        Some(s) => parse_list::<u64>(&s, "seed")?,
        None => vec![0],
    };
    let base = LanPaintConfig {
        eta: pick(a.eta, cfg, "eta")?.unwrap_or(BENCH_ETA),
        inner_steps: inner[0],
        gamma0: pick(a.gamma, cfg, "gamma")?.unwrap_or(15.0),
        alpha_noise: pick(a.alpha, cfg, "alpha")?.unwrap_or(d.alpha),
        lambda: pick(a.lambda, cfg, "lambda")?.unwrap_or(8.0),
    };
    base.validate()?;
    if steps.contains(&0) {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    let samples = pick(a.samples, cfg, "samples")?.unwrap_or(d.samples);
    if samples < 2 {
        return Err(Error::InvalidConfig(format!("samples must be at least 2, got {samples}")));
    }
    let exec = ExecMode::from_threads(pick(a.threads, cfg, "threads")?)?;
    Ok(BenchSettings {
        sweep: Sweep { methods, steps, inner, seeds, base },
        samples,
        exec,
        out: pick(a.out, cfg, "out")?,
        plot: pick(a.plot, cfg, "plot")?,
        timing: a.timing || pick(None, cfg, "timing")?.unwrap_or(false),
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn csv(reports: &[BenchmarkReport], timing: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row(timing));
        s.push('\n');
    }
    s
}

/// KL against outer steps, one line per (method, inner) with the median
/// over seeds.
fn kl_plot(title: &str, reports: &[BenchmarkReport]) -> Result<Plot> {
    let mut groups: BTreeMap<(Method, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        let inner = if r.cell.method.uses_inner_steps() { r.cell.cfg.inner_steps } else { 0 };
        groups
            .entry((r.cell.method, inner))
            .or_default()
            .entry(r.cell.outer_steps)
            .or_default()
            .push(r.kl);
    }
    let mut plot = Plot::new(title, "outer steps", "KL (nats)");
    plot.log_y = true;
    plot.hlines.push((0.01, "KL = 0.01".into()));
    for ((m, inner), by_steps) in groups {
        let pts = by_steps
            .into_iter()
            .map(|(s, kls)| Ok((s as f64, median(&kls)?.max(1e-6))))
            .collect::<Result<Vec<_>>>()?;
        let name = if m.uses_inner_steps() { format!("{m}-{inner}") } else { m.to_string() };
        plot = plot.line(&name, pts);
    }
    Ok(plot)
}

fn summarize(r: &BenchmarkReport) {
    let c = &r.cell;
    let trap = r.trap_frac.map(|t| format!(" trap_frac={t:.4}")).unwrap_or_default();
    eprintln!(
        "{:<9} steps={:<4} inner={:<3} seed={:<3} kl={:.5}{trap}",
        c.method, c.outer_steps, c.cfg.inner_steps, c.seed, r.kl
    );
}

fn run_cells<F>(settings: &BenchSettings, mut run: F) -> Result<Vec<BenchOutput>>
where
    F: FnMut(&BenchCell) -> Result<BenchOutput>,
{
    let mut out = Vec::new();
    for cell in settings.sweep.cells() {
        let o = run(&cell)?;
        summarize(&o.report);
        out.push(o);
    }
    Ok(out)
}

fn cmd_bench_gaussian(a: GaussianArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref(), &[COMMON_KEYS, GAUSSIAN_KEYS])?;
    let rho = pick(a.rho, &cfg, "rho")?.unwrap_or(DEFAULT_RHO);
    let y_value = pick(a.y_value, &cfg, "y")?.unwrap_or(DEFAULT_Y);
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (-1, 1), got {rho}")));
    }
    let settings = resolve_common(a.common, &cfg, Defaults { inner: 5, samples: 50_000, alpha: 0.0 })?;
    let bench = CondGaussianBench { joint: GaussianTarget::correlated_pair(rho)?, y_value, n_samples: settings.samples };
    let outputs = run_cells(&settings, |cell| run_gaussian_bench(&bench, cell, settings.exec))?;
    let reports: Vec<BenchmarkReport> = outputs.into_iter().map(|o| o.report).collect();
    write_output(settings.out.as_deref(), &csv(&reports, settings.timing))?;
    if let Some(p) = &settings.plot {
        kl_plot("Conditional Gaussian", &reports)?.write(p)?;
    }
    Ok(())
}

fn cmd_bench_gmm(a: GmmArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref(), &[COMMON_KEYS, GMM_KEYS])?;
    let target = match pick(a.gmm, &cfg, "gmm")? {
        Some(p) => GmmTarget::load(&p)?,
        None => default_gmm(),
    };
    let slice_y = pick(a.slice_y, &cfg, "slice-y")?;
    let slice_plot: Option<PathBuf> = pick(a.slice_plot, &cfg, "slice-plot")?;
    if slice_plot.is_some() && slice_y.is_none() {
        return Err(Error::InvalidConfig("--slice-plot needs --slice-y".into()));
    }
    let defaults = Defaults { inner: 10, samples: 10_000, alpha: mean_component_variance(&target) };
    let settings = resolve_common(a.common, &cfg, defaults)?;
    let mut bench = GmmBench::new(target, settings.samples)?;
    bench.slice_y = slice_y;
    let outputs = run_cells(&settings, |cell| run_gmm_bench(&bench, cell, settings.exec))?;
    if let (Some(path), Some(y)) = (&slice_plot, slice_y) {
        let first_seed = settings.sweep.seeds[0];
        let reference = GmmBench { slice_y: None, ..bench.clone() }.reference_samples(4000, first_seed, settings.exec)?;
        let mut plot = Plot::new(&format!("samples of x given y = {y}"), "x", "y")
            .scatter("mixture", reference.iter().map(|s| (s[0], s[1])).collect());
        for o in outputs.iter().filter(|o| o.report.cell.seed == first_seed) {
            let c = &o.report.cell;
            let name = format!("{}-{} ({} steps)", c.method, c.cfg.inner_steps, c.outer_steps);
            plot = plot.scatter(&name, o.samples.iter().map(|s| (s[0], s[1])).collect());
        }
        plot.write(path)?;
    }
    let reports: Vec<BenchmarkReport> = outputs.into_iter().map(|o| o.report).collect();
    write_output(settings.out.as_deref(), &csv(&reports, settings.timing))?;
    if let Some(p) = &settings.plot {
        kl_plot("Gaussian mixture", &reports)?.write(p)?;
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidConfig(format!("grid must be lo:hi:count with 0 < lo < hi < 1, count >= 2, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && lo < hi && hi < 1.0) || count < 2 {
        return Err(bad());
    }
    Ok(log_grid(hi, lo, count))
}

fn cmd_score_ratio(a: RatioArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref(), &[RATIO_KEYS])?;
    let lambda = pick(a.lambda, &cfg, "lambda")?.unwrap_or(8.0);
    let rho = pick(a.rho, &cfg, "rho")?.unwrap_or(DEFAULT_RHO);
    let y = pick(a.y_value, &cfg, "y")?.unwrap_or(DEFAULT_Y);
    let grid = match pick(a.grid, &cfg, "grid")? {
        Some(g) => parse_grid(&g)?,
        None => default_ratio_grid(13),
    };
    let draws = pick(a.samples, &cfg, "samples")?.unwrap_or(20_000);
    let seed = pick(a.seed, &cfg, "seed")?.unwrap_or(0);
    if !(lambda > -1.0) || !(rho.abs() < 1.0) {
        return Err(Error::InvalidConfig("need lambda > -1 and |rho| < 1".into()));
    }
    let joint = GaussianTarget::correlated_pair(rho)?;
    let mask = Mask::new(vec![false, true]);
    let pts = score_ratio_curve(&joint, &mask, &State::new(vec![0.0, y]), lambda, &grid, draws, seed)?;
    let slope = log_log_slope(&pts)?;
    let mut text = String::from("alpha_bar,ratio\n");
    for p in &pts {
        text.push_str(&format!("{},{}\n", p.alpha_bar, p.ratio));
    }
    write_output(pick(a.out, &cfg, "out")?.as_deref(), &text)?;
    eprintln!("log-log slope of ratio vs (1 - alpha_bar): {slope:.4}");
    if let Some(p) = pick::<PathBuf>(a.plot, &cfg, "plot")? {
        let mut plot = Plot::new("guided score deviation", "1 - alpha_bar", "ratio")
            .line("ratio", pts.iter().map(|p| (1.0 - p.alpha_bar, p.ratio)).collect());
        plot.log_x = true;
        plot.log_y = true;
        plot.write(&p)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BenchGaussian(a) => cmd_bench_gaussian(a),
        Command::BenchGmm(a) => cmd_bench_gmm(a),
        Command::ScoreRatio(a) => cmd_score_ratio(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = ConfigFile::parse("# header\nsteps = 10,20\nslice_y = 1.55 # trailing\n", &[COMMON_KEYS, GMM_KEYS]).unwrap();
        assert_eq!(c.get::<String>("steps").unwrap().as_deref(), Some("10,20"));
        assert_eq!(c.get::<f64>("slice-y").unwrap(), Some(1.55));
        assert!(matches!(ConfigFile::parse("bogus = 1", &[COMMON_KEYS]), Err(Error::Parse { line: 1, .. })));
        assert!(ConfigFile::parse("eta = 1\neta = 2", &[COMMON_KEYS]).is_err());
        assert!(ConfigFile::parse("eta", &[COMMON_KEYS]).is_err());
        let c = ConfigFile::parse("eta = fast", &[COMMON_KEYS]).unwrap();
        assert!(c.get::<f64>("eta").is_err());
    }

    #[test]
    fn flags_override_config() {
        let c = ConfigFile::parse("eta = 0.5\nlambda = 2", &[COMMON_KEYS]).unwrap();
        let a = CommonArgs { eta: Some(0.1), ..Default::default() };
        let s = resolve_common(a, &c, Defaults { inner: 5, samples: 100, alpha: 0.0 }).unwrap();
        assert_eq!(s.sweep.base.eta, 0.1);
        assert_eq!(s.sweep.base.lambda, 2.0);
        assert_eq!(s.sweep.methods, Method::ALL.to_vec());
    }

    #[test]
    fn lists_and_grid() {
        assert_eq!(parse_list::<usize>("5, 10,20", "steps").unwrap(), vec![5, 10, 20]);
        assert!(parse_list::<usize>("", "steps").is_err());
        assert!(parse_methods("lanpaint,nope").is_err());
        let g = parse_grid("1e-4:1e-1:4").unwrap();
        assert!((g[0] - 0.9).abs() < 1e-15 && (g[3] - 0.9999).abs() < 1e-12);
        assert!(parse_grid("1e-3:1e-3:1").is_err());
        assert!(parse_grid("1e-2:1e-1:1").is_err());
        assert!(parse_grid("0.1:0.01:5").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["lanpaint", "bench-gaussian", "--samples", "0"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["lanpaint", "bench-gmm", "--method", "magic"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["lanpaint", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["lanpaint", "score-ratio", "--grid", "0.01:0.01:1"]), EXIT_CONFIG);
    }
}
