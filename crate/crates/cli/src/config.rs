//! Command-line flags, the optional JSON config file, and their merge into
//! one resolved run configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use overt_core::benchmarks::{self, chunked_schedule, QuerySpec};
use overt_core::bounds1d::ApproxParams;
use overt_core::mip::SolveLimits;
use overt_core::nn::{Network, RangeMethod};
use overt_core::overapprox::SystemSpec;
use overt_core::reach::{ConcretizationSchedule, ResetPolicy};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "overt", version, about = "Reachability and safety checks for neural-network-controlled systems")]
pub struct Cli {
    #[command(subcommand)]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Mode {
    /// Reachable boxes under a concretization schedule, then a verdict.
    Reach(Flags),
    /// Unrolled feasibility check of the property at each step.
    Feas(Flags),
    /// Feasibility with periodic concretization of the frontier.
    Hsfeas(Flags),
    /// Piecewise-linear bounds of one function, or of one step of a system.
    Approx(Flags),
    /// Monte Carlo simulation of the exact closed loop.
    Simulate(Flags),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Reach(_) => "reach",
            Mode::Feas(_) => "feas",
            Mode::Hsfeas(_) => "hsfeas",
            Mode::Approx(_) => "approx",
            Mode::Simulate(_) => "simulate",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Mode::Reach(f) | Mode::Feas(f) | Mode::Hsfeas(f) | Mode::Approx(f) | Mode::Simulate(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlRange {
    Interval,
    Mip,
}

/// Flags shared by every subcommand; each subcommand ignores the ones it
/// has no use for.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Flags {
    /// Built-in benchmark: pendulum, tora, car or acc.
    #[arg(long)]
    pub benchmark: Option<String>,
    /// System file (JSON).
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Controller network file (JSON).
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Query file with initial set, property, horizon and schedule (JSON).
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Config file (JSON); flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Symbolic segment lengths, e.g. `5,5`.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<usize>>,
    /// Segments per region of constant curvature (default: 2% error target).
    #[arg(long)]
    pub segments: Option<usize>,
    /// Shift of each bound away from the function.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Branch-and-bound node limit per solve.
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Wall-clock limit per solve, in seconds. Runs that hit it may differ
    /// between machines.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Bounding of the controller output when abstracting a step.
    #[arg(long, value_enum)]
    pub control_range: Option<ControlRange>,
    /// Reset policy for hsfeas: `never`, `every:K` or `growth:F`.
    #[arg(long)]
    pub reset: Option<String>,
    /// Seed of the Monte Carlo sampler.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Worker threads for concurrent solves.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV export of the per-timestep boxes.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Function of one variable to bound, e.g. `sin(x)`.
    #[arg(long)]
    pub expr: Option<String>,
    /// Domain of `--expr` as `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Option<String>,
    /// Segment count for `--expr`; same as `--segments`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Record wall-clock timing in the output (makes it nondeterministic).
    #[arg(long)]
    pub timing: bool,
}

/// Contents of a `--config` file. Relative paths are taken relative to the
/// file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<String>,
    pub benchmark: Option<String>,
    pub system: Option<PathBuf>,
    pub controller: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub schedule: Option<Vec<usize>>,
    pub segments: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_nodes: Option<usize>,
    pub time_limit: Option<f64>,
    pub control_range: Option<ControlRange>,
    pub reset: Option<String>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub expr: Option<String>,
    pub domain: Option<[f64; 2]>,
    pub n: Option<usize>,
    pub timing: Option<bool>,
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e.to_string()))
}

fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let mut c: ConfigFile =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut c.system, &mut c.controller, &mut c.query, &mut c.out, &mut c.csv].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(c)
}

/// Flags over config values.
pub fn merge(mode: &Mode) -> Result<Flags, CliError> {
    let f = mode.flags().clone();
    let c = match &f.config {
        Some(path) => load_config(path)?,
        None => return Ok(f),
    };
    if let Some(m) = &c.mode {
        if m != mode.name() {
            eprintln!("note: config mode `{m}` overridden by subcommand `{}`", mode.name());
        }
    }
    let domain = c.domain.map(|[lo, hi]| format!("{lo},{hi}"));
    Ok(Flags {
        benchmark: f.benchmark.or(c.benchmark),
        system: f.system.or(c.system),
        controller: f.controller.or(c.controller),
        query: f.query.or(c.query),
        config: f.config,
        horizon: f.horizon.or(c.horizon),
        schedule: f.schedule.or(c.schedule),
        segments: f.segments.or(c.segments),
        epsilon: f.epsilon.or(c.epsilon),
        max_nodes: f.max_nodes.or(c.max_nodes),
        time_limit: f.time_limit.or(c.time_limit),
        control_range: f.control_range.or(c.control_range),
        reset: f.reset.or(c.reset),
        seed: f.seed.or(c.seed),
        samples: f.samples.or(c.samples),
        jobs: f.jobs.or(c.jobs),
        out: f.out.or(c.out),
        csv: f.csv.or(c.csv),
        expr: f.expr.or(c.expr),
        domain: f.domain.or(domain),
        n: f.n.or(c.n),
        timing: f.timing || c.timing.unwrap_or(false),
    })
}

/// A system, controller and query ready to run.
pub struct Instance {
    pub label: String,
    pub system: SystemSpec,
    pub controller: Network,
    pub query: QuerySpec,
    pub approx: ApproxParams,
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

pub fn load_instance(f: &Flags) -> Result<Instance, CliError> {
    let bench = match &f.benchmark {
        Some(name) => Some(benchmarks::get_system(name).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let system = match (&f.system, &bench) {
        (Some(path), _) => SystemSpec::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        (None, Some(b)) => b.system.clone(),
        (None, None) => return Err(usage("give --benchmark or --system")),
    };
    let controller = match (&f.controller, &f.benchmark) {
        (Some(path), _) => Network::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => benchmarks::controller(name).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Err(usage("give --controller")),
    };
    let query = match (&f.query, &bench) {
        (Some(path), _) => QuerySpec::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        (None, Some(b)) => b.query(),
        (None, None) => return Err(usage("give --query")),
    };
    let mut approx = query.approx.unwrap_or_default();
    if let Some(n) = f.segments.or(f.n) {
        approx = ApproxParams {
            epsilon: approx.epsilon,
            ..ApproxParams::with_segments(n)
        };
    }
    if let Some(e) = f.epsilon {
        approx.epsilon = e;
    }
    approx.validate().map_err(|e| usage(e.to_string()))?;
    let label = f.benchmark.clone().unwrap_or_else(|| system.name.clone());
    Ok(Instance {
        label,
        system,
        controller,
        query,
        approx,
    })
}

impl Instance {
    pub fn horizon(&self, f: &Flags) -> usize {
        f.horizon.unwrap_or(self.query.horizon)
    }

    /// Flag schedule, else the query's if it fits the horizon, else
    /// segments of 5.
    pub fn schedule(&self, f: &Flags) -> Result<ConcretizationSchedule, CliError> {
        let h = self.horizon(f);
        let segs = match (&f.schedule, &self.query.schedule) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) if s.horizon() == h => s.0.clone(),
            _ => chunked_schedule(h, 5).0,
        };
        ConcretizationSchedule::new(segs, h).map_err(|e| usage(e.to_string()))
    }
}

pub fn limits(f: &Flags) -> Result<SolveLimits, CliError> {
    let mut l = SolveLimits::default();
    if let Some(n) = f.max_nodes {
        l.max_nodes = n;
    }
    if let Some(s) = f.time_limit {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage("--time-limit must be positive"));
        }
        l.time_limit = Some(Duration::from_secs_f64(s));
    }
    Ok(l)
}

pub fn control_range(f: &Flags) -> RangeMethod {
    match f.control_range {
        Some(ControlRange::Mip) => RangeMethod::Mip,
        _ => RangeMethod::Interval,
    }
}

pub fn reset_policy(f: &Flags) -> Result<ResetPolicy, CliError> {
    let Some(text) = &f.reset else {
        return Ok(ResetPolicy::default());
    };
    let bad = || usage(format!("bad --reset `{text}` (expected never, every:K or growth:F)"));
    match text.split_once(':') {
        None if text == "never" => Ok(ResetPolicy::Never),
        Some(("every", k)) => match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(ResetPolicy::Every(k)),
            _ => Err(bad()),
        },
        Some(("growth", g)) => match g.parse::<f64>() {
            Ok(g) if g > 1.0 && g.is_finite() => Ok(ResetPolicy::Growth(g)),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

pub fn domain(f: &Flags) -> Result<[f64; 2], CliError> {
    let text = f.domain.as_deref().ok_or_else(|| usage("give --domain lo,hi"))?;
    let bad = || usage(format!("bad --domain `{text}` (expected lo,hi)"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok([lo, hi])
}
