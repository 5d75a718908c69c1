//! Command-line front end for `hessreach`.
//!
//! Subcommands: `lipschitz`, `hessian`, `bnb`, `reach`, `closedloop`, `audit`.
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 when a
//! branch-and-bound run stops on a resource limit (its bracket is still written).

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hessreach::bnb::Heuristic;
use hessreach::lipschitz::LipschitzMethod;
use hessreach::reach::NextSetMode;
use hessreach::Norm;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_LIMIT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] hessreach::Error),
}

#[derive(Debug, Parser)]
#[command(name = "hessreach", version, about = "Certified bounds and reachable sets for smooth neural networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input norm: 2 or inf.
    #[arg(long, global = true)]
    norm: Option<Norm>,
    /// Termination gap of branch and bound.
    #[arg(long = "eps-t", global = true)]
    eps_t: Option<f64>,
    /// Branching heuristic: maxlen or bestub.
    #[arg(long, global = true)]
    heuristic: Option<Heuristic>,
    #[arg(long, global = true)]
    max_branches: Option<usize>,
    #[arg(long, global = true)]
    max_active: Option<usize>,
    /// Wall-clock limit per branch-and-bound solve, in seconds.
    #[arg(long, global = true)]
    time_limit: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// naive, liplt or liplt-refine.
    #[arg(long, global = true)]
    lipschitz: Option<LipschitzMethod>,
    /// Reuse the root-box certificates at every node.
    #[arg(long, global = true)]
    no_recompute: bool,
    /// Zeroth-order bounds only.
    #[arg(long, global = true)]
    zeroth_only: bool,
    /// Direction template: axes, uniform:K, pca or pca:N.
    #[arg(long, global = true)]
    dirs: Option<String>,
    /// Set handed between closed-loop steps: auto, pca-box or hull.
    #[arg(long, global = true)]
    next_set: Option<NextSetMode>,
    /// Simulated trajectories and oracle samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Include wall-clock times in the JSON output.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lipschitz constant of a network over a region (global without one).
    Lipschitz(NetworkArgs),
    /// Hessian bound of a scalar objective over a region.
    Hessian(ScalarArgs),
    /// Bracket on the maximum of a scalar objective over a region.
    Bnb(ScalarArgs),
    /// Template polytope over the image of a region.
    Reach(NetworkArgs),
    /// Reachable polytopes of a linear plant under a network controller.
    Closedloop(ClosedLoopArgs),
    /// Certified bounds next to sampled witnesses.
    Audit(ScalarArgs),
}

#[derive(Debug, Args)]
struct RegionArgs {
    /// Box or zonotope JSON file.
    #[arg(long, alias = "initial", conflicts_with = "box_spec")]
    input: Option<PathBuf>,
    /// Box as `lo..hi,lo..hi,…`.
    #[arg(long = "box", allow_hyphen_values = true)]
    box_spec: Option<String>,
}

#[derive(Debug, Args)]
struct NetworkArgs {
    #[arg(long)]
    network: PathBuf,
    #[command(flatten)]
    region: RegionArgs,
}

#[derive(Debug, Args)]
struct ScalarArgs {
    #[command(flatten)]
    net: NetworkArgs,
    /// Output weights `c` of the objective `cᵀf(x)`; needed for vector outputs.
    #[arg(long, allow_hyphen_values = true)]
    direction: Option<String>,
}

#[derive(Debug, Args)]
struct ClosedLoopArgs {
    /// Plant JSON `{A, B, T, dt?, offset?}`.
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    controller: PathBuf,
    #[command(flatten)]
    region: RegionArgs,
    /// Overrides the horizon in the system file.
    #[arg(long)]
    steps: Option<usize>,
    /// Spherical obstacle `x,y,z,r` in the coordinates of `--obstacle-dims`.
    #[arg(long, allow_hyphen_values = true)]
    obstacle: Vec<String>,
    #[arg(long, default_value = "0,1,2")]
    obstacle_dims: String,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(report) => {
            println!("{}", report.line);
            if report.limited {
                EXIT_LIMIT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

/// Outcome of a subcommand: the summary line and whether a limit was hit.
struct Report {
    line: String,
    limited: bool,
}

fn execute(cli: Cli) -> Result<Report, CliError> {
    let cfg = resolve_config(&cli.common)?;
    let timing = cli.common.timing;
    match cli.command {
        Command::Lipschitz(a) => commands::lipschitz(&cfg, &a, timing),
        Command::Hessian(a) => commands::hessian(&cfg, &a, timing),
        Command::Bnb(a) => commands::bnb(&cfg, &a, timing),
        Command::Reach(a) => commands::reach(&cfg, &a, timing),
        Command::Closedloop(a) => commands::closedloop(&cfg, &a, timing),
        Command::Audit(a) => commands::audit(&cfg, &a, timing),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = c.$flag.clone() {
                cfg.$field = v;
            })*
        };
    }
    apply!(out => output, norm => norm, eps_t => eps_t, heuristic => heuristic, max_branches => max_branches,
        max_active => max_active, workers => workers, seed => seed, lipschitz => lipschitz, dirs => template,
        next_set => next_set, samples => samples);
    if c.time_limit.is_some() {
        cfg.time_limit_s = c.time_limit;
    }
    if c.no_recompute {
        cfg.recompute = false;
    }
    if c.zeroth_only {
        cfg.first_order = false;
    }
    cfg.validate()?;
    Ok(cfg)
}
