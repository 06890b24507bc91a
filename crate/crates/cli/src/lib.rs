//! Experiment runner for majority dynamics with frozen sites.

pub mod commands;
pub mod config;
pub mod output;
pub mod recipes;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Command;
use crate::config::ExperimentConfig;

/// Failure classes, mapped to exit codes 2 and 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<coarsen_core::Error> for CliError {
    fn from(e: coarsen_core::Error) -> Self {
        use coarsen_core::Error as E;
        match e {
            E::Config(m) | E::Domain(m) => CliError::Config(m),
            E::Format(m) => CliError::Config(format!("bad input file: {m}")),
            E::Runtime(m) => CliError::Runtime(m),
            E::Io(e) => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coarsen", version, about = "Majority dynamics with frozen sites: simulation and analysis")]
struct Cli {
    /// Print the default configuration (or the one of --recipe) as documented TOML and exit.
    #[arg(long)]
    print_defaults: bool,
    /// Recipe whose configuration --print-defaults shows.
    #[arg(long, requires = "print_defaults")]
    recipe: Option<String>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the dynamics and classify sites.
    Simulate(RunArgs),
    /// Estimate box spanning probabilities.
    Bootstrap(RunArgs),
    /// Renormalize into good and bad boxes and check containment.
    Renorm(RunArgs),
    /// Run engineered slabs and track pillars.
    Slab(RunArgs),
    /// Run the command a recipe belongs to (requires --recipe).
    Run(RunArgs),
    /// List the recipes.
    Recipes,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration layered over the defaults (or the recipe).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a recipe instead of the defaults.
    #[arg(long)]
    recipe: Option<String>,
    /// Override one key, e.g. --set dynamics.horizon=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replicas run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (sets output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

const DEFAULTS_DOC: &str = "\
# coarsen configuration. Every key is optional; omitted keys take the values below.
#
# [geometry]     dim, extents (lateral base only for slabs), boundary = free | periodic | slab,
#                slab_height K (layers 0..=K), periodic_lateral (slab side boundary)
# [environment]  mode = disordered | engineered_slab | flipper_gadget | random_field_preset,
#                rho_plus, rho_minus, theta (P(+1) for unfrozen starting spins), field H
#                (random-field preset), initial = bernoulli | all_minus | all_plus | file,
#                initial_file (environment dump read when initial = file)
# [dynamics]     scheme = continuous_time | synchronous_discrete, tie_plus_prob in (0, 1],
#                clocks = unfrozen | all, horizon T, snapshot_times (PGM snapshots),
#                stop_at_consensus, post_consensus_events (extra rings checked for flips)
# [analysis]     half_widths L and m_values M searched by renorm (pairs with M >= L skipped),
#                window_fraction w: a site is a flipper if it flipped after (1 - w) T
# [bootstrap]    dim, half_widths, densities, models = [standard | modified_basic],
#                samples per row, exact (also enumerate boxes of at most 24 sites)
# [replication]  seeds = [..] or count + base_seed (seeds base_seed, base_seed + 1, ...)
# [output]       dir, sites (write sites.csv)
";

fn base_config(args: &RunArgs, sub: Option<Command>) -> Result<(Command, ExperimentConfig), CliError> {
    let (command, base) = match (&args.recipe, sub) {
        (Some(name), sub) => {
            let (rc, c) = recipes::recipe(name)?;
            if let Some(s) = sub.filter(|&s| s != rc) {
                return Err(CliError::config(format!(
                    "recipe {name} belongs to `{}`, not `{}`",
                    rc.name(),
                    s.name()
                )));
            }
            (rc, c)
        }
        (None, Some(s)) => (s, ExperimentConfig::default()),
        (None, None) => return Err(CliError::config("`run` needs --recipe")),
    };
    let mut cfg = config::load(&base, args.config.as_deref(), &args.set)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    Ok((command, cfg))
}

/// Run a command end to end and write its artifacts; returns a one-line report.
pub fn execute(command: Command, cfg: &ExperimentConfig, jobs: usize) -> Result<String, CliError> {
    let dir = PathBuf::from(&cfg.output.dir);
    let (artifacts, failed, line) = match command {
        Command::Simulate => {
            let o = commands::simulate(cfg, jobs)?;
            let line = format!(
                "simulate: {} runs, consensus rate {:.3}",
                o.summary.runs, o.summary.consensus_rate
            );
            (o.artifacts, o.failed, line)
        }
        Command::Bootstrap => {
            let o = commands::bootstrap(cfg, jobs)?;
            let line = format!("bootstrap: {} rows", o.summary.rows.len());
            (o.artifacts, o.failed, line)
        }
        Command::Renorm => {
            let o = commands::renorm(cfg, jobs)?;
            let s = &o.summary;
            let line = format!(
                "renorm: L = {}, M = {}, bad fraction {:.4} (p* = {:.4}), containment rate {:.3}",
                s.selected_half_width, s.selected_m, s.bad_fraction, s.p_star, s.containment_rate
            );
            (o.artifacts, o.failed, line)
        }
        Command::Slab => {
            let o = commands::slab(cfg, jobs)?;
            let line = format!(
                "slab: {} runs, consensus rate {:.3}",
                o.summary.runs, o.summary.consensus_rate
            );
            (o.artifacts, o.failed, line)
        }
    };
    artifacts.write_to(&dir)?;
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} replica(s) failed (seeds {:?}); details in {}",
            failed.len(),
            failed,
            dir.join("summary.json").display()
        )));
    }
    Ok(format!("{line}; wrote {}", dir.display()))
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = (|| -> Result<String, CliError> {
        if cli.print_defaults {
            let cfg = match &cli.recipe {
                Some(name) => recipes::recipe(name)?.1,
                None => ExperimentConfig::default(),
            };
            return Ok(format!("{DEFAULTS_DOC}\n{}", cfg.to_toml()));
        }
        let (sub, args) = match &cli.command {
            None => return Err(CliError::config("no command given; see --help")),
            Some(Cmd::Recipes) => {
                let lines: Vec<String> = recipes::RECIPES.iter().map(|(n, d)| format!("{n:8} {d}")).collect();
                return Ok(lines.join("\n"));
            }
            Some(Cmd::Simulate(a)) => (Some(Command::Simulate), a),
            Some(Cmd::Bootstrap(a)) => (Some(Command::Bootstrap), a),
            Some(Cmd::Renorm(a)) => (Some(Command::Renorm), a),
            Some(Cmd::Slab(a)) => (Some(Command::Slab), a),
            Some(Cmd::Run(a)) => (None, a),
        };
        let (command, cfg) = base_config(args, sub)?;
        execute(command, &cfg, args.jobs)
    })();
    match result {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("coarsen: {e}");
            e.exit_code()
        }
    }
}
