//! `falsify` command-line harness: searches, single-scenario replays and
//! plot-ready tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use falsify_core::search::Mode;

use crate::commands::{ActionSpec, PlotKind};
use crate::config::Overrides;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "falsify",
    version,
    about = "Learned falsification of a pedestrian collision avoidance system"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a search (rl, random or brute) and write its episode log.
    Search(SearchArgs),
    /// Simulate one scenario and write its trace and risk table.
    Replay(ReplayArgs),
    /// Export a tidy CSV for plotting from run outputs.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SpaceArgs {
    /// TOML configuration or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named search space: paper5 or paper7.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    /// rl, random or brute [default: rl]
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Run seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode count for rl and random modes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Episodes per policy update.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Output directory [default: runs/<timestamp>_seed<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Parameter values, e.g. `ego-long-pos=9,ped-accel=0.007,...`
    #[arg(long, conflicts_with = "indices", required_unless_present = "indices")]
    pub values: Option<String>,
    /// Value indices in parameter order, e.g. `8,7,17,1,0`
    #[arg(long)]
    pub indices: Option<String>,
    /// Output directory [default: runs/<timestamp>_replay_<indices>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub kind: PlotKind,
    /// Run or replay directories (or their CSV files).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: falsify_core::Error| e.to_string())
}

/// Execute a parsed command line. Returns the line to print on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Search(a) => {
            let overrides = Overrides {
                preset: a.space.preset.clone(),
                mode: a.mode,
                seed: a.seed,
                episodes: a.episodes,
                batch: a.batch,
            };
            let run = commands::resolve_run(a.space.config.as_deref(), &overrides)?;
            let o = commands::search(&run, a.out.as_deref())?;
            let s = &o.summary;
            Ok(format!(
                "{} search: {} episodes, {} challenging, {} collisions, best reward {}, first challenging {} -> {}",
                s.mode,
                s.episodes,
                s.challenging,
                s.collisions,
                s.best_reward().map_or("-".into(), |r| r.to_string()),
                s.first_challenging.map_or("-".into(), |e| e.to_string()),
                o.dir.display()
            ))
        }
        Command::Replay(a) => {
            let overrides = Overrides {
                preset: a.space.preset.clone(),
                ..Overrides::default()
            };
            let run = commands::resolve_run(a.space.config.as_deref(), &overrides)?;
            let spec = match (&a.values, &a.indices) {
                (Some(v), _) => ActionSpec::Values(v.clone()),
                (None, Some(i)) => ActionSpec::Indices(i.clone()),
                (None, None) => return Err(CliError::usage("one of --values or --indices is required")),
            };
            let action = commands::parse_action(&run.space, &spec)?;
            let o = commands::replay(&run, &action, a.out.as_deref())?;
            let (b, v) = (&o.row.breakdown, &o.row.verdict);
            Ok(format!(
                "replay {}: {} of {} timesteps high-risk, collision {}, reward {}, {} -> {}",
                output::action_key(&action),
                b.highrisk_count,
                b.total_timesteps,
                v.collision,
                b.total,
                if v.challenging {
                    "challenging"
                } else {
                    "non-challenging"
                },
                o.dir.display()
            ))
        }
        Command::Plotdata(a) => {
            let n = commands::plotdata(a.kind, &a.inputs, a.out.as_deref())?;
            Ok(match &a.out {
                Some(p) => format!("{n} rows -> {}", p.display()),
                None => String::new(),
            })
        }
    }
}
