use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use falsify_core::controller::save_checkpoint;
use falsify_core::reward::{classify_scenario, total_reward};
use falsify_core::search::{
    moving_average, run_brute_with, run_random, run_search, EpisodeRow, Mode, SearchSummary, MOVING_AVERAGE_WINDOW,
};
use falsify_core::sim::{CollisionAvoidance, Scenario};
use falsify_core::space::{ScenarioAction, SearchSpace};
use falsify_core::{Error, SimulationEvaluator};

use crate::config::{load_config, resolve, to_toml, Overrides, Resolved};
use crate::error::{CliError, CliResult};
use crate::output::{self, fmt_f64, EpisodeWriter, ReplaySummary};

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

pub fn resolve_run(config: Option<&Path>, overrides: &Overrides) -> CliResult<Resolved> {
    let file = config.map(load_config).transpose()?;
    let r = resolve(file, overrides)?;
    // fail early if the space lacks a parameter the simulator needs
    Scenario::from_action(&r.space, &r.space.action_at(0))?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub dir: PathBuf,
    pub summary: SearchSummary,
    pub final_moving_avg: Option<f64>,
}

/// Run the configured search and write its artifacts into `out` (or a fresh
/// `runs/<timestamp>_seed<seed>` directory).
pub fn search(run: &Resolved, out: Option<&Path>) -> CliResult<SearchOutcome> {
    let cfg = &run.search;
    if cfg.mode == Mode::Brute && run.space.cardinality() > cfg.brute_budget {
        return Err(Error::BudgetExceeded {
            cardinality: run.space.cardinality(),
            budget: cfg.brute_budget,
        }
        .into());
    }
    let created = timestamp();
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from("runs").join(format!("{created}_seed{}", cfg.seed)),
    };
    output::create_dir(&dir)?;
    let manifest = run.manifest(&dir.display().to_string(), &created);
    output::write_text(&dir.join(output::MANIFEST_TOML), &to_toml(&manifest)?)?;

    let sut = CollisionAvoidance::from_config(&cfg.world);
    let evaluator = SimulationEvaluator::new(&run.space, cfg, &sut);
    let mut writer = EpisodeWriter::create(&dir.join(output::EPISODES_CSV), &run.space)?;
    let (summary, last_ma) = match cfg.mode {
        Mode::Rl | Mode::Random => {
            let report = if cfg.mode == Mode::Rl {
                let (report, policy) = run_search(&run.space, cfg, &evaluator)?;
                save_checkpoint(&policy, &dir.join(output::POLICY_TXT))?;
                report
            } else {
                run_random(&run.space, cfg, &evaluator)?
            };
            for row in &report.rows {
                writer.write(row)?;
            }
            (report.summary, report.moving_avg.last().copied().flatten())
        }
        Mode::Brute => {
            let mut failure = None;
            let summary = run_brute_with(&run.space, cfg, &evaluator, &mut |row: &EpisodeRow| {
                writer.write(row).map_err(|e| {
                    let msg = e.to_string();
                    failure = Some(e);
                    Error::Domain(msg)
                })
            });
            if let Some(e) = failure {
                return Err(e);
            }
            (summary?, writer.last_moving_avg())
        }
    };
    writer.finish()?;
    let text = output::summary_toml(&summary, &run.space, run.preset.as_deref(), cfg.seed, last_ma)?;
    output::write_text(&dir.join(output::SUMMARY_TOML), &text)?;
    Ok(SearchOutcome {
        dir,
        summary,
        final_moving_avg: last_ma,
    })
}

/// Which scenario to replay.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpec {
    /// `name=value` pairs, one per parameter.
    Values(String),
    /// Comma-separated value indices in parameter order.
    Indices(String),
}

pub fn parse_action(space: &SearchSpace, spec: &ActionSpec) -> CliResult<ScenarioAction> {
    match spec {
        ActionSpec::Indices(s) => {
            let indices = s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::usage(format!("--indices: `{}` is not an index", p.trim())))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let action = ScenarioAction::new(indices);
            space.check_action(&action)?;
            Ok(action)
        }
        ActionSpec::Values(s) => {
            let mut given = BTreeMap::new();
            for pair in s.split(',') {
                let (name, value) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::usage(format!("--values: expected name=value, found `{pair}`")))?;
                let name = name.trim();
                if space.index_of(name).is_none() {
                    return Err(CliError::usage(format!("--values: unknown parameter `{name}`")));
                }
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| CliError::usage(format!("--values: `{}` is not a number", value.trim())))?;
                given.insert(name.to_string(), v);
            }
            let indices = space
                .params
                .iter()
                .map(|p| {
                    let v = given
                        .get(&p.name)
                        .ok_or_else(|| CliError::usage(format!("--values: missing parameter `{}`", p.name)))?;
                    p.values.iter().position(|x| x == v).ok_or_else(|| {
                        let listed: Vec<String> = p.values.iter().map(|x| x.to_string()).collect();
                        CliError::usage(format!(
                            "--values: {v} is not a value of `{}` (one of {})",
                            p.name,
                            listed.join(", ")
                        ))
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(ScenarioAction::new(indices))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub dir: PathBuf,
    pub row: EpisodeRow,
}

/// Simulate one scenario and write its trace, risk table, episode row and
/// summary.
pub fn replay(run: &Resolved, action: &ScenarioAction, out: Option<&Path>) -> CliResult<ReplayOutcome> {
    let cfg = &run.search;
    run.space.check_action(action)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from("runs").join(format!("{}_replay_{}", timestamp(), output::action_key(action))),
    };
    output::create_dir(&dir)?;
    let sut = CollisionAvoidance::from_config(&cfg.world);
    let evaluator = SimulationEvaluator::new(&run.space, cfg, &sut);
    let trace = evaluator.trace(action)?;
    let row = EpisodeRow {
        episode: 0,
        action: action.clone(),
        breakdown: total_reward(&trace, &cfg.reward),
        verdict: classify_scenario(&trace, &cfg.reward),
        epsilon: 0.0,
        explored: false,
    };
    output::write_trace(&dir.join(output::TRACE_CSV), &trace)?;
    output::write_risk_table(&dir.join(output::RISK_CSV), &trace)?;
    let mut w = EpisodeWriter::create(&dir.join(output::EPISODE_CSV), &run.space)?;
    w.write(&row)?;
    w.finish()?;
    let summary = ReplaySummary::new(&run.space, &row, &trace)?;
    output::write_text(&dir.join(output::SUMMARY_TOML), &summary.to_toml()?)?;
    Ok(ReplayOutcome { dir, row })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    #[value(name = "reward_curve")]
    RewardCurve,
    #[value(name = "risk_bars")]
    RiskBars,
    #[value(name = "speed_trace")]
    SpeedTrace,
}

/// `input` itself if it is a file, else `input/name`.
fn locate(input: &Path, name: &str) -> CliResult<PathBuf> {
    let p = if input.is_dir() {
        input.join(name)
    } else {
        input.to_path_buf()
    };
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::usage(format!("{}: no such file", p.display())))
    }
}

struct Table {
    reader: csv::Reader<File>,
    columns: Vec<usize>,
}

impl Table {
    fn open(path: &Path, wanted: &[&str]) -> CliResult<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let columns = wanted
            .iter()
            .map(|w| {
                header
                    .iter()
                    .position(|h| h == *w)
                    .ok_or_else(|| CliError::usage(format!("{}: missing column `{w}`", path.display())))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Table { reader, columns })
    }

    fn rows(&mut self) -> CliResult<Vec<Vec<String>>> {
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec?;
            out.push(
                self.columns
                    .iter()
                    .map(|&i| rec.get(i).unwrap_or("").to_string())
                    .collect(),
            );
        }
        Ok(out)
    }
}

fn number<T: std::str::FromStr>(path: &Path, s: &str) -> CliResult<T> {
    s.parse()
        .map_err(|_| CliError::Failed(format!("{}: bad number `{s}`", path.display())))
}

fn has_column(path: &Path, column: &str) -> CliResult<bool> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.headers()?.iter().any(|h| h == column))
}

/// Rows of the requested table, header first.
pub fn plot_table(kind: PlotKind, inputs: &[PathBuf]) -> CliResult<Vec<Vec<String>>> {
    let single = || match inputs {
        [one] => Ok(one),
        _ => Err(CliError::usage(format!("{kind:?} takes exactly one input"))),
    };
    let mut out: Vec<Vec<String>> = Vec::new();
    match kind {
        PlotKind::RewardCurve => {
            let path = locate(single()?, output::EPISODES_CSV)?;
            let rows = Table::open(&path, &["episode", "total"])?.rows()?;
            let rewards = rows
                .iter()
                .map(|r| number::<f64>(&path, &r[1]))
                .collect::<CliResult<Vec<_>>>()?;
            out.push(vec!["episode".into(), "reward".into(), "moving_avg_100".into()]);
            for ((r, x), ma) in rows
                .iter()
                .zip(&rewards)
                .zip(moving_average(&rewards, MOVING_AVERAGE_WINDOW))
            {
                out.push(vec![r[0].clone(), fmt_f64(*x), ma.map(fmt_f64).unwrap_or_default()]);
            }
        }
        PlotKind::RiskBars => {
            out.push(vec![
                "scenario_id".into(),
                "highrisk_count".into(),
                "lowrisk_count".into(),
            ]);
            for input in inputs {
                let trace = if input.is_dir() {
                    input.join(output::TRACE_CSV)
                } else {
                    input.clone()
                };
                if trace.is_file() && has_column(&trace, "high_risk")? {
                    let flags = Table::open(&trace, &["high_risk"])?.rows()?;
                    let high = flags.iter().filter(|r| r[0] == "true").count();
                    let id = input
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| input.display().to_string());
                    out.push(vec![id, high.to_string(), (flags.len() - high).to_string()]);
                } else {
                    let path = locate(input, output::EPISODES_CSV)?;
                    for r in Table::open(&path, &["episode", "highrisk_count", "total_timesteps"])?.rows()? {
                        let high: usize = number(&path, &r[1])?;
                        let total: usize = number(&path, &r[2])?;
                        out.push(vec![r[0].clone(), high.to_string(), (total - high).to_string()]);
                    }
                }
            }
        }
        PlotKind::SpeedTrace => {
            let path = locate(single()?, output::TRACE_CSV)?;
            out.push(vec!["t".into(), "ego_v".into(), "ped_v".into()]);
            out.extend(Table::open(&path, &["t", "ego_v", "ped_v"])?.rows()?);
        }
    }
    Ok(out)
}

pub fn plotdata(kind: PlotKind, inputs: &[PathBuf], out: Option<&Path>) -> CliResult<usize> {
    let table = plot_table(kind, inputs)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &table {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(table.len() - 1)
}
