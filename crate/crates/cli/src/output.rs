//! CSV and TOML artifacts of search and replay runs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use falsify_core::search::{EpisodeRow, MovingAverage, SearchSummary, MOVING_AVERAGE_WINDOW};
use falsify_core::sim::EpisodeTrace;
use falsify_core::space::{ScenarioAction, SearchSpace};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const EPISODES_CSV: &str = "episodes.csv";
pub const SUMMARY_TOML: &str = "summary.toml";
pub const MANIFEST_TOML: &str = "manifest.toml";
pub const POLICY_TXT: &str = "policy.txt";
pub const TRACE_CSV: &str = "trace.csv";
pub const RISK_CSV: &str = "risk.csv";
pub const EPISODE_CSV: &str = "episode.csv";

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Indices joined with `-`, e.g. `8-7-17-1-0`.
pub fn action_key(a: &ScenarioAction) -> String {
    a.indices.iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
}

pub fn parse_action_key(s: &str) -> Option<ScenarioAction> {
    s.split('-')
        .map(|p| p.parse().ok())
        .collect::<Option<Vec<usize>>>()
        .map(ScenarioAction::new)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Streams episode rows to CSV, one column per parameter value, with the
/// trailing moving average of the reward.
pub struct EpisodeWriter<'a> {
    out: csv::Writer<BufWriter<File>>,
    space: &'a SearchSpace,
    ma: MovingAverage,
    last_ma: Option<f64>,
}

impl<'a> EpisodeWriter<'a> {
    pub fn create(path: &Path, space: &'a SearchSpace) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["episode".to_string(), "action".to_string()];
        header.extend(space.params.iter().map(|p| p.name.clone()));
        header.extend(
            [
                "r_highrisk",
                "r_distance",
                "r_collision",
                "total",
                "highrisk_count",
                "total_timesteps",
                "final_distance",
                "highrisk_fraction",
                "challenging",
                "collision",
                "epsilon",
                "explored",
                "moving_avg_100",
            ]
            .map(String::from),
        );
        out.write_record(&header)?;
        Ok(EpisodeWriter {
            out,
            space,
            ma: MovingAverage::new(MOVING_AVERAGE_WINDOW),
            last_ma: None,
        })
    }

    pub fn write(&mut self, row: &EpisodeRow) -> CliResult<()> {
        let b = &row.breakdown;
        let v = &row.verdict;
        let ma = self.ma.push(b.total);
        self.last_ma = ma;
        let mut rec = vec![row.episode.to_string(), action_key(&row.action)];
        rec.extend(self.space.resolve(&row.action)?.into_iter().map(fmt_f64));
        rec.extend([
            fmt_f64(b.r_highrisk),
            fmt_f64(b.r_distance),
            fmt_f64(b.r_collision),
            fmt_f64(b.total),
            b.highrisk_count.to_string(),
            b.total_timesteps.to_string(),
            fmt_f64(b.final_distance),
            fmt_f64(v.highrisk_fraction),
            v.challenging.to_string(),
            v.collision.to_string(),
            fmt_f64(row.epsilon),
            row.explored.to_string(),
            ma.map(fmt_f64).unwrap_or_default(),
        ]);
        self.out.write_record(&rec)?;
        Ok(())
    }

    pub fn last_moving_avg(&self) -> Option<f64> {
        self.last_ma
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| CliError::Failed(e.to_string()))
    }
}

#[derive(Debug, Serialize)]
struct BestOut {
    episode: usize,
    reward: f64,
    action: String,
    values: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct SummaryOut {
    mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    seed: u64,
    episodes: usize,
    challenging: usize,
    non_challenging: usize,
    collisions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_challenging: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_moving_avg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<BestOut>,
}

fn named_values(space: &SearchSpace, a: &ScenarioAction) -> CliResult<BTreeMap<String, f64>> {
    let values = space.resolve(a)?;
    Ok(space.params.iter().map(|p| p.name.clone()).zip(values).collect())
}

pub fn summary_toml(
    summary: &SearchSummary,
    space: &SearchSpace,
    preset: Option<&str>,
    seed: u64,
    final_moving_avg: Option<f64>,
) -> CliResult<String> {
    let best = match &summary.best {
        Some(b) => Some(BestOut {
            episode: b.episode,
            reward: b.reward,
            action: action_key(&b.action),
            values: named_values(space, &b.action)?,
        }),
        None => None,
    };
    let out = SummaryOut {
        mode: summary.mode.to_string(),
        preset: preset.map(String::from),
        seed,
        episodes: summary.episodes,
        challenging: summary.challenging,
        non_challenging: summary.non_challenging,
        collisions: summary.collisions,
        first_challenging: summary.first_challenging,
        final_moving_avg,
        best,
    };
    toml::to_string(&out).map_err(|e| CliError::Failed(format!("cannot serialize summary: {e}")))
}

pub fn write_trace(path: &Path, trace: &EpisodeTrace) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    trace.write_csv(&mut w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-timestep risk table: distance against the safe distance and the
/// resulting label.
pub fn write_risk_table(path: &Path, trace: &EpisodeTrace) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "euclid_dist", "rss_dmin", "ped_ahead", "high_risk", "risk"])?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            fmt_f64(r.euclid_dist),
            fmt_f64(r.rss_dmin),
            r.ped_ahead.to_string(),
            r.high_risk.to_string(),
            if r.high_risk { "high" } else { "low" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct ReplaySummary {
    pub action: String,
    pub values: BTreeMap<String, f64>,
    pub end_reason: String,
    pub timesteps: usize,
    pub highrisk_count: usize,
    pub lowrisk_count: usize,
    pub r_highrisk: f64,
    pub r_distance: f64,
    pub r_collision: f64,
    pub total: f64,
    pub final_distance: f64,
    pub highrisk_fraction: f64,
    pub challenging: bool,
    pub collision: bool,
}

impl ReplaySummary {
    pub fn new(space: &SearchSpace, row: &EpisodeRow, trace: &EpisodeTrace) -> CliResult<Self> {
        let b = &row.breakdown;
        Ok(ReplaySummary {
            action: action_key(&row.action),
            values: named_values(space, &row.action)?,
            end_reason: trace.end_reason.as_str().to_string(),
            timesteps: trace.len(),
            highrisk_count: b.highrisk_count,
            lowrisk_count: b.total_timesteps - b.highrisk_count,
            r_highrisk: b.r_highrisk,
            r_distance: b.r_distance,
            r_collision: b.r_collision,
            total: b.total,
            final_distance: b.final_distance,
            highrisk_fraction: row.verdict.highrisk_fraction,
            challenging: row.verdict.challenging,
            collision: row.verdict.collision,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Failed(format!("cannot serialize summary: {e}")))
    }
}
