//! Falsification drivers: the learned search loop and the random and
//! exhaustive baselines. All three produce the same per-episode rows.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{self, Controller, ControllerConfig, PolicyParams, SamplerRngs};
use crate::error::{Error, Result};
use crate::reward::{self, RewardBreakdown, RewardConfig, ScenarioVerdict};
use crate::rng;
use crate::rss::RssConfig;
use crate::sim::{self, EpisodeTrace, Scenario, Sut, WorldConfig};
use crate::space::{ScenarioAction, SearchSpace};

pub const MOVING_AVERAGE_WINDOW: usize = 100;
pub const DEFAULT_BRUTE_BUDGET: u128 = 2_000_000;
const BRUTE_CHUNK: u128 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rl,
    Random,
    Brute,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Rl => "rl",
            Mode::Random => "random",
            Mode::Brute => "brute",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "rl" => Ok(Mode::Rl),
            "random" => Ok(Mode::Random),
            "brute" => Ok(Mode::Brute),
            other => Err(Error::config(
                "search.mode",
                format!("unknown mode `{other}` (rl, random, brute)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub mode: Mode,
    pub max_episodes: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub brute_budget: u128,
    pub world: WorldConfig,
    pub rss: RssConfig,
    pub reward: RewardConfig,
    pub controller: ControllerConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: Mode::Rl,
            max_episodes: 4000,
            batch_size: 25,
            seed: 0,
            brute_budget: DEFAULT_BRUTE_BUDGET,
            world: WorldConfig::default(),
            rss: RssConfig::default(),
            reward: RewardConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.rss.validate()?;
        self.reward.validate()?;
        self.controller.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("search.batch", "must be >= 1"));
        }
        if self.mode == Mode::Rl && self.max_episodes < self.batch_size {
            return Err(Error::config(
                "search.episodes",
                format!(
                    "{} episodes is fewer than one batch of {}",
                    self.max_episodes, self.batch_size
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub breakdown: RewardBreakdown,
    pub verdict: ScenarioVerdict,
}

/// Scores one concrete scenario. The search drivers only see this interface.
pub trait Evaluator: Sync {
    fn evaluate(&self, action: &ScenarioAction) -> Result<Evaluation>;
}

/// Simulate the scenario against a system under test and score the trace.
pub struct SimulationEvaluator<'a> {
    pub space: &'a SearchSpace,
    pub world: WorldConfig,
    pub rss: RssConfig,
    pub reward: RewardConfig,
    pub sut: &'a dyn Sut,
}

impl<'a> SimulationEvaluator<'a> {
    pub fn new(space: &'a SearchSpace, cfg: &SearchConfig, sut: &'a dyn Sut) -> Self {
        SimulationEvaluator {
            space,
            world: cfg.world,
            rss: cfg.rss,
            reward: cfg.reward,
            sut,
        }
    }

    pub fn trace(&self, action: &ScenarioAction) -> Result<EpisodeTrace> {
        let scenario = Scenario::from_action(self.space, action)?;
        Ok(sim::run_episode(&scenario, &self.world, &self.rss, self.sut))
    }
}

impl Evaluator for SimulationEvaluator<'_> {
    fn evaluate(&self, action: &ScenarioAction) -> Result<Evaluation> {
        let trace = self.trace(action)?;
        Ok(Evaluation {
            breakdown: reward::total_reward(&trace, &self.reward),
            verdict: reward::classify_scenario(&trace, &self.reward),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub action: ScenarioAction,
    pub breakdown: RewardBreakdown,
    pub verdict: ScenarioVerdict,
    /// Exploration rate in force when the action was chosen.
    pub epsilon: f64,
    pub explored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEpisode {
    pub episode: usize,
    pub action: ScenarioAction,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub mode: Mode,
    pub episodes: usize,
    pub best: Option<BestEpisode>,
    pub first_challenging: Option<usize>,
    pub challenging: usize,
    pub non_challenging: usize,
    pub collisions: usize,
}

impl SearchSummary {
    fn new(mode: Mode) -> Self {
        SearchSummary {
            mode,
            episodes: 0,
            best: None,
            first_challenging: None,
            challenging: 0,
            non_challenging: 0,
            collisions: 0,
        }
    }

    fn push(&mut self, row: &EpisodeRow) {
        self.episodes += 1;
        let total = row.breakdown.total;
        if self.best.as_ref().is_none_or(|b| total > b.reward) {
            self.best = Some(BestEpisode {
                episode: row.episode,
                action: row.action.clone(),
                reward: total,
            });
        }
        if row.verdict.challenging {
            self.challenging += 1;
            self.first_challenging.get_or_insert(row.episode);
        } else {
            self.non_challenging += 1;
        }
        if row.verdict.collision {
            self.collisions += 1;
        }
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.reward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub rows: Vec<EpisodeRow>,
    pub summary: SearchSummary,
    /// Trailing mean over [`MOVING_AVERAGE_WINDOW`] episodes; `None` until the
    /// window is full.
    pub moving_avg: Vec<Option<f64>>,
}

impl SearchReport {
    fn from_rows(mode: Mode, rows: Vec<EpisodeRow>) -> Self {
        let mut summary = SearchSummary::new(mode);
        for r in &rows {
            summary.push(r);
        }
        let totals: Vec<f64> = rows.iter().map(|r| r.breakdown.total).collect();
        SearchReport {
            moving_avg: moving_average(&totals, MOVING_AVERAGE_WINDOW),
            rows,
            summary,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.breakdown.total).collect()
    }

    /// Best reward seen up to and including each episode.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.rows
            .iter()
            .scan(f64::NEG_INFINITY, |best, r| {
                *best = best.max(r.breakdown.total);
                Some(*best)
            })
            .collect()
    }
}

pub fn moving_average(xs: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut ma = MovingAverage::new(window);
    xs.iter().map(|&x| ma.push(x)).collect()
}

/// Streaming trailing mean; matches [`moving_average`] value for value.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<f64>,
    sum: f64,
    seen: usize,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        MovingAverage {
            window,
            buf: VecDeque::with_capacity(window + 1),
            sum: 0.0,
            seen: 0,
        }
    }

    pub fn push(&mut self, x: f64) -> Option<f64> {
        self.buf.push_back(x);
        self.sum += x;
        if self.buf.len() > self.window {
            self.sum -= self.buf.pop_front().expect("buffer is over-full");
        }
        self.seen += 1;
        if self.seen < self.window {
            return None;
        }
        // recompute exactly every window to stop drift from the running sum
        if self.seen % self.window == 0 {
            self.sum = self.buf.iter().sum();
        }
        Some(self.sum / self.window as f64)
    }
}

/// Learned search: sample, simulate, score, and update every `batch_size`
/// episodes. Returns the report and the final policy.
pub fn run_search(
    space: &SearchSpace,
    cfg: &SearchConfig,
    evaluator: &dyn Evaluator,
) -> Result<(SearchReport, PolicyParams)> {
    cfg.validate()?;
    let mut ctrl = Controller::new(&space.cardinalities(), &cfg.controller, cfg.seed)?;
    let mut rngs = SamplerRngs::from_seed(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.max_episodes);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut state: Option<ScenarioAction> = None;
    for episode in 0..cfg.max_episodes {
        let epsilon = ctrl.schedule.epsilon;
        let (action, mut record) = ctrl.sample(state.as_ref(), &mut rngs)?;
        let ev = evaluator.evaluate(&action)?;
        record.ret = ev.breakdown.total;
        rows.push(EpisodeRow {
            episode,
            action: action.clone(),
            breakdown: ev.breakdown,
            verdict: ev.verdict,
            epsilon,
            explored: record.explored,
        });
        batch.push(record);
        if batch.len() == cfg.batch_size {
            ctrl.update(&batch)?;
            batch.clear();
        }
        state = Some(action);
    }
    Ok((SearchReport::from_rows(Mode::Rl, rows), ctrl.params))
}

/// Uniform random search. Actions come from the same stream the learned
/// search uses for its exploratory picks, so equal seeds pair the two modes.
pub fn run_random(space: &SearchSpace, cfg: &SearchConfig, evaluator: &dyn Evaluator) -> Result<SearchReport> {
    cfg.validate()?;
    let cards = space.cardinalities();
    let mut pick = rng::stream(cfg.seed, rng::EXPLORE_PICK);
    let actions: Vec<ScenarioAction> = (0..cfg.max_episodes)
        .map(|_| controller::uniform_action(&cards, &mut pick))
        .collect();
    let rows = actions
        .into_par_iter()
        .enumerate()
        .map(|(episode, action)| {
            let ev = evaluator.evaluate(&action)?;
            Ok(EpisodeRow {
                episode,
                action,
                breakdown: ev.breakdown,
                verdict: ev.verdict,
                epsilon: 1.0,
                explored: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport::from_rows(Mode::Random, rows))
}

/// Exhaustive evaluation streamed to `sink` in enumeration order.
pub fn run_brute_with(
    space: &SearchSpace,
    cfg: &SearchConfig,
    evaluator: &dyn Evaluator,
    sink: &mut dyn FnMut(&EpisodeRow) -> Result<()>,
) -> Result<SearchSummary> {
    cfg.validate()?;
    let cardinality = space.cardinality();
    if cardinality > cfg.brute_budget {
        return Err(Error::BudgetExceeded {
            cardinality,
            budget: cfg.brute_budget,
        });
    }
    let mut summary = SearchSummary::new(Mode::Brute);
    let mut start = 0u128;
    while start < cardinality {
        let end = (start + BRUTE_CHUNK).min(cardinality);
        let chunk = (start..end)
            .into_par_iter()
            .map(|rank| {
                let action = space.action_at(rank);
                let ev = evaluator.evaluate(&action)?;
                Ok(EpisodeRow {
                    episode: rank as usize,
                    action,
                    breakdown: ev.breakdown,
                    verdict: ev.verdict,
                    epsilon: 0.0,
                    explored: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for row in &chunk {
            summary.push(row);
            sink(row)?;
        }
        start = end;
    }
    Ok(summary)
}

/// Exhaustive evaluation of every action, rows retained.
pub fn run_brute(space: &SearchSpace, cfg: &SearchConfig, evaluator: &dyn Evaluator) -> Result<SearchReport> {
    let mut rows = Vec::new();
    run_brute_with(space, cfg, evaluator, &mut |r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(SearchReport::from_rows(Mode::Brute, rows))
}
