//! Episode reward and challenging-scenario verdict.
//!
//! The reward has three parts: the share of high-risk timesteps and the
//! (inverted) final distance, each mapped onto [-0.01, 0.01], plus a fixed
//! bonus when the episode ends in a collision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EpisodeTrace;

pub const REWARD_LO: f64 = -0.01;
pub const REWARD_HI: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Distance mapped to the lowest distance reward, m.
    pub d_max: f64,
    pub collision_bonus: f64,
    /// Minimum share of high-risk timesteps for a challenging verdict.
    pub challenging_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            d_max: 50.0,
            collision_bonus: 0.25,
            challenging_fraction: 0.5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0) || !self.d_max.is_finite() {
            return Err(Error::config("reward.d_max", "must be finite and > 0"));
        }
        if !(self.collision_bonus >= 0.0) || !self.collision_bonus.is_finite() {
            return Err(Error::config("reward.collision_bonus", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.challenging_fraction) {
            return Err(Error::config("reward.challenging_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_highrisk: f64,
    pub r_distance: f64,
    pub r_collision: f64,
    pub total: f64,
    pub highrisk_count: usize,
    pub total_timesteps: usize,
    pub final_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub challenging: bool,
    pub highrisk_fraction: f64,
    pub collision: bool,
}

/// Affine map of `x` from [lo, hi] onto [a, b].
pub fn normalize_affine(x: f64, lo: f64, hi: f64, a: f64, b: f64) -> Result<f64> {
    if hi == lo {
        return Err(Error::DegenerateRange(lo));
    }
    Ok((b - a) * ((x - lo) / (hi - lo)) + a)
}

pub fn reward_highrisk(highrisk_count: usize, total_timesteps: usize) -> f64 {
    debug_assert!(highrisk_count <= total_timesteps);
    // total_timesteps >= 1 for every trace; a zero here is a caller bug
    normalize_affine(
        highrisk_count as f64,
        0.0,
        total_timesteps.max(1) as f64,
        REWARD_LO,
        REWARD_HI,
    )
    .expect("range is non-degenerate")
}

/// Closer final distance, higher reward.
pub fn reward_distance(final_distance: f64, d_max: f64) -> f64 {
    let u = (final_distance / d_max).clamp(0.0, 1.0);
    normalize_affine(1.0 - u, 0.0, 1.0, REWARD_LO, REWARD_HI).expect("unit range")
}

impl RewardBreakdown {
    pub fn from_counts(
        highrisk_count: usize,
        total_timesteps: usize,
        final_distance: f64,
        collision: bool,
        cfg: &RewardConfig,
    ) -> Self {
        let r_highrisk = reward_highrisk(highrisk_count, total_timesteps);
        let r_distance = reward_distance(final_distance, cfg.d_max);
        let r_collision = if collision { cfg.collision_bonus } else { 0.0 };
        RewardBreakdown {
            r_highrisk,
            r_distance,
            r_collision,
            total: r_highrisk + r_distance + r_collision,
            highrisk_count,
            total_timesteps,
            final_distance,
        }
    }
}

pub fn total_reward(trace: &EpisodeTrace, cfg: &RewardConfig) -> RewardBreakdown {
    RewardBreakdown::from_counts(
        trace.highrisk_count(),
        trace.len(),
        trace.last().euclid_dist,
        trace.collision,
        cfg,
    )
}

impl ScenarioVerdict {
    pub fn from_counts(highrisk_count: usize, total_timesteps: usize, collision: bool, cfg: &RewardConfig) -> Self {
        let highrisk_fraction = highrisk_count as f64 / total_timesteps.max(1) as f64;
        ScenarioVerdict {
            challenging: highrisk_fraction >= cfg.challenging_fraction || collision,
            highrisk_fraction,
            collision,
        }
    }
}

pub fn classify_scenario(trace: &EpisodeTrace, cfg: &RewardConfig) -> ScenarioVerdict {
    ScenarioVerdict::from_counts(trace.highrisk_count(), trace.len(), trace.collision, cfg)
}
