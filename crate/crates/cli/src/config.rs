//! Run configuration: a TOML file with one section per module, command-line
//! overrides on top, and the resolved manifest written next to every run.
//!
//! ```toml
//! [search]
//! preset = "paper5"
//! mode = "rl"
//! seed = 7
//! episodes = 4000
//! batch = 25
//! brute_budget = 2000000
//!
//! [world]
//! dt = 0.05
//!
//! [[space.params]]
//! name = "ego-long-pos"
//! unit = "m"
//! count = 10
//! source = { kind = "grid", lo = 1.0, hi = 10.0 }
//! ```
//!
//! Every section is optional. A file must name either `search.preset` or a
//! `[space]` table.

use std::fs;
use std::path::Path;

use falsify_core::controller::ControllerConfig;
use falsify_core::reward::RewardConfig;
use falsify_core::rss::RssConfig;
use falsify_core::search::{Mode, SearchConfig, DEFAULT_BRUTE_BUDGET};
use falsify_core::sim::WorldConfig;
use falsify_core::space::{sample_space, SampleSource, SampleSpec, SearchSpace};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_PRESET: &str = "paper5";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    pub episodes: usize,
    pub batch: usize,
    pub brute_budget: u64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSection {
            preset: None,
            mode: d.mode,
            seed: d.seed,
            episodes: d.max_episodes,
            batch: d.batch_size,
            brute_budget: DEFAULT_BRUTE_BUDGET as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub params: Vec<SampleSpec>,
}

/// Provenance block of a written manifest. Ignored when read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub tool_version: String,
    pub created: String,
    pub output_dir: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub rss: RssConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

/// Values given on the command line; each replaces the file's setting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub batch: Option<usize>,
}

/// A fully resolved run: the concrete space and every module's settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// Preset name, if the space came from one.
    pub preset: Option<String>,
    pub space: SearchSpace,
    pub search: SearchConfig,
}

pub fn parse_config(text: &str, origin: &str) -> CliResult<ConfigFile> {
    toml::from_str(text).map_err(|e| {
        let mut msg = String::from(origin);
        if let Some(span) = e.span() {
            let before = &text[..span.start.min(text.len())];
            msg.push_str(&format!(" line {}", before.matches('\n').count() + 1));
            if let Some(section) = enclosing_section(before) {
                msg.push_str(&format!(" in [{section}]"));
            }
        }
        msg.push_str(": ");
        msg.push_str(e.message().trim());
        CliError::usage(msg)
    })
}

fn enclosing_section(before: &str) -> Option<&str> {
    before.lines().rev().find_map(|l| {
        let l = l.trim();
        l.strip_prefix("[[")
            .and_then(|r| r.strip_suffix("]]"))
            .or_else(|| l.strip_prefix('[').and_then(|r| r.strip_suffix(']')))
    })
}

pub fn load_config(path: &Path) -> CliResult<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Merge `file` (if any) with `overrides` and build the space.
pub fn resolve(file: Option<ConfigFile>, overrides: &Overrides) -> CliResult<Resolved> {
    let from_file = file.is_some();
    let mut file = file.unwrap_or_default();
    let s = &mut file.search;
    if let Some(p) = &overrides.preset {
        s.preset = Some(p.clone());
        file.space = None;
    }
    if let Some(m) = overrides.mode {
        s.mode = m;
    }
    if let Some(v) = overrides.seed {
        s.seed = v;
    }
    if let Some(v) = overrides.episodes {
        s.episodes = v;
    }
    if let Some(v) = overrides.batch {
        s.batch = v;
    }
    let search = SearchConfig {
        mode: s.mode,
        max_episodes: s.episodes,
        batch_size: s.batch,
        seed: s.seed,
        brute_budget: s.brute_budget as u128,
        world: file.world,
        rss: file.rss,
        reward: file.reward,
        controller: file.controller,
    };
    let (preset, space) = match (&file.space, &s.preset) {
        (Some(section), label) => (label.clone(), sample_space(&section.params, search.seed)?),
        (None, Some(name)) => (Some(name.clone()), SearchSpace::preset(name)?),
        (None, None) if from_file => {
            return Err(CliError::usage(
                "missing config key `search.preset` (or a [space] table with [[space.params]])",
            ))
        }
        (None, None) => (Some(DEFAULT_PRESET.to_string()), SearchSpace::preset(DEFAULT_PRESET)?),
    };
    search.validate()?;
    Ok(Resolved { preset, space, search })
}

impl Resolved {
    /// The manifest for this run. Read back with [`parse_config`], it resolves
    /// to the same space and settings.
    pub fn manifest(&self, output_dir: &str, created: &str) -> ConfigFile {
        let c = &self.search;
        let params = self
            .space
            .params
            .iter()
            .map(|p| SampleSpec {
                name: p.name.clone(),
                unit: p.unit.clone(),
                source: SampleSource::List {
                    values: p.values.clone(),
                },
                count: p.values.len(),
            })
            .collect();
        ConfigFile {
            search: SearchSection {
                preset: self.preset.clone(),
                mode: c.mode,
                seed: c.seed,
                episodes: c.max_episodes,
                batch: c.batch_size,
                brute_budget: u64::try_from(c.brute_budget).unwrap_or(u64::MAX),
            },
            world: c.world,
            rss: c.rss,
            reward: c.reward,
            controller: c.controller,
            space: Some(SpaceSection { params }),
            manifest: Some(ManifestInfo {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                created: created.to_string(),
                output_dir: output_dir.to_string(),
            }),
        }
    }
}

pub fn to_toml(file: &ConfigFile) -> CliResult<String> {
    toml::to_string(file).map_err(|e| CliError::Failed(format!("cannot serialize manifest: {e}")))
}
