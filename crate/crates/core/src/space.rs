//! Discrete scenario-parameter search space.
//!
//! A [`SearchSpace`] is an ordered list of parameters, each with a finite,
//! ordered list of candidate values. An action picks one index per parameter.

use std::collections::HashSet;
use std::fmt;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const EGO_LONG_POS: &str = "ego-long-pos";
pub const PED_ACCEL: &str = "ped-accel";
pub const PED_VEL: &str = "ped-vel";
pub const PED_LONG_POS: &str = "ped-long-pos";
pub const WEATHER: &str = "weather";
pub const PED_SPEED_CHANGE: &str = "ped_speed_change";
pub const PED_TIMESTEPS: &str = "ped_timesteps";

/// Where a parameter's value list came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
    pub source: Source,
}

impl ParameterDef {
    pub fn new(name: &str, unit: &str, values: Vec<f64>, source: Source) -> Result<Self> {
        let def = ParameterDef {
            name: name.to_string(),
            unit: unit.to_string(),
            values,
            source,
        };
        def.validate()?;
        Ok(def)
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    fn validate(&self) -> Result<()> {
        let key = |field: &str| format!("space.{}.{}", self.name, field);
        if self.name.is_empty() {
            return Err(Error::config("space.name", "parameter name is empty"));
        }
        if self.values.is_empty() {
            return Err(Error::config(key("values"), "value list is empty"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(key("values"), format!("non-finite value {v}")));
        }
        match self.source {
            Source::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::config(key("source"), format!("uniform bounds {lo} >= {hi}")));
                }
                if let Some(v) = self.values.iter().find(|v| **v < lo || **v > hi) {
                    return Err(Error::config(
                        key("values"),
                        format!("value {v} outside uniform support [{lo}, {hi}]"),
                    ));
                }
            }
            Source::Normal { mean, sd } => {
                if !mean.is_finite() || !(sd > 0.0) {
                    return Err(Error::config(
                        key("source"),
                        format!("normal({mean}, {sd}) needs sd > 0"),
                    ));
                }
            }
            Source::Explicit => {}
        }
        Ok(())
    }
}

/// One index per parameter of the active space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioAction {
    pub indices: Vec<usize>,
}

impl ScenarioAction {
    pub fn new(indices: Vec<usize>) -> Self {
        ScenarioAction { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl fmt::Display for ScenarioAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, idx) in self.indices.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{idx}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParameterDef>,
    pub seed: u64,
}

impl SearchSpace {
    pub fn new(params: Vec<ParameterDef>, seed: u64) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::config("space", "search space has no parameters"));
        }
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::config(format!("space.{}", p.name), "duplicate parameter name"));
            }
        }
        Ok(SearchSpace { params, seed })
    }

    /// Named presets: `paper5` (five parameters) and `paper7` (adds the
    /// pedestrian speed perturbation parameters).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper5" => Ok(build_base_preset()),
            "paper7" => Ok(build_scalability_preset()),
            other => Err(Error::config("search.preset", format!("unknown preset `{other}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.params.iter().map(ParameterDef::cardinality).collect()
    }

    /// Number of distinct actions, the product of all list lengths.
    pub fn cardinality(&self) -> u128 {
        self.params.iter().map(|p| p.cardinality() as u128).product()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParameterDef> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn check_action(&self, action: &ScenarioAction) -> Result<()> {
        if action.len() != self.len() {
            return Err(Error::Dimension(format!(
                "action has {} indices, space has {} parameters",
                action.len(),
                self.len()
            )));
        }
        for (p, &i) in self.params.iter().zip(&action.indices) {
            if i >= p.cardinality() {
                return Err(Error::Dimension(format!(
                    "index {i} out of range for `{}` ({} values)",
                    p.name,
                    p.cardinality()
                )));
            }
        }
        Ok(())
    }

    /// The concrete values selected by `action`.
    pub fn resolve(&self, action: &ScenarioAction) -> Result<Vec<f64>> {
        self.check_action(action)?;
        Ok(self
            .params
            .iter()
            .zip(&action.indices)
            .map(|(p, &i)| p.values[i])
            .collect())
    }

    /// Find the action whose resolved values are exactly `values`.
    pub fn action_for_values(&self, values: &[f64]) -> Result<ScenarioAction> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} values given, space has {} parameters",
                values.len(),
                self.len()
            )));
        }
        let mut indices = Vec::with_capacity(values.len());
        for (p, v) in self.params.iter().zip(values) {
            let i =
                p.values.iter().position(|x| x == v).ok_or_else(|| {
                    Error::config(format!("space.{}", p.name), format!("value {v} is not in the list"))
                })?;
            indices.push(i);
        }
        Ok(ScenarioAction { indices })
    }

    /// The action at lexicographic rank `rank` (last parameter varies fastest).
    pub fn action_at(&self, mut rank: u128) -> ScenarioAction {
        let mut indices = vec![0; self.len()];
        for (slot, p) in indices.iter_mut().zip(&self.params).rev() {
            let k = p.cardinality() as u128;
            *slot = (rank % k) as usize;
            rank /= k;
        }
        ScenarioAction { indices }
    }

    /// Every action exactly once, in lexicographic order over parameter order.
    pub fn enumerate(&self) -> Enumerate<'_> {
        Enumerate {
            space: self,
            next: Some(vec![0; self.len()]),
        }
    }
}

pub struct Enumerate<'a> {
    space: &'a SearchSpace,
    next: Option<Vec<usize>>,
}

impl Iterator for Enumerate<'_> {
    type Item = ScenarioAction;

    fn next(&mut self) -> Option<ScenarioAction> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        // odometer increment, last position fastest
        let mut carried_out = true;
        for (slot, p) in succ.iter_mut().zip(&self.space.params).rev() {
            *slot += 1;
            if *slot < p.cardinality() {
                carried_out = false;
                break;
            }
            *slot = 0;
        }
        if !carried_out {
            self.next = Some(succ);
        }
        Some(ScenarioAction { indices: current })
    }
}

fn preset_param(name: &str, unit: &str, values: &[f64], source: Source) -> ParameterDef {
    ParameterDef::new(name, unit, values.to_vec(), source).expect("preset parameter is valid")
}

/// The five-parameter pedestrian crossing space with its published value lists.
pub fn build_base_preset() -> SearchSpace {
    let params = vec![
        preset_param(
            EGO_LONG_POS,
            "m",
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
            Source::Uniform { lo: 1.0, hi: 10.0 },
        ),
        preset_param(
            PED_ACCEL,
            "m/s^2",
            &[0.046, 0.051, 0.097, 0.075, 0.099, 0.076, 0.065, 0.007, 0.007, 0.013],
            Source::Uniform { lo: 0.0, hi: 0.1 },
        ),
        preset_param(
            PED_VEL,
            "m/s",
            &[
                1.803, 1.178, 1.139, 1.476, 1.205, 1.725, 1.142, 1.516, 1.201, 1.614, 1.808, 1.303, 1.565, 1.416,
                1.247, 1.355, 1.755, 1.237, 1.196, 1.303, 1.552, 1.344, 0.937, 1.108, 0.976,
            ],
            Source::Normal { mean: 1.46, sd: 0.24 },
        ),
        preset_param(
            PED_LONG_POS,
            "m",
            &[3.0, 3.5, 4.0, 4.5],
            Source::Uniform { lo: 3.0, hi: 4.5 },
        ),
        preset_param(
            WEATHER,
            "index",
            &[4.0, 1.0, 7.0, 8.0, 6.0, 5.0, 8.0, 12.0, 9.0, 2.0],
            Source::Uniform { lo: 0.0, hi: 14.0 },
        ),
    ];
    SearchSpace { params, seed: 0 }
}

/// The base preset plus pedestrian speed perturbation magnitude and onset.
pub fn build_scalability_preset() -> SearchSpace {
    let mut space = build_base_preset();
    space.params.push(preset_param(
        PED_SPEED_CHANGE,
        "m/s",
        &[0.50, -0.50, 0.75, -0.75],
        Source::Explicit,
    ));
    space.params.push(preset_param(
        PED_TIMESTEPS,
        "timestep",
        &[20.0, 30.0, 40.0, 50.0, 60.0],
        Source::Explicit,
    ));
    space
}

/// How to draw one parameter's value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSource {
    /// `count` i.i.d. draws from U(lo, hi).
    Uniform { lo: f64, hi: f64 },
    /// `count` evenly spaced values over [lo, hi], both ends included.
    Grid { lo: f64, hi: f64 },
    /// `count` i.i.d. draws from N(mean, sd).
    Normal { mean: f64, sd: f64 },
    /// A fixed list; `count` is ignored.
    List { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub source: SampleSource,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_count() -> usize {
    1
}

/// Build a space by drawing each parameter's values; deterministic in `seed`.
pub fn sample_space(specs: &[SampleSpec], seed: u64) -> Result<SearchSpace> {
    let mut params = Vec::with_capacity(specs.len());
    for spec in specs {
        let key = |field: &str| format!("space.{}.{}", spec.name, field);
        if spec.count == 0 && !matches!(spec.source, SampleSource::List { .. }) {
            return Err(Error::config(key("count"), "count must be >= 1"));
        }
        let mut rng = rng::stream(seed, &format!("{}/{}", rng::SPACE, spec.name));
        let (values, source) = match &spec.source {
            SampleSource::Uniform { lo, hi } => {
                let dist = Uniform::new_inclusive(*lo, *hi)
                    .ok()
                    .filter(|_| lo < hi)
                    .ok_or_else(|| Error::config(key("source"), format!("uniform bounds {lo} >= {hi}")))?;
                let values = (0..spec.count).map(|_| dist.sample(&mut rng)).collect();
                (values, Source::Uniform { lo: *lo, hi: *hi })
            }
            SampleSource::Grid { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::config(key("source"), format!("grid bounds {lo} >= {hi}")));
                }
                let values = if spec.count == 1 {
                    vec![*lo]
                } else {
                    let step = (hi - lo) / (spec.count - 1) as f64;
                    (0..spec.count)
                        .map(|i| if i + 1 == spec.count { *hi } else { lo + step * i as f64 })
                        .collect()
                };
                (values, Source::Uniform { lo: *lo, hi: *hi })
            }
            SampleSource::Normal { mean, sd } => {
                if !(*sd > 0.0) {
                    return Err(Error::config(key("source"), format!("normal sd {sd} must be > 0")));
                }
                let dist = Normal::new(*mean, *sd).map_err(|e| Error::config(key("source"), e.to_string()))?;
                let values = (0..spec.count).map(|_| dist.sample(&mut rng)).collect();
                (values, Source::Normal { mean: *mean, sd: *sd })
            }
            SampleSource::List { values } => (values.clone(), Source::Explicit),
        };
        params.push(ParameterDef::new(&spec.name, &spec.unit, values, source)?);
    }
    SearchSpace::new(params, seed)
}
