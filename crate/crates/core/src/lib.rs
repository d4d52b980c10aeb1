//! Falsification of a pedestrian-crossing collision avoidance system.
//!
//! A recurrent categorical controller proposes one value per scenario
//! parameter; a kinematic simulator runs the scenario against the system
//! under test; an RSS-based reward scores how close the outcome came to a
//! failure; REINFORCE pushes the controller towards higher-risk scenarios.
//! Random and exhaustive search are provided as baselines.

pub mod controller;
pub mod error;
pub mod reward;
pub mod rng;
pub mod rss;
pub mod search;
pub mod sim;
pub mod space;

pub use error::{Error, Result};
pub use search::{
    run_brute, run_brute_with, run_random, run_search, Evaluator, Mode, SearchConfig, SearchReport, SimulationEvaluator,
};
pub use space::{ScenarioAction, SearchSpace};
