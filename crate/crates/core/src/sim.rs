//! Point-mass kinematic simulation of an ego vehicle approaching a pedestrian
//! crossing.
//!
//! Frame: the ego drives along +x on the lane centre line y = 0. The crossing
//! sits at `crossing_x`; the pedestrian starts on the near side at
//! y = -ped_long_pos and walks towards +y. The vehicle's speed is controlled
//! by a system under test that is only reachable through the [`Sut`] trait.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rss::{self, RssConfig};
use crate::space::{self, ScenarioAction, SearchSpace};

/// Length of the pedestrian speed perturbation window, in timesteps.
pub const SPEED_CHANGE_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub dt: f64,
    pub max_timesteps: usize,
    pub crossing_x: f64,
    pub lane_half_width: f64,
    pub ego_target_speed: f64,
    pub ego_accel: f64,
    pub cas_brake_decel: f64,
    pub cas_base_range: f64,
    /// Fraction of detection range lost per weather index.
    pub weather_range_factor: f64,
    pub car_half_length: f64,
    pub car_half_width: f64,
    pub ped_speed_cap: f64,
    pub end_margin: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dt: 0.05,
            max_timesteps: 200,
            crossing_x: 35.0,
            lane_half_width: 1.75,
            ego_target_speed: 8.33,
            ego_accel: 2.0,
            cas_brake_decel: 4.0,
            cas_base_range: 10.0,
            weather_range_factor: 0.04,
            car_half_length: 2.2,
            car_half_width: 0.9,
            ped_speed_cap: 2.5,
            end_margin: 5.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_timesteps == 0 {
            return Err(Error::config("world.max_timesteps", "must be >= 1"));
        }
        let positive = [
            ("world.dt", self.dt),
            ("world.crossing_x", self.crossing_x),
            ("world.lane_half_width", self.lane_half_width),
            ("world.ego_target_speed", self.ego_target_speed),
            ("world.ego_accel", self.ego_accel),
            ("world.cas_brake_decel", self.cas_brake_decel),
            ("world.cas_base_range", self.cas_base_range),
            ("world.car_half_length", self.car_half_length),
            ("world.car_half_width", self.car_half_width),
            ("world.ped_speed_cap", self.ped_speed_cap),
            ("world.end_margin", self.end_margin),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(key, format!("must be finite and > 0 (got {v})")));
            }
        }
        if !(self.weather_range_factor >= 0.0) || !self.weather_range_factor.is_finite() {
            return Err(Error::config("world.weather_range_factor", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Detection range of the CAS under the given weather index.
    pub fn effective_range(&self, weather: f64) -> f64 {
        (self.cas_base_range * (1.0 - self.weather_range_factor * weather)).max(0.0)
    }

    /// Half width of the band the CAS watches: the lane plus the car's half width.
    pub fn corridor_half_width(&self) -> f64 {
        self.lane_half_width + self.car_half_width
    }
}

/// Pedestrian speed perturbation: `change` m/s added for five steps from `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedChange {
    pub change: f64,
    pub start: usize,
}

/// A concrete scenario: the resolved values of an action, by role.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub ego_long_pos: f64,
    pub ped_accel: f64,
    pub ped_vel: f64,
    pub ped_long_pos: f64,
    pub weather: f64,
    pub speed_change: Option<SpeedChange>,
}

impl Scenario {
    pub fn from_action(space: &SearchSpace, action: &ScenarioAction) -> Result<Scenario> {
        let values = space.resolve(action)?;
        let get = |name: &str| -> Result<f64> {
            space
                .index_of(name)
                .map(|i| values[i])
                .ok_or_else(|| Error::config(format!("space.{name}"), "required scenario parameter is missing"))
        };
        let speed_change = match (
            space.index_of(space::PED_SPEED_CHANGE),
            space.index_of(space::PED_TIMESTEPS),
        ) {
            (Some(c), Some(s)) => {
                let start = values[s];
                if start < 0.0 {
                    return Err(Error::config(
                        format!("space.{}", space::PED_TIMESTEPS),
                        "onset must be non-negative",
                    ));
                }
                Some(SpeedChange {
                    change: values[c],
                    start: start.round() as usize,
                })
            }
            (None, None) => None,
            _ => {
                return Err(Error::config(
                    "space",
                    format!(
                        "`{}` and `{}` must be given together",
                        space::PED_SPEED_CHANGE,
                        space::PED_TIMESTEPS
                    ),
                ))
            }
        };
        Ok(Scenario {
            ego_long_pos: get(space::EGO_LONG_POS)?,
            ped_accel: get(space::PED_ACCEL)?,
            ped_vel: get(space::PED_VEL)?,
            ped_long_pos: get(space::PED_LONG_POS)?,
            weather: get(space::WEATHER)?,
            speed_change,
        })
    }

    /// Scenario without a speed perturbation.
    pub fn basic(ego_long_pos: f64, ped_accel: f64, ped_vel: f64, ped_long_pos: f64, weather: f64) -> Self {
        Scenario {
            ego_long_pos,
            ped_accel,
            ped_vel,
            ped_long_pos,
            weather,
            speed_change: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    /// Index of the next timestep to simulate.
    pub t: usize,
    pub ego_x: f64,
    pub ego_v: f64,
    pub ped_x: f64,
    pub ped_y: f64,
    /// Pedestrian speed before any perturbation.
    pub ped_base_v: f64,
    /// Speed actually walked during the last step.
    pub ped_v: f64,
    pub detection_range: f64,
}

pub fn init_world(scenario: &Scenario, cfg: &WorldConfig) -> WorldState {
    let v0 = scenario.ped_vel.clamp(0.0, cfg.ped_speed_cap);
    WorldState {
        t: 0,
        ego_x: scenario.ego_long_pos,
        ego_v: cfg.ego_target_speed,
        ped_x: cfg.crossing_x,
        ped_y: -scenario.ped_long_pos,
        ped_base_v: v0,
        ped_v: v0,
        detection_range: cfg.effective_range(scenario.weather),
    }
}

pub fn pedestrian_step(state: &mut WorldState, scenario: &Scenario, cfg: &WorldConfig) {
    state.ped_base_v = (state.ped_base_v + scenario.ped_accel * cfg.dt).clamp(0.0, cfg.ped_speed_cap);
    let offset = match scenario.speed_change {
        Some(sc) if (sc.start..sc.start + SPEED_CHANGE_STEPS).contains(&state.t) => sc.change,
        _ => 0.0,
    };
    state.ped_v = (state.ped_base_v + offset).clamp(0.0, cfg.ped_speed_cap);
    state.ped_y += state.ped_v * cfg.dt;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Brake,
    Accelerate,
}

/// What the system under test perceives each timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub ego_x: f64,
    pub ego_v: f64,
    pub ped_x: f64,
    pub ped_y: f64,
    /// Euclidean distance from the ego reference point to the pedestrian.
    pub distance: f64,
    /// Sensor range under the current weather.
    pub detection_range: f64,
}

/// The black-box system under test: maps an observation to a speed command.
pub trait Sut: Sync {
    fn control(&self, obs: &Observation) -> Command;
}

/// Rule-based collision avoidance: brake while a pedestrian is ahead,
/// within sensor range and inside the watched corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionAvoidance {
    pub corridor_half_width: f64,
}

impl CollisionAvoidance {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        CollisionAvoidance {
            corridor_half_width: cfg.corridor_half_width(),
        }
    }
}

impl Sut for CollisionAvoidance {
    fn control(&self, obs: &Observation) -> Command {
        let ahead = obs.ped_x > obs.ego_x;
        let in_range = obs.distance <= obs.detection_range;
        let in_corridor = obs.ped_y.abs() <= self.corridor_half_width;
        if ahead && in_range && in_corridor {
            Command::Brake
        } else {
            Command::Accelerate
        }
    }
}

/// Euclidean distance between the pedestrian and the ego reference point.
pub fn ped_distance(state: &WorldState) -> f64 {
    (state.ped_x - state.ego_x).hypot(state.ped_y)
}

pub fn observe(state: &WorldState) -> Observation {
    Observation {
        ego_x: state.ego_x,
        ego_v: state.ego_v,
        ped_x: state.ped_x,
        ped_y: state.ped_y,
        distance: ped_distance(state),
        detection_range: state.detection_range,
    }
}

/// The reference CAS decision for `state`.
pub fn cas_control(state: &WorldState, cfg: &WorldConfig) -> Command {
    CollisionAvoidance::from_config(cfg).control(&observe(state))
}

pub fn ego_step(state: &mut WorldState, command: Command, cfg: &WorldConfig) {
    let accel = match command {
        Command::Accelerate => cfg.ego_accel,
        Command::Brake => -cfg.cas_brake_decel,
    };
    state.ego_v = (state.ego_v + accel * cfg.dt).clamp(0.0, cfg.ego_target_speed);
    state.ego_x += state.ego_v * cfg.dt;
}

/// Pedestrian inside the vehicle rectangle, boundary included.
pub fn check_collision(state: &WorldState, cfg: &WorldConfig) -> bool {
    (state.ped_x - state.ego_x).abs() <= cfg.car_half_length && state.ped_y.abs() <= cfg.car_half_width
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub ego_x: f64,
    pub ego_v: f64,
    pub ped_x: f64,
    pub ped_y: f64,
    pub ped_v: f64,
    pub euclid_dist: f64,
    pub rss_dmin: f64,
    /// Pedestrian not yet behind the rear of the vehicle.
    pub ped_ahead: bool,
    pub high_risk: bool,
    pub cas_detected: bool,
    pub collision: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Collision,
    TimeElapsed,
    DistancePassed,
}

impl EndReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            EndReason::Collision => "collision",
            EndReason::TimeElapsed => "time_elapsed",
            EndReason::DistancePassed => "distance_passed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<TraceRecord>,
    pub collision: bool,
    pub end_reason: EndReason,
}

pub const TRACE_CSV_HEADER: &str =
    "t,ego_x,ego_v,ped_x,ped_y,ped_v,euclid_dist,rss_dmin,ped_ahead,high_risk,cas_detected,collision";

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace holds at least one record")
    }

    pub fn highrisk_count(&self) -> usize {
        self.records.iter().filter(|r| r.high_risk).count()
    }

    /// One row per timestep. Floats use the shortest representation that
    /// parses back to the identical value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{}",
                r.t,
                r.ego_x,
                r.ego_v,
                r.ped_x,
                r.ped_y,
                r.ped_v,
                r.euclid_dist,
                r.rss_dmin,
                r.ped_ahead,
                r.high_risk,
                r.cas_detected,
                r.collision
            )?;
        }
        Ok(())
    }
}

/// Simulate one scenario to termination.
pub fn run_episode(scenario: &Scenario, cfg: &WorldConfig, rss_cfg: &RssConfig, sut: &dyn Sut) -> EpisodeTrace {
    let mut state = init_world(scenario, cfg);
    let mut records = Vec::with_capacity(cfg.max_timesteps.min(256));
    let mut end_reason = EndReason::TimeElapsed;
    while state.t < cfg.max_timesteps {
        pedestrian_step(&mut state, scenario, cfg);
        let command = sut.control(&observe(&state));
        ego_step(&mut state, command, cfg);
        let collision = check_collision(&state, cfg);

        let mut rec = TraceRecord {
            t: state.t,
            ego_x: state.ego_x,
            ego_v: state.ego_v,
            ped_x: state.ped_x,
            ped_y: state.ped_y,
            ped_v: state.ped_v,
            euclid_dist: ped_distance(&state),
            rss_dmin: 0.0,
            ped_ahead: state.ped_x >= state.ego_x - cfg.car_half_length,
            high_risk: false,
            cas_detected: command == Command::Brake,
            collision,
        };
        rec.rss_dmin = rss::record_safe_distance(&rec, rss_cfg);
        rec.high_risk = rss::classify_timestep(&rec, rss_cfg);
        records.push(rec);
        state.t += 1;

        if collision {
            end_reason = EndReason::Collision;
            break;
        }
        if state.ego_x > cfg.crossing_x + cfg.end_margin {
            end_reason = EndReason::DistancePassed;
            break;
        }
    }
    EpisodeTrace {
        records,
        collision: end_reason == EndReason::Collision,
        end_reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorldConfig {
        WorldConfig::default()
    }

    fn state_at(ego_x: f64, ego_v: f64, ped_x: f64, ped_y: f64) -> WorldState {
        WorldState {
            t: 0,
            ego_x,
            ego_v,
            ped_x,
            ped_y,
            ped_base_v: 1.0,
            ped_v: 1.0,
            detection_range: 10.0,
        }
    }

    #[test]
    fn init_places_agents() {
        let s = Scenario::basic(9.0, 0.007, 1.237, 3.5, 4.0);
        let w = init_world(&s, &cfg());
        assert_eq!(w.ego_x, 9.0);
        assert_eq!(w.ped_y, -3.5);
        assert_eq!(w.ped_v, 1.237);
        assert_eq!(w.ped_x, 35.0);
        assert_eq!(w.ego_v, 8.33);
    }

    #[test]
    fn weather_degrades_range() {
        let c = cfg();
        assert_eq!(c.effective_range(0.0), 10.0);
        assert!((c.effective_range(14.0) - 4.4).abs() < 1e-12);
        assert_eq!(
            WorldConfig {
                weather_range_factor: 0.1,
                ..c
            }
            .effective_range(14.0),
            0.0
        );
    }

    #[test]
    fn pedestrian_step_examples() {
        let c = cfg();
        let mut w = state_at(0.0, 0.0, 35.0, -3.0);
        let s = Scenario::basic(0.0, 0.0, 1.0, 3.0, 0.0);
        pedestrian_step(&mut w, &s, &c);
        assert_eq!(w.ped_v, 1.0);
        assert!((w.ped_y - (-3.0 + 0.05)).abs() < 1e-15);

        let bump = Scenario {
            speed_change: Some(SpeedChange { change: 0.75, start: 0 }),
            ..s
        };
        let mut w = state_at(0.0, 0.0, 35.0, -3.0);
        pedestrian_step(&mut w, &bump, &c);
        assert_eq!(w.ped_v, 1.75);

        let drop = Scenario {
            speed_change: Some(SpeedChange { change: -0.5, start: 0 }),
            ..s
        };
        let mut w = state_at(0.0, 0.0, 35.0, -3.0);
        w.ped_base_v = 0.1;
        pedestrian_step(&mut w, &drop, &c);
        assert_eq!(w.ped_v, 0.0);
        assert_eq!(w.ped_y, -3.0);
    }

    #[test]
    fn speed_change_lasts_five_steps() {
        let c = cfg();
        let s = Scenario {
            speed_change: Some(SpeedChange { change: 0.5, start: 3 }),
            ..Scenario::basic(0.0, 0.0, 1.0, 3.0, 0.0)
        };
        let mut w = init_world(&s, &c);
        let mut speeds = Vec::new();
        for _ in 0..10 {
            pedestrian_step(&mut w, &s, &c);
            speeds.push(w.ped_v);
            w.t += 1;
        }
        assert_eq!(speeds, vec![1.0, 1.0, 1.0, 1.5, 1.5, 1.5, 1.5, 1.5, 1.0, 1.0]);
    }

    #[test]
    fn cas_examples() {
        let c = cfg();
        let far = state_at(10.0, 8.0, 22.0, 0.0);
        assert_eq!(cas_control(&far, &c), Command::Accelerate);
        let near = state_at(10.0, 8.0, 15.0, 0.0);
        assert_eq!(cas_control(&near, &c), Command::Brake);
        let foggy = WorldState {
            detection_range: c.effective_range(14.0),
            ..near
        };
        assert_eq!(cas_control(&foggy, &c), Command::Accelerate);
        let outside = state_at(10.0, 8.0, 15.0, -3.0);
        assert_eq!(cas_control(&outside, &c), Command::Accelerate);
        let behind = state_at(10.0, 8.0, 9.0, 0.0);
        assert_eq!(cas_control(&behind, &c), Command::Accelerate);
    }

    #[test]
    fn ego_step_examples() {
        let c = cfg();
        let mut w = state_at(0.0, c.ego_target_speed, 35.0, -3.0);
        ego_step(&mut w, Command::Accelerate, &c);
        assert_eq!(w.ego_v, c.ego_target_speed);

        let mut w = state_at(0.0, 1.0, 35.0, -3.0);
        ego_step(&mut w, Command::Brake, &c);
        assert!((w.ego_v - 0.8).abs() < 1e-15);

        let mut w = state_at(0.0, 0.1, 35.0, -3.0);
        ego_step(&mut w, Command::Brake, &c);
        assert_eq!(w.ego_v, 0.0);
        assert_eq!(w.ego_x, 0.0);
    }

    #[test]
    fn collision_rectangle() {
        let c = cfg();
        assert!(!check_collision(&state_at(10.0, 0.0, 20.0, 0.0), &c));
        assert!(check_collision(&state_at(10.0, 0.0, 10.0, 0.0), &c));
        assert!(check_collision(
            &state_at(10.0, 0.0, 10.0 + c.car_half_length, c.car_half_width),
            &c
        ));
        assert!(!check_collision(
            &state_at(10.0, 0.0, 10.0, c.car_half_width + 1e-9),
            &c
        ));
    }

    #[test]
    fn distance_is_centre_to_pedestrian() {
        assert_eq!(ped_distance(&state_at(10.0, 0.0, 10.0, 0.0)), 0.0);
        let d = ped_distance(&state_at(10.0, 0.0, 13.0, -4.0));
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fast_pedestrian_clears_before_ego_arrives() {
        let c = cfg();
        let s = Scenario::basic(1.0, 0.0, c.ped_speed_cap, 3.0, 0.0);
        // closed form: pedestrian leaves |y| <= half width at (3 + 0.9) / 2.5 s;
        // the ego (never faster than target speed) reaches contact range no earlier than
        // (35 - 2.2 - 1) / 8.33 s
        let ped_clear = (3.0 + c.car_half_width) / c.ped_speed_cap;
        let ego_arrive = (c.crossing_x - c.car_half_length - 1.0) / c.ego_target_speed;
        assert!(ped_clear < ego_arrive);
        let trace = run_episode(&s, &c, &RssConfig::default(), &CollisionAvoidance::from_config(&c));
        assert!(!trace.collision);
        assert_eq!(trace.end_reason, EndReason::DistancePassed);
    }

    #[test]
    fn run_episode_is_deterministic() {
        let c = cfg();
        let s = Scenario::basic(9.0, 0.007, 1.237, 3.5, 4.0);
        let sut = CollisionAvoidance::from_config(&c);
        let a = run_episode(&s, &c, &RssConfig::default(), &sut);
        let b = run_episode(&s, &c, &RssConfig::default(), &sut);
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(matches!(a.end_reason, EndReason::Collision | EndReason::DistancePassed));
    }

    struct AlwaysBrake;
    impl Sut for AlwaysBrake {
        fn control(&self, _: &Observation) -> Command {
            Command::Brake
        }
    }

    #[test]
    fn stub_sut_plugs_in() {
        let c = cfg();
        let s = Scenario::basic(1.0, 0.0, 1.2, 3.0, 0.0);
        let trace = run_episode(&s, &c, &RssConfig::default(), &AlwaysBrake);
        assert_eq!(trace.end_reason, EndReason::TimeElapsed);
        assert_eq!(trace.len(), c.max_timesteps);
        assert!(trace.records.iter().all(|r| r.cas_detected));
        assert_eq!(trace.last().ego_v, 0.0);
    }

    #[test]
    fn scenario_needs_both_perturbation_params() {
        let mut space = space::build_scalability_preset();
        space.params.pop();
        let action = ScenarioAction::new(vec![0; 6]);
        assert!(Scenario::from_action(&space, &action).is_err());
        let full = space::build_scalability_preset();
        let sc = Scenario::from_action(&full, &ScenarioAction::new(vec![0, 0, 0, 0, 0, 3, 2])).unwrap();
        assert_eq!(
            sc.speed_change,
            Some(SpeedChange {
                change: -0.75,
                start: 40
            })
        );
    }

    #[test]
    fn validate_world() {
        assert!(cfg().validate().is_ok());
        let e = WorldConfig { dt: 0.0, ..cfg() }.validate().unwrap_err();
        assert!(e.to_string().contains("world.dt"));
        assert!(WorldConfig {
            max_timesteps: 0,
            ..cfg()
        }
        .validate()
        .is_err());
    }
}
