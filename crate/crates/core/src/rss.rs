//! Longitudinal safe distance and per-timestep risk classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TraceRecord;

/// Which speed the pedestrian contributes as the "front" agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontVelocityMode {
    /// The pedestrian is treated as a stationary front object.
    #[default]
    Zero,
    /// The pedestrian's velocity component along the ego-to-pedestrian line,
    /// counted only when it points away from the ego.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssConfig {
    /// Response time, s.
    pub rho: f64,
    /// Acceleration during the response time, m/s^2.
    pub a_max_accel: f64,
    /// Minimum braking of the rear (ego) vehicle, m/s^2.
    pub a_min_brake: f64,
    /// Maximum braking of the front agent, m/s^2.
    pub a_max_brake: f64,
    pub front_velocity_mode: FrontVelocityMode,
}

impl Default for RssConfig {
    fn default() -> Self {
        RssConfig {
            rho: 0.5,
            a_max_accel: 3.5,
            a_min_brake: 4.0,
            a_max_brake: 8.0,
            front_velocity_mode: FrontVelocityMode::Zero,
        }
    }
}

impl RssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::config("rss.rho", "must be finite and >= 0"));
        }
        for (key, v) in [
            ("rss.a_max_accel", self.a_max_accel),
            ("rss.a_min_brake", self.a_min_brake),
            ("rss.a_max_brake", self.a_max_brake),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(key, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Minimum longitudinal gap for the rear agent (speed `v_rear`) to stop
/// behind a front agent (speed `v_front`) that brakes as hard as it can.
/// Negative raw values are clamped to zero.
pub fn longitudinal_safe_distance(v_rear: f64, v_front: f64, cfg: &RssConfig) -> Result<f64> {
    if !(v_rear >= 0.0) || !(v_front >= 0.0) {
        return Err(Error::Domain(format!(
            "speeds must be non-negative (v_rear = {v_rear}, v_front = {v_front})"
        )));
    }
    let rho = cfg.rho;
    let v_resp = v_rear + rho * cfg.a_max_accel;
    let d = v_rear * rho + 0.5 * cfg.a_max_accel * rho * rho + v_resp * v_resp / (2.0 * cfg.a_min_brake)
        - v_front * v_front / (2.0 * cfg.a_max_brake);
    Ok(d.max(0.0))
}

/// Front-agent speed used for `record` under the configured mode.
pub fn front_speed(record: &TraceRecord, mode: FrontVelocityMode) -> f64 {
    match mode {
        FrontVelocityMode::Zero => 0.0,
        FrontVelocityMode::Projected => {
            // pedestrian walks along +y; project onto the ego->pedestrian unit vector
            let dx = record.ped_x - record.ego_x;
            let dy = record.ped_y;
            let norm = dx.hypot(dy);
            if norm == 0.0 {
                0.0
            } else {
                (record.ped_v * dy / norm).max(0.0)
            }
        }
    }
}

/// Safe distance for the record's ego speed and pedestrian motion.
pub fn record_safe_distance(record: &TraceRecord, cfg: &RssConfig) -> f64 {
    let v_f = front_speed(record, cfg.front_velocity_mode);
    // ego_v and v_f are non-negative by construction of the simulator
    longitudinal_safe_distance(record.ego_v.max(0.0), v_f, cfg).unwrap_or(0.0)
}

/// High-risk iff the pedestrian is still ahead and closer than the safe distance.
pub fn classify_timestep(record: &TraceRecord, cfg: &RssConfig) -> bool {
    record.ped_ahead && record.euclid_dist < record_safe_distance(record, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RssConfig {
        RssConfig::default()
    }

    fn record(ego_v: f64, euclid: f64, ahead: bool) -> TraceRecord {
        TraceRecord {
            t: 0,
            ego_x: 0.0,
            ego_v,
            ped_x: if ahead { euclid } else { -euclid },
            ped_y: 0.0,
            ped_v: 0.0,
            euclid_dist: euclid,
            rss_dmin: 0.0,
            ped_ahead: ahead,
            high_risk: false,
            cas_detected: false,
            collision: false,
        }
    }

    #[test]
    fn all_terms_vanish() {
        let c = RssConfig { rho: 0.0, ..cfg() };
        assert_eq!(longitudinal_safe_distance(0.0, 0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_value() {
        // 10*0.5 + 0.5*3.5*0.25 + 11.75^2/8
        let d = longitudinal_safe_distance(10.0, 0.0, &cfg()).unwrap();
        assert!((d - 22.6953125).abs() < 1e-12, "{d}");
    }

    #[test]
    fn fast_front_clamps_to_zero() {
        // raw: 0.4375 + 1.75^2/8 - 100/16 < 0
        assert_eq!(longitudinal_safe_distance(0.0, 10.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn negative_speed_is_domain_error() {
        assert!(matches!(
            longitudinal_safe_distance(-1.0, 0.0, &cfg()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            longitudinal_safe_distance(1.0, -0.1, &cfg()),
            Err(Error::Domain(_))
        ));
        assert!(longitudinal_safe_distance(f64::NAN, 0.0, &cfg()).is_err());
    }

    #[test]
    fn classification_examples() {
        assert!(classify_timestep(&record(10.0, 5.0, true), &cfg()));
        // d_min(0) = 0.4375 + 1.75^2/8 = 0.8203125
        assert!(!classify_timestep(&record(0.0, 1.0, true), &cfg()));
        assert!(classify_timestep(&record(0.0, 0.8, true), &cfg()));
        assert!(!classify_timestep(&record(10.0, 0.1, false), &cfg()));
    }

    #[test]
    fn projected_mode_uses_receding_component() {
        let mut r = record(5.0, 5.0, true);
        r.ped_x = 3.0;
        r.ped_y = 4.0;
        r.ped_v = 2.0;
        assert_eq!(front_speed(&r, FrontVelocityMode::Zero), 0.0);
        assert!((front_speed(&r, FrontVelocityMode::Projected) - 1.6).abs() < 1e-12);
        r.ped_y = -4.0;
        assert_eq!(front_speed(&r, FrontVelocityMode::Projected), 0.0);
    }

    #[test]
    fn monotone_over_speed_grid() {
        let c = cfg();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        for &vf in &grid {
            for w in grid.windows(2) {
                let a = longitudinal_safe_distance(w[0], vf, &c).unwrap();
                let b = longitudinal_safe_distance(w[1], vf, &c).unwrap();
                assert!(b >= a);
            }
        }
        for &vr in &grid {
            for w in grid.windows(2) {
                let a = longitudinal_safe_distance(vr, w[0], &c).unwrap();
                let b = longitudinal_safe_distance(vr, w[1], &c).unwrap();
                assert!(b <= a);
            }
        }
    }

    #[test]
    fn zero_response_time_special_case() {
        for a_acc in [0.5, 3.5, 9.0] {
            let c = RssConfig {
                rho: 0.0,
                a_max_accel: a_acc,
                ..cfg()
            };
            for vr in [0.0, 3.0, 8.33, 20.0] {
                for vf in [0.0, 2.0, 15.0] {
                    let expect = (vr * vr / (2.0 * c.a_min_brake) - vf * vf / (2.0 * c.a_max_brake)).max(0.0);
                    let got = longitudinal_safe_distance(vr, vf, &c).unwrap();
                    assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
                }
            }
        }
    }

    #[test]
    fn validate_rejects_bad_constants() {
        assert!(cfg().validate().is_ok());
        assert!(RssConfig { rho: -0.1, ..cfg() }.validate().is_err());
        assert!(RssConfig {
            a_min_brake: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }
}
