//! The two gate-passing strategies as finite-state machines driven by the
//! tracked marker pose.

mod strategy_one;
mod strategy_two;

pub use strategy_one::{step_strategy_one, StrategyOneState, S1Phase};
pub use strategy_two::{standoff_command, step_strategy_two, S2Phase, StrategyTwoState};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, RigidTransform, RotationMatrix, Vec3};
use crate::perception::PoseEstimate;
use crate::vehicle::{camera_mount, PlantParams, VelocityCommand};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid control config: {0}")]
    Invalid(String),
    #[error("malformed control config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read control config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    /// (deg/s) per deg
    pub kp_yaw: f64,
    /// (mm/s) per mm
    pub kp_x: f64,
    pub kp_y: f64,
    pub kp_z: f64,
    /// mm/s
    pub limit_x: f64,
    pub limit_y: f64,
    pub limit_z: f64,
    /// deg/s
    pub limit_yaw: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp_yaw: 0.8,
            kp_x: 0.8,
            kp_y: 0.8,
            kp_z: 0.8,
            limit_x: 600.0,
            limit_y: 600.0,
            limit_z: 400.0,
            limit_yaw: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Bearing below which strategy 1 starts its approach, rad.
    pub alpha1: f64,
    /// Strategy 1 approach stops at this distance from the gate plane, mm.
    pub d2: f64,
    /// Strategy 1 fly-through duration, s.
    pub t5: f64,
    /// Strategy 2 standoff distance in front of the gate centre, mm.
    pub d1: f64,
    /// Strategy 2 lateral band around the gate's symmetry plane, mm.
    pub delta2: f64,
    /// Strategy 2 marker-loss time before the fly-through, s.
    pub dt2: f64,
    /// Strategy 2 fly-through duration, s.
    pub t3: f64,
    /// Strategy 1 lateral stop band, mm.
    pub lateral_tol: f64,
    /// Strategy 1 facing tolerance, deg.
    pub facing_tol: f64,
    pub gains: Gains,
    /// mm/s
    pub cruise_speed: f64,
    /// mm/s
    pub fly_through_speed: f64,
    /// Marker centre in the gate plane, mm.
    pub marker_offset: [f64; 2],
    /// Yaw rate used while no marker is in view, deg/s.
    pub search_yaw_rate: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.2f64.atan(),
            d2: 800.0,
            t5: 5.0,
            d1: 900.0,
            delta2: 150.0,
            dt2: 0.3,
            t3: 2.0,
            lateral_tol: 50.0,
            facing_tol: 3.0,
            gains: Gains::default(),
            cruise_speed: 400.0,
            fly_through_speed: 400.0,
            marker_offset: [175.0, -175.0],
            search_yaw_rate: 30.0,
        }
    }
}

impl ControlConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("alpha1", self.alpha1),
            ("d2", self.d2),
            ("t5", self.t5),
            ("d1", self.d1),
            ("delta2", self.delta2),
            ("dt2", self.dt2),
            ("t3", self.t3),
            ("lateral_tol", self.lateral_tol),
            ("facing_tol", self.facing_tol),
            ("cruise_speed", self.cruise_speed),
            ("fly_through_speed", self.fly_through_speed),
            ("limit_x", self.gains.limit_x),
            ("limit_y", self.gains.limit_y),
            ("limit_z", self.gains.limit_z),
            ("limit_yaw", self.gains.limit_yaw),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let g = &self.gains;
        for (name, v) in [("kp_yaw", g.kp_yaw), ("kp_x", g.kp_x), ("kp_y", g.kp_y), ("kp_z", g.kp_z)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.alpha1 >= std::f64::consts::FRAC_PI_2 {
            return Err(ConfigError::Invalid(format!("alpha1 {} must be below pi/2", self.alpha1)));
        }
        if !(self.search_yaw_rate.is_finite() && self.search_yaw_rate >= 0.0) {
            return Err(ConfigError::Invalid("search_yaw_rate must be non-negative".into()));
        }
        if !self.marker_offset.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::Invalid("marker_offset must be finite".into()));
        }
        Ok(())
    }

    /// Check that no commanded component can exceed the plant saturation.
    pub fn check_against(&self, p: &PlantParams) -> Result<(), ConfigError> {
        let g = &self.gains;
        let linear = [g.limit_x, g.limit_y, g.limit_z, self.cruise_speed, self.fly_through_speed];
        if linear.iter().any(|&l| l > p.v_max) || g.limit_yaw > p.w_max || self.search_yaw_rate > p.w_max
        {
            return Err(ConfigError::Invalid(format!(
                "command limits exceed plant saturation ({} mm/s, {} deg/s)",
                p.v_max, p.w_max
            )));
        }
        Ok(())
    }
}

/// Saturated proportional law.
pub fn p_control(error: f64, kp: f64, limit: f64) -> f64 {
    debug_assert!(limit > 0.0);
    (kp * error).clamp(-limit, limit)
}

/// The gate seen through one marker pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateView {
    /// body <- gate
    pub body_from_gate: RigidTransform,
    /// Drone (body origin) in the gate frame, mm.
    pub drone_in_gate: Vec3,
    /// Horizontal angle from the optical axis to the marker centre, deg;
    /// positive when the marker is right of the image centre.
    pub bearing: f64,
    /// Yaw turn (deg, counter-clockwise positive) that aligns the body x axis
    /// with the fly-through direction.
    pub yaw_error: f64,
}

impl GateView {
    pub fn new(pose: &PoseEstimate, marker_offset: [f64; 2]) -> Self {
        let cam_from_marker = pose.transform;
        let marker_from_gate = RigidTransform::new(
            RotationMatrix::identity(),
            Vec3::new(-marker_offset[0], -marker_offset[1], 0.0),
            Frame::Gate(pose.marker_id),
            cam_from_marker.from,
        );
        let body_from_gate = camera_mount()
            .compose(&cam_from_marker.with_frames(cam_from_marker.from, Frame::Camera))
            .and_then(|bm| bm.compose(&marker_from_gate))
            .expect("frames chain by construction");
        let t = cam_from_marker.translation;
        let through = body_from_gate.apply_vector(&-Vec3::z());
        Self {
            body_from_gate,
            drone_in_gate: body_from_gate.inverse().translation,
            bearing: t.x.atan2(t.z).to_degrees(),
            yaw_error: through.y.atan2(through.x).to_degrees(),
        }
    }

    /// A gate-frame point expressed in the body frame.
    pub fn to_body(&self, target_in_gate: &Vec3) -> Vec3 {
        self.body_from_gate.apply(target_in_gate)
    }
}

/// Body-frame vector from the drone to a point given in the gate frame.
pub fn target_to_body(pose: &PoseEstimate, target_in_gate: &Vec3, marker_offset: [f64; 2]) -> Vec3 {
    GateView::new(pose, marker_offset).to_body(target_in_gate)
}

/// Either strategy behind one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    One(StrategyOneState),
    Two(StrategyTwoState),
}

impl Strategy {
    pub fn new(which: u8) -> Option<Self> {
        match which {
            1 => Some(Self::One(StrategyOneState::default())),
            2 => Some(Self::Two(StrategyTwoState::default())),
            _ => None,
        }
    }

    pub fn step(&mut self, pose: Option<&PoseEstimate>, cfg: &ControlConfig, dt: f64) -> VelocityCommand {
        match self {
            Self::One(s) => {
                let (cmd, next) = step_strategy_one(*s, pose, cfg, dt);
                *s = next;
                cmd
            }
            Self::Two(s) => {
                let (cmd, next) = step_strategy_two(*s, pose, cfg, dt);
                *s = next;
                cmd
            }
        }
    }

    /// Current phase number, 1-based.
    pub fn phase(&self) -> u8 {
        match self {
            Self::One(s) => s.phase as u8,
            Self::Two(s) => s.phase as u8,
        }
    }
}

fn hover() -> VelocityCommand {
    VelocityCommand::default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use crate::vehicle::{DroneState, GateSpec};

    #[test]
    fn p_control_examples() {
        assert_eq!(p_control(0.0, 0.8, 10.0), 0.0);
        assert_eq!(p_control(100.0, 0.5, 1000.0), 50.0);
        assert_eq!(p_control(5000.0, 1.0, 400.0), 400.0);
        assert_eq!(p_control(-5000.0, 1.0, 400.0), -400.0);
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = ControlConfig::default();
        assert!((cfg.alpha1.to_degrees() - 11.3099).abs() < 1e-3);
        let back = ControlConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        let partial = ControlConfig::from_json(r#"{"d2": 700, "gains": {"kp_x": 1.0}}"#).unwrap();
        assert_eq!(partial.d2, 700.0);
        assert_eq!(partial.gains.kp_x, 1.0);
        assert_eq!(partial.gains.kp_y, 0.8);
        assert!(ControlConfig::from_json(r#"{"d2": -1}"#).is_err());
        assert!(ControlConfig::from_json(r#"{"alpha1": 2.0}"#).is_err());
        assert!(ControlConfig::from_json(r#"{"bogus": 1}"#).is_err());
        cfg.check_against(&PlantParams::default()).unwrap();
    }

    /// Exact pose of gate `g`'s marker as seen from drone state `s`.
    pub(crate) fn true_pose(s: &DroneState, g: &GateSpec) -> PoseEstimate {
        let cam = s.camera_pose_world().inverse();
        let tf = cam.compose(&g.marker.pose_world).unwrap();
        PoseEstimate {
            marker_id: g.marker.id,
            transform: tf,
            reprojection_rms: 0.0,
            timestamp: s.t,
        }
    }

    fn gate() -> GateSpec {
        GateSpec::new(0, Vec3::new(3000.0, 0.0, 1200.0), 0.0, 500.0, 1, 150.0, None).unwrap()
    }

    #[test]
    fn at_standoff_error_vanishes() {
        let g = gate();
        let s = DroneState::at_rest(Vec3::new(2100.0, 0.0, 1200.0), 0.0);
        let e = target_to_body(&true_pose(&s, &g), &Vec3::new(0.0, 0.0, 900.0), [175.0, -175.0]);
        assert!(e.norm() < 1e-9, "{e}");
        let view = GateView::new(&true_pose(&s, &g), [175.0, -175.0]);
        assert!((view.drone_in_gate - Vec3::new(0.0, 0.0, 900.0)).norm() < 1e-9);
        assert!(view.yaw_error.abs() < 1e-9);
        // marker sits right of the axis
        assert!(view.bearing > 0.0);
    }

    #[test]
    fn lateral_offset_appears_on_body_y() {
        let g = gate();
        // 300 mm left of the gate axis while facing the gate (left = world +y)
        let s = DroneState::at_rest(Vec3::new(2100.0, 300.0, 1200.0), 0.0);
        let e = target_to_body(&true_pose(&s, &g), &Vec3::new(0.0, 0.0, 900.0), [175.0, -175.0]);
        assert!((e - Vec3::new(0.0, -300.0, 0.0)).norm() < 1e-9, "{e}");
    }

    #[test]
    fn yawed_drone_sees_rotated_error() {
        let g = gate();
        let target = Vec3::new(100.0, -50.0, 900.0);
        let s0 = DroneState::at_rest(Vec3::new(1500.0, 400.0, 1000.0), 0.0);
        let e0 = target_to_body(&true_pose(&s0, &g), &target, [175.0, -175.0]);
        let s90 = DroneState::at_rest(s0.position, 90.0);
        let e90 = target_to_body(&true_pose(&s90, &g), &target, [175.0, -175.0]);
        assert!((e0.norm() - e90.norm()).abs() < 1e-9);
        let rotated = EulerAngles::new(0.0, 0.0, -90.0).to_rotation().rotate(&e0);
        assert!((rotated - e90).norm() < 1e-9);
        let v = GateView::new(&true_pose(&s90, &g), [175.0, -175.0]);
        assert!((v.yaw_error + 90.0).abs() < 1e-9);
    }
}
