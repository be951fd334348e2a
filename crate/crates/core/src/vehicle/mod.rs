//! Quadrotor plant, gate geometry and gate-crossing events.
//!
//! World frame is z up. The body frame is x forward, y left, z up, rotated
//! from the world by the yaw angle only. The camera looks along body x with
//! image x to the body's right and image y down.

mod course;
mod events;

pub use course::{
    load_course, load_course_file, random_course, Course, CourseError, GateSpec, StartPose,
    DEFAULT_FRAME_BAND, DEFAULT_OPENING,
};
pub use events::{check_gate_events, gate_crossing, GateEvent, GateEventKind, DEFAULT_DRONE_RADIUS};

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_deg, Frame, RigidTransform, RotationMatrix, Vec3};

/// Body-frame velocity command. Built through [`VelocityCommand::new`],
/// which clamps every component to the plant limits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    /// Forward, mm/s.
    pub vx: f64,
    /// Left, mm/s.
    pub vy: f64,
    /// Up, mm/s.
    pub vz: f64,
    /// Yaw rate, deg/s (counter-clockwise seen from above).
    pub wz: f64,
}

impl VelocityCommand {
    pub fn new(vx: f64, vy: f64, vz: f64, wz: f64, p: &PlantParams) -> Self {
        let lim = |v: f64, l: f64| if v.is_finite() { v.clamp(-l, l) } else { 0.0 };
        Self {
            vx: lim(vx, p.v_max),
            vy: lim(vy, p.v_max),
            vz: lim(vz, p.v_max),
            wz: lim(wz, p.w_max),
        }
    }

    pub fn hover() -> Self {
        Self::default()
    }

    pub fn linear(&self) -> Vec3 {
        Vec3::new(self.vx, self.vy, self.vz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Velocity time constant, s.
    pub tau_v: f64,
    /// Yaw-rate time constant, s.
    pub tau_w: f64,
    /// mm/s
    pub v_max: f64,
    /// deg/s
    pub w_max: f64,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            tau_v: 0.3,
            tau_w: 0.15,
            v_max: 1000.0,
            w_max: 100.0,
            dt: 0.005,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.tau_v, self.tau_w, self.v_max, self.w_max, self.dt];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("plant parameters must be positive: {self:?}"));
        }
        if self.dt > 0.01 {
            return Err(format!("plant step {} s exceeds 0.01 s", self.dt));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    /// World position, mm.
    pub position: Vec3,
    /// Degrees in (-180, 180].
    pub yaw: f64,
    /// World velocity, mm/s.
    pub velocity_world: Vec3,
    /// deg/s
    pub yaw_rate: f64,
    /// Seconds.
    pub t: f64,
}

impl DroneState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_deg(yaw),
            velocity_world: Vec3::zeros(),
            yaw_rate: 0.0,
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity_world.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
            && self.t.is_finite()
    }

    /// world <- body
    pub fn body_pose_world(&self) -> RigidTransform {
        RigidTransform::new(
            RotationMatrix::about_z(self.yaw.to_radians()),
            self.position,
            Frame::Body,
            Frame::World,
        )
    }

    /// world <- camera
    pub fn camera_pose_world(&self) -> RigidTransform {
        self.body_pose_world()
            .compose(&camera_mount())
            .expect("mount maps camera into body")
    }

    /// Velocity in the body frame.
    pub fn velocity_body(&self) -> Vec3 {
        RotationMatrix::about_z(self.yaw.to_radians())
            .transpose()
            .rotate(&self.velocity_world)
    }
}

/// Fixed body <- camera mounting: camera x = body -y, camera y = body -z,
/// camera z (optical axis) = body x. The camera sits at the body origin.
pub fn camera_mount() -> RigidTransform {
    let m = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    RigidTransform::new(
        RotationMatrix::new(m).expect("mount is a rotation"),
        Vec3::zeros(),
        Frame::Camera,
        Frame::Body,
    )
}

/// Advance the plant by one step of `p.dt`.
pub fn step(s: &DroneState, cmd: &VelocityCommand, p: &PlantParams) -> DroneState {
    step_with_disturbance(s, cmd, p, Vec3::zeros())
}

/// [`step`] with an additive velocity disturbance (mm/s, world frame)
/// applied on top of the lag response before integration.
pub fn step_with_disturbance(
    s: &DroneState,
    cmd: &VelocityCommand,
    p: &PlantParams,
    disturbance: Vec3,
) -> DroneState {
    let cmd = VelocityCommand::new(cmd.vx, cmd.vy, cmd.vz, cmd.wz, p);
    let yaw_rot = RotationMatrix::about_z(s.yaw.to_radians());
    let v_cmd = yaw_rot.rotate(&cmd.linear());

    let a_v = (p.dt / p.tau_v).min(1.0);
    let a_w = (p.dt / p.tau_w).min(1.0);
    let mut v = s.velocity_world + (v_cmd - s.velocity_world) * a_v + disturbance;
    let speed = v.norm();
    if speed > p.v_max {
        v *= p.v_max / speed;
    }
    let w = s.yaw_rate + (cmd.wz - s.yaw_rate) * a_w;

    DroneState {
        position: s.position + v * p.dt,
        yaw: wrap_deg(s.yaw + w * p.dt),
        velocity_world: v,
        yaw_rate: w,
        t: s.t + p.dt,
    }
}

/// Random velocity-tracking error.
///
/// The achieved velocity follows `command + e`, where `e` is a per-axis
/// Ornstein-Uhlenbeck process with stationary standard deviation `sigma`
/// (mm/s) and correlation time `correlation_time` (s). With
/// `speed_gain > 0` the deviation grows with the commanded speed as
/// `sigma * (1 + speed_gain * |v_cmd| / v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityNoise {
    pub sigma: f64,
    #[serde(default)]
    pub speed_gain: f64,
    #[serde(default = "default_correlation_time")]
    pub correlation_time: f64,
}

fn default_correlation_time() -> f64 {
    VelocityNoise::DEFAULT_CORRELATION_TIME
}

impl VelocityNoise {
    pub const DEFAULT_CORRELATION_TIME: f64 = 1.0;

    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            speed_gain: 0.0,
            correlation_time: Self::DEFAULT_CORRELATION_TIME,
        }
    }

    pub fn none() -> Self {
        Self::new(0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(format!("velocity noise sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.speed_gain.is_finite() && self.speed_gain >= 0.0) {
            return Err(format!("velocity noise speed_gain must be non-negative, got {}", self.speed_gain));
        }
        if !(self.correlation_time.is_finite() && self.correlation_time > 0.0) {
            return Err(format!(
                "velocity noise correlation_time must be positive, got {}",
                self.correlation_time
            ));
        }
        Ok(())
    }
}

/// Running state of a [`VelocityNoise`] process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityDrift {
    pub noise: VelocityNoise,
    /// Current tracking error, world frame, mm/s.
    pub error: Vec3,
}

impl VelocityDrift {
    pub fn new(noise: VelocityNoise) -> Self {
        Self {
            noise,
            error: Vec3::zeros(),
        }
    }

    /// Advance the error by one plant step and return the disturbance to
    /// pass to [`step_with_disturbance`]. Draws nothing when `sigma` is 0.
    pub fn next<R: Rng + ?Sized>(&mut self, cmd: &VelocityCommand, p: &PlantParams, rng: &mut R) -> Vec3 {
        let n = &self.noise;
        if n.sigma <= 0.0 {
            return Vec3::zeros();
        }
        let decay = 1.0 - (p.dt / n.correlation_time).min(1.0);
        let scale = 1.0 + n.speed_gain * cmd.linear().norm() / p.v_max;
        let sd = n.sigma * scale * (1.0 - decay * decay).sqrt();
        let mut draw = || -> f64 { StandardNormal.sample(rng) };
        self.error = self.error * decay + Vec3::new(draw(), draw(), draw()) * sd;
        // the lag then settles on command + error
        self.error * (p.dt / p.tau_v).min(1.0)
    }
}
