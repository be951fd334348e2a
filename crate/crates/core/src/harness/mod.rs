//! Experiment runner: pose-accuracy statistics, closed-loop campaigns and
//! runs over the UDP link.

mod campaign;
mod live;
mod pose_accuracy;
mod sim;

pub use campaign::{run_control_campaign, CampaignReport, CampaignTotals, RunReport};
pub use live::{run_live, run_live_remote, serve_realtime, LiveReport};
pub use pose_accuracy::{run_pose_accuracy, sample_visible_pose, PoseAccuracyReport};
pub use sim::{
    run_closed_loop, trajectory_csv, ControllerSide, GateProgress, InProcess, LatencyStats,
    LoopContext, PlantDriver, PlantRunner, RunOutcome, TickOutcome, TrajectoryRow, CSV_HEADER,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::controller::{ConfigError, ControlConfig};
use crate::perception::{NoiseProfile, DEFAULT_MARKER_SIDE};
use crate::vehicle::{
    load_course_file, random_course, Course, CourseError, PlantParams, VelocityNoise,
    DEFAULT_DRONE_RADIUS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ConfigError),
    #[error(transparent)]
    Course(#[from] CourseError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Link(#[from] crate::link::LinkError),
    #[error("malformed config file: {0}")]
    Parse(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PoseAccuracy,
    #[default]
    ControlRun,
    LiveLink,
}

/// Noise applied to one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSettings {
    /// Corner noise, px.
    pub pixel_sigma: f64,
    /// Per-frame marker loss probability.
    pub dropout_prob: f64,
    /// Velocity-tracking noise, mm/s.
    pub velocity_sigma: f64,
    /// Growth of the velocity noise with commanded speed.
    #[serde(default)]
    pub velocity_speed_gain: f64,
    /// Correlation time of the velocity noise, s.
    #[serde(default = "default_correlation_time")]
    pub velocity_correlation_time: f64,
}

fn default_correlation_time() -> f64 {
    VelocityNoise::DEFAULT_CORRELATION_TIME
}

impl ProfileSettings {
    pub fn natural() -> Self {
        Self {
            pixel_sigma: 0.3,
            dropout_prob: 0.01,
            velocity_sigma: 10.0,
            velocity_speed_gain: 1.0,
            velocity_correlation_time: VelocityNoise::DEFAULT_CORRELATION_TIME,
        }
    }

    pub fn artificial() -> Self {
        Self {
            pixel_sigma: 0.6,
            dropout_prob: 0.05,
            velocity_sigma: 60.0,
            velocity_speed_gain: 1.0,
            velocity_correlation_time: VelocityNoise::DEFAULT_CORRELATION_TIME,
        }
    }

    pub fn noiseless() -> Self {
        Self {
            pixel_sigma: 0.0,
            dropout_prob: 0.0,
            velocity_sigma: 0.0,
            velocity_speed_gain: 0.0,
            velocity_correlation_time: VelocityNoise::DEFAULT_CORRELATION_TIME,
        }
    }

    pub fn noise_profile(&self, seed: u64) -> NoiseProfile {
        NoiseProfile {
            pixel_sigma: self.pixel_sigma,
            dropout_prob: self.dropout_prob,
            seed,
        }
    }

    pub fn velocity_noise(&self) -> VelocityNoise {
        VelocityNoise {
            sigma: self.velocity_sigma,
            speed_gain: self.velocity_speed_gain,
            correlation_time: self.velocity_correlation_time,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.noise_profile(0).validate()?;
        self.velocity_noise().validate()
    }
}

/// Pass/fail limits that decide the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_pass_rate: f64,
    pub max_collision_rate: f64,
    /// mm
    pub max_translation_error: f64,
    /// deg
    pub max_angle_error: f64,
    /// Hz
    pub min_loop_rate: f64,
    /// ms
    pub max_tick_mean: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_pass_rate: 0.9,
            max_collision_rate: 0.1,
            max_translation_error: 40.0,
            max_angle_error: 5.0,
            min_loop_rate: 25.0,
            max_tick_mean: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Course file; a random course is generated per run when absent.
    pub course: Option<PathBuf>,
    pub strategy: u8,
    /// `natural`, `artificial`, `noiseless` or `custom`.
    pub profile: String,
    pub custom_profile: Option<ProfileSettings>,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Gates in a generated course.
    pub gates: usize,
    pub camera_hz: u32,
    /// s
    pub tracker_timeout: f64,
    /// Simulated seconds before a run is abandoned.
    pub max_time: f64,
    /// mm
    pub drone_radius: f64,
    /// mm
    pub marker_side: f64,
    /// Poses drawn by the pose-accuracy experiment.
    pub pose_samples: usize,
    pub camera: CameraModel,
    pub plant: PlantParams,
    pub control: ControlConfig,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::ControlRun,
            course: None,
            strategy: 2,
            profile: "natural".into(),
            custom_profile: None,
            runs: 8,
            seed: 1,
            out_dir: PathBuf::from("out"),
            gates: 3,
            camera_hz: 30,
            tracker_timeout: 0.3,
            max_time: 120.0,
            drone_radius: DEFAULT_DRONE_RADIUS,
            marker_side: DEFAULT_MARKER_SIDE,
            pose_samples: 500,
            camera: CameraModel::default_synthetic(),
            plant: PlantParams::default(),
            control: ControlConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn profile_settings(&self) -> Result<ProfileSettings, HarnessError> {
        let p = match self.profile.as_str() {
            "natural" => ProfileSettings::natural(),
            "artificial" => ProfileSettings::artificial(),
            "noiseless" => ProfileSettings::noiseless(),
            "custom" => self.custom_profile.ok_or_else(|| {
                HarnessError::Config("profile \"custom\" needs custom_profile".into())
            })?,
            other => return Err(HarnessError::Config(format!("unknown profile {other:?}"))),
        };
        p.validate().map_err(HarnessError::Config)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !matches!(self.strategy, 1 | 2) {
            return bad(format!("strategy must be 1 or 2, got {}", self.strategy));
        }
        if self.gates == 0 {
            return bad("a course needs at least one gate".into());
        }
        if let Some(c) = &self.course {
            if !c.is_file() {
                return bad(format!("course file {} does not exist", c.display()));
            }
        }
        if self.camera_hz == 0 {
            return bad("camera_hz must be positive".into());
        }
        for (name, v) in [
            ("tracker_timeout", self.tracker_timeout),
            ("max_time", self.max_time),
            ("drone_radius", self.drone_radius),
            ("marker_side", self.marker_side),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.plant.validate().map_err(HarnessError::Config)?;
        let steps_per_second = 1.0 / self.plant.dt;
        if (steps_per_second - steps_per_second.round()).abs() > 1e-9 {
            return bad(format!("plant dt {} must divide one second", self.plant.dt));
        }
        self.control.validate()?;
        self.control.check_against(&self.plant)?;
        self.profile_settings()?;
        Ok(())
    }

    /// Course for run `run`: the configured file, or a random course drawn
    /// from the run seed.
    pub fn course_for_run(&self, run: usize) -> Result<Course, HarnessError> {
        match &self.course {
            Some(path) => Ok(load_course_file(path)?),
            None => {
                use rand::SeedableRng;
                let mut rng = crate::perception::SimRng::seed_from_u64(run_seed(self.seed, run));
                rng.set_stream(COURSE_STREAM);
                Ok(random_course(self.gates, &mut rng))
            }
        }
    }
}

pub(crate) const COURSE_STREAM: u64 = 1;
pub(crate) const OBSERVATION_STREAM: u64 = 2;
pub(crate) const PLANT_STREAM: u64 = 3;

/// Independent seed for run `run` of a campaign seeded with `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn config_errors() {
        let c = ExperimentConfig {
            runs: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            profile: "twilight".into(),
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            course: Some("/nonexistent/course.json".into()),
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            gates: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            strategy: 3,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"runs": 3, "profile": "artificial"}"#).unwrap();
        assert_eq!(partial.runs, 3);
        assert_eq!(partial.profile_settings().unwrap(), ProfileSettings::artificial());
    }

    #[test]
    fn run_courses_are_seeded() {
        let c = ExperimentConfig::default();
        assert_eq!(c.course_for_run(0).unwrap(), c.course_for_run(0).unwrap());
        assert_ne!(c.course_for_run(0).unwrap(), c.course_for_run(1).unwrap());
    }
}
