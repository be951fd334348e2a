use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::campaign::write_file;
use super::{io_err, ExperimentConfig, HarnessError, OBSERVATION_STREAM};
use crate::camera::CameraModel;
use crate::geometry::{Frame, RigidTransform, RotationMatrix, Vec3};
use crate::perception::{observe_markers, project_marker, solve_pnp, MarkerSpec, NoiseProfile, SimRng};

/// Range of sampled marker distances, mm.
const RANGE: (f64, f64) = (700.0, 1700.0);
/// Largest horizontal bearing, deg.
const MAX_BEARING: f64 = 30.0;
/// Largest marker tilt about either in-plane axis, deg.
const MAX_TILT: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAccuracyReport {
    pub samples: usize,
    pub pixel_sigma: f64,
    /// Mean absolute translation error along camera x, y, z, mm.
    pub translation_mae: [f64; 3],
    /// Mean absolute Euler error (phi, psi, theta), deg.
    pub euler_mae: [f64; 3],
    /// Solves that returned an error. Excluded from the means; any failure
    /// fails the thresholds.
    pub failures: usize,
    pub thresholds_met: bool,
}

fn identity_camera() -> RigidTransform {
    RigidTransform::identity(Frame::Camera).with_frames(Frame::Camera, Frame::World)
}

/// A camera <- marker pose whose marker is fully visible to `cam`.
pub fn sample_visible_pose<R: Rng + ?Sized>(rng: &mut R, cam: &CameraModel, side: f64) -> RigidTransform {
    let aspect = cam.height() / cam.width();
    loop {
        let range = rng.random_range(RANGE.0..RANGE.1);
        let h = rng.random_range(-MAX_BEARING..MAX_BEARING).to_radians();
        let v = (rng.random_range(-MAX_BEARING..MAX_BEARING) * aspect).to_radians();
        let t = Vec3::new(h.tan(), v.tan(), 1.0).normalize() * range;
        let yaw = rng.random_range(-MAX_TILT..MAX_TILT).to_radians();
        let pitch = rng.random_range(-MAX_TILT..MAX_TILT).to_radians();
        let roll = rng.random_range(-180.0f64..180.0).to_radians();
        let r = RotationMatrix::about_z(roll)
            * RotationMatrix::about_y(yaw)
            * RotationMatrix::about_x(std::f64::consts::PI + pitch);
        let pose = RigidTransform::new(r, t, Frame::Marker(0), Frame::World);
        let marker = MarkerSpec::new(0, side, pose).expect("positive side");
        if project_marker(&marker, &identity_camera(), cam).is_some() {
            return pose.with_frames(Frame::Marker(0), Frame::Camera);
        }
    }
}

/// Monte-Carlo PnP accuracy over random visible marker poses.
pub fn run_pose_accuracy(cfg: &ExperimentConfig) -> Result<PoseAccuracyReport, HarnessError> {
    if cfg.pose_samples == 0 {
        return Err(HarnessError::Config("pose_samples must be at least 1".into()));
    }
    let profile = cfg.profile_settings()?;
    let noise = NoiseProfile {
        pixel_sigma: profile.pixel_sigma,
        dropout_prob: 0.0,
        seed: cfg.seed,
    };
    let mut pose_rng = SimRng::seed_from_u64(cfg.seed);
    let mut obs_rng = SimRng::seed_from_u64(cfg.seed);
    obs_rng.set_stream(OBSERVATION_STREAM);

    let mut t_sum = [0.0; 3];
    let mut e_sum = [0.0; 3];
    let mut ok = 0usize;
    let mut failures = 0usize;
    for _ in 0..cfg.pose_samples {
        let truth = sample_visible_pose(&mut pose_rng, &cfg.camera, cfg.marker_side);
        let marker = MarkerSpec::new(0, cfg.marker_side, truth.with_frames(Frame::Marker(0), Frame::World))
            .expect("valid marker");
        let obs = observe_markers(&[marker], &identity_camera(), &cfg.camera, &noise, &mut obs_rng, 0.0);
        let Some(est) = obs.first().and_then(|o| solve_pnp(o, cfg.marker_side, &cfg.camera).ok()) else {
            failures += 1;
            continue;
        };
        let dt = est.transform.translation - truth.translation;
        let de = est.transform.rotation.to_euler().abs_diff(&truth.rotation.to_euler());
        for i in 0..3 {
            t_sum[i] += dt[i].abs();
            e_sum[i] += de[i];
        }
        ok += 1;
    }
    let n = ok.max(1) as f64;
    let translation_mae = t_sum.map(|v| v / n);
    let euler_mae = e_sum.map(|v| v / n);
    let th = &cfg.thresholds;
    let thresholds_met = failures == 0
        && translation_mae.iter().all(|&v| v <= th.max_translation_error)
        && euler_mae.iter().all(|&v| v <= th.max_angle_error);
    let report = PoseAccuracyReport {
        samples: ok,
        pixel_sigma: profile.pixel_sigma,
        translation_mae,
        euler_mae,
        failures,
        thresholds_met,
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.out_dir.join("pose_accuracy.json"), &json)?;
    Ok(report)
}
