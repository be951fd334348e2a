//! Synthetic marker detector: geometric corner projection with Gaussian pixel
//! noise and per-frame dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{MarkerObservation, MarkerSpec};
use crate::camera::{CameraModel, PixelPoint};
use crate::geometry::{compose, Frame, RigidTransform, Vec3};

/// Random source used everywhere in the simulator. ChaCha8 is fixed so that a
/// seed reproduces a run bit for bit on every platform.
pub type SimRng = ChaCha8Rng;

/// Markers whose shortest projected side is below this are not detected.
pub const MIN_MARKER_SIDE_PX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Standard deviation of the Gaussian corner noise, px.
    pub pixel_sigma: f64,
    /// Probability of losing each visible marker in a frame.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl NoiseProfile {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            dropout_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.pixel_sigma >= 0.0) || !self.pixel_sigma.is_finite() {
            return Err(format!("pixel_sigma must be >= 0, got {}", self.pixel_sigma));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(format!(
                "dropout_prob must lie in [0, 1], got {}",
                self.dropout_prob
            ));
        }
        Ok(())
    }

    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(self.seed)
    }
}

/// Noiseless corner pixels of a marker, or `None` when the detector could not
/// see it: a corner behind the camera or off the sensor, the marker facing
/// away, or a projected side shorter than [`MIN_MARKER_SIDE_PX`].
pub fn project_marker(
    marker: &MarkerSpec,
    camera_pose_world: &RigidTransform,
    cam: &CameraModel,
) -> Option<[PixelPoint; 4]> {
    debug_assert_eq!(camera_pose_world.from, Frame::Camera);
    let cam_from_marker = compose(&camera_pose_world.inverse(), &marker.pose_world).ok()?;

    let normal = cam_from_marker.apply_vector(&Vec3::z());
    let to_camera = -cam_from_marker.translation;
    if normal.dot(&to_camera) <= 0.0 {
        return None;
    }

    let mut px = [PixelPoint::new(0.0, 0.0); 4];
    for (out, corner) in px.iter_mut().zip(marker.corners()) {
        let pc = cam_from_marker.apply(&corner);
        let p = cam.project(&pc).ok()?;
        if !cam.intrinsics.contains(&p) {
            return None;
        }
        *out = p;
    }
    let shortest = (0..4)
        .map(|i| px[i].distance(&px[(i + 1) % 4]))
        .fold(f64::INFINITY, f64::min);
    if shortest < MIN_MARKER_SIDE_PX {
        return None;
    }
    Some(px)
}

/// Simulate one detector frame.
///
/// Random draws happen in marker order: one uniform for dropout, then (if
/// kept) eight normals for the corner noise. Identical inputs and RNG state
/// give identical output.
pub fn observe_markers(
    markers: &[MarkerSpec],
    camera_pose_world: &RigidTransform,
    cam: &CameraModel,
    noise: &NoiseProfile,
    rng: &mut SimRng,
    t: f64,
) -> Vec<MarkerObservation> {
    let normal = Normal::new(0.0, noise.pixel_sigma).expect("validated sigma");
    let mut out = Vec::new();
    for marker in markers {
        let Some(mut corners) = project_marker(marker, camera_pose_world, cam) else {
            continue;
        };
        let draw: f64 = rng.random();
        if draw < noise.dropout_prob {
            continue;
        }
        for c in &mut corners {
            c.u += normal.sample(rng);
            c.v += normal.sample(rng);
        }
        out.push(MarkerObservation {
            id: marker.id,
            corners,
            timestamp: t,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Distortion, Intrinsics};
    use crate::geometry::RotationMatrix;
    use std::f64::consts::PI;

    fn cam() -> CameraModel {
        CameraModel::default_synthetic()
    }

    /// Camera at the world origin looking along world +z (world = camera).
    fn camera_at_origin() -> RigidTransform {
        RigidTransform::identity(Frame::Camera).with_frames(Frame::Camera, Frame::World)
    }

    /// Marker facing the camera: marker +z points back along camera -z.
    fn facing(id: u32, t: Vec3) -> MarkerSpec {
        let flip = RotationMatrix::about_x(PI);
        MarkerSpec::new(
            id,
            150.0,
            RigidTransform::new(flip, t, Frame::Marker(id), Frame::World),
        )
        .unwrap()
    }

    #[test]
    fn centred_marker_is_symmetric() {
        let m = facing(1, Vec3::new(0.0, 0.0, 800.0));
        let obs = observe_markers(
            &[m],
            &camera_at_origin(),
            &cam(),
            &NoiseProfile::noiseless(0),
            &mut SimRng::seed_from_u64(0),
            0.0,
        );
        assert_eq!(obs.len(), 1);
        let half = 920.0 * 75.0 / 800.0;
        let c = obs[0].corners;
        // top-left of the marker appears at the image top-left (y up -> v down)
        let expected = [(-half, -half), (half, -half), (half, half), (-half, half)];
        for (px, (du, dv)) in c.iter().zip(expected) {
            assert!((px.u - (480.0 + du)).abs() < 1e-9, "{px:?}");
            assert!((px.v - (360.0 + dv)).abs() < 1e-9, "{px:?}");
        }
    }

    #[test]
    fn marker_behind_camera_is_not_seen() {
        let m = facing(1, Vec3::new(0.0, 0.0, -800.0));
        assert!(project_marker(&m, &camera_at_origin(), &cam()).is_none());
    }

    #[test]
    fn marker_facing_away_is_not_seen() {
        let m = MarkerSpec::new(
            2,
            150.0,
            RigidTransform::new(
                RotationMatrix::identity(),
                Vec3::new(0.0, 0.0, 800.0),
                Frame::Marker(2),
                Frame::World,
            ),
        )
        .unwrap();
        assert!(project_marker(&m, &camera_at_origin(), &cam()).is_none());
    }

    #[test]
    fn grazing_marker_off_sensor_is_not_seen() {
        // 45 deg yaw at the right edge of the field of view. Independent
        // projection of the right-hand corners: they land beyond u = 960.
        let centre = Vec3::new(420.0, 0.0, 800.0);
        let rot = RotationMatrix::about_y(PI / 4.0) * RotationMatrix::about_x(PI);
        let m = MarkerSpec::new(
            3,
            150.0,
            RigidTransform::new(rot, centre, Frame::Marker(3), Frame::World),
        )
        .unwrap();
        let r = rot.matrix();
        let corner_u = |x: f64, y: f64| {
            let p = r * Vec3::new(x, y, 0.0) + centre;
            920.0 * p.x / p.z + 480.0
        };
        assert!(corner_u(75.0, 75.0) > 960.0 || corner_u(-75.0, 75.0) > 960.0);
        assert!(project_marker(&m, &camera_at_origin(), &cam()).is_none());
        // the same marker in the middle of the image is visible
        let mut centred = m;
        centred.pose_world.translation = Vec3::new(0.0, 0.0, 800.0);
        assert!(project_marker(&centred, &camera_at_origin(), &cam()).is_some());
    }

    #[test]
    fn tiny_marker_is_not_seen() {
        // 150 mm at 20 m projects to ~6.9 px
        let m = facing(4, Vec3::new(0.0, 0.0, 20_000.0));
        assert!(project_marker(&m, &camera_at_origin(), &cam()).is_none());
        let m = facing(4, Vec3::new(0.0, 0.0, 10_000.0));
        assert!(project_marker(&m, &camera_at_origin(), &cam()).is_some());
    }

    #[test]
    fn dropout_and_noise_are_seeded() {
        let markers: Vec<_> = (0..4)
            .map(|i| facing(i, Vec3::new(-300.0 + 200.0 * i as f64, 0.0, 1500.0)))
            .collect();
        let noise = NoiseProfile {
            pixel_sigma: 0.5,
            dropout_prob: 0.3,
            seed: 42,
        };
        let run = || {
            let mut rng = noise.rng();
            (0..50)
                .map(|k| {
                    observe_markers(&markers, &camera_at_origin(), &cam(), &noise, &mut rng, k as f64)
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let seen: usize = a.iter().map(|f| f.len()).sum();
        // 200 candidate detections at 30 % dropout
        assert!((110..170).contains(&seen), "{seen}");

        let all_drop = NoiseProfile {
            dropout_prob: 1.0,
            ..noise
        };
        let obs = observe_markers(&markers, &camera_at_origin(), &cam(), &all_drop, &mut all_drop.rng(), 0.0);
        assert!(obs.is_empty());
    }

    #[test]
    fn noise_profile_validation() {
        assert!(NoiseProfile { pixel_sigma: -1.0, dropout_prob: 0.0, seed: 0 }.validate().is_err());
        assert!(NoiseProfile { pixel_sigma: 0.1, dropout_prob: 1.5, seed: 0 }.validate().is_err());
        assert!(NoiseProfile { pixel_sigma: 0.1, dropout_prob: 0.5, seed: 0 }.validate().is_ok());
    }

    #[test]
    fn distorted_camera_still_projects_inside() {
        let cam = CameraModel::new(
            Intrinsics { fx: 920.0, fy: 920.0, cx: 480.0, cy: 360.0, width: 960, height: 720 },
            Distortion { k1: -0.05, ..Distortion::none() },
        )
        .unwrap();
        let m = facing(5, Vec3::new(100.0, 50.0, 900.0));
        assert!(project_marker(&m, &camera_at_origin(), &cam).is_some());
    }
}
