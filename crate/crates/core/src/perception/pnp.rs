//! Single-marker pose from four corners.
//!
//! The homography between the marker plane and the undistorted corners gives
//! an initial pose. Its mirror about the line of sight (the second solution
//! of the planar ambiguity) is built as well, and both are refined by
//! Levenberg-Marquardt on the pixel reprojection error. The refined candidate
//! with the lower error wins; near-ties go to the smaller tilt.

use nalgebra::{DVector, Matrix3, Vector2};
use thiserror::Error;

use super::{marker_corners, MarkerObservation, PoseEstimate};
use crate::camera::{decompose_planar_homography, estimate_homography, CameraError, CameraModel};
use crate::geometry::{Frame, RigidTransform, RodriguesVector, RotationMatrix, Vec3};
use crate::optim::{levenberg_marquardt, LmOptions, OptimError};

/// Two candidates whose RMS differ by less than this are considered tied.
const RMS_TIE_PX: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("degenerate observation: {0}")]
    Degenerate(String),
    #[error("pose refinement failed: {0}")]
    Numeric(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

impl From<OptimError> for PnpError {
    fn from(e: OptimError) -> Self {
        PnpError::Numeric(e.to_string())
    }
}

/// Full solver output, for diagnostics.
#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub estimate: PoseEstimate,
    /// RMS of the homography initialization, px.
    pub initial_rms: f64,
    /// Every refined candidate with its RMS, chosen one included.
    pub candidates: Vec<(RigidTransform, f64)>,
}

fn check_corners(obs: &MarkerObservation) -> Result<(), PnpError> {
    let c = &obs.corners;
    if c.iter().any(|p| !p.u.is_finite() || !p.v.is_finite()) {
        return Err(PnpError::Degenerate("non-finite corner".into()));
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            if c[i].distance(&c[j]) < 1e-6 {
                return Err(PnpError::Degenerate(format!("corners {i} and {j} coincide")));
            }
        }
    }
    let span = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| c[i].distance(&c[j]))
        .fold(0.0, f64::max);
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let a = (c[j].u - c[i].u, c[j].v - c[i].v);
        let b = (c[k].u - c[i].u, c[k].v - c[i].v);
        if (a.0 * b.1 - a.1 * b.0).abs() < 1e-6 * span * span {
            return Err(PnpError::Degenerate(format!("corners {i}, {j}, {k} are collinear")));
        }
    }
    Ok(())
}

fn pack(r: &RotationMatrix, t: &Vec3) -> DVector<f64> {
    let rv = r.to_rodrigues().0;
    DVector::from_vec(vec![rv.x, rv.y, rv.z, t.x, t.y, t.z])
}

fn unpack(p: &DVector<f64>) -> (RotationMatrix, Vec3) {
    (
        RodriguesVector(Vec3::new(p[0], p[1], p[2])).to_rotation(),
        Vec3::new(p[3], p[4], p[5]),
    )
}

fn residuals(
    p: &DVector<f64>,
    object: &[Vec3; 4],
    obs: &MarkerObservation,
    cam: &CameraModel,
) -> Option<DVector<f64>> {
    let (r, t) = unpack(p);
    let mut out = DVector::zeros(8);
    for (k, (o, px)) in object.iter().zip(&obs.corners).enumerate() {
        let proj = cam.project(&(r.rotate(o) + t)).ok()?;
        out[2 * k] = proj.u - px.u;
        out[2 * k + 1] = proj.v - px.v;
    }
    Some(out)
}

fn rms(res: &DVector<f64>) -> f64 {
    (res.norm_squared() / 4.0).sqrt()
}

/// Mirror the marker normal about the line of sight to its centre, keeping
/// the centre fixed. `None` when the marker is seen head-on.
fn mirrored_candidate(r: &RotationMatrix, t: &Vec3) -> Option<RotationMatrix> {
    let n = r.rotate(&Vec3::z());
    let sight = t.normalize();
    let n_mirror = 2.0 * n.dot(&sight) * sight - n;
    let axis = n.cross(&n_mirror);
    if axis.norm() < 1e-9 {
        return None;
    }
    let angle = axis.norm().atan2(n.dot(&n_mirror));
    Some(RodriguesVector(axis.normalize() * angle).to_rotation() * *r)
}

/// Angle between the marker normal and the direction back to the camera.
fn tilt(r: &RotationMatrix, t: &Vec3) -> f64 {
    let n = r.rotate(&Vec3::z());
    n.dot(&(-t.normalize())).clamp(-1.0, 1.0).acos()
}

pub fn solve_pnp_detailed(
    obs: &MarkerObservation,
    side: f64,
    cam: &CameraModel,
) -> Result<PnpSolution, PnpError> {
    if !(side > 0.0) {
        return Err(PnpError::Degenerate(format!("marker side {side}")));
    }
    check_corners(obs)?;

    let object = marker_corners(side);
    let plane: Vec<Vector2<f64>> = object.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let mut normalized = Vec::with_capacity(4);
    for px in &obs.corners {
        let (x, y) = cam.undistort(px)?;
        normalized.push(Vector2::new(x, y));
    }
    let h = estimate_homography(&plane, &normalized).map_err(|e| match e {
        CameraError::Degenerate(m) => PnpError::Degenerate(m),
        other => PnpError::Camera(other),
    })?;
    let (r0, t0) = decompose_planar_homography(&Matrix3::identity(), &h);

    let f = |p: &DVector<f64>| residuals(p, &object, obs, cam);
    let x0 = pack(&r0, &t0);
    let initial_rms = rms(&f(&x0).ok_or_else(|| {
        PnpError::Numeric("initial pose puts a corner behind the camera".into())
    })?);

    let mut starts = vec![(r0, t0)];
    if let Some(r1) = mirrored_candidate(&r0, &t0) {
        starts.push((r1, t0));
    }

    let opts = LmOptions::default();
    let mut candidates = Vec::with_capacity(2);
    let mut last_err = None;
    for (r, t) in starts {
        match levenberg_marquardt(f, pack(&r, &t), &opts) {
            Ok(rep) => {
                let (r, t) = unpack(&rep.params);
                let err = rms(&f(&rep.params).expect("accepted point is valid"));
                if t.z > 0.0 && err.is_finite() {
                    let tf = RigidTransform::new(r, t, Frame::Marker(obs.id), Frame::Camera);
                    candidates.push((tf, err));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if candidates.is_empty() {
        return Err(last_err
            .map(PnpError::from)
            .unwrap_or_else(|| PnpError::Numeric("no candidate in front of the camera".into())));
    }

    let best = candidates
        .iter()
        .min_by(|a, b| {
            if (a.1 - b.1).abs() <= RMS_TIE_PX {
                let ta = tilt(&a.0.rotation, &a.0.translation);
                let tb = tilt(&b.0.rotation, &b.0.translation);
                ta.total_cmp(&tb)
            } else {
                a.1.total_cmp(&b.1)
            }
        })
        .copied()
        .expect("non-empty");

    Ok(PnpSolution {
        estimate: PoseEstimate {
            marker_id: obs.id,
            transform: best.0,
            reprojection_rms: best.1,
            timestamp: obs.timestamp,
        },
        initial_rms,
        candidates,
    })
}

/// Camera <- marker pose of one observed marker.
pub fn solve_pnp(
    obs: &MarkerObservation,
    side: f64,
    cam: &CameraModel,
) -> Result<PoseEstimate, PnpError> {
    solve_pnp_detailed(obs, side, cam).map(|s| s.estimate)
}
