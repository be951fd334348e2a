//! Marker observation, pose recovery and last-known-pose tracking.
//!
//! Marker frame: x right, y up, z out of the marker plane toward the viewer.
//! Corners are ordered top-left, top-right, bottom-right, bottom-left at
//! `(+-side/2, +-side/2, 0)`.

mod observe;
mod pnp;
mod tracking;

pub use observe::{observe_markers, project_marker, NoiseProfile, SimRng, MIN_MARKER_SIDE_PX};
pub use pnp::{solve_pnp, solve_pnp_detailed, PnpError, PnpSolution};
pub use tracking::{select_nearest, track, TrackerState};

use thiserror::Error;

use crate::camera::PixelPoint;
use crate::geometry::{Frame, RigidTransform, Vec3};

pub const DEFAULT_MARKER_SIDE: f64 = 150.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkerError {
    #[error("marker side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("marker {id} pose must map marker{id} into world, got {got}")]
    WrongFrames { id: u32, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerSpec {
    pub id: u32,
    /// Side length in mm.
    pub side: f64,
    /// world <- marker
    pub pose_world: RigidTransform,
}

impl MarkerSpec {
    pub fn new(id: u32, side: f64, pose_world: RigidTransform) -> Result<Self, MarkerError> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(MarkerError::NonPositiveSide(side));
        }
        if pose_world.from != Frame::Marker(id) || pose_world.to != Frame::World {
            return Err(MarkerError::WrongFrames {
                id,
                got: pose_world.to_string(),
            });
        }
        Ok(Self {
            id,
            side,
            pose_world,
        })
    }

    pub fn corners(&self) -> [Vec3; 4] {
        marker_corners(self.side)
    }
}

/// Corner positions in the marker frame, in canonical order.
pub fn marker_corners(side: f64) -> [Vec3; 4] {
    let h = side / 2.0;
    [
        Vec3::new(-h, h, 0.0),
        Vec3::new(h, h, 0.0),
        Vec3::new(h, -h, 0.0),
        Vec3::new(-h, -h, 0.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerObservation {
    pub id: u32,
    pub corners: [PixelPoint; 4],
    /// Seconds.
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub marker_id: u32,
    /// camera <- marker
    pub transform: RigidTransform,
    /// Pixels.
    pub reprojection_rms: f64,
    /// Seconds.
    pub timestamp: f64,
}

impl PoseEstimate {
    /// Euclidean distance from the camera to the marker centre.
    pub fn distance(&self) -> f64 {
        self.transform.translation.norm()
    }
}
