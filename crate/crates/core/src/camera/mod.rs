//! Pinhole camera with five-coefficient Brown-Conrady distortion.
//!
//! Camera frame: x right, y down, z forward (optical axis).

mod calibration;
mod homography;

pub use calibration::{
    calibrate_planar, chessboard_points, synthetic_views, Calibration, CalibrationOptions,
    PlanarView,
};
pub use homography::{
    apply_homography, decompose_planar_homography, estimate_homography, Homography,
};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::optim::OptimError;

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_STEP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("undistortion did not converge for pixel ({u:.3}, {v:.3})")]
    NoConvergence { u: f64, v: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("need at least 3 views for planar calibration, got {0}")]
    InsufficientViews(usize),
    #[error("view set is ill-conditioned for calibration (conditioning {0:.3e})")]
    IllConditioned(f64),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    fn validate(&self) -> Result<(), CameraError> {
        let vals = [self.fx, self.fy, self.cx, self.cy];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if self.cx < 0.0
            || self.cx >= f64::from(self.width)
            || self.cy < 0.0
            || self.cy >= f64::from(self.height)
        {
            return Err(CameraError::InvalidIntrinsics(
                "optical centre outside the sensor".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= f64::from(self.width)
            && px.v <= f64::from(self.height)
    }
}

/// Radial (k1, k2, k3) and tangential (p1, p2) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn none() -> Self {
        Self::default()
    }

    /// OpenCV coefficient order `[k1, k2, p1, p2, k3]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn from_array(d: [f64; 5]) -> Self {
        Self {
            k1: d[0],
            k2: d[1],
            p1: d[2],
            p2: d[3],
            k3: d[4],
        }
    }

    /// Apply distortion to a normalized image point.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
}

impl CameraModel {
    /// Validated constructor: checks the intrinsics and that undistortion
    /// converges over a 5x5 grid spanning the sensor.
    pub fn new(intrinsics: Intrinsics, distortion: Distortion) -> Result<Self, CameraError> {
        intrinsics.validate()?;
        if distortion.to_array().iter().any(|v| !v.is_finite()) {
            return Err(CameraError::InvalidDistortion("non-finite coefficient".into()));
        }
        let cam = Self {
            intrinsics,
            distortion,
        };
        let (w, h) = (f64::from(intrinsics.width), f64::from(intrinsics.height));
        for i in 0..5 {
            for j in 0..5 {
                let px = PixelPoint::new(w * i as f64 / 4.0, h * j as f64 / 4.0);
                let (x, y) = cam.undistort(&px).map_err(|_| {
                    CameraError::InvalidDistortion(format!(
                        "undistortion diverges at ({:.0}, {:.0})",
                        px.u, px.v
                    ))
                })?;
                let back = cam.project_normalized(x, y);
                if back.distance(&px) > 1e-6 {
                    return Err(CameraError::InvalidDistortion(format!(
                        "distortion is not invertible at ({:.0}, {:.0})",
                        px.u, px.v
                    )));
                }
            }
        }
        Ok(cam)
    }

    pub(crate) fn new_unchecked(intrinsics: Intrinsics, distortion: Distortion) -> Self {
        Self {
            intrinsics,
            distortion,
        }
    }

    /// Synthetic stand-in for the platform camera: 960x720 px, fx = fy = 920,
    /// optical centre at the sensor centre, no distortion. These values are
    /// not measured from real hardware.
    pub fn default_synthetic() -> Self {
        Self::new_unchecked(
            Intrinsics {
                fx: 920.0,
                fy: 920.0,
                cx: 480.0,
                cy: 360.0,
                width: 960,
                height: 720,
            },
            Distortion::none(),
        )
    }

    pub fn width(&self) -> f64 {
        f64::from(self.intrinsics.width)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.intrinsics.height)
    }

    /// Project a camera-frame point (mm) to pixels.
    pub fn project(&self, p: &Vec3) -> Result<PixelPoint, CameraError> {
        if p.z <= 0.0 || !p.z.is_finite() {
            return Err(CameraError::BehindCamera { z: p.z });
        }
        Ok(self.project_normalized(p.x / p.z, p.y / p.z))
    }

    /// Distort and scale an undistorted normalized point to pixels.
    pub fn project_normalized(&self, x: f64, y: f64) -> PixelPoint {
        let (xd, yd) = self.distortion.distort(x, y);
        let k = &self.intrinsics;
        PixelPoint::new(k.fx * xd + k.cx, k.fy * yd + k.cy)
    }

    /// Recover the undistorted normalized coordinates `(X/Z, Y/Z)` of a pixel
    /// by fixed-point iteration.
    pub fn undistort(&self, px: &PixelPoint) -> Result<(f64, f64), CameraError> {
        let k = &self.intrinsics;
        let xd = (px.u - k.cx) / k.fx;
        let yd = (px.v - k.cy) / k.fy;
        let d = &self.distortion;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
            let dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
            let dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
            let nx = (xd - dx) / radial;
            let ny = (yd - dy) / radial;
            if !nx.is_finite() || !ny.is_finite() {
                break;
            }
            let step = (nx - x).hypot(ny - y);
            x = nx;
            y = ny;
            if step < UNDISTORT_STEP_TOL {
                return Ok((x, y));
            }
        }
        Err(CameraError::NoConvergence { u: px.u, v: px.v })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CameraDocument::from(self)).expect("camera serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CameraError> {
        let doc: CameraDocument = serde_json::from_str(s)
            .map_err(|e| CameraError::InvalidIntrinsics(format!("bad camera document: {e}")))?;
        doc.try_into()
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::default_synthetic()
    }
}

/// On-disk camera document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDocument {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    dist: [f64; 5],
}

impl From<&CameraModel> for CameraDocument {
    fn from(c: &CameraModel) -> Self {
        let k = &c.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            dist: c.distortion.to_array(),
        }
    }
}

impl TryFrom<CameraDocument> for CameraModel {
    type Error = CameraError;

    fn try_from(d: CameraDocument) -> Result<Self, Self::Error> {
        CameraModel::new(
            Intrinsics {
                fx: d.fx,
                fy: d.fy,
                cx: d.cx,
                cy: d.cy,
                width: d.width,
                height: d.height,
            },
            Distortion::from_array(d.dist),
        )
    }
}

impl Serialize for CameraModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CameraDocument::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CameraModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = CameraDocument::deserialize(d)?;
        doc.try_into().map_err(serde::de::Error::custom)
    }
}
