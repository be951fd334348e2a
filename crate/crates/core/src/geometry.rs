//! Rigid-body math: rotation representations, labelled frame transforms and
//! point transformation.
//!
//! Euler angles use the intrinsic Z-Y-X sequence, `R = Rz(theta) * Ry(psi) *
//! Rx(phi)`, with `phi` the roll about x, `psi` the pitch about y and `theta`
//! the yaw about z. Angles cross the API in degrees and are converted to
//! radians internally.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length vector in millimetres (or a unitless direction where noted).
pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthonormality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("cannot compose {left} with {right}: expected source frame {left_from} to equal target frame {right_to}")]
    FrameMismatch {
        left: String,
        right: String,
        left_from: Frame,
        right_to: Frame,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Wrap an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Wrap an angle in radians into `(-pi, pi]`.
pub fn wrap_rad(angle: f64) -> f64 {
    wrap_deg(angle.to_degrees()).to_radians()
}

/// Orthonormal 3x3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checked constructor; rejects matrices that are not proper rotations
    /// within `1e-9`.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation matrix"));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self(m))
    }

    /// Nearest rotation (in the Frobenius sense) to an arbitrary matrix.
    pub fn orthonormalize(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u_fix = u;
            // flip the column paired with the smallest singular value
            let (k, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("3 singular values");
            u_fix.column_mut(k).neg_mut();
            r = u_fix * v_t;
        }
        Self(r)
    }

    pub fn about_x(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Angle of this rotation in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.to_rodrigues().angle()
    }

    pub fn to_euler(&self) -> EulerAngles {
        rotation_to_euler(self)
    }

    pub fn to_rodrigues(&self) -> RodriguesVector {
        rotation_to_rodrigues(self)
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: Self) -> Self::Output {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// Intrinsic Z-Y-X Euler angles in degrees.
///
/// Canonical ranges: `phi` and `theta` in `(-180, 180]`, `psi` in `[-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    /// Roll about x.
    pub phi: f64,
    /// Pitch about y.
    pub psi: f64,
    /// Yaw about z.
    pub theta: f64,
}

impl EulerAngles {
    pub fn new(phi: f64, psi: f64, theta: f64) -> Self {
        Self { phi, psi, theta }
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        euler_to_rotation(self)
    }

    /// Per-angle absolute differences, each wrapped into `[0, 180]`.
    pub fn abs_diff(&self, other: &EulerAngles) -> [f64; 3] {
        [
            wrap_deg(self.phi - other.phi).abs(),
            wrap_deg(self.psi - other.psi).abs(),
            wrap_deg(self.theta - other.theta).abs(),
        ]
    }
}

pub fn euler_to_rotation(e: &EulerAngles) -> RotationMatrix {
    RotationMatrix::about_z(e.theta.to_radians())
        * RotationMatrix::about_y(e.psi.to_radians())
        * RotationMatrix::about_x(e.phi.to_radians())
}

/// Inverse of [`euler_to_rotation`]. At gimbal lock (`|psi| = 90`) the roll is
/// fixed to zero and the whole in-plane rotation is attributed to yaw.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = r.matrix();
    let cos_psi = m[(0, 0)].hypot(m[(1, 0)]);
    let psi = (-m[(2, 0)]).atan2(cos_psi);
    let (phi, theta) = if cos_psi < 1e-12 {
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    EulerAngles {
        phi: wrap_deg(phi.to_degrees()),
        psi: psi.to_degrees(),
        theta: wrap_deg(theta.to_degrees()),
    }
}

/// Axis-angle vector: unit axis scaled by the rotation angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodriguesVector(pub Vec3);

impl RodriguesVector {
    pub fn zero() -> Self {
        Self(Vec3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        rodrigues_to_rotation(self)
    }
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn rodrigues_to_rotation(r: &RodriguesVector) -> RotationMatrix {
    let theta = r.0.norm();
    let k = skew(&r.0);
    if theta < 1e-8 {
        // second-order series; exact to machine precision at this size
        return RotationMatrix(Matrix3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    RotationMatrix(Matrix3::identity() + a * k + b * k * k)
}

pub fn rotation_to_rodrigues(r: &RotationMatrix) -> RodriguesVector {
    let m = r.matrix();
    let vee = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin_theta = 0.5 * vee.norm();
    let cos_theta = 0.5 * (m.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-8 {
        return RodriguesVector(0.5 * vee);
    }
    if cos_theta > 0.0 {
        return RodriguesVector(vee * (theta / (2.0 * sin_theta)));
    }

    // Near pi the antisymmetric part vanishes; read the axis off the
    // symmetric part, (R + R^T)/2 = cos I + (1 - cos) a a^T.
    let sym = 0.5 * (m + m.transpose()) - cos_theta * Matrix3::identity();
    let aat = sym / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)]))
        .expect("3 diagonal entries");
    let mut axis = aat.column(k).into_owned() / aat[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    RodriguesVector(axis * theta)
}

/// Coordinate frame label carried by every transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    World,
    Body,
    Camera,
    Marker(u32),
    Gate(u32),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::World => write!(f, "world"),
            Frame::Body => write!(f, "body"),
            Frame::Camera => write!(f, "camera"),
            Frame::Marker(id) => write!(f, "marker{id}"),
            Frame::Gate(id) => write!(f, "gate{id}"),
        }
    }
}

/// Rigid transform mapping points expressed in `from` into `to`:
/// `p_to = R * p_from + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub from: Frame,
    pub to: Frame,
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<-{}", self.to, self.from)
    }
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vec3, from: Frame, to: Frame) -> Self {
        Self {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros(), frame, frame)
    }

    /// Same rotation and translation under new frame labels.
    pub fn with_frames(self, from: Frame, to: Frame) -> Self {
        Self { from, to, ..self }
    }

    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform, GeometryError> {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert(self)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        transform_point(self, p)
    }

    /// Rotate a direction (no translation).
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }
}

/// `a * b`: first apply `b`, then `a`. Requires `a.from == b.to`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform, GeometryError> {
    if a.from != b.to {
        return Err(GeometryError::FrameMismatch {
            left: a.to_string(),
            right: b.to_string(),
            left_from: a.from,
            right_to: b.to,
        });
    }
    Ok(RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation.rotate(&b.translation) + a.translation,
        from: b.from,
        to: a.to,
    })
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -rt.rotate(&t.translation),
        from: t.to,
        to: t.from,
    }
}

pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.rotation.rotate(p) + t.translation
}
