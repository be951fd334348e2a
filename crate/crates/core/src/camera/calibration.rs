//! Planar-target calibration on synthesized correspondences.
//!
//! Closed-form intrinsics from per-view homographies (zero skew imposed),
//! then joint Levenberg-Marquardt refinement of intrinsics, distortion and
//! per-view poses on the total reprojection error.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::homography::{decompose_planar_homography, estimate_homography};
use super::{CameraError, CameraModel, Distortion, Intrinsics, PixelPoint};
use crate::geometry::{Frame, RigidTransform, RodriguesVector, RotationMatrix, Vec3};
use crate::optim::{levenberg_marquardt, LmOptions};

const CAMERA_PARAMS: usize = 9;
const POSE_PARAMS: usize = 6;
const MIN_CONDITIONING: f64 = 1e-8;

/// One view of a planar target lying on `z = 0` of its own frame.
#[derive(Debug, Clone)]
pub struct PlanarView {
    /// Target-plane coordinates in mm.
    pub object: Vec<Vector2<f64>>,
    pub image: Vec<PixelPoint>,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub width: u32,
    pub height: u32,
    pub lm: LmOptions,
}

impl CalibrationOptions {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub camera: CameraModel,
    /// RMS reprojection error in pixels after refinement.
    pub rms: f64,
    /// RMS reprojection error of the closed-form initialization.
    pub initial_rms: f64,
    /// camera <- target pose of every view.
    pub poses: Vec<RigidTransform>,
    /// Ratio of the two smallest non-null singular values of the homography
    /// constraint system to the largest one; near zero for degenerate sets.
    pub conditioning: f64,
    pub cost_history: Vec<f64>,
}

/// Inner chessboard corners on a `cols x rows` grid, centred on the origin.
pub fn chessboard_points(cols: usize, rows: usize, square: f64) -> Vec<Vector2<f64>> {
    let ox = (cols as f64 - 1.0) * square / 2.0;
    let oy = (rows as f64 - 1.0) * square / 2.0;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Vector2::new(c as f64 * square - ox, r as f64 * square - oy)))
        .collect()
}

/// Synthesize `n_views` views of a 9x6 board (30 mm squares) seen by `cam`
/// from distinct tilted poses, with Gaussian corner noise of `sigma` px.
pub fn synthetic_views<R: Rng>(
    cam: &CameraModel,
    n_views: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<PlanarView> {
    let board = chessboard_points(9, 6, 30.0);
    let noise = Normal::new(0.0, sigma).expect("sigma >= 0");
    let mut views = Vec::with_capacity(n_views);
    while views.len() < n_views {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
        if axis.norm() < 0.2 {
            continue;
        }
        let tilt = rng.random_range(15.0f64..40.0).to_radians();
        let spin = rng.random_range(-0.5..0.5);
        let rot = RodriguesVector(axis.normalize() * tilt).to_rotation()
            * RotationMatrix::about_z(spin);
        let t = Vec3::new(
            rng.random_range(-220.0..220.0),
            rng.random_range(-160.0..160.0),
            rng.random_range(420.0..750.0),
        );
        let mut image = Vec::with_capacity(board.len());
        let mut ok = true;
        for p in &board {
            let pc = rot.rotate(&Vec3::new(p.x, p.y, 0.0)) + t;
            match cam.project(&pc) {
                Ok(px) if cam.intrinsics.contains(&px) => image.push(px),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        for px in &mut image {
            px.u += noise.sample(rng);
            px.v += noise.sample(rng);
        }
        views.push(PlanarView {
            object: board.clone(),
            image,
        });
    }
    views
}

fn constraint_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Closed-form zero-skew intrinsics from homographies already expressed in
/// normalized pixel coordinates. Returns `K` and the conditioning figure.
fn closed_form_intrinsics(homs: &[Matrix3<f64>]) -> Result<(Matrix3<f64>, f64), CameraError> {
    let mut v = DMatrix::<f64>::zeros(2 * homs.len() + 1, 6);
    for (k, h) in homs.iter().enumerate() {
        let h = h / h.norm();
        let v12 = constraint_row(&h, 0, 1);
        let v11 = constraint_row(&h, 0, 0);
        let v22 = constraint_row(&h, 1, 1);
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    // zero skew: B12 = 0
    v[(2 * homs.len(), 1)] = 1.0;

    let svd = v.svd(false, true);
    let v_t = svd.v_t.ok_or(CameraError::IllConditioned(0.0))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let conditioning = sv[order[1]] / sv[order[sv.len() - 1]];
    if !(conditioning > MIN_CONDITIONING) {
        return Err(CameraError::IllConditioned(conditioning));
    }

    let mut b = v_t.row(order[0]).transpose();
    if b[0] < 0.0 {
        b = -b;
    }
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);
    let den = b11 * b22 - b12 * b12;
    if !(den > 0.0) || !(b11 > 0.0) {
        return Err(CameraError::IllConditioned(conditioning));
    }
    let v0 = (b12 * b13 - b11 * b23) / den;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda / b11 > 0.0) {
        return Err(CameraError::IllConditioned(conditioning));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / den).sqrt();
    let u0 = -b13 * alpha * alpha / lambda;
    Ok((
        Matrix3::new(alpha, 0.0, u0, 0.0, beta, v0, 0.0, 0.0, 1.0),
        conditioning,
    ))
}

fn unpack_camera(p: &DVector<f64>, width: u32, height: u32) -> CameraModel {
    CameraModel::new_unchecked(
        Intrinsics {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            width,
            height,
        },
        Distortion {
            k1: p[4],
            k2: p[5],
            p1: p[6],
            p2: p[7],
            k3: p[8],
        },
    )
}

fn unpack_pose(p: &DVector<f64>, view: usize) -> (RotationMatrix, Vec3) {
    let o = CAMERA_PARAMS + POSE_PARAMS * view;
    let r = RodriguesVector(Vec3::new(p[o], p[o + 1], p[o + 2])).to_rotation();
    (r, Vec3::new(p[o + 3], p[o + 4], p[o + 5]))
}

fn reprojection_residuals(
    p: &DVector<f64>,
    views: &[PlanarView],
    width: u32,
    height: u32,
) -> Option<DVector<f64>> {
    let cam = unpack_camera(p, width, height);
    let n: usize = views.iter().map(|v| v.object.len()).sum();
    let mut out = DVector::zeros(2 * n);
    let mut k = 0;
    for (vi, view) in views.iter().enumerate() {
        let (r, t) = unpack_pose(p, vi);
        for (obj, img) in view.object.iter().zip(&view.image) {
            let pc = r.rotate(&Vec3::new(obj.x, obj.y, 0.0)) + t;
            let px = cam.project(&pc).ok()?;
            out[k] = px.u - img.u;
            out[k + 1] = px.v - img.v;
            k += 2;
        }
    }
    Some(out)
}

fn rms(residuals: &DVector<f64>) -> f64 {
    (residuals.norm_squared() / (residuals.len() / 2) as f64).sqrt()
}

pub fn calibrate_planar(
    views: &[PlanarView],
    opts: &CalibrationOptions,
) -> Result<Calibration, CameraError> {
    if views.len() < 3 {
        return Err(CameraError::InsufficientViews(views.len()));
    }
    let (w, h) = (f64::from(opts.width), f64::from(opts.height));
    // pixel normalization keeps the constraint system well scaled
    let norm = Matrix3::new(2.0 / w, 0.0, -1.0, 0.0, 2.0 / h, -1.0, 0.0, 0.0, 1.0);

    let mut homs = Vec::with_capacity(views.len());
    for view in views {
        let img: Vec<_> = view.image.iter().map(|p| p.to_vector()).collect();
        homs.push(estimate_homography(&view.object, &img)?);
    }
    let normed: Vec<_> = homs.iter().map(|hm| norm * hm).collect();
    let (k_norm, conditioning) = closed_form_intrinsics(&normed)?;
    let k = norm.try_inverse().expect("invertible") * k_norm;
    let k_inv = k
        .try_inverse()
        .ok_or(CameraError::IllConditioned(conditioning))?;

    let mut x0 = DVector::zeros(CAMERA_PARAMS + POSE_PARAMS * views.len());
    x0[0] = k[(0, 0)];
    x0[1] = k[(1, 1)];
    x0[2] = k[(0, 2)];
    x0[3] = k[(1, 2)];
    for (vi, hm) in homs.iter().enumerate() {
        let (r, t) = decompose_planar_homography(&k_inv, hm);
        let rv = r.to_rodrigues().0;
        let o = CAMERA_PARAMS + POSE_PARAMS * vi;
        x0.rows_mut(o, 3).copy_from(&rv);
        x0.rows_mut(o + 3, 3).copy_from(&t);
    }

    let residuals = |p: &DVector<f64>| reprojection_residuals(p, views, opts.width, opts.height);
    let initial = residuals(&x0).ok_or(CameraError::IllConditioned(conditioning))?;
    let initial_rms = rms(&initial);
    let report = levenberg_marquardt(residuals, x0, &opts.lm)?;
    let final_res = residuals(&report.params).expect("accepted point is valid");

    let camera = unpack_camera(&report.params, opts.width, opts.height);
    let camera = CameraModel::new(camera.intrinsics, camera.distortion)?;
    let poses = (0..views.len())
        .map(|vi| {
            let (r, t) = unpack_pose(&report.params, vi);
            RigidTransform::new(r, t, Frame::Marker(vi as u32), Frame::Camera)
        })
        .collect();

    Ok(Calibration {
        camera,
        rms: rms(&final_res),
        initial_rms,
        poses,
        conditioning,
        cost_history: report.cost_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth() -> CameraModel {
        CameraModel::new(
            Intrinsics {
                fx: 920.0,
                fy: 915.0,
                cx: 482.0,
                cy: 357.0,
                width: 960,
                height: 720,
            },
            Distortion {
                k1: -0.06,
                k2: 0.03,
                p1: 0.0008,
                p2: -0.0005,
                k3: 0.0,
            },
        )
        .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn noiseless_views_recover_intrinsics_exactly() {
        let cam = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let views = synthetic_views(&cam, 10, 0.0, &mut rng);
        let cal = calibrate_planar(&views, &CalibrationOptions::new(960, 720)).unwrap();
        let (k, t) = (cal.camera.intrinsics, cam.intrinsics);
        for (a, b) in [(k.fx, t.fx), (k.fy, t.fy), (k.cx, t.cx), (k.cy, t.cy)] {
            assert!(rel(a, b) < 1e-6, "{a} vs {b}");
        }
        assert!(cal.rms < 1e-6, "rms {}", cal.rms);
        assert!(cal.rms <= cal.initial_rms);
    }

    #[test]
    fn accepted_iterations_decrease_cost() {
        let cam = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let views = synthetic_views(&cam, 10, 0.2, &mut rng);
        let cal = calibrate_planar(&views, &CalibrationOptions::new(960, 720)).unwrap();
        assert!(cal.cost_history.len() > 1);
        assert!(cal.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_views_are_insufficient() {
        let cam = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let views = synthetic_views(&cam, 2, 0.0, &mut rng);
        let err = calibrate_planar(&views, &CalibrationOptions::new(960, 720)).unwrap_err();
        assert_eq!(err, CameraError::InsufficientViews(2));
    }

    #[test]
    fn parallel_views_are_ill_conditioned() {
        let cam = truth();
        let board = chessboard_points(9, 6, 30.0);
        let views: Vec<_> = [(0.0, 0.0, 500.0), (40.0, -20.0, 600.0), (-30.0, 25.0, 700.0)]
            .iter()
            .map(|&(x, y, z)| PlanarView {
                object: board.clone(),
                image: board
                    .iter()
                    .map(|p| cam.project(&Vec3::new(p.x + x, p.y + y, z)).unwrap())
                    .collect(),
            })
            .collect();
        let err = calibrate_planar(&views, &CalibrationOptions::new(960, 720)).unwrap_err();
        assert!(matches!(err, CameraError::IllConditioned(_)), "{err:?}");
    }
}
