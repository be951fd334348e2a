//! Normalized DLT homography estimation.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use super::CameraError;
use crate::geometry::{RotationMatrix, Vec3};

/// Plane-to-image projective map, scaled so that `H[2][2] = 1`.
pub type Homography = Matrix3<f64>;

pub fn apply_homography(h: &Homography, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(pts: &[Vector2<f64>]) -> Result<Matrix3<f64>, CameraError> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(CameraError::Degenerate("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn has_collinear_triple(pts: &[Vector2<f64>]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
        .fold(0.0, f64::max);
    let tol = 1e-9 * scale * scale;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let a = pts[j] - pts[i];
                let b = pts[k] - pts[i];
                if (a.x * b.y - a.y * b.x).abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Estimate `H` with `dst ~ H * src` from at least four correspondences.
///
/// With exactly four points no three source points may be collinear. Larger
/// sets are checked through the null-space dimension of the DLT system.
pub fn estimate_homography(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
) -> Result<Homography, CameraError> {
    if src.len() != dst.len() {
        return Err(CameraError::Degenerate(format!(
            "{} source points but {} image points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(CameraError::Degenerate(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    if src.len() == 4 && (has_collinear_triple(src) || has_collinear_triple(dst)) {
        return Err(CameraError::Degenerate("three collinear points".into()));
    }

    let ns = normalizer(src)?;
    let nd = normalizer(dst)?;
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ns * Vector3::new(s.x, s.y, 1.0);
        let d = nd * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let r0 = 2 * i;
        a.row_mut(r0)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r0 + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CameraError::Degenerate("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    let sv = &svd.singular_values;
    let largest = sv.max();
    if sv[second] <= 1e-10 * largest {
        return Err(CameraError::Degenerate(
            "rank-deficient correspondence set".into(),
        ));
    }

    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let nd_inv = nd
        .try_inverse()
        .ok_or_else(|| CameraError::Degenerate("normalization".into()))?;
    let mut hm = nd_inv * hn * ns;
    if hm[(2, 2)].abs() < 1e-14 * hm.norm() {
        return Err(CameraError::Degenerate(
            "homography maps the origin to infinity".into(),
        ));
    }
    hm /= hm[(2, 2)];
    if hm.determinant().abs() < 1e-12 * hm.norm().powi(3) {
        return Err(CameraError::Degenerate("singular homography".into()));
    }
    Ok(hm)
}

/// Split a plane-induced homography `H ~ K [r1 r2 t]` (plane at `z = 0`)
/// into a rotation and translation with the plane in front of the camera.
pub fn decompose_planar_homography(
    k_inv: &Matrix3<f64>,
    h: &Homography,
) -> (RotationMatrix, Vec3) {
    let a = k_inv * h;
    let scale = 2.0 / (a.column(0).norm() + a.column(1).norm());
    let mut r1: Vector3<f64> = a.column(0) * scale;
    let mut r2: Vector3<f64> = a.column(1) * scale;
    let mut t: Vector3<f64> = a.column(2) * scale;
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_columns(&[r1, r2, r3]);
    (RotationMatrix::orthonormalize(&m), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn identity_map() {
        let pts = square();
        let h = estimate_homography(&pts, &pts).unwrap();
        assert!((h - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let src = square();
        let dst: Vec<_> = src.iter().map(|p| p + Vector2::new(10.0, 5.0)).collect();
        let h = estimate_homography(&src, &dst).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 10.0, 0.0, 1.0, 5.0, 0.0, 0.0, 1.0);
        assert!((h - expected).abs().max() < 1e-10, "{h}");
    }

    #[test]
    fn recovers_random_projective_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let truth = Matrix3::new(
                rng.random_range(0.5..2.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(-50.0..50.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(0.5..2.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-1e-3..1e-3),
                rng.random_range(-1e-3..1e-3),
                1.0,
            );
            let src: Vec<_> = (0..20)
                .map(|_| Vector2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
                .collect();
            let dst: Vec<_> = src.iter().map(|p| apply_homography(&truth, p)).collect();
            let h = estimate_homography(&src, &dst).unwrap();
            let rel = (h - truth).norm() / truth.norm();
            assert!(rel < 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let src = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(2.0, 2.0),
            Vector2::new(0.0, 1.0),
        ];
        let err = estimate_homography(&src, &square()).unwrap_err();
        assert!(matches!(err, CameraError::Degenerate(_)));
        // all on one line, more than four points
        let line: Vec<_> = (0..8).map(|i| Vector2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(estimate_homography(&line, &line).is_err());
        assert!(estimate_homography(&square()[..3], &square()[..3]).is_err());
    }
}
