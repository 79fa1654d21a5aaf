use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Pose;

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn check_inputs(p1: &[Vector3<f64>], p2: &[Vector3<f64>]) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(Error::InvalidConfig(format!("point count mismatch: {} vs {}", p1.len(), p2.len())));
    }
    if p1.len() < 3 {
        return Err(Error::TooFewCorrespondences { needed: 3, got: p1.len() });
    }
    Ok(())
}

/// Rotation from the SVD of a cross-covariance `H = sum a b^T`, with the
/// reflection case corrected. Returns `(R, singular values, sign)`.
fn procrustes_rotation(h: &Matrix3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>, f64)> {
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let smax = s.max();
    // Rank below two leaves a rotation about the common line undetermined.
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(smax > 0.0) || sorted[1] <= 1e-12 * smax {
        return Err(Error::Degenerate("collinear points in alignment"));
    }
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    // The correction must flip the direction of the smallest singular value.
    let imin = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    let mut d = Matrix3::identity();
    d[(imin, imin)] = sign;
    Ok((v * d * u.transpose(), s, if sign < 0.0 { -s[imin] } else { s[imin] }))
}

/// Least-squares rigid motion mapping `p1` onto `p2` (`p2 ~ R p1 + t`).
pub fn rigid_align(p1: &[Vector3<f64>], p2: &[Vector3<f64>]) -> Result<Pose> {
    check_inputs(p1, p2)?;
    let (c1, c2) = (centroid(p1), centroid(p2));
    let h: Matrix3<f64> = p1.iter().zip(p2).map(|(a, b)| (a - c1) * (b - c2).transpose()).sum();
    let (r, _, _) = procrustes_rotation(&h)?;
    Pose::from_approx(&r, c2 - r * c1)
}

/// Least-squares similarity `p2 ~ s R p1 + t`; returns `(s, pose)` where the
/// pose translation already includes the scale.
pub fn similarity_align(p1: &[Vector3<f64>], p2: &[Vector3<f64>]) -> Result<(f64, Pose)> {
    check_inputs(p1, p2)?;
    let (c1, c2) = (centroid(p1), centroid(p2));
    let h: Matrix3<f64> = p1.iter().zip(p2).map(|(a, b)| (a - c1) * (b - c2).transpose()).sum();
    let (r, s, last) = procrustes_rotation(&h)?;
    let var1: f64 = p1.iter().map(|a| (a - c1).norm_squared()).sum();
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let trace = sorted[0] + sorted[1] + last;
    let scale = trace / var1;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("non-positive similarity scale"));
    }
    let pose = Pose::from_approx(&r, c2 - r * c1 * scale)?;
    Ok((scale, pose))
}

/// Largest distance between `R p1 + t` and `p2`.
pub fn alignment_residual(pose: &Pose, p1: &[Vector3<f64>], p2: &[Vector3<f64>]) -> f64 {
    p1.iter()
        .zip(p2)
        .map(|(a, b)| (pose.transform(a) - b).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_angle;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn tri() -> Vec<Vector3<f64>> {
        vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)]
    }

    #[test]
    fn identity_alignment() {
        let p = tri();
        let pose = rigid_align(&p, &p).unwrap();
        assert!((pose.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(pose.translation().norm() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let p = tri();
        let q: Vec<_> = p.iter().map(|v| v + Vector3::z()).collect();
        let pose = rigid_align(&p, &q).unwrap();
        assert!((pose.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!((pose.translation() - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = tri();
        let q = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let pose = rigid_align(&p, &q).unwrap();
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        assert!((pose.rotation() - rz.matrix()).amax() < 1e-12);
        assert!(pose.translation().norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p = vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        assert!(matches!(rigid_align(&p, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn reflection_is_corrected() {
        let p = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 0.0)];
        let q: Vec<_> = p.iter().map(|v| Vector3::new(v.x, v.y, -v.z)).collect();
        let pose = rigid_align(&p, &q).unwrap();
        assert!((pose.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn recovers_random_motion(angles in prop::array::uniform3(-3.0..3.0f64),
                                  t in prop::array::uniform3(-5.0..5.0f64),
                                  pts in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 3..10),
                                  s in 0.2..5.0f64) {
            let p: Vec<_> = pts.into_iter().map(Vector3::from).collect();
            let a = p[0] - p[1];
            let b = p[0] - p[2];
            prop_assume!(a.cross(&b).norm() > 1e-2);
            let r = Rotation3::new(Vector3::from(angles));
            let t = Vector3::from(t);
            let q: Vec<_> = p.iter().map(|v| r * v + t).collect();
            let pose = rigid_align(&p, &q).unwrap();
            prop_assert!(rotation_angle(&(pose.rotation() * r.matrix().transpose())) < 1e-9);
            prop_assert!(alignment_residual(&pose, &p, &q) < 1e-9);

            let qs: Vec<_> = p.iter().map(|v| r * v * s + t).collect();
            let (scale, sim) = similarity_align(&p, &qs).unwrap();
            prop_assert!((scale - s).abs() < 1e-9 * s);
            prop_assert!((sim.translation() - t).norm() < 1e-8);
        }
    }
}
