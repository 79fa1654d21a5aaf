use nalgebra::{Matrix3, Vector2, Vector3};

use super::epipolar_null_space;
use crate::geom::{skew, ImagePoint};
use crate::poly::real_roots;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpipolarKind {
    Essential,
    Fundamental,
}

/// A rank-2 epipolar matrix with `x2^T M x1 = 0`, Frobenius-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarMatrix {
    pub matrix: Matrix3<f64>,
    pub kind: EpipolarKind,
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley_transform(points: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let h = t * p.push(1.0);
    h.xy() / h.z
}

/// Seven-point fundamental matrix: one to three solutions of the cubic
/// `det(F2 + l (F1 - F2)) = 0` over the 2D null space of the design matrix.
pub fn solve_7pt_fundamental(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Vec<EpipolarMatrix> {
    if x1.len() < 7 || x2.len() < 7 {
        return Vec::new();
    }
    let (x1, x2) = (&x1[..7], &x2[..7]);
    let (Some(t1), Some(t2)) = (hartley_transform(x1), hartley_transform(x2)) else {
        return Vec::new();
    };
    let y1: Vec<_> = x1.iter().map(|p| apply(&t1, p)).collect();
    let y2: Vec<_> = x2.iter().map(|p| apply(&t2, p)).collect();
    let Some(basis) = epipolar_null_space(&y1, &y2, 2) else {
        return Vec::new();
    };
    let f1 = Matrix3::from_row_slice(&basis[0]);
    let f2 = Matrix3::from_row_slice(&basis[1]);
    let d = f1 - f2;
    let p = |l: f64| (f2 + d * l).determinant();
    // Exact cubic interpolation from four samples.
    let (p0, p1, pm1, p2) = (p(0.0), p(1.0), p(-1.0), p(2.0));
    let c0 = p0;
    let c2 = (p1 + pm1) / 2.0 - c0;
    let s = (p1 - pm1) / 2.0;
    let u = p2 - c0 - 4.0 * c2;
    let c3 = (u / 2.0 - s) / 3.0;
    let c1 = s - c3;

    real_roots(&[c0, c1, c2, c3])
        .into_iter()
        .filter_map(|l| {
            let f = t2.transpose() * (f2 + d * l) * t1;
            let n = f.norm();
            (n > 0.0 && n.is_finite()).then(|| EpipolarMatrix {
                matrix: f / n,
                kind: EpipolarKind::Fundamental,
            })
        })
        .collect()
}

/// Balancing scale `s` so that `diag(s,s,1) F diag(s,s,1)` has comparable
/// upper-left and border magnitudes.
fn balancing_scale(f: &Matrix3<f64>) -> f64 {
    let ul = f.fixed_view::<2, 2>(0, 0).norm();
    let border = (f.fixed_view::<2, 1>(0, 2).norm_squared() + f.fixed_view::<1, 2>(2, 0).norm_squared()).sqrt();
    let s = if ul > 0.0 { border / ul } else { 1.0 };
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Closed-form focal lengths from a fundamental matrix and the two principal
/// points. `None` when either squared focal is non-positive or the
/// configuration is singular (e.g. coplanar optical axes).
pub fn bougnoux_focals(f: &EpipolarMatrix, pp1: &ImagePoint, pp2: &ImagePoint) -> Option<(f64, f64)> {
    let shift = |pp: &ImagePoint| Matrix3::new(1.0, 0.0, pp.x, 0.0, 1.0, pp.y, 0.0, 0.0, 1.0);
    // Fundamental matrix on principal-point-centred coordinates, then rescaled.
    let fc = shift(pp2).transpose() * f.matrix * shift(pp1);
    let s = balancing_scale(&fc);
    let k = Matrix3::from_diagonal(&Vector3::new(s, s, 1.0));
    let fs = k * fc * k;
    let fs = fs / fs.norm();
    if !fs.iter().all(|v| v.is_finite()) {
        return None;
    }

    let svd = fs.svd(true, true);
    let imin = svd.singular_values.imin();
    let e1: Vector3<f64> = svd.v_t.as_ref()?.row(imin).transpose();
    let e2: Vector3<f64> = svd.u.as_ref()?.column(imin).into();
    let it = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    let p = Vector3::new(0.0, 0.0, 1.0);

    let num1 = -(p.transpose() * skew(&e2) * it * fs * p)[0] * (p.transpose() * fs.transpose() * p)[0];
    let den1 = (p.transpose() * skew(&e2) * it * fs * it * fs.transpose() * p)[0];
    let num2 = -(p.transpose() * skew(&e1) * it * fs.transpose() * p)[0] * (p.transpose() * fs * p)[0];
    let den2 = (p.transpose() * skew(&e1) * it * fs.transpose() * it * fs * p)[0];

    const SINGULAR: f64 = 1e-10;
    if den1.abs() < SINGULAR || den2.abs() < SINGULAR {
        return None;
    }
    let (f1sq, f2sq) = (num1 / den1, num2 / den2);
    if !(f1sq > 0.0 && f2sq > 0.0 && f1sq.is_finite() && f2sq.is_finite()) {
        return None;
    }
    Some((f1sq.sqrt() * s, f2sq.sqrt() * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::solvers::fixtures::random_scene;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt_fundamental(pose: &Pose, k1: &Matrix3<f64>, k2: &Matrix3<f64>) -> Matrix3<f64> {
        let f = k2.try_inverse().unwrap().transpose() * pose.essential() * k1.try_inverse().unwrap();
        f / f.norm()
    }

    fn same_up_to_sign(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm().min((a + b).norm())
    }

    #[test]
    fn seven_point_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut hits = 0;
        for _ in 0..300 {
            let (fa, fb) = (rng.random_range(300.0..1500.0), rng.random_range(300.0..1500.0));
            let s = random_scene(&mut rng, 7, fa, fb);
            let gt = gt_fundamental(&s.pose, &s.cam1.matrix(), &s.cam2.matrix());
            let p1: Vec<_> = s.p1.iter().map(|p| p.coords).collect();
            let p2: Vec<_> = s.p2.iter().map(|p| p.coords).collect();
            let sols = solve_7pt_fundamental(&p1, &p2);
            assert!((1..=3).contains(&sols.len()));
            for f in &sols {
                assert!(f.matrix.determinant().abs() < 1e-8);
            }
            if sols.iter().any(|f| same_up_to_sign(&f.matrix, &gt) < 1e-8) {
                hits += 1;
            }
        }
        assert!(hits >= 299, "{hits}");
    }

    #[test]
    fn bougnoux_recovers_focals() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let (fa, fb) = (rng.random_range(300.0..1500.0), rng.random_range(300.0..1500.0));
            let s = random_scene(&mut rng, 7, fa, fb);
            let f = EpipolarMatrix {
                matrix: gt_fundamental(&s.pose, &s.cam1.matrix(), &s.cam2.matrix()),
                kind: EpipolarKind::Fundamental,
            };
            let (f1, f2) = bougnoux_focals(&f, &s.cam1.principal_point(), &s.cam2.principal_point()).unwrap();
            assert!((f1 - fa).abs() < 1e-6 * fa, "{f1} vs {fa}");
            assert!((f2 - fb).abs() < 1e-6 * fb, "{f2} vs {fb}");

            let scaled = EpipolarMatrix { matrix: f.matrix * 3.0, ..f };
            let (g1, g2) = bougnoux_focals(&scaled, &s.cam1.principal_point(), &s.cam2.principal_point()).unwrap();
            assert!((g1 - f1).abs() < 1e-9 * f1 && (g2 - f2).abs() < 1e-9 * f2);
        }
    }

    #[test]
    fn bougnoux_singular_for_coplanar_axes() {
        // Rotation about the y axis and translation in the xz plane keep both
        // optical axes in one plane.
        let pose = Pose::from_rotation(Rotation3::from_euler_angles(0.0, 0.3, 0.0), Vector3::new(1.0, 0.0, 0.2));
        let k1 = Matrix3::new(700.0, 0.0, 320.0, 0.0, 700.0, 240.0, 0.0, 0.0, 1.0);
        let k2 = Matrix3::new(900.0, 0.0, 300.0, 0.0, 900.0, 250.0, 0.0, 0.0, 1.0);
        let f = EpipolarMatrix { matrix: gt_fundamental(&pose, &k1, &k2), kind: EpipolarKind::Fundamental };
        assert!(bougnoux_focals(&f, &ImagePoint::new(320.0, 240.0), &ImagePoint::new(300.0, 250.0)).is_none());
    }
}
