use nalgebra::{DMatrix, Matrix3, SMatrix, Vector2, Vector3};

use super::{epipolar_null_space, triangulate_midpoint};
use crate::geom::{orthonormalize, Pose};
use crate::poly::{polymat_det, polymat_mul, polymat_transpose, PolyMat3, TriPoly, REAL_ROOT_TOLERANCE};

/// The four motions compatible with an essential matrix (unit translation).
pub fn decompose_essential(e: &Matrix3<f64>) -> Vec<Pose> {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Order columns so the smallest singular value is last.
    let s = svd.singular_values;
    let imin = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    if imin != 2 {
        u.swap_columns(imin, 2);
        v_t.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u.neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vector3<f64> = u.column(2).into();
    let mut out = Vec::with_capacity(4);
    for r in [u * w * v_t, u * w.transpose() * v_t] {
        let r = orthonormalize(&r);
        for sign in [1.0, -1.0] {
            out.push(Pose::from_approx(&r, t * sign).expect("orthonormalized rotation"));
        }
    }
    out
}

/// Number of correspondences triangulating in front of both cameras.
pub fn cheirality_count(pose: &Pose, x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> usize {
    x1.iter()
        .zip(x2)
        .filter(|(a, b)| {
            triangulate_midpoint(a, b, pose).is_some_and(|p| p.z > 0.0 && pose.transform(&p).z > 0.0)
        })
        .count()
}

/// The decomposition of `e` that places the most sample points in front of
/// both cameras; `None` when no candidate places any.
pub fn pose_from_essential(e: &Matrix3<f64>, x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Option<Pose> {
    let mut best: Option<(usize, Pose)> = None;
    for pose in decompose_essential(e) {
        let n = cheirality_count(&pose, x1, x2);
        if n > 0 && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, pose));
        }
    }
    best.map(|(_, p)| p)
}

const CUBIC: [(usize, usize, usize); 10] = [
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
];
const BASIS: [(usize, usize, usize); 10] = [
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

/// Essential matrices (Frobenius-normalized) consistent with five
/// normalized correspondences `x2^T E x1 = 0`; at most ten.
pub fn solve_5pt_essential_matrices(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Vec<Matrix3<f64>> {
    if x1.len() < 5 || x2.len() < 5 {
        return Vec::new();
    }
    let Some(basis) = epipolar_null_space(&x1[..5], &x2[..5], 4) else {
        return Vec::new();
    };
    let mut e: PolyMat3 = [[TriPoly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let k = 3 * i + j;
            e[i][j] = TriPoly::linear(basis[0][k], basis[1][k], basis[2][k], basis[3][k]);
        }
    }
    let eet = polymat_mul(&e, &polymat_transpose(&e));
    let trace = eet[0][0] + eet[1][1] + eet[2][2];
    let eete = polymat_mul(&eet, &e);
    let mut equations = vec![polymat_det(&e)];
    for i in 0..3 {
        for j in 0..3 {
            equations.push(eete[i][j].scale(2.0) - trace.mul(&e[i][j]));
        }
    }

    let mut a = SMatrix::<f64, 10, 10>::zeros();
    let mut b = SMatrix::<f64, 10, 10>::zeros();
    for (r, eq) in equations.iter().enumerate() {
        for (c, &(i, j, k)) in CUBIC.iter().enumerate() {
            a[(r, c)] = eq.coeff(i, j, k);
        }
        for (c, &(i, j, k)) in BASIS.iter().enumerate() {
            b[(r, c)] = eq.coeff(i, j, k);
        }
    }
    let lu = a.lu();
    if !lu.is_invertible() {
        return Vec::new();
    }
    let Some(c) = lu.solve(&b) else {
        return Vec::new();
    };
    if !c.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }

    // Multiplication by x on the quotient basis.
    let mut action = DMatrix::<f64>::zeros(10, 10);
    for i in 0..6 {
        for j in 0..10 {
            action[(i, j)] = -c[(i, j)];
        }
    }
    action[(6, 0)] = 1.0;
    action[(7, 1)] = 1.0;
    action[(8, 2)] = 1.0;
    action[(9, 6)] = 1.0;

    let Some(schur) = nalgebra::Schur::try_new(action.clone(), f64::EPSILON, 10_000) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for z in schur.complex_eigenvalues().iter() {
        if !z.re.is_finite() || z.im.abs() / z.re.abs().max(1.0) >= REAL_ROOT_TOLERANCE {
            continue;
        }
        let mut shifted = action.clone();
        for i in 0..10 {
            shifted[(i, i)] -= z.re;
        }
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let imin = svd.singular_values.imin();
        let v = v_t.row(imin);
        if v[9].abs() < 1e-12 * v.norm() {
            continue;
        }
        let (x, y, zz) = (v[6] / v[9], v[7] / v[9], v[8] / v[9]);
        let mut em = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let k = 3 * i + j;
                em[(i, j)] = x * basis[0][k] + y * basis[1][k] + zz * basis[2][k] + basis[3][k];
            }
        }
        let n = em.norm();
        if n > 0.0 && n.is_finite() {
            out.push(em / n);
        }
    }
    out
}

/// Rotation mapping the bearings of `x1` onto those of `x2` when the
/// sample is explained by a rotation alone (to rounding precision).
fn pure_rotation(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let b1: Vec<Vector3<f64>> = x1.iter().map(|p| p.push(1.0).normalize()).collect();
    let b2: Vec<Vector3<f64>> = x2.iter().map(|p| p.push(1.0).normalize()).collect();
    let h: Matrix3<f64> = b1.iter().zip(&b2).map(|(a, b)| a * b.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v) = (svd.u?, svd.v_t?.transpose());
    let mut d = Matrix3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = orthonormalize(&(v * d * u.transpose()));
    b1.iter().zip(&b2).all(|(a, b)| (r * a - b).norm() < 1e-9).then_some(r)
}

/// Five-point relative pose: one cheirality-consistent pose (unit
/// translation) per essential matrix.
///
/// A sample explained by a pure rotation has no unique essential matrix;
/// the exact rotation is then appended with an arbitrary unit translation.
pub fn solve_5pt_essential(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Vec<Pose> {
    if x1.len() < 5 || x2.len() < 5 {
        return Vec::new();
    }
    let (x1, x2) = (&x1[..5], &x2[..5]);
    let mut poses: Vec<Pose> = solve_5pt_essential_matrices(x1, x2)
        .iter()
        .filter_map(|e| pose_from_essential(e, x1, x2))
        .collect();
    if let Some(r) = pure_rotation(x1, x2) {
        poses.push(Pose::from_approx(&r, Vector3::z()).expect("orthonormalized rotation"));
    }
    poses
}
