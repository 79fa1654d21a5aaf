use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2};

use super::{epipolar_null_space, pose_from_essential};
use crate::geom::Pose;
use crate::poly::{polymat_det, polymat_mul, polymat_transpose, PolyMat3, TriPoly, REAL_ROOT_TOLERANCE};

/// Monomials in `(x, y)` that the hidden-variable matrix acts on.
const MONOMIALS: [(usize, usize); 10] = [(3, 0), (2, 1), (1, 2), (0, 3), (2, 0), (1, 1), (0, 2), (1, 0), (0, 1), (0, 0)];

/// Six-point relative pose with one unknown focal length shared by both
/// cameras.
///
/// Inputs are pixel coordinates relative to the principal point. Each
/// solution is a cheirality-consistent pose (unit translation) and the
/// focal length in pixels. Uses the hidden-variable formulation in
/// `w = 1/f^2`: writing `F = x F1 + y F2 + F3`, the rank and trace
/// constraints become `C(w) m(x, y) = 0` with `C` quadratic in `w`.
pub fn solve_6pt_shared_focal(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Vec<(Pose, f64)> {
    if x1.len() < 6 || x2.len() < 6 {
        return Vec::new();
    }
    let (x1, x2) = (&x1[..6], &x2[..6]);
    let sq: f64 = x1.iter().chain(x2).map(|p| p.norm_squared()).sum();
    let scale = (sq / 12.0).sqrt();
    if !(scale > 0.0 && scale.is_finite()) {
        return Vec::new();
    }
    let y1: Vec<_> = x1.iter().map(|p| p / scale).collect();
    let y2: Vec<_> = x2.iter().map(|p| p / scale).collect();
    let Some(basis) = epipolar_null_space(&y1, &y2, 3) else {
        return Vec::new();
    };

    let mut f: PolyMat3 = [[TriPoly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let k = 3 * i + j;
            f[i][j] = TriPoly::linear(basis[0][k], basis[1][k], 0.0, basis[2][k]);
        }
    }
    let mut omega: PolyMat3 = [[TriPoly::zero(); 3]; 3];
    omega[0][0] = TriPoly::constant(1.0);
    omega[1][1] = TriPoly::constant(1.0);
    omega[2][2] = TriPoly::monomial(1.0, 0, 0, 1);

    let fo = polymat_mul(&f, &omega);
    let fofto = polymat_mul(&polymat_mul(&fo, &polymat_transpose(&f)), &omega);
    let trace = fofto[0][0] + fofto[1][1] + fofto[2][2];
    let cubic = polymat_mul(&fofto, &f);
    let mut equations = vec![polymat_det(&f)];
    for i in 0..3 {
        for j in 0..3 {
            equations.push(cubic[i][j].scale(2.0) - trace.mul(&f[i][j]));
        }
    }
    let mut c = [SMatrix::<f64, 10, 10>::zeros(); 3];
    for (r, eq) in equations.iter().enumerate() {
        for (col, &(a, b)) in MONOMIALS.iter().enumerate() {
            for (p, cp) in c.iter_mut().enumerate() {
                cp[(r, col)] = eq.coeff(a, b, p);
            }
        }
    }

    // Linearize the quadratic eigenproblem around the better-conditioned end:
    // eigenvalue w (invert C2) or 1/w (invert C0).
    let rcond = |m: &SMatrix<f64, 10, 10>| {
        let s = m.singular_values();
        if s.max() > 0.0 {
            s.min() / s.max()
        } else {
            0.0
        }
    };
    let invert_c2 = rcond(&c[2]) > rcond(&c[0]);
    let (lead, mid, tail) = if invert_c2 { (c[2], c[1], c[0]) } else { (c[0], c[1], c[2]) };
    let lu = lead.lu();
    let (Some(a_tail), Some(a_mid)) = (lu.solve(&tail), lu.solve(&mid)) else {
        return Vec::new();
    };
    let mut companion = DMatrix::<f64>::zeros(20, 20);
    for i in 0..10 {
        companion[(i, 10 + i)] = 1.0;
        for j in 0..10 {
            companion[(10 + i, j)] = -a_tail[(i, j)];
            companion[(10 + i, 10 + j)] = -a_mid[(i, j)];
        }
    }
    if !companion.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }
    let Some(schur) = nalgebra::Schur::try_new(companion, f64::EPSILON, 10_000) else {
        return Vec::new();
    };

    let mut out = Vec::new();
    for z in schur.complex_eigenvalues().iter() {
        if !z.re.is_finite() || z.re == 0.0 || z.im.abs() / z.re.abs().max(1.0) >= REAL_ROOT_TOLERANCE {
            continue;
        }
        let w = if invert_c2 { z.re } else { 1.0 / z.re };
        if !(w > 0.0) {
            continue;
        }
        let cw = c[0] + c[1] * w + c[2] * (w * w);
        let svd = cw.svd(false, true);
        let v = svd.v_t.unwrap().row(svd.singular_values.imin()).into_owned();
        if v[9].abs() < 1e-10 * v.norm() {
            continue;
        }
        let (x, y, w) = polish(&c, v[7] / v[9], v[8] / v[9], w);
        if !(w > 0.0) {
            continue;
        }
        let fm = Matrix3::from_fn(|i, j| {
            let k = 3 * i + j;
            x * basis[0][k] + y * basis[1][k] + basis[2][k]
        });
        let focal = 1.0 / w.sqrt();
        let k = Matrix3::from_diagonal(&nalgebra::Vector3::new(focal, focal, 1.0));
        let e = k * fm * k;
        let n1: Vec<_> = y1.iter().map(|p| p / focal).collect();
        let n2: Vec<_> = y2.iter().map(|p| p / focal).collect();
        if let Some(pose) = pose_from_essential(&e, &n1, &n2) {
            out.push((pose, focal * scale));
        }
    }
    out
}

fn monomials(x: f64, y: f64) -> ([f64; 10], [f64; 10], [f64; 10]) {
    let pw = |b: f64, e: usize| if e == 0 { 1.0 } else { b.powi(e as i32) };
    let mut m = [0.0; 10];
    let mut mx = [0.0; 10];
    let mut my = [0.0; 10];
    for (k, &(a, b)) in MONOMIALS.iter().enumerate() {
        m[k] = pw(x, a) * pw(y, b);
        mx[k] = if a > 0 { a as f64 * pw(x, a - 1) * pw(y, b) } else { 0.0 };
        my[k] = if b > 0 { b as f64 * pw(x, a) * pw(y, b - 1) } else { 0.0 };
    }
    (m, mx, my)
}

/// Gauss-Newton steps on the ten constraint equations in `(x, y, w)`,
/// keeping only steps that reduce the residual.
fn polish(c: &[SMatrix<f64, 10, 10>; 3], mut x: f64, mut y: f64, mut w: f64) -> (f64, f64, f64) {
    let residual = |x: f64, y: f64, w: f64| {
        let (m, _, _) = monomials(x, y);
        (c[0] + c[1] * w + c[2] * (w * w)) * SVector::<f64, 10>::from(m)
    };
    let mut r = residual(x, y, w);
    for _ in 0..5 {
        let (m, mx, my) = monomials(x, y);
        let cw = c[0] + c[1] * w + c[2] * (w * w);
        let dcw = c[1] + c[2] * (2.0 * w);
        let mut j = SMatrix::<f64, 10, 3>::zeros();
        j.set_column(0, &(cw * SVector::<f64, 10>::from(mx)));
        j.set_column(1, &(cw * SVector::<f64, 10>::from(my)));
        j.set_column(2, &(dcw * SVector::<f64, 10>::from(m)));
        let Some(step) = j.svd(true, true).solve(&-r, 1e-14).ok() else {
            break;
        };
        let (nx, ny, nw) = (x + step[0], y + step[1], w + step[2]);
        let nr = residual(nx, ny, nw);
        if !(nr.norm() < r.norm()) {
            break;
        }
        (x, y, w, r) = (nx, ny, nw, nr);
    }
    (x, y, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose_error;
    use crate::solvers::fixtures::random_scene;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_pose_and_focal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hits = 0;
        for _ in 0..300 {
            let f = rng.random_range(300.0..1500.0);
            let s = random_scene(&mut rng, 6, f, f);
            let (x1, x2) = s.centered();
            let sols = solve_6pt_shared_focal(&x1, &x2);
            if sols.iter().any(|(p, fe)| {
                let (er, et) = pose_error(p, &s.pose);
                er < 1e-5 && et < 1e-5 && (fe - f).abs() < 1e-5 * f
            }) {
                hits += 1;
            }
        }
        assert!(hits >= 299, "{hits}");
    }

    #[test]
    fn forward_motion_does_not_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = random_scene(&mut rng, 6, 800.0, 800.0);
        s.pose = Pose::identity().with_translation(nalgebra::Vector3::z());
        s.reproject();
        let (x1, x2) = s.centered();
        for (_, f) in solve_6pt_shared_focal(&x1, &x2) {
            assert!(f > 0.0);
        }
    }
}
