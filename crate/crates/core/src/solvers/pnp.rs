use nalgebra::{Vector2, Vector3};

use super::rigid_align;
use crate::geom::Pose;
use crate::poly::real_roots;

/// Three-point absolute pose (Grunert): poses mapping the 3D points `world`
/// onto the viewing rays of the normalized image points `image`.
///
/// At most four solutions; candidates placing a point behind the camera are
/// dropped.
pub fn solve_p3p(world: &[Vector3<f64>], image: &[Vector2<f64>]) -> Vec<Pose> {
    if world.len() < 3 || image.len() < 3 {
        return Vec::new();
    }
    let (w, x) = (&world[..3], &image[..3]);
    let j: Vec<Vector3<f64>> = x.iter().map(|p| p.push(1.0).normalize()).collect();
    let a2 = (w[1] - w[2]).norm_squared();
    let b2 = (w[0] - w[2]).norm_squared();
    let c2 = (w[0] - w[1]).norm_squared();
    if !(a2 > 0.0 && b2 > 0.0 && c2 > 0.0) {
        return Vec::new();
    }
    let ca = j[1].dot(&j[2]);
    let cb = j[0].dot(&j[2]);
    let cg = j[0].dot(&j[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca - 4.0 * apc * ca * cb * cg + 2.0 * bma * cg * cg);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut out = Vec::new();
    for v in real_roots(&[a0, a1, a2c, a3, a4]) {
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        let q = 1.0 + v * v - 2.0 * v * cb;
        if !(q > 0.0) {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let (s2, s3) = (u * s1, v * s1);
        if !(s1 > 0.0 && s2 > 0.0 && s3 > 0.0) {
            continue;
        }
        let cam = [j[0] * s1, j[1] * s2, j[2] * s3];
        if let Ok(pose) = rigid_align(w, &cam) {
            out.push(pose);
        }
    }
    out
}
