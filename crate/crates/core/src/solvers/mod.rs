//! Minimal solvers: the depth-aware solvers, the classic point-based
//! companions, rigid alignment and triangulation-based scale/shift fitting.

mod depth;
mod essential;
mod fundamental;
mod pnp;
mod rigid;
mod six_point;
mod triangulate;

pub use depth::{
    solve_calibrated, solve_calibrated_scale_only, solve_depth_aware, solve_shared_focal, solve_two_focal, FocalGate,
};
pub use essential::{cheirality_count, decompose_essential, pose_from_essential, solve_5pt_essential, solve_5pt_essential_matrices};
pub use fundamental::{bougnoux_focals, solve_7pt_fundamental, EpipolarKind, EpipolarMatrix};
pub use pnp::solve_p3p;
pub use rigid::{alignment_residual, rigid_align, similarity_align};
pub use six_point::solve_6pt_shared_focal;
pub use triangulate::{
    complete_hypothesis, fit_affine_depth, fit_scale_only, fit_scale_shift, triangulate_midpoint, ScaleShiftFit,
};

use nalgebra::{SMatrix, Vector2};

/// Basis of the null space of the epipolar design matrix built from the
/// first rows of `x1`, `x2` (`x2^T M x1 = 0`, `M` row-major). Returns `dim`
/// vectors, or `None` if the design matrix has lower rank than expected.
pub(crate) fn epipolar_null_space(x1: &[Vector2<f64>], x2: &[Vector2<f64>], dim: usize) -> Option<Vec<[f64; 9]>> {
    let rows = 9 - dim;
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (r, (p, q)) in x1.iter().zip(x2).take(rows).enumerate() {
        let vals = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (c, v) in vals.into_iter().enumerate() {
            a[(r, c)] = v;
        }
    }
    if !a.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let smax = svd.singular_values[order[0]];
    if !(smax > 0.0) || svd.singular_values[order[rows - 1]] < 1e-10 * smax {
        return None;
    }
    Some(
        order[rows..]
            .iter()
            .map(|&i| {
                let mut v = [0.0; 9];
                for (k, val) in v.iter_mut().enumerate() {
                    *val = v_t[(i, k)];
                }
                v
            })
            .collect(),
    )
}

#[cfg(test)]
pub(crate) mod fixtures {
    use nalgebra::{Rotation3, Vector2, Vector3};
    use rand::Rng;

    use crate::geom::{lift_point, project_point, CameraModel, ImagePoint, Pose};

    /// Noise-free two-view scene with points expressed in camera 1.
    pub struct Scene {
        pub pose: Pose,
        pub cam1: CameraModel,
        pub cam2: CameraModel,
        pub points: Vec<Vector3<f64>>,
        pub p1: Vec<ImagePoint>,
        pub p2: Vec<ImagePoint>,
        pub z1: Vec<f64>,
        pub z2: Vec<f64>,
    }

    impl Scene {
        pub fn reproject(&mut self) {
            self.p1.clear();
            self.p2.clear();
            self.z1.clear();
            self.z2.clear();
            for x in &self.points {
                let y = self.pose.transform(x);
                self.p1.push(project_point(x, &self.cam1).unwrap());
                self.p2.push(project_point(&y, &self.cam2).unwrap());
                self.z1.push(x.z);
                self.z2.push(y.z);
            }
        }

        pub fn normalized(&self) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
            (
                self.p1.iter().map(|p| self.cam1.normalize(p)).collect(),
                self.p2.iter().map(|p| self.cam2.normalize(p)).collect(),
            )
        }

        pub fn centered(&self) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
            (
                self.p1.iter().map(|p| p - self.cam1.principal_point()).collect(),
                self.p2.iter().map(|p| p - self.cam2.principal_point()).collect(),
            )
        }
    }

    pub fn random_scene<R: Rng>(rng: &mut R, n: usize, f1: f64, f2: f64) -> Scene {
        let cam1 = CameraModel::new(f1, ImagePoint::new(rng.random_range(300.0..340.0), rng.random_range(220.0..260.0))).unwrap();
        let cam2 = CameraModel::new(f2, ImagePoint::new(rng.random_range(300.0..340.0), rng.random_range(220.0..260.0))).unwrap();
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = Rotation3::new(axis.normalize() * rng.random_range(0.05..0.4));
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let pose = Pose::from_rotation(rot, dir.normalize() * rng.random_range(0.5..2.0));
        let mut points = Vec::with_capacity(n);
        while points.len() < n {
            let p = ImagePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let x = lift_point(&p, rng.random_range(2.0..10.0), &cam1);
            if pose.transform(&x).z > 0.5 {
                points.push(x);
            }
        }
        let mut s = Scene { pose, cam1, cam2, points, p1: vec![], p2: vec![], z1: vec![], z2: vec![] };
        s.reproject();
        s
    }
}
