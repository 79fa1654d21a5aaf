use nalgebra::{Vector2, Vector3};

use super::{alignment_residual, rigid_align, similarity_align};
use crate::geom::{apply_correction, lift_point, AffineCorrection, CameraModel, Correspondence, Hypothesis, Mode};
use crate::poly::{build_system, solve_system};

/// Admissible focal lengths in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocalGate {
    pub min: f64,
    pub max: f64,
}

impl FocalGate {
    /// Accepts any positive focal.
    pub const OPEN: Self = Self { min: 0.0, max: f64::INFINITY };

    /// `[0.1, 20]` times the image diagonal.
    pub fn from_image_size(width: f64, height: f64) -> Self {
        let diag = width.hypot(height);
        Self { min: 0.1 * diag, max: 20.0 * diag }
    }

    pub fn contains(&self, f: f64) -> bool {
        f.is_finite() && f > 0.0 && f >= self.min && f <= self.max
    }
}

impl Default for FocalGate {
    fn default() -> Self {
        Self::OPEN
    }
}

/// Relative rigid-alignment residual above which an algebraic branch of an
/// over-determined focal sample is discarded as spurious.
const MAX_RELATIVE_ALIGNMENT_RESIDUAL: f64 = 0.05;

fn corrected_depths_positive(sample: &[Correspondence], affine: &AffineCorrection) -> bool {
    sample.iter().all(|c| {
        let (a, b) = apply_correction(c, affine);
        a > 0.0 && b > 0.0
    })
}

fn lift_sample(sample: &[Correspondence], affine: &AffineCorrection, cam1: &CameraModel, cam2: &CameraModel) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    sample
        .iter()
        .map(|c| {
            let (a, b) = apply_correction(c, affine);
            (lift_point(&c.p1, a, cam1), lift_point(&c.p2, b, cam2))
        })
        .unzip()
}

fn scene_extent(points: &[Vector3<f64>]) -> f64 {
    points.iter().map(|p| p.norm()).fold(0.0, f64::max)
}

fn solve_depth(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, mode: Mode, gate: &FocalGate) -> Vec<Hypothesis> {
    let m = mode.depth_sample_size();
    if sample.len() < m {
        return Vec::new();
    }
    let sample = &sample[..m];
    let to_2d = |p: &crate::geom::ImagePoint, cam: &CameraModel| -> Vector2<f64> {
        if mode.has_focals() {
            p - cam.principal_point()
        } else {
            cam.normalize(p)
        }
    };
    let x1: Vec<_> = sample.iter().map(|c| to_2d(&c.p1, cam1)).collect();
    let x2: Vec<_> = sample.iter().map(|c| to_2d(&c.p2, cam2)).collect();
    let d1: Vec<_> = sample.iter().map(|c| c.d1).collect();
    let d2: Vec<_> = sample.iter().map(|c| c.d2).collect();
    let Ok(sys) = build_system(&x1, &x2, &d1, &d2, mode) else {
        return Vec::new();
    };
    let Ok(solutions) = solve_system(&sys) else {
        return Vec::new();
    };

    let mut out = Vec::new();
    for sol in solutions {
        if !(sol.gamma > 0.0) {
            continue;
        }
        let affine = AffineCorrection::new(sol.gamma.sqrt(), sol.beta1, sol.beta2);
        if !corrected_depths_positive(sample, &affine) {
            continue;
        }
        let focals = match (sol.omega1, sol.omega2) {
            (Some(w1), Some(w2)) => {
                if !(w1 > 0.0 && w2 > 0.0) {
                    continue;
                }
                let (f1, f2) = (1.0 / w1.sqrt(), 1.0 / w2.sqrt());
                if !(gate.contains(f1) && gate.contains(f2)) {
                    continue;
                }
                Some((f1, f2))
            }
            _ => None,
        };
        let (c1, c2) = match focals {
            Some((f1, f2)) => match (cam1.with_focal(f1), cam2.with_focal(f2)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            },
            None => (*cam1, *cam2),
        };
        let (p1, p2) = lift_sample(sample, &affine, &c1, &c2);
        let Ok(pose) = rigid_align(&p1, &p2) else {
            continue;
        };
        if mode.has_focals() && alignment_residual(&pose, &p1, &p2) > MAX_RELATIVE_ALIGNMENT_RESIDUAL * scene_extent(&p2) {
            continue;
        }
        out.push(match focals {
            Some((f1, f2)) => Hypothesis::with_focals(pose, affine, f1, f2),
            None => Hypothesis::calibrated(pose, affine),
        });
    }
    out
}

/// Three-point solver for calibrated cameras: at most four hypotheses.
pub fn solve_calibrated(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel) -> Vec<Hypothesis> {
    solve_depth(sample, cam1, cam2, Mode::Calibrated, &FocalGate::OPEN)
}

/// Four-point solver for one unknown focal length shared by both images.
///
/// Only the principal points of `cam1`, `cam2` are used. At most eight
/// hypotheses, all with equal positive focals inside `gate`.
pub fn solve_shared_focal(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, gate: &FocalGate) -> Vec<Hypothesis> {
    solve_depth(sample, cam1, cam2, Mode::SharedFocal, gate)
}

/// Four-point solver for two independent unknown focal lengths; at most
/// four hypotheses. Only the principal points of the cameras are used.
pub fn solve_two_focal(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, gate: &FocalGate) -> Vec<Hypothesis> {
    solve_depth(sample, cam1, cam2, Mode::TwoFocal, gate)
}

/// Dispatches to the depth-aware solver of `mode`.
pub fn solve_depth_aware(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, mode: Mode, gate: &FocalGate) -> Vec<Hypothesis> {
    solve_depth(sample, cam1, cam2, mode, gate)
}

/// Calibrated solver without shift modelling: raw priors are lifted and a
/// similarity aligns the two point sets, yielding `alpha` only.
pub fn solve_calibrated_scale_only(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel) -> Vec<Hypothesis> {
    if sample.len() < 3 {
        return Vec::new();
    }
    let sample = &sample[..3];
    if !corrected_depths_positive(sample, &AffineCorrection::IDENTITY) {
        return Vec::new();
    }
    let (p1, p2) = lift_sample(sample, &AffineCorrection::IDENTITY, cam1, cam2);
    // p2_raw ~ s R p1 + c  =>  (1/s) p2_raw ~ R p1 + c/s
    let Ok((s, sim)) = similarity_align(&p1, &p2) else {
        return Vec::new();
    };
    let pose = sim.with_translation(sim.translation() / s);
    vec![Hypothesis::calibrated(pose, AffineCorrection::new(1.0 / s, 0.0, 0.0))]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{pose_error, ImagePoint, Pose};
    use crate::solvers::fixtures::random_scene;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_with_affine(s: &crate::solvers::fixtures::Scene, gt: &AffineCorrection) -> Vec<Correspondence> {
        s.p1.iter()
            .zip(&s.p2)
            .zip(s.z1.iter().zip(&s.z2))
            .map(|((a, b), (z1, z2))| Correspondence::new(*a, *b, z1 - gt.beta1, z2 / gt.alpha - gt.beta2))
            .collect()
    }

    #[test]
    fn identity_sample() {
        let cam = CameraModel::new(500.0, ImagePoint::new(320.0, 240.0)).unwrap();
        // Small baseline so the views differ (identical views are a continuum).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_scene(&mut rng, 3, 500.0, 500.0);
        s.cam1 = cam;
        s.cam2 = cam;
        s.pose = Pose::identity().with_translation(Vector3::new(0.3, 0.0, 0.0));
        s.reproject();
        let sample = sample_with_affine(&s, &AffineCorrection::IDENTITY);
        let hyps = solve_calibrated(&sample, &cam, &cam);
        assert!(hyps.iter().any(|h| {
            let (er, et) = pose_error(&h.pose, &s.pose);
            er < 1e-8 && et < 1e-8 && (h.affine.alpha - 1.0).abs() < 1e-8 && h.affine.beta1.abs() < 1e-8
        }));
    }

    #[test]
    fn calibrated_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let s = random_scene(&mut rng, 3, 600.0, 600.0);
            let gt = AffineCorrection::new(rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let sample = sample_with_affine(&s, &gt);
            let hyps = solve_calibrated(&sample, &s.cam1, &s.cam2);
            assert!(hyps.len() <= 4);
            assert!(hyps.iter().any(|h| pose_error(&h.pose, &s.pose).0 < 1e-6
                && (h.pose.translation() - s.pose.translation()).norm() < 1e-6
                && (h.affine.alpha - gt.alpha).abs() < 1e-6 * gt.alpha));
            for h in &hyps {
                assert!(corrected_depths_positive(&sample, &h.affine));
                let (p1, p2) = lift_sample(&sample, &h.affine, &s.cam1, &s.cam2);
                assert!(alignment_residual(&h.pose, &p1, &p2) < 1e-6 * scene_extent(&p2));
            }
        }
    }

    #[test]
    fn focal_modes_recover_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for mode in [Mode::SharedFocal, Mode::TwoFocal] {
            for _ in 0..100 {
                let fa = rng.random_range(300.0..1500.0);
                let fb = if mode == Mode::SharedFocal { fa } else { rng.random_range(300.0..1500.0) };
                let s = random_scene(&mut rng, 4, fa, fb);
                let gt = AffineCorrection::new(rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                let sample = sample_with_affine(&s, &gt);
                let hyps = solve_depth_aware(&sample, &s.cam1, &s.cam2, mode, &FocalGate::OPEN);
                assert!(hyps.len() <= if mode == Mode::SharedFocal { 8 } else { 4 });
                assert!(hyps.iter().any(|h| pose_error(&h.pose, &s.pose).0 < 1e-6
                    && (h.focal1.unwrap() - fa).abs() < 1e-6 * fa
                    && (h.focal2.unwrap() - fb).abs() < 1e-6 * fb), "{mode}");
                for h in &hyps {
                    assert!(h.focal1.unwrap() > 0.0 && h.focal2.unwrap() > 0.0);
                    if mode == Mode::SharedFocal {
                        assert_eq!(h.focal1, h.focal2);
                    }
                }
            }
        }
    }

    #[test]
    fn focal_gate_prunes() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = random_scene(&mut rng, 4, 800.0, 800.0);
        let sample = sample_with_affine(&s, &AffineCorrection::IDENTITY);
        let gate = FocalGate { min: 10.0, max: 100.0 };
        assert!(solve_shared_focal(&sample, &s.cam1, &s.cam2, &gate).is_empty());
    }

    #[test]
    fn negative_depth_branch_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let s = random_scene(&mut rng, 3, 600.0, 600.0);
        // A shift that makes the truth put one sample behind image 1.
        let zmin = s.z1.iter().cloned().fold(f64::INFINITY, f64::min);
        let gt = AffineCorrection::new(1.0, -(zmin + 0.5), 0.0);
        let mut sample = sample_with_affine(&s, &gt);
        sample[0].d1 = -1.0 - gt.beta1;
        for h in solve_calibrated(&sample, &s.cam1, &s.cam2) {
            assert!(corrected_depths_positive(&sample, &h.affine));
        }
    }

    #[test]
    fn scale_only_recovers_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let s = random_scene(&mut rng, 3, 600.0, 600.0);
        let gt = AffineCorrection::new(1.8, 0.0, 0.0);
        let hyps = solve_calibrated_scale_only(&sample_with_affine(&s, &gt), &s.cam1, &s.cam2);
        assert_eq!(hyps.len(), 1);
        assert!((hyps[0].affine.alpha - 1.8).abs() < 1e-9);
        assert!(pose_error(&hyps[0].pose, &s.pose).0 < 1e-8);
    }
}
