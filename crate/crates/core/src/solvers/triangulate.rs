use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geom::{AffineCorrection, CameraModel, Correspondence, Hypothesis, Pose};

/// Midpoint triangulation of a normalized correspondence under `pose`.
///
/// Returns the point in camera-1 coordinates, or `None` when the rays are
/// (numerically) parallel.
pub fn triangulate_midpoint(x1: &Vector2<f64>, x2: &Vector2<f64>, pose: &Pose) -> Option<Vector3<f64>> {
    let r = pose.rotation();
    let d1 = x1.push(1.0);
    let d2 = r.tr_mul(&x2.push(1.0));
    let c2 = -r.tr_mul(pose.translation());
    let (a, b, c) = (d1.dot(&d1), d1.dot(&d2), d2.dot(&d2));
    let (e, g) = (d1.dot(&c2), d2.dot(&c2));
    let det = b * b - a * c;
    if det.abs() <= 1e-12 * a * c {
        return None;
    }
    let l1 = (b * g - e * c) / det;
    let l2 = (a * g - b * e) / det;
    Some((d1 * l1 + c2 + d2 * l2) * 0.5)
}

/// Least-squares line `z ~ a d + b`.
pub fn fit_affine_depth(d: &[f64], z: &[f64]) -> Result<(f64, f64)> {
    if d.len() != z.len() || d.len() < 2 {
        return Err(Error::FitFailed("need at least two depth samples"));
    }
    let n = d.len() as f64;
    let (md, mz) = (d.iter().sum::<f64>() / n, z.iter().sum::<f64>() / n);
    let var: f64 = d.iter().map(|v| (v - md).powi(2)).sum();
    let cov: f64 = d.iter().zip(z).map(|(a, b)| (a - md) * (b - mz)).sum();
    let spread = d.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if var <= 1e-20 * spread * spread * n {
        return Err(Error::FitFailed("depth priors have no spread"));
    }
    let a = cov / var;
    Ok((a, mz - a * md))
}

/// Least-squares proportional fit `z ~ a d`.
pub fn fit_scale_only(d: &[f64], z: &[f64]) -> Result<f64> {
    let dd: f64 = d.iter().map(|v| v * v).sum();
    if d.is_empty() || !(dd > 0.0) {
        return Err(Error::FitFailed("depth priors are all zero"));
    }
    Ok(d.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / dd)
}

/// Result of fitting depth priors to triangulated depths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShiftFit {
    pub affine: AffineCorrection,
    /// Fitted scale `a1` of image 1: the corrected-depth frame equals the
    /// triangulation frame divided by this factor.
    pub depth_scale: f64,
}

/// Triangulates `matches` under `pose` and fits `z_i ~ a_i d_i + b_i` per
/// image, returning `alpha = a2/a1`, `beta_i = b_i/a_i`.
///
/// With `model_shift = false` the shifts are fixed at zero and only the
/// scales are fitted. Only points in front of both cameras are used.
pub fn fit_scale_shift(
    matches: &[Correspondence],
    pose: &Pose,
    cam1: &CameraModel,
    cam2: &CameraModel,
    model_shift: bool,
) -> Result<ScaleShiftFit> {
    if !(pose.translation().norm() > 1e-12) {
        return Err(Error::FitFailed("zero baseline"));
    }
    let mut d1 = Vec::with_capacity(matches.len());
    let mut d2 = Vec::with_capacity(matches.len());
    let mut z1 = Vec::with_capacity(matches.len());
    let mut z2 = Vec::with_capacity(matches.len());
    for m in matches {
        let Some(x) = triangulate_midpoint(&cam1.normalize(&m.p1), &cam2.normalize(&m.p2), pose) else {
            continue;
        };
        let y = pose.transform(&x);
        if x.z > 0.0 && y.z > 0.0 {
            d1.push(m.d1);
            d2.push(m.d2);
            z1.push(x.z);
            z2.push(y.z);
        }
    }
    if d1.len() < 2 {
        return Err(Error::FitFailed("fewer than two points in front of both cameras"));
    }
    let ((a1, b1), (a2, b2)) = if model_shift {
        (fit_affine_depth(&d1, &z1)?, fit_affine_depth(&d2, &z2)?)
    } else {
        ((fit_scale_only(&d1, &z1)?, 0.0), (fit_scale_only(&d2, &z2)?, 0.0))
    };
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::FitFailed("non-positive fitted scale"));
    }
    Ok(ScaleShiftFit {
        affine: AffineCorrection::new(a2 / a1, b1 / a1, b2 / a2),
        depth_scale: a1,
    })
}

/// Completes an up-to-scale pose with a depth correction fitted on `matches`,
/// expressing the translation in corrected-depth units.
pub fn complete_hypothesis(
    matches: &[Correspondence],
    pose: &Pose,
    cam1: &CameraModel,
    cam2: &CameraModel,
    focals: Option<(f64, f64)>,
    model_shift: bool,
) -> Result<Hypothesis> {
    let fit = fit_scale_shift(matches, pose, cam1, cam2, model_shift)?;
    let pose = pose.with_translation(pose.translation() / fit.depth_scale);
    Ok(match focals {
        Some((f1, f2)) => Hypothesis::with_focals(pose, fit.affine, f1, f2),
        None => Hypothesis::calibrated(pose, fit.affine),
    })
}
