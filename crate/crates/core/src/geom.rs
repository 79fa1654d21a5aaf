//! Geometric primitives shared by the solvers, the robust estimator and the
//! benchmark: camera model, pose, depth corrections and error metrics.
//!
//! Conventions: a [`Pose`] maps camera-1 coordinates into camera-2
//! coordinates (`X2 = R X1 + t`). Depth priors are corrected with
//! `d1' = d1 + beta1` and `d2' = alpha (d2 + beta2)`; after correction both
//! views share one metric frame, so the translation is expressed in
//! corrected-depth units.

use nalgebra::{Matrix3, Point2, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ImagePoint = Point2<f64>;

/// Orthonormality tolerance enforced on every [`Pose`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Which intrinsics are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Both cameras fully known.
    Calibrated,
    /// One unknown focal length shared by both images.
    SharedFocal,
    /// Independent unknown focal lengths.
    TwoFocal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Calibrated, Mode::SharedFocal, Mode::TwoFocal];

    /// Correspondences in a minimal sample of the depth-aware solver.
    pub fn depth_sample_size(self) -> usize {
        match self {
            Mode::Calibrated => 3,
            Mode::SharedFocal | Mode::TwoFocal => 4,
        }
    }

    /// Correspondences in a minimal sample of the point-based companion solver.
    pub fn point_sample_size(self) -> usize {
        match self {
            Mode::Calibrated => 5,
            Mode::SharedFocal => 6,
            Mode::TwoFocal => 7,
        }
    }

    pub fn has_focals(self) -> bool {
        self != Mode::Calibrated
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Calibrated => "calibrated",
            Mode::SharedFocal => "shared-focal",
            Mode::TwoFocal => "two-focal",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode '{s}' (expected calibrated, shared-focal or two-focal)")))
    }
}

/// A pixel match together with the raw depth priors sampled at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    pub d1: f64,
    pub d2: f64,
}

impl Correspondence {
    pub fn new(p1: ImagePoint, p2: ImagePoint, d1: f64, d2: f64) -> Self {
        Self { p1, p2, d1, d2 }
    }

    pub fn is_finite(&self) -> bool {
        self.p1.iter().chain(self.p2.iter()).all(|v| v.is_finite())
            && self.d1.is_finite()
            && self.d2.is_finite()
    }

    /// The same match seen from the other image.
    pub fn swapped(&self) -> Self {
        Self::new(self.p2, self.p1, self.d2, self.d1)
    }
}

/// Pinhole camera with square pixels and no skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    focal: f64,
    principal_point: ImagePoint,
}

impl CameraModel {
    pub fn new(focal: f64, principal_point: ImagePoint) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::InvalidFocal(focal));
        }
        Ok(Self { focal, principal_point })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> ImagePoint {
        self.principal_point
    }

    /// Same principal point, different focal length.
    pub fn with_focal(&self, focal: f64) -> Result<Self> {
        Self::new(focal, self.principal_point)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let c = self.principal_point;
        Matrix3::new(self.focal, 0.0, c.x, 0.0, self.focal, c.y, 0.0, 0.0, 1.0)
    }

    /// Normalized image coordinates `K^-1 (p, 1)` without the trailing one.
    pub fn normalize(&self, p: &ImagePoint) -> Vector2<f64> {
        (p - self.principal_point) / self.focal
    }

    pub fn denormalize(&self, x: &Vector2<f64>) -> ImagePoint {
        self.principal_point + x * self.focal
    }
}

/// Rigid motion from camera 1 to camera 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting matrices that are not proper rotations within
    /// [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = rotation_error(&rotation);
        if !(err < ROTATION_TOLERANCE) {
            return Err(Error::NotARotation(err));
        }
        Ok(Self { rotation, translation })
    }

    /// Projects an approximately orthonormal matrix onto SO(3) first.
    pub fn from_approx(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(orthonormalize(rotation), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: orthonormalize(rotation.matrix()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self { rotation: self.rotation, translation }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Essential matrix `[t]x R`.
    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.translation) * self.rotation
    }
}

/// `max |R^T R - I|` plus the deviation of `det R` from one.
pub fn rotation_error(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    if ortho.is_finite() && det.is_finite() {
        ortho.max(det)
    } else {
        f64::INFINITY
    }
}

/// Closest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Scale ratio and per-image shifts applied to raw depth priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCorrection {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl AffineCorrection {
    pub const IDENTITY: Self = Self { alpha: 1.0, beta1: 0.0, beta2: 0.0 };

    pub fn new(alpha: f64, beta1: f64, beta2: f64) -> Self {
        Self { alpha, beta1, beta2 }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha.is_finite() && self.alpha > 0.0 && self.beta1.is_finite() && self.beta2.is_finite()
    }
}

impl Default for AffineCorrection {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Which parts of the depth correction an estimator may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthModel {
    /// Scale and both shifts.
    #[default]
    Affine,
    /// Scale only; shifts stay zero.
    ScaleOnly,
    /// Priors are used as given.
    Fixed,
}

/// A complete model hypothesis: pose, depth correction and, in the
/// uncalibrated modes, the focal lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub pose: Pose,
    pub affine: AffineCorrection,
    pub focal1: Option<f64>,
    pub focal2: Option<f64>,
}

impl Hypothesis {
    pub fn calibrated(pose: Pose, affine: AffineCorrection) -> Self {
        Self { pose, affine, focal1: None, focal2: None }
    }

    pub fn with_focals(pose: Pose, affine: AffineCorrection, focal1: f64, focal2: f64) -> Self {
        Self {
            pose,
            affine,
            focal1: Some(focal1),
            focal2: Some(focal2),
        }
    }

    /// Cameras to use with this hypothesis: its focals override the given ones.
    pub fn cameras(&self, cam1: &CameraModel, cam2: &CameraModel) -> Result<(CameraModel, CameraModel)> {
        let c1 = match self.focal1 {
            Some(f) => cam1.with_focal(f)?,
            None => *cam1,
        };
        let c2 = match self.focal2 {
            Some(f) => cam2.with_focal(f)?,
            None => *cam2,
        };
        Ok((c1, c2))
    }
}

/// Inlier thresholds (pixels, unsquared) and the epipolar term weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorThresholds {
    pub tau_r: f64,
    pub tau_s: f64,
    pub lambda_s: f64,
}

impl ErrorThresholds {
    pub fn new(tau_r: f64, tau_s: f64, lambda_s: f64) -> Result<Self> {
        if !(tau_r > 0.0 && tau_s > 0.0 && lambda_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "thresholds must satisfy tau_r > 0, tau_s > 0, lambda_s >= 0 (got {tau_r}, {tau_s}, {lambda_s})"
            )));
        }
        Ok(Self { tau_r, tau_s, lambda_s })
    }

    pub fn tau_r_sq(&self) -> f64 {
        self.tau_r * self.tau_r
    }

    pub fn tau_s_sq(&self) -> f64 {
        self.tau_s * self.tau_s
    }

    /// Weight of a (squared) Sampson error relative to a squared reprojection
    /// error: `2 lambda_s tau_r^2 / tau_s^2`.
    pub fn sampson_weight(&self) -> f64 {
        2.0 * self.lambda_s * self.tau_r_sq() / self.tau_s_sq()
    }
}

impl Default for ErrorThresholds {
    fn default() -> Self {
        Self { tau_r: 8.0, tau_s: 2.0, lambda_s: 1.0 }
    }
}

/// Back-projects a pixel to the 3D point at the given depth (z equals depth).
pub fn lift_point(p: &ImagePoint, depth: f64, cam: &CameraModel) -> Vector3<f64> {
    let x = cam.normalize(p);
    Vector3::new(x.x * depth, x.y * depth, depth)
}

/// Perspective projection; points with `z <= 0` are rejected.
pub fn project_point(p: &Vector3<f64>, cam: &CameraModel) -> Result<ImagePoint> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(cam.denormalize(&Vector2::new(p.x / p.z, p.y / p.z)))
}

/// Corrected depths `(d1 + beta1, alpha (d2 + beta2))`. No clamping.
pub fn apply_correction(corr: &Correspondence, affine: &AffineCorrection) -> (f64, f64) {
    (corr.d1 + affine.beta1, affine.alpha * (corr.d2 + affine.beta2))
}

/// Squared depth-induced reprojection errors `(1 -> 2, 2 -> 1)` in pixels^2.
///
/// A non-positive corrected depth or a projection behind the target camera
/// yields `+inf`, which every scoring threshold treats as an outlier.
pub fn depth_reprojection_errors(
    corr: &Correspondence,
    hyp: &Hypothesis,
    cam1: &CameraModel,
    cam2: &CameraModel,
) -> (f64, f64) {
    let Ok((cam1, cam2)) = hyp.cameras(cam1, cam2) else {
        return (f64::INFINITY, f64::INFINITY);
    };
    let (d1, d2) = apply_correction(corr, &hyp.affine);
    let r = hyp.pose.rotation();
    let t = hyp.pose.translation();

    let fwd = if d1 > 0.0 {
        let x2 = r * lift_point(&corr.p1, d1, &cam1) + t;
        project_point(&x2, &cam2).map_or(f64::INFINITY, |q| (q - corr.p2).norm_squared())
    } else {
        f64::INFINITY
    };
    let bwd = if d2 > 0.0 {
        let x1 = r.tr_mul(&(lift_point(&corr.p2, d2, &cam2) - t));
        project_point(&x1, &cam1).map_or(f64::INFINITY, |q| (q - corr.p1).norm_squared())
    } else {
        f64::INFINITY
    };
    (fwd, bwd)
}

/// Squared Sampson distance of `(x1, x2)` to the epipolar geometry `F`
/// (`x2^T F x1 = 0`), multiplied by `pixel_scale^2`.
///
/// When `F` relates normalized coordinates, `pixel_scale` converts the error
/// back to pixels. A vanishing gradient gives 0 if the point lies exactly on
/// the constraint and `+inf` otherwise.
pub fn sampson_error(x1: &Vector2<f64>, x2: &Vector2<f64>, f: &Matrix3<f64>, pixel_scale: f64) -> f64 {
    let h1 = x1.push(1.0);
    let h2 = x2.push(1.0);
    let fx1 = f * h1;
    let ftx2 = f.tr_mul(&h2);
    let num = h2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= f64::MIN_POSITIVE {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num * num / den * pixel_scale * pixel_scale
}

/// Fundamental matrix `F = K2^-T E K1^-1` of a hypothesis in pixel
/// coordinates; `None` without baseline, where no epipolar geometry exists.
pub fn pixel_fundamental(hyp: &Hypothesis, cam1: &CameraModel, cam2: &CameraModel) -> Option<Matrix3<f64>> {
    if !(hyp.pose.translation().norm() > 1e-12) {
        return None;
    }
    let (c1, c2) = hyp.cameras(cam1, cam2).ok()?;
    let k1 = c1.matrix().try_inverse()?;
    let k2 = c2.matrix().try_inverse()?;
    Some(k2.transpose() * hyp.pose.essential() * k1)
}

/// Squared Sampson distance in pixels of a correspondence to the epipolar
/// geometry of `hyp`; `+inf` for a hypothesis without baseline.
pub fn hypothesis_sampson_error(corr: &Correspondence, hyp: &Hypothesis, cam1: &CameraModel, cam2: &CameraModel) -> f64 {
    pixel_fundamental(hyp, cam1, cam2).map_or(f64::INFINITY, |f| sampson_error(&corr.p1.coords, &corr.p2.coords, &f, 1.0))
}

/// Angle between two unit-free directions in radians, accurate near zero.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Rotation angle of `R` in radians, accurate near zero.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

const TRANSLATION_EPS: f64 = 1e-12;

/// Rotation and translation-direction errors in degrees.
///
/// The translation error ignores scale; if one translation vanishes it is
/// 180 degrees, if both vanish it is zero.
pub fn pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let eps_r = rotation_angle(&(est.rotation() * gt.rotation().transpose())).to_degrees();
    let (te, tg) = (est.translation(), gt.translation());
    let eps_t = match (te.norm() < TRANSLATION_EPS, tg.norm() < TRANSLATION_EPS) {
        (true, true) => 0.0,
        (false, false) => angle_between(te, tg).to_degrees(),
        _ => 180.0,
    };
    (eps_r, eps_t)
}

/// Area under the cumulative recall curve of `errors` up to each threshold,
/// in percent.
///
/// The recall curve has a vertex at every sorted error (recall counts errors
/// `<=` it) and is integrated with the trapezoidal rule, then held constant
/// up to the threshold. Failed pairs should be passed as `+inf`.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("pose_auc needs at least one error"));
    }
    let mut sorted: Vec<f64> = errors.iter().map(|e| if e.is_nan() { f64::INFINITY } else { *e }).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;

    let mut xs = Vec::with_capacity(sorted.len() + 1);
    let mut ys = Vec::with_capacity(sorted.len() + 1);
    xs.push(0.0);
    ys.push(0.0);
    for (i, e) in sorted.iter().enumerate() {
        xs.push(*e);
        ys.push((i + 1) as f64 / n);
    }

    Ok(thresholds
        .iter()
        .map(|&th| {
            let last = xs.partition_point(|&e| e <= th);
            let mut area = 0.0;
            for i in 1..last {
                area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) * 0.5;
            }
            area += (th - xs[last - 1]) * ys[last - 1];
            100.0 * area / th
        })
        .collect())
}

/// Relative focal error in percent.
pub fn focal_error(f_est: f64, f_gt: f64) -> f64 {
    100.0 * (f_est - f_gt).abs() / f_gt
}

/// Pair focal error: the worse of the two per-camera errors.
pub fn pair_focal_error(est: (f64, f64), gt: (f64, f64)) -> f64 {
    focal_error(est.0, gt.0).max(focal_error(est.1, gt.1))
}
