use serde::{Deserialize, Serialize};

use crate::geom::{depth_reprojection_errors, pixel_fundamental, sampson_error, CameraModel, Correspondence, ErrorThresholds, Hypothesis};
use crate::refine::ResidualTerms;

/// Per-data-type inlier sets: `type1` for `(p1, p2, d1)` (forward depth
/// reprojection), `type2` for `(p1, p2, d2)` (backward), `type3` for the
/// epipolar constraint on `(p1, p2)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InlierMasks {
    pub type1: Vec<bool>,
    pub type2: Vec<bool>,
    pub type3: Vec<bool>,
}

impl InlierMasks {
    pub fn empty(n: usize) -> Self {
        Self { type1: vec![false; n], type2: vec![false; n], type3: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { type1: vec![true; n], type2: vec![true; n], type3: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.type3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.type3.is_empty()
    }

    /// Inlier counts per data type.
    pub fn counts(&self) -> [usize; 3] {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        [c(&self.type1), c(&self.type2), c(&self.type3)]
    }

    /// Number of correspondences that are inliers for all three types.
    pub fn joint_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.type1[i] && self.type2[i] && self.type3[i]).count()
    }
}

/// Squared errors of one correspondence under a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceErrors {
    pub forward: f64,
    pub backward: f64,
    pub sampson: f64,
}

/// Truncated MSAC contribution of one correspondence:
/// `min(fwd, tau_r^2) + min(bwd, tau_r^2) + w min(sampson, tau_s^2)`, with
/// `w = 2 lambda_s tau_r^2 / tau_s^2` and the disabled terms omitted.
pub fn msac_contribution(e: &CorrespondenceErrors, thresholds: &ErrorThresholds, terms: ResidualTerms) -> f64 {
    let tr = thresholds.tau_r_sq();
    let mut s = 0.0;
    if terms.forward {
        s += e.forward.min(tr);
    }
    if terms.backward {
        s += e.backward.min(tr);
    }
    if terms.epipolar {
        s += thresholds.sampson_weight() * e.sampson.min(thresholds.tau_s_sq());
    }
    s
}

/// Squared forward/backward reprojection and Sampson errors of every
/// correspondence.
pub fn correspondence_errors(hyp: &Hypothesis, data: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel) -> Vec<CorrespondenceErrors> {
    let f = pixel_fundamental(hyp, cam1, cam2);
    data.iter()
        .map(|c| {
            let (forward, backward) = depth_reprojection_errors(c, hyp, cam1, cam2);
            let sampson = f.map_or(f64::INFINITY, |f| sampson_error(&c.p1.coords, &c.p2.coords, &f, 1.0));
            CorrespondenceErrors { forward, backward, sampson }
        })
        .collect()
}

/// MSAC score (pixels^2, lower is better) over the enabled terms and the
/// inlier masks of all three data types (`error < tau^2`, strict).
///
/// Errors that cannot be evaluated (points behind a camera, vanishing
/// corrected depth) count as saturated outliers.
pub fn score_hypothesis(
    hyp: &Hypothesis,
    data: &[Correspondence],
    cam1: &CameraModel,
    cam2: &CameraModel,
    thresholds: &ErrorThresholds,
    terms: ResidualTerms,
) -> (f64, InlierMasks) {
    score_errors(&correspondence_errors(hyp, data, cam1, cam2), thresholds, terms)
}

/// Score and masks from precomputed per-correspondence errors.
pub fn score_errors(errors: &[CorrespondenceErrors], thresholds: &ErrorThresholds, terms: ResidualTerms) -> (f64, InlierMasks) {
    let mut masks = InlierMasks::empty(errors.len());
    let mut score = 0.0;
    for (i, e) in errors.iter().enumerate() {
        score += msac_contribution(e, thresholds, terms);
        masks.type1[i] = e.forward < thresholds.tau_r_sq();
        masks.type2[i] = e.backward < thresholds.tau_r_sq();
        masks.type3[i] = e.sampson < thresholds.tau_s_sq();
    }
    (score, masks)
}
