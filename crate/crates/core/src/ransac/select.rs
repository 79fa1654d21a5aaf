use rand::Rng;
use serde::{Deserialize, Serialize};

use super::InlierMasks;

/// Running inlier-ratio estimates per data type, plus the fraction of
/// correspondences that are inliers for all three types at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InlierRatios {
    pub type1: f64,
    pub type2: f64,
    pub type3: f64,
    pub joint: f64,
}

impl InlierRatios {
    /// Ratios for nested inlier sets, where the joint ratio is the smallest
    /// per-type ratio.
    pub fn nested(type1: f64, type2: f64, type3: f64) -> Self {
        Self { type1, type2, type3, joint: type1.min(type2).min(type3) }
    }

    pub fn from_masks(masks: &InlierMasks) -> Self {
        let n = masks.len().max(1) as f64;
        let [c1, c2, c3] = masks.counts();
        Self {
            type1: c1 as f64 / n,
            type2: c2 as f64 / n,
            type3: c3 as f64 / n,
            joint: masks.joint_count() as f64 / n,
        }
    }
}

/// Which minimal solver an iteration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    Depth,
    Point,
}

/// Probability of choosing the depth-aware solver.
///
/// Without statistics both solvers are equally likely. Otherwise each solver
/// is weighted by the estimated probability that its minimal sample is
/// all-inlier: `joint^M` for the depth solver (its correspondences must be
/// inliers for all three data types) and `type3^M_pt` for the point solver.
/// The normalized probability is clamped to `[floor, 1 - floor]`.
pub fn depth_solver_probability(ratios: Option<&InlierRatios>, depth_sample: usize, point_sample: usize, floor: f64) -> f64 {
    let Some(r) = ratios else {
        return 0.5;
    };
    let wd = r.joint.clamp(0.0, 1.0).powi(depth_sample as i32);
    let wp = r.type3.clamp(0.0, 1.0).powi(point_sample as i32);
    let p = if wd + wp > 0.0 { wd / (wd + wp) } else { 0.5 };
    let floor = floor.clamp(0.0, 0.5);
    p.clamp(floor, 1.0 - floor)
}

/// Draws the solver for the next iteration.
pub fn select_solver<R: Rng>(ratios: Option<&InlierRatios>, depth_sample: usize, point_sample: usize, floor: f64, rng: &mut R) -> SolverChoice {
    if rng.random::<f64>() < depth_solver_probability(ratios, depth_sample, point_sample, floor) {
        SolverChoice::Depth
    } else {
        SolverChoice::Point
    }
}

/// Iterations needed to draw an all-inlier sample of size `m` with the given
/// confidence, for inlier ratio `ratio`.
pub fn required_iterations(ratio: f64, m: usize, confidence: f64) -> usize {
    let p = ratio.clamp(0.0, 1.0).powi(m as i32);
    if p >= 1.0 {
        return 0;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if k.is_finite() && k < usize::MAX as f64 {
        k.ceil() as usize
    } else {
        usize::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_without_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let depth = (0..n).filter(|_| select_solver(None, 3, 5, 0.1, &mut rng) == SolverChoice::Depth).count();
        // Three standard deviations of a fair coin over 10,000 draws.
        assert!((depth as f64 / n as f64 - 0.5).abs() < 0.015, "{depth}");
    }

    #[test]
    fn useless_depth_favors_point_solver() {
        let r = InlierRatios::nested(0.0, 0.0, 0.9);
        let p = depth_solver_probability(Some(&r), 3, 5, 0.1);
        assert!(1.0 - p >= 1.0 - 0.1);
    }

    #[test]
    fn equal_ratios_favor_smaller_sample() {
        let r = InlierRatios::nested(0.9, 0.9, 0.9);
        assert!(depth_solver_probability(Some(&r), 3, 5, 0.1) > 0.5);
        assert!(depth_solver_probability(Some(&r), 4, 7, 0.1) > 0.5);
    }

    #[test]
    fn required_iterations_matches_formula() {
        assert_eq!(required_iterations(1.0, 5, 0.99), 0);
        assert_eq!(required_iterations(0.0, 5, 0.99), usize::MAX);
        let k = required_iterations(0.5, 5, 0.99);
        assert_eq!(k, ((0.01f64).ln() / (1.0 - 0.5f64.powi(5)).ln()).ceil() as usize);
    }
}
