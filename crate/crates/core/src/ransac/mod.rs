//! Hybrid LO-MSAC: each iteration picks either the depth-aware minimal solver
//! or the classic point-based one, scores every hypothesis with the combined
//! depth-reprojection and Sampson MSAC score, and runs local optimization
//! whenever a new best hypothesis appears.

mod score;
mod select;

pub use score::{correspondence_errors, msac_contribution, score_errors, score_hypothesis, CorrespondenceErrors, InlierMasks};
pub use select::{depth_solver_probability, required_iterations, select_solver, InlierRatios, SolverChoice};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    apply_correction, lift_point, AffineCorrection, CameraModel, Correspondence, DepthModel, ErrorThresholds, Hypothesis, Mode, Pose,
};
use crate::refine::{refine, RefinementProblem, ResidualTerms};
use crate::solvers::{
    bougnoux_focals, complete_hypothesis, pose_from_essential, solve_5pt_essential, solve_6pt_shared_focal, solve_7pt_fundamental,
    solve_calibrated_scale_only, solve_depth_aware, solve_p3p, FocalGate,
};

/// One stage of the estimator: both families, depth only, or points only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "H")]
    Hybrid,
    #[serde(rename = "D")]
    Depth,
    #[serde(rename = "P")]
    Point,
}

impl Component {
    pub fn letter(self) -> char {
        match self {
            Component::Hybrid => 'H',
            Component::Depth => 'D',
            Component::Point => 'P',
        }
    }

    /// Residual families used when this component drives scoring or
    /// local optimization.
    pub fn terms(self) -> ResidualTerms {
        match self {
            Component::Hybrid => ResidualTerms::HYBRID,
            Component::Depth => ResidualTerms::DEPTH,
            Component::Point => ResidualTerms::POINT,
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'H' | 'h' => Some(Component::Hybrid),
            'D' | 'd' => Some(Component::Depth),
            'P' | 'p' => Some(Component::Point),
            _ => None,
        }
    }
}

/// Solver / local-optimization / scoring choices, written `S/L/C` with each
/// letter one of `H`, `D`, `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub solver: Component,
    pub lo: Component,
    pub score: Component,
}

impl Variant {
    pub const HYBRID: Self = Self { solver: Component::Hybrid, lo: Component::Hybrid, score: Component::Hybrid };
    pub const DEPTH_ONLY: Self = Self { solver: Component::Depth, lo: Component::Depth, score: Component::Depth };
    pub const POINT_ONLY: Self = Self { solver: Component::Point, lo: Component::Point, score: Component::Point };

    /// The seven combinations of the component ablation.
    pub const ABLATION: [Self; 7] = [
        Self::HYBRID,
        Self { solver: Component::Depth, lo: Component::Hybrid, score: Component::Hybrid },
        Self { solver: Component::Point, lo: Component::Hybrid, score: Component::Hybrid },
        Self { solver: Component::Depth, lo: Component::Depth, score: Component::Hybrid },
        Self { solver: Component::Point, lo: Component::Point, score: Component::Hybrid },
        Self::DEPTH_ONLY,
        Self::POINT_ONLY,
    ];
}

impl Default for Variant {
    fn default() -> Self {
        Self::HYBRID
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.solver.letter(), self.lo.letter(), self.score.letter())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.trim().split('/').collect();
        let parse = |p: &str| {
            let mut chars = p.chars();
            match (chars.next().and_then(Component::from_letter), chars.next()) {
                (Some(c), None) => Some(c),
                _ => None,
            }
        };
        match parts.as_slice() {
            [a, b, c] => match (parse(a), parse(b), parse(c)) {
                (Some(solver), Some(lo), Some(score)) => Ok(Self { solver, lo, score }),
                _ => Err(Error::InvalidConfig(format!("invalid variant '{s}'"))),
            },
            _ => Err(Error::InvalidConfig(format!("invalid variant '{s}', expected e.g. H/H/H"))),
        }
    }
}

/// Settings of one robust estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub mode: Mode,
    pub thresholds: ErrorThresholds,
    pub min_iterations: usize,
    pub max_iterations: usize,
    /// Local-optimization steps per new best hypothesis.
    pub lo_steps: usize,
    pub confidence: f64,
    pub seed: u64,
    /// Lower bound on either solver's selection probability.
    pub solver_floor_prob: f64,
    /// Admissible focal lengths in the uncalibrated modes.
    pub focal_gate: FocalGate,
    pub variant: Variant,
    /// `ScaleOnly` is supported in calibrated mode only.
    pub depth_model: DepthModel,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Calibrated,
            thresholds: ErrorThresholds::default(),
            min_iterations: 1000,
            max_iterations: 10_000,
            lo_steps: 4,
            confidence: 0.9999,
            seed: 0,
            solver_floor_prob: 0.1,
            focal_gate: FocalGate::OPEN,
            variant: Variant::HYBRID,
            depth_model: DepthModel::Affine,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        ErrorThresholds::new(self.thresholds.tau_r, self.thresholds.tau_s, self.thresholds.lambda_s)?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.min_iterations > self.max_iterations {
            return bad(format!("min_iterations {} exceeds max_iterations {}", self.min_iterations, self.max_iterations));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(0.0..=0.5).contains(&self.solver_floor_prob) {
            return bad(format!("solver_floor_prob must lie in [0, 0.5], got {}", self.solver_floor_prob));
        }
        if !(self.focal_gate.min <= self.focal_gate.max) {
            return bad("focal gate is empty".into());
        }
        match self.depth_model {
            DepthModel::Affine => {}
            DepthModel::ScaleOnly if self.mode == Mode::Calibrated => {}
            DepthModel::ScaleOnly => return bad("scale-only depth model requires calibrated mode".into()),
            DepthModel::Fixed => return bad("fixed depth priors are only used by the PnP baseline".into()),
        }
        Ok(())
    }
}

/// How often each solver family ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolverUsage {
    pub depth: usize,
    pub point: usize,
}

/// Result of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    /// `None` when no valid hypothesis was found.
    pub best: Option<Hypothesis>,
    pub masks: InlierMasks,
    /// MSAC score of `best` (pixels^2); `+inf` without a hypothesis.
    pub score: f64,
    pub iterations: usize,
    pub lo_runs: usize,
    pub solver_usage: SolverUsage,
    /// Lowest score among hypotheses produced directly by minimal solvers.
    pub min_sample_score: f64,
    /// Wall-clock seconds.
    pub elapsed: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum DepthSolver {
    Affine,
    ScaleOnly,
    P3p,
}

/// Resolved estimator structure.
struct Plan {
    depth: Option<DepthSolver>,
    point: bool,
    score: ResidualTerms,
    lo: ResidualTerms,
    depth_model: DepthModel,
    /// Use the type-1 ratio and the depth sample size for termination
    /// instead of type 3 with the point sample size.
    terminate_on_type1: bool,
}

impl Plan {
    fn from_config(cfg: &EstimationConfig) -> Self {
        let depth = match cfg.depth_model {
            DepthModel::ScaleOnly => DepthSolver::ScaleOnly,
            _ => DepthSolver::Affine,
        };
        Plan {
            depth: (cfg.variant.solver != Component::Point).then_some(depth),
            point: cfg.variant.solver != Component::Depth,
            score: cfg.variant.score.terms(),
            lo: cfg.variant.lo.terms(),
            depth_model: cfg.depth_model,
            terminate_on_type1: false,
        }
    }

    fn pnp() -> Self {
        Plan {
            depth: Some(DepthSolver::P3p),
            point: false,
            score: ResidualTerms::FORWARD,
            lo: ResidualTerms::FORWARD,
            depth_model: DepthModel::Fixed,
            terminate_on_type1: true,
        }
    }

    fn depth_sample_size(&self, mode: Mode) -> usize {
        match self.depth {
            Some(DepthSolver::Affine) | None => mode.depth_sample_size(),
            Some(DepthSolver::ScaleOnly) | Some(DepthSolver::P3p) => 3,
        }
    }

    fn min_matches(&self, mode: Mode) -> usize {
        let d = if self.depth.is_some() { self.depth_sample_size(mode) } else { 0 };
        let p = if self.point { mode.point_sample_size() } else { 0 };
        d.max(p)
    }
}

/// Robustly estimates pose, depth correction and (per mode) focal lengths.
///
/// In the uncalibrated modes only the principal points of `cam1`, `cam2`
/// are used. Fails on an invalid configuration, on fewer correspondences
/// than the largest minimal sample, and on non-finite input; finding no
/// valid hypothesis is reported through an empty `best`.
pub fn estimate(data: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, cfg: &EstimationConfig) -> Result<EstimationReport> {
    cfg.validate()?;
    run(data, cam1, cam2, cfg, &Plan::from_config(cfg))
}

/// PnP-RANSAC baseline: image-1 priors are taken as metric depth, three-point
/// absolute pose hypotheses are scored by the forward reprojection error
/// only and refined on its inliers. Calibrated mode only.
pub fn estimate_pnp(data: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, cfg: &EstimationConfig) -> Result<EstimationReport> {
    let mut check = *cfg;
    check.depth_model = DepthModel::Affine;
    check.validate()?;
    if cfg.mode != Mode::Calibrated {
        return Err(Error::InvalidConfig("the PnP baseline requires calibrated mode".into()));
    }
    run(data, cam1, cam2, cfg, &Plan::pnp())
}

struct Best {
    hyp: Hypothesis,
    score: f64,
    masks: InlierMasks,
}

fn run(data: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, cfg: &EstimationConfig, plan: &Plan) -> Result<EstimationReport> {
    let start = Instant::now();
    let needed = plan.min_matches(cfg.mode);
    if data.len() < needed {
        return Err(Error::TooFewCorrespondences { needed, got: data.len() });
    }
    if !data.iter().all(Correspondence::is_finite) {
        return Err(Error::Degenerate("non-finite correspondence"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth_m = plan.depth_sample_size(cfg.mode);
    let point_m = cfg.mode.point_sample_size();
    let (term_m, term_ratio): (usize, fn(&InlierRatios) -> f64) = if plan.terminate_on_type1 {
        (depth_m, |r| r.type1)
    } else {
        (point_m, |r| r.type3)
    };

    let mut best: Option<Best> = None;
    let mut ratios: Option<InlierRatios> = None;
    let mut required = usize::MAX;
    let mut usage = SolverUsage::default();
    let mut lo_runs = 0;
    let mut min_sample_score = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if iterations >= cfg.min_iterations && iterations >= required {
            break;
        }
        iterations += 1;

        let choice = match (plan.depth.is_some(), plan.point) {
            (true, true) => select_solver(ratios.as_ref(), depth_m, point_m, cfg.solver_floor_prob, &mut rng),
            (true, false) => SolverChoice::Depth,
            _ => SolverChoice::Point,
        };
        let m = match choice {
            SolverChoice::Depth => {
                usage.depth += 1;
                depth_m
            }
            SolverChoice::Point => {
                usage.point += 1;
                point_m
            }
        };
        let idx = sample(&mut rng, data.len(), m);
        let minimal: Vec<Correspondence> = idx.iter().map(|i| data[i]).collect();
        let hyps = match choice {
            SolverChoice::Depth => depth_hypotheses(&minimal, cam1, cam2, cfg, plan),
            SolverChoice::Point => point_hypotheses(&minimal, cam1, cam2, cfg, plan),
        };

        let mut local: Option<Best> = None;
        for hyp in hyps {
            let (score, masks) = score_hypothesis(&hyp, data, cam1, cam2, &cfg.thresholds, plan.score);
            if score < local.as_ref().map_or(f64::INFINITY, |b| b.score) {
                local = Some(Best { hyp, score, masks });
            }
        }
        let Some(local) = local else {
            continue;
        };
        min_sample_score = min_sample_score.min(local.score);
        if local.score >= best.as_ref().map_or(f64::INFINITY, |b| b.score) {
            continue;
        }

        let improved = local_optimization(local, data, cam1, cam2, cfg, plan);
        lo_runs += 1;
        let r = InlierRatios::from_masks(&improved.masks);
        required = required_iterations(term_ratio(&r), term_m, cfg.confidence);
        ratios = Some(r);
        best = Some(improved);
    }

    Ok(match best {
        Some(b) => EstimationReport {
            best: Some(b.hyp),
            masks: b.masks,
            score: b.score,
            iterations,
            lo_runs,
            solver_usage: usage,
            min_sample_score,
            elapsed: start.elapsed().as_secs_f64(),
        },
        None => EstimationReport {
            best: None,
            masks: InlierMasks::empty(data.len()),
            score: f64::INFINITY,
            iterations,
            lo_runs,
            solver_usage: usage,
            min_sample_score,
            elapsed: start.elapsed().as_secs_f64(),
        },
    })
}

/// Enough residuals to constrain the refinement.
fn refinable(masks: &InlierMasks, terms: ResidualTerms) -> bool {
    let [c1, c2, c3] = masks.counts();
    let depth = (if terms.forward { c1 } else { 0 }) + (if terms.backward { c2 } else { 0 });
    (terms.epipolar && c3 >= 4) || depth >= 3
}

fn local_optimization(
    mut best: Best,
    data: &[Correspondence],
    cam1: &CameraModel,
    cam2: &CameraModel,
    cfg: &EstimationConfig,
    plan: &Plan,
) -> Best {
    for _ in 0..cfg.lo_steps {
        if !refinable(&best.masks, plan.lo) {
            break;
        }
        let problem = RefinementProblem {
            data,
            masks: &best.masks,
            initial: best.hyp,
            cam1: *cam1,
            cam2: *cam2,
            thresholds: cfg.thresholds,
            mode: cfg.mode,
            terms: plan.lo,
            depth_model: plan.depth_model,
        };
        let mut hyp = refine(&problem).hypothesis;
        if !plan.lo.forward && !plan.lo.backward && plan.depth_model != DepthModel::Fixed {
            if let Some(h) = refit_depth(&hyp, data, &best.masks.type3, cam1, cam2, plan.depth_model) {
                hyp = h;
            }
        }
        let (score, masks) = score_hypothesis(&hyp, data, cam1, cam2, &cfg.thresholds, plan.score);
        if score < best.score {
            best = Best { hyp, score, masks };
        } else {
            break;
        }
    }
    best
}

/// Re-fits the depth correction of a hypothesis on the given inliers.
fn refit_depth(
    hyp: &Hypothesis,
    data: &[Correspondence],
    inliers: &[bool],
    cam1: &CameraModel,
    cam2: &CameraModel,
    depth_model: DepthModel,
) -> Option<Hypothesis> {
    let subset: Vec<Correspondence> = data.iter().zip(inliers).filter(|(_, &b)| b).map(|(c, _)| *c).collect();
    let (c1, c2) = hyp.cameras(cam1, cam2).ok()?;
    let focals = hyp.focal1.zip(hyp.focal2);
    complete_hypothesis(&subset, &hyp.pose, &c1, &c2, focals, depth_model == DepthModel::Affine).ok()
}

fn depth_hypotheses(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, cfg: &EstimationConfig, plan: &Plan) -> Vec<Hypothesis> {
    match plan.depth {
        Some(DepthSolver::Affine) | None => solve_depth_aware(sample, cam1, cam2, cfg.mode, &cfg.focal_gate),
        Some(DepthSolver::ScaleOnly) => solve_calibrated_scale_only(sample, cam1, cam2),
        Some(DepthSolver::P3p) => {
            if !sample.iter().all(|c| apply_correction(c, &AffineCorrection::IDENTITY).0 > 0.0) {
                return Vec::new();
            }
            let world: Vec<_> = sample.iter().map(|c| lift_point(&c.p1, c.d1, cam1)).collect();
            let image: Vec<_> = sample.iter().map(|c| cam2.normalize(&c.p2)).collect();
            solve_p3p(&world, &image)
                .into_iter()
                .map(|pose| Hypothesis::calibrated(pose, AffineCorrection::IDENTITY))
                .collect()
        }
    }
}

/// Completes an up-to-scale pose from a point solver with a depth
/// correction fitted on the sample; falls back to uncorrected priors when
/// the fit fails.
fn complete(sample: &[Correspondence], pose: Pose, c1: &CameraModel, c2: &CameraModel, focals: Option<(f64, f64)>, plan: &Plan) -> Hypothesis {
    complete_hypothesis(sample, &pose, c1, c2, focals, plan.depth_model == DepthModel::Affine).unwrap_or_else(|_| match focals {
        Some((f1, f2)) => Hypothesis::with_focals(pose, AffineCorrection::IDENTITY, f1, f2),
        None => Hypothesis::calibrated(pose, AffineCorrection::IDENTITY),
    })
}

fn point_hypotheses(sample: &[Correspondence], cam1: &CameraModel, cam2: &CameraModel, cfg: &EstimationConfig, plan: &Plan) -> Vec<Hypothesis> {
    let centered = |cam: &CameraModel, pick: fn(&Correspondence) -> nalgebra::Point2<f64>| -> Vec<Vector2<f64>> {
        sample.iter().map(|c| pick(c) - cam.principal_point()).collect()
    };
    match cfg.mode {
        Mode::Calibrated => {
            let x1: Vec<_> = sample.iter().map(|c| cam1.normalize(&c.p1)).collect();
            let x2: Vec<_> = sample.iter().map(|c| cam2.normalize(&c.p2)).collect();
            solve_5pt_essential(&x1, &x2)
                .into_iter()
                .map(|pose| complete(sample, pose, cam1, cam2, None, plan))
                .collect()
        }
        Mode::SharedFocal => {
            let (x1, x2) = (centered(cam1, |c| c.p1), centered(cam2, |c| c.p2));
            solve_6pt_shared_focal(&x1, &x2)
                .into_iter()
                .filter(|(_, f)| cfg.focal_gate.contains(*f))
                .filter_map(|(pose, f)| {
                    let (c1, c2) = (cam1.with_focal(f).ok()?, cam2.with_focal(f).ok()?);
                    Some(complete(sample, pose, &c1, &c2, Some((f, f)), plan))
                })
                .collect()
        }
        Mode::TwoFocal => {
            let x1: Vec<_> = sample.iter().map(|c| c.p1.coords).collect();
            let x2: Vec<_> = sample.iter().map(|c| c.p2.coords).collect();
            let mut out = Vec::new();
            for fm in solve_7pt_fundamental(&x1, &x2) {
                let Some((f1, f2)) = bougnoux_focals(&fm, &cam1.principal_point(), &cam2.principal_point()) else {
                    continue;
                };
                if !(cfg.focal_gate.contains(f1) && cfg.focal_gate.contains(f2)) {
                    continue;
                }
                let (Ok(c1), Ok(c2)) = (cam1.with_focal(f1), cam2.with_focal(f2)) else {
                    continue;
                };
                let e: Matrix3<f64> = c2.matrix().transpose() * fm.matrix * c1.matrix();
                let n1: Vec<_> = sample.iter().map(|c| c1.normalize(&c.p1)).collect();
                let n2: Vec<_> = sample.iter().map(|c| c2.normalize(&c.p2)).collect();
                if let Some(pose) = pose_from_essential(&e, &n1, &n2) {
                    out.push(complete(sample, pose, &c1, &c2, Some((f1, f2)), plan));
                }
            }
            out
        }
    }
}
