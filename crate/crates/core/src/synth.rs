//! Synthetic two-view scenes with corrupted depth priors, and the
//! experiment drivers built on them: the shift-magnitude study, the
//! hybrid-component ablation and a pixel-noise sweep.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    focal_error, lift_point, pose_auc, pose_error, project_point, AffineCorrection, CameraModel, Correspondence, DepthModel, Hypothesis,
    ImagePoint, Mode, Pose,
};
use crate::ransac::{estimate, estimate_pnp, EstimationConfig, Variant};

/// Parameters of a synthetic pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    /// Metric depth range in camera 1.
    pub depth_range: (f64, f64),
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Correction the estimator must recover (before any extra shift).
    pub affine_gt: AffineCorrection,
    /// When set, `alpha` is drawn from this range per pair.
    pub alpha_range: Option<(f64, f64)>,
    /// When set, `beta1`, `beta2` are drawn per pair with magnitude in this
    /// range, as a fraction of the median prior depth, and random sign.
    pub beta_fraction_range: Option<(f64, f64)>,
    /// Each prior map is shifted by this fraction of its median.
    pub gt_shift_fraction: f64,
    /// Focal lengths in pixels; both views share one in calibrated and
    /// shared-focal mode.
    pub focal_range: (f64, f64),
    pub baseline_range: (f64, f64),
    /// Rotation angle in degrees.
    pub rotation_range: (f64, f64),
    pub image_size: (f64, f64),
    pub mode: Mode,
    /// Standard deviation of multiplicative log-normal prior noise.
    pub depth_noise_sigma: f64,
    /// Probability that a pair's priors are replaced by random values.
    pub garbage_depth_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 200,
            depth_range: (2.0, 10.0),
            pixel_noise_sigma: 1.0,
            outlier_fraction: 0.0,
            affine_gt: AffineCorrection::IDENTITY,
            alpha_range: None,
            beta_fraction_range: None,
            gt_shift_fraction: 0.0,
            focal_range: (500.0, 700.0),
            baseline_range: (0.5, 1.5),
            rotation_range: (5.0, 20.0),
            image_size: (640.0, 480.0),
            mode: Mode::Calibrated,
            depth_noise_sigma: 0.0,
            garbage_depth_fraction: 0.0,
            seed: 0,
        }
    }
}

fn valid_range(r: (f64, f64), min: f64) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 >= min && r.0 <= r.1
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 < r.1 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        if !valid_range(self.depth_range, f64::MIN_POSITIVE) {
            return bad("depth_range must be a positive nonempty range");
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.depth_noise_sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        for f in [self.outlier_fraction, self.gt_shift_fraction, self.garbage_depth_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        if !self.affine_gt.is_valid() {
            return bad("affine_gt needs a positive finite alpha");
        }
        if self.alpha_range.is_some_and(|r| !valid_range(r, f64::MIN_POSITIVE)) {
            return bad("alpha_range must be a positive nonempty range");
        }
        if self.beta_fraction_range.is_some_and(|r| !valid_range(r, 0.0)) {
            return bad("beta_fraction_range must be a non-negative nonempty range");
        }
        if !valid_range(self.focal_range, f64::MIN_POSITIVE) {
            return bad("focal_range must be a positive nonempty range");
        }
        if !valid_range(self.baseline_range, 0.0) || !valid_range(self.rotation_range, 0.0) {
            return bad("baseline and rotation ranges must be non-negative nonempty ranges");
        }
        if !(self.image_size.0 > 0.0 && self.image_size.1 > 0.0) {
            return bad("image_size must be positive");
        }
        Ok(())
    }

    /// Random generator for pair `index` of a run seeded with `self.seed`.
    pub fn pair_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// A generated pair with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub correspondences: Vec<Correspondence>,
    /// Pose with the translation in corrected-depth units.
    pub gt_pose: Pose,
    pub gt_cams: (CameraModel, CameraModel),
    pub gt_affine: AffineCorrection,
    pub outlier_mask: Vec<bool>,
    /// True when the pair's priors were replaced by random values.
    pub garbage_depth: bool,
}

impl SyntheticPair {
    /// Ground truth as a hypothesis of the given mode.
    pub fn gt_hypothesis(&self, mode: Mode) -> Hypothesis {
        if mode.has_focals() {
            Hypothesis::with_focals(self.gt_pose, self.gt_affine, self.gt_cams.0.focal(), self.gt_cams.1.focal())
        } else {
            Hypothesis::calibrated(self.gt_pose, self.gt_affine)
        }
    }
}

const MAX_ATTEMPTS: usize = 1000;

/// Generates one pair.
///
/// Points are drawn by picking a pixel in image 1 and a depth in the depth
/// range and are kept when they project inside image 2. Priors are
/// `d1 = z1 - beta1` and `d2 = z2 / alpha - beta2`, so the ground-truth
/// correction maps them back onto metric depth.
pub fn generate_pair<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::from_rng(rng);
    let (w, h) = spec.image_size;
    let pp = ImagePoint::new(w / 2.0, h / 2.0);
    let f1 = draw(&mut rng, spec.focal_range);
    let f2 = if spec.mode == Mode::TwoFocal { draw(&mut rng, spec.focal_range) } else { f1 };
    let cam1 = CameraModel::new(f1, pp)?;
    let cam2 = CameraModel::new(f2, pp)?;

    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = draw(&mut rng, spec.rotation_range).to_radians();
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let baseline = draw(&mut rng, spec.baseline_range);
    let rot = Rotation3::new(Vector3::from(axis) * angle);
    let metric_pose = Pose::from_rotation(rot, Vector3::from(dir) * baseline);

    let inside = |p: &ImagePoint| p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h;
    let mut points = Vec::with_capacity(spec.n_points);
    let mut failures = 0;
    while points.len() < spec.n_points {
        let p = ImagePoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let x = lift_point(&p, draw(&mut rng, spec.depth_range), &cam1);
        let y = metric_pose.transform(&x);
        match project_point(&y, &cam2) {
            Ok(q) if inside(&q) => {
                points.push((p, q, x.z, y.z));
                failures = 0;
            }
            _ => {
                failures += 1;
                if failures >= MAX_ATTEMPTS {
                    return Err(Error::Infeasible(format!("no visible point after {MAX_ATTEMPTS} attempts")));
                }
            }
        }
    }

    let alpha = spec.alpha_range.map_or(spec.affine_gt.alpha, |r| draw(&mut rng, r));
    let (mut beta1, mut beta2) = (spec.affine_gt.beta1, spec.affine_gt.beta2);
    if let Some(r) = spec.beta_fraction_range {
        let z1: Vec<f64> = points.iter().map(|p| p.2).collect();
        let z2: Vec<f64> = points.iter().map(|p| p.3).collect();
        let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta1 = sign(&mut rng) * draw(&mut rng, r) * median(&z1);
        beta2 = sign(&mut rng) * draw(&mut rng, r) * median(&z2) / alpha;
    }
    let log_noise = Normal::new(0.0, spec.depth_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let pixel_noise = Normal::new(0.0, spec.pixel_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut d1: Vec<f64> = Vec::with_capacity(points.len());
    let mut d2: Vec<f64> = Vec::with_capacity(points.len());
    for &(_, _, z1, z2) in &points {
        let (n1, n2) = if spec.depth_noise_sigma > 0.0 {
            (log_noise.sample(&mut rng).exp(), log_noise.sample(&mut rng).exp())
        } else {
            (1.0, 1.0)
        };
        d1.push(z1 * n1 - beta1);
        d2.push(z2 * n2 / alpha - beta2);
    }
    if spec.gt_shift_fraction > 0.0 {
        let s1 = spec.gt_shift_fraction * median(&d1);
        let s2 = spec.gt_shift_fraction * median(&d2);
        d1.iter_mut().for_each(|d| *d += s1);
        d2.iter_mut().for_each(|d| *d += s2);
        beta1 -= s1;
        beta2 -= s2;
    }

    let garbage = spec.garbage_depth_fraction > 0.0 && rng.random::<f64>() < spec.garbage_depth_fraction;
    let (lo, hi) = (
        d1.iter().chain(&d2).copied().fold(f64::INFINITY, f64::min),
        d1.iter().chain(&d2).copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut correspondences = Vec::with_capacity(points.len());
    let mut outlier_mask = Vec::with_capacity(points.len());
    for (i, &(p, q, _, _)) in points.iter().enumerate() {
        let outlier = spec.outlier_fraction > 0.0 && rng.random::<f64>() < spec.outlier_fraction;
        let noisy = |rng: &mut ChaCha8Rng, p: ImagePoint| {
            if spec.pixel_noise_sigma > 0.0 {
                ImagePoint::new(p.x + pixel_noise.sample(rng), p.y + pixel_noise.sample(rng))
            } else {
                p
            }
        };
        let p1 = noisy(&mut rng, p);
        let p2 = if outlier {
            ImagePoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h))
        } else {
            noisy(&mut rng, q)
        };
        let (a, b) = if garbage && lo < hi {
            (rng.random_range(lo..hi), rng.random_range(lo..hi))
        } else {
            (d1[i], d2[i])
        };
        correspondences.push(Correspondence::new(p1, p2, a, b));
        outlier_mask.push(outlier);
    }

    Ok(SyntheticPair {
        correspondences,
        gt_pose: metric_pose,
        gt_cams: (cam1, cam2),
        gt_affine: AffineCorrection::new(alpha, beta1, beta2),
        outlier_mask,
        garbage_depth: garbage,
    })
}

/// Errors of one estimate against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialErrors {
    /// Degrees; 180 when estimation failed.
    pub rotation: f64,
    pub translation: f64,
    /// `|alpha_est / alpha_gt - 1|`.
    pub alpha: f64,
    /// Largest shift error relative to the median corrected prior of its image.
    pub beta: f64,
    /// Largest relative focal error, if focals were estimated.
    pub focal: Option<f64>,
    pub ok: bool,
}

impl TrialErrors {
    pub const FAILED: Self = Self {
        rotation: 180.0,
        translation: 180.0,
        alpha: f64::INFINITY,
        beta: f64::INFINITY,
        focal: None,
        ok: false,
    };

    /// Maximum of rotation and translation error.
    pub fn pose(&self) -> f64 {
        self.rotation.max(self.translation)
    }
}

/// Compares an estimate with a pair's ground truth.
pub fn evaluate_hypothesis(est: Option<&Hypothesis>, pair: &SyntheticPair) -> TrialErrors {
    let Some(h) = est else {
        return TrialErrors::FAILED;
    };
    let (rotation, translation) = pose_error(&h.pose, &pair.gt_pose);
    let gt = &pair.gt_affine;
    let m1 = median(&pair.correspondences.iter().map(|c| (c.d1 + gt.beta1).abs()).collect::<Vec<_>>());
    let m2 = median(&pair.correspondences.iter().map(|c| (c.d2 + gt.beta2).abs()).collect::<Vec<_>>());
    let beta = ((h.affine.beta1 - gt.beta1).abs() / m1).max((h.affine.beta2 - gt.beta2).abs() / m2);
    let focal = h.focal1.zip(h.focal2).map(|(f1, f2)| {
        focal_error(f1, pair.gt_cams.0.focal()).max(focal_error(f2, pair.gt_cams.1.focal()))
    });
    TrialErrors {
        rotation,
        translation,
        alpha: (h.affine.alpha / gt.alpha - 1.0).abs(),
        beta,
        focal,
        ok: true,
    }
}

/// Estimator used in an experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Hybrid estimator with the given variant and full affine model.
    Hybrid(Variant),
    /// Depth-only estimator without shifts (calibrated).
    ScaleOnly,
    /// PnP-RANSAC on image-1 priors (calibrated).
    Pnp,
}

impl Method {
    pub const FULL: Self = Method::Hybrid(Variant::HYBRID);

    pub fn name(&self) -> String {
        match self {
            Method::Hybrid(v) if *v == Variant::HYBRID => "full".into(),
            Method::Hybrid(v) => v.to_string(),
            Method::ScaleOnly => "scale-only".into(),
            Method::Pnp => "pnp".into(),
        }
    }

    /// Runs the method on a pair's data with the pair's ground-truth
    /// principal points (and, in calibrated mode, focals).
    pub fn run(&self, pair: &SyntheticPair, cfg: &EstimationConfig) -> Result<Option<Hypothesis>> {
        let (c1, c2) = &pair.gt_cams;
        let data = &pair.correspondences;
        let report = match self {
            Method::Hybrid(v) => {
                let mut c = *cfg;
                c.variant = *v;
                c.depth_model = DepthModel::Affine;
                estimate(data, c1, c2, &c)?
            }
            Method::ScaleOnly => {
                let mut c = *cfg;
                c.variant = Variant::DEPTH_ONLY;
                c.depth_model = DepthModel::ScaleOnly;
                estimate(data, c1, c2, &c)?
            }
            Method::Pnp => estimate_pnp(data, c1, c2, cfg)?,
        };
        Ok(report.best)
    }
}

/// One trial of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    /// Cell label: shift fraction, corpus name or noise level.
    pub cell: String,
    pub method: String,
    pub trial: usize,
    pub errors: TrialErrors,
}

/// Median errors of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianCell {
    pub cell: String,
    pub parameter: f64,
    pub method: String,
    pub median_rotation: f64,
    pub median_translation: f64,
    pub trials: usize,
}

/// Pose AUCs of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCell {
    pub cell: String,
    pub method: String,
    pub auc5: f64,
    pub auc10: f64,
    pub auc20: f64,
    pub trials: usize,
}

/// Raw records and the summary table of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment<C> {
    pub records: Vec<TrialRecord>,
    pub table: Vec<C>,
}

impl Experiment<MedianCell> {
    pub fn cell(&self, parameter: f64, method: &str) -> Option<&MedianCell> {
        self.table.iter().find(|c| c.parameter == parameter && c.method == method)
    }
}

impl Experiment<AucCell> {
    pub fn cell(&self, cell: &str, method: &str) -> Option<&AucCell> {
        self.table.iter().find(|c| c.cell == cell && c.method == method)
    }
}

/// Runs `methods` on `trials` pairs generated from `spec`. Pair `i` uses
/// the same data for every method. Trials run in parallel on the current
/// rayon pool; results do not depend on the number of threads.
fn run_trials(spec: &SceneSpec, methods: &[Method], trials: usize, cfg: &EstimationConfig) -> Result<Vec<Vec<TrialErrors>>> {
    spec.validate()?;
    let per_trial: Vec<Result<Vec<TrialErrors>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let pair = generate_pair(spec, &mut spec.pair_rng(i as u64))?;
            let mut c = *cfg;
            c.mode = spec.mode;
            c.seed = cfg.seed.wrapping_add(i as u64);
            methods
                .iter()
                .map(|m| Ok(evaluate_hypothesis(m.run(&pair, &c)?.as_ref(), &pair)))
                .collect()
        })
        .collect();
    let per_trial: Vec<Vec<TrialErrors>> = per_trial.into_iter().collect::<Result<_>>()?;
    Ok((0..methods.len()).map(|m| per_trial.iter().map(|t| t[m]).collect()).collect())
}

fn median_cell(cell: String, parameter: f64, method: &Method, errors: &[TrialErrors]) -> MedianCell {
    MedianCell {
        cell,
        parameter,
        method: method.name(),
        median_rotation: median(&errors.iter().map(|e| e.rotation).collect::<Vec<_>>()),
        median_translation: median(&errors.iter().map(|e| e.translation).collect::<Vec<_>>()),
        trials: errors.len(),
    }
}

fn records(experiment: &str, cell: &str, method: &Method, errors: &[TrialErrors]) -> Vec<TrialRecord> {
    errors
        .iter()
        .enumerate()
        .map(|(trial, e)| TrialRecord {
            experiment: experiment.into(),
            cell: cell.into(),
            method: method.name(),
            trial,
            errors: *e,
        })
        .collect()
}

/// Shift-magnitude study: priors are ground-truth depth plus a shift of
/// `fraction` times their median; reports median pose errors per method.
pub fn run_shift_ablation(
    base: &SceneSpec,
    shift_fractions: &[f64],
    methods: &[Method],
    trials: usize,
    cfg: &EstimationConfig,
) -> Result<Experiment<MedianCell>> {
    let mut out = Experiment { records: Vec::new(), table: Vec::new() };
    for &fraction in shift_fractions {
        let spec = SceneSpec { gt_shift_fraction: fraction, ..*base };
        let errors = run_trials(&spec, methods, trials, cfg)?;
        let cell = format!("{fraction}");
        for (m, e) in methods.iter().zip(&errors) {
            out.records.extend(records("shift-ablation", &cell, m, e));
            out.table.push(median_cell(cell.clone(), fraction, m, e));
        }
    }
    Ok(out)
}

/// A corpus of the component ablation: the share of pairs whose priors
/// are garbage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub garbage_depth_fraction: f64,
}

impl Corpus {
    pub fn standard() -> Vec<Corpus> {
        [("perfect", 0.0), ("garbage", 1.0), ("mixed", 0.5)]
            .into_iter()
            .map(|(n, g)| Corpus { name: n.into(), garbage_depth_fraction: g })
            .collect()
    }
}

/// Component ablation: pose AUC@5/10/20 degrees per corpus and variant.
pub fn run_hybrid_ablation(
    base: &SceneSpec,
    corpora: &[Corpus],
    variants: &[Variant],
    trials: usize,
    cfg: &EstimationConfig,
) -> Result<Experiment<AucCell>> {
    let methods: Vec<Method> = variants.iter().map(|v| Method::Hybrid(*v)).collect();
    let mut out = Experiment { records: Vec::new(), table: Vec::new() };
    for corpus in corpora {
        let spec = SceneSpec { garbage_depth_fraction: corpus.garbage_depth_fraction, ..*base };
        let errors = run_trials(&spec, &methods, trials, cfg)?;
        for (m, e) in methods.iter().zip(&errors) {
            out.records.extend(records("hybrid-ablation", &corpus.name, m, e));
            let pose: Vec<f64> = e.iter().map(TrialErrors::pose).collect();
            let auc = pose_auc(&pose, &[5.0, 10.0, 20.0])?;
            out.table.push(AucCell {
                cell: corpus.name.clone(),
                method: m.to_string(),
                auc5: auc[0],
                auc10: auc[1],
                auc20: auc[2],
                trials: e.len(),
            });
        }
    }
    Ok(out)
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Hybrid(v) => write!(f, "{v}"),
            other => f.write_str(&other.name()),
        }
    }
}

/// Median pose errors per pixel-noise level.
pub fn run_noise_sweep(base: &SceneSpec, sigmas: &[f64], methods: &[Method], trials: usize, cfg: &EstimationConfig) -> Result<Experiment<MedianCell>> {
    let mut out = Experiment { records: Vec::new(), table: Vec::new() };
    for &sigma in sigmas {
        let spec = SceneSpec { pixel_noise_sigma: sigma, ..*base };
        let errors = run_trials(&spec, methods, trials, cfg)?;
        let cell = format!("{sigma}");
        for (m, e) in methods.iter().zip(&errors) {
            out.records.extend(records("noise-sweep", &cell, m, e));
            out.table.push(median_cell(cell.clone(), sigma, m, e));
        }
    }
    Ok(out)
}
