use depthpose::ransac::{estimate, estimate_pnp, score_hypothesis, EstimationConfig, EstimationReport, Variant};
use depthpose::refine::ResidualTerms;
use depthpose::synth::{evaluate_hypothesis, generate_pair, SceneSpec, SyntheticPair};
use depthpose::{pose_error, ErrorThresholds, Mode};

fn clean_spec(mode: Mode) -> SceneSpec {
    SceneSpec {
        n_points: 200,
        pixel_noise_sigma: 0.0,
        alpha_range: Some((0.5, 2.0)),
        beta_fraction_range: Some((0.0, 0.5)),
        mode,
        seed: 99,
        ..Default::default()
    }
}

fn run(pair: &SyntheticPair, cfg: &EstimationConfig) -> EstimationReport {
    estimate(&pair.correspondences, &pair.gt_cams.0, &pair.gt_cams.1, cfg).unwrap()
}

#[test]
fn noise_free_calibrated_is_exact() {
    let spec = clean_spec(Mode::Calibrated);
    let cfg = EstimationConfig { min_iterations: 200, ..Default::default() };
    for i in 0..5 {
        let pair = generate_pair(&spec, &mut spec.pair_rng(i)).unwrap();
        let report = run(&pair, &cfg);
        let best = report.best.unwrap();
        let (er, et) = pose_error(&best.pose, &pair.gt_pose);
        assert!(er < 1e-4 && et < 1e-4, "{er} {et}");
        assert_eq!(report.masks.counts(), [200, 200, 200]);
        let e = evaluate_hypothesis(Some(&best), &pair);
        assert!(e.alpha < 1e-6 && e.beta < 1e-6);
    }
}

#[test]
fn noise_free_focal_modes_are_exact() {
    for mode in [Mode::SharedFocal, Mode::TwoFocal] {
        let spec = clean_spec(mode);
        let cfg = EstimationConfig { mode, min_iterations: 200, ..Default::default() };
        for i in 0..3 {
            let pair = generate_pair(&spec, &mut spec.pair_rng(i)).unwrap();
            let report = run(&pair, &cfg);
            let e = evaluate_hypothesis(report.best.as_ref(), &pair);
            assert!(e.rotation < 1e-4 && e.translation < 1e-4, "{mode}: {e:?}");
            assert!(e.focal.unwrap() < 1e-6, "{mode}: {e:?}");
        }
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let spec = SceneSpec { outlier_fraction: 0.3, ..clean_spec(Mode::Calibrated) };
    let pair = generate_pair(&spec, &mut spec.pair_rng(0)).unwrap();
    let cfg = EstimationConfig { seed: 5, min_iterations: 300, ..Default::default() };
    let mut a = run(&pair, &cfg);
    let mut b = run(&pair, &cfg);
    a.elapsed = 0.0;
    b.elapsed = 0.0;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn report_is_consistent() {
    let spec = SceneSpec { outlier_fraction: 0.3, pixel_noise_sigma: 1.0, ..clean_spec(Mode::Calibrated) };
    for mode in Mode::ALL {
        let spec = SceneSpec { mode, ..spec };
        let pair = generate_pair(&spec, &mut spec.pair_rng(3)).unwrap();
        let cfg = EstimationConfig { mode, min_iterations: 300, ..Default::default() };
        let report = run(&pair, &cfg);
        let best = report.best.unwrap();
        let (c1, c2) = pair.gt_cams;
        let (score, masks) = score_hypothesis(&best, &pair.correspondences, &c1, &c2, &cfg.thresholds, ResidualTerms::HYBRID);
        assert!((score - report.score).abs() <= 1e-9 * score);
        assert_eq!(masks, report.masks);
        assert!(report.score <= report.min_sample_score);
        assert!(report.iterations >= cfg.min_iterations);
        assert!(report.lo_runs >= 1);
        assert_eq!(report.solver_usage.depth + report.solver_usage.point, report.iterations);
    }
}

#[test]
fn zero_epipolar_weight_scores_depth_only() {
    let spec = SceneSpec { outlier_fraction: 0.2, pixel_noise_sigma: 1.0, ..clean_spec(Mode::Calibrated) };
    let pair = generate_pair(&spec, &mut spec.pair_rng(1)).unwrap();
    let th = ErrorThresholds::new(8.0, 2.0, 0.0).unwrap();
    let cfg = EstimationConfig { thresholds: th, min_iterations: 300, ..Default::default() };
    let report = run(&pair, &cfg);
    let (c1, c2) = pair.gt_cams;
    let (depth_score, _) = score_hypothesis(&report.best.unwrap(), &pair.correspondences, &c1, &c2, &th, ResidualTerms::DEPTH);
    assert_eq!(depth_score, report.score);
}

#[test]
fn point_only_is_independent_of_epipolar_weight() {
    let spec = SceneSpec { outlier_fraction: 0.2, pixel_noise_sigma: 1.0, ..clean_spec(Mode::Calibrated) };
    let pair = generate_pair(&spec, &mut spec.pair_rng(2)).unwrap();
    let base = EstimationConfig { variant: Variant::POINT_ONLY, min_iterations: 300, ..Default::default() };
    let heavy = EstimationConfig { thresholds: ErrorThresholds::new(8.0, 2.0, 100.0).unwrap(), ..base };
    let (a, b) = (run(&pair, &base), run(&pair, &heavy));
    let (er, et) = pose_error(&a.best.unwrap().pose, &b.best.unwrap().pose);
    assert!(er < 1e-9 && et < 1e-9);
    assert_eq!(a.masks, b.masks);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn pnp_baseline_recovers_clean_pose() {
    let spec = SceneSpec { affine_gt: depthpose::AffineCorrection::IDENTITY, alpha_range: None, beta_fraction_range: None, ..clean_spec(Mode::Calibrated) };
    let pair = generate_pair(&spec, &mut spec.pair_rng(0)).unwrap();
    let cfg = EstimationConfig { min_iterations: 100, ..Default::default() };
    let report = estimate_pnp(&pair.correspondences, &pair.gt_cams.0, &pair.gt_cams.1, &cfg).unwrap();
    let (er, et) = pose_error(&report.best.unwrap().pose, &pair.gt_pose);
    assert!(er < 1e-6 && et < 1e-6);
    assert!(estimate_pnp(&pair.correspondences, &pair.gt_cams.0, &pair.gt_cams.1, &EstimationConfig { mode: Mode::TwoFocal, ..cfg }).is_err());
}

#[test]
fn garbage_data_reports_gracefully() {
    let spec = SceneSpec { outlier_fraction: 1.0, garbage_depth_fraction: 1.0, ..clean_spec(Mode::Calibrated) };
    let pair = generate_pair(&spec, &mut spec.pair_rng(0)).unwrap();
    let cfg = EstimationConfig { min_iterations: 50, max_iterations: 50, ..Default::default() };
    let report = run(&pair, &cfg);
    assert_eq!(report.iterations, 50);
    if report.best.is_none() {
        assert_eq!(report.score, f64::INFINITY);
    }
}
