use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use depthpose_cli::commands::{evaluate, synthesize};
use depthpose_cli::format::{
    parse_records, read_results, rotation_row_major, to_jsonl, GroundTruthRecord, Intrinsics, PairRecord, ResultRecord, Status,
};
use depthpose::synth::SceneSpec;
use depthpose::{AffineCorrection, Hypothesis, Mode, Pose};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depthpose"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_pairs(dir: &TempDir, name: &str, scene: &SceneSpec, count: usize) -> (PathBuf, Vec<GroundTruthRecord>) {
    let (pairs, gts) = synthesize(scene, count).unwrap();
    let path = dir.path().join(name);
    fs::write(&path, to_jsonl::<(), _>(None, &pairs)).unwrap();
    (path, gts)
}

fn scene(mode: Mode) -> SceneSpec {
    SceneSpec {
        n_points: 100,
        outlier_fraction: 0.2,
        alpha_range: Some((0.5, 2.0)),
        beta_fraction_range: Some((0.0, 0.5)),
        mode,
        ..Default::default()
    }
}

fn results_without_header(path: &Path) -> Vec<ResultRecord> {
    read_results(path).unwrap()
}

#[test]
fn single_calibrated_pair_gives_one_ok_record() {
    let dir = TempDir::new().unwrap();
    let (input, _) = write_pairs(&dir, "pairs.jsonl", &scene(Mode::Calibrated), 1);
    let out = dir.path().join("out.jsonl");
    let (code, _, err) = run(&["estimate", "--input", p(&input), "--output", p(&out), "--seed", "5"]);
    assert_eq!(code, 0, "{err}");
    let res = results_without_header(&out);
    assert_eq!(res.len(), 1);
    assert_eq!(res[0].status, Status::Ok);
    let r = Matrix3::from_row_slice(&res[0].rotation.unwrap());
    assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-6);
    assert!(res[0].elapsed_seconds.is_none());
}

#[test]
fn focal_modes_run_without_intrinsics() {
    for mode in [Mode::SharedFocal, Mode::TwoFocal] {
        let dir = TempDir::new().unwrap();
        let (input, gts) = write_pairs(&dir, "pairs.jsonl", &SceneSpec { pixel_noise_sigma: 0.5, ..scene(mode) }, 2);
        let out = dir.path().join("out.jsonl");
        let (code, _, err) = run(&["estimate", "--input", p(&input), "--output", p(&out), "--mode", mode.as_str()]);
        assert_eq!(code, 0, "{err}");
        let res = results_without_header(&out);
        assert!(res.iter().all(|r| r.status == Status::Ok && r.f1.is_some() && r.f2.is_some()));
        let s = evaluate(&res, &gts).unwrap();
        assert!(s.median_rotation_deg.unwrap() < 1.0, "{mode}: {s:?}");
        assert!(s.median_focal_error_pct.unwrap() < 5.0, "{mode}: {s:?}");
    }
}

#[test]
fn per_pair_failures_do_not_change_exit_code() {
    let dir = TempDir::new().unwrap();
    let k = Intrinsics { focal: 500.0, principal_point: [320.0, 240.0] };
    let mk = |id: &str, n: usize, intrinsics| PairRecord {
        version: 1,
        pair_id: id.into(),
        image_size: [640.0, 480.0, 640.0, 480.0],
        intrinsics,
        matches: (0..n).map(|i| [10.0 * i as f64, 20.0, 30.0, 40.0, 2.0, 3.0]).collect(),
    };
    let pairs = vec![mk("two", 2, Some([k, k])), mk("no-intrinsics", 10, None)];
    let input = dir.path().join("in.jsonl");
    fs::write(&input, to_jsonl::<(), _>(None, &pairs)).unwrap();
    let out = dir.path().join("out.jsonl");
    let (code, _, err) = run(&["estimate", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let res = results_without_header(&out);
    assert_eq!(res.len(), 2);
    assert_eq!(res[0].status, Status::Failed);
    assert!(res[0].message.as_deref().unwrap().contains("too few correspondences"));
    assert_eq!(res[1].status, Status::Failed);
    assert!(res[1].message.as_deref().unwrap().contains("requires intrinsics"));
}

#[test]
fn same_seed_gives_byte_identical_output() {
    let dir = TempDir::new().unwrap();
    let (input, _) = write_pairs(&dir, "pairs.jsonl", &scene(Mode::Calibrated), 4);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    for out in [&a, &b] {
        assert_eq!(run(&["estimate", "--input", p(&input), "--output", p(out), "--seed", "3"]).0, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(run(&["estimate", "--input", p(&input), "--output", p(&c), "--seed", "3", "--threads", "4"]).0, 0);
    assert_eq!(results_without_header(&a), results_without_header(&c));
}

#[test]
fn malformed_record_is_a_parse_error_naming_the_line() {
    let dir = TempDir::new().unwrap();
    let (input, _) = write_pairs(&dir, "pairs.jsonl", &scene(Mode::Calibrated), 2);
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str("{\"version\": 1, \"pair_id\": \"x\"}\n");
    fs::write(&input, text).unwrap();
    let out = dir.path().join("out.jsonl");
    let (code, _, err) = run(&["estimate", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code, 3);
    assert!(err.contains("pairs.jsonl:3:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn out_of_bounds_match_is_rejected() {
    let dir = TempDir::new().unwrap();
    let rec = PairRecord {
        version: 1,
        pair_id: "a".into(),
        image_size: [100.0, 100.0, 100.0, 100.0],
        intrinsics: None,
        matches: vec![[50.0, 50.0, 102.0, 50.0, 1.0, 1.0]],
    };
    let input = dir.path().join("in.jsonl");
    fs::write(&input, to_jsonl::<(), _>(None, &[rec])).unwrap();
    let (code, _, err) = run(&["estimate", "--input", p(&input), "--output", p(&dir.path().join("o"))]);
    assert_eq!(code, 3);
    assert!(err.contains(":1:") && err.contains("outside"), "{err}");
}

#[test]
fn missing_input_and_bad_flags() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let (code, _, err) = run(&["estimate", "--input", p(&missing), "--output", p(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.jsonl"), "{err}");
    assert_eq!(run(&["estimate", "--tau-r", "-1", "--input", "x", "--output", "y"]).0, 1);
    assert_eq!(run(&["estimate", "--mode", "fisheye"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let dir = TempDir::new().unwrap();
    let (input, _) = write_pairs(&dir, "pairs.jsonl", &scene(Mode::Calibrated), 1);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "tau_r = 6.0\nseed = 11\nmin_iters = 200\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let (code, _, err) = run(&["estimate", "--config", p(&cfg), "--input", p(&input), "--output", p(&out), "--seed", "4"]);
    assert_eq!(code, 0, "{err}");
    let header: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["kind"], "header");
    assert_eq!(header["config"]["tau_r"], 6.0);
    assert_eq!(header["config"]["seed"], 4);
    assert_eq!(header["config"]["min_iters"], 200);
    assert_eq!(header["config"]["tau_s"], 2.0);

    fs::write(&cfg, "tau_q = 1\n").unwrap();
    assert_eq!(run(&["estimate", "--config", p(&cfg), "--input", p(&input), "--output", p(&out)]).0, 3);
}

fn gt_record(id: &str, angle_deg: f64) -> GroundTruthRecord {
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), angle_deg.to_radians());
    GroundTruthRecord {
        version: 1,
        pair_id: id.into(),
        rotation: rotation_row_major(r.matrix()),
        translation: [1.0, 0.0, 0.0],
        f1: None,
        f2: None,
        alpha: None,
        beta1: None,
        beta2: None,
    }
}

fn result_for(gt: &GroundTruthRecord, extra_deg: f64) -> ResultRecord {
    let base = Matrix3::from_row_slice(&gt.rotation);
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), extra_deg.to_radians()).matrix() * base;
    let pose = Pose::from_approx(&r, Vector3::from(gt.translation)).unwrap();
    ResultRecord::ok(&gt.pair_id, &Hypothesis::calibrated(pose, AffineCorrection::IDENTITY), [1, 1, 1], 0.0, 1)
}

#[test]
fn eval_examples() {
    let gts: Vec<_> = (0..4).map(|i| gt_record(&format!("p{i}"), 10.0 * i as f64)).collect();
    let exact: Vec<_> = gts.iter().map(|g| result_for(g, 0.0)).collect();
    let s = evaluate(&exact, &gts).unwrap();
    assert!(s.median_rotation_deg.unwrap() < 1e-6 && s.median_translation_deg.unwrap() < 1e-6);
    for a in [s.auc5, s.auc10, s.auc20] {
        assert!((a - 100.0).abs() < 1e-6, "{a}");
    }

    let mut half = exact.clone();
    half[1] = ResultRecord::failed("p1", "x");
    half[3] = ResultRecord::failed("p3", "x");
    let s = evaluate(&half, &gts).unwrap();
    assert_eq!(s.failed, 2);
    assert!(s.auc5 <= 50.0 && s.auc10 <= 50.0 && s.auc20 <= 50.0);

    let two = [gts[0].clone(), gts[1].clone()];
    let s = evaluate(&[result_for(&two[0], 0.0), result_for(&two[1], 10.0)], &two).unwrap();
    assert!((s.auc10 - 75.0).abs() < 1e-6, "{}", s.auc10);

    assert!(evaluate(&exact[..3], &gts).is_err());
    let mut renamed = exact.clone();
    renamed[0].pair_id = "zz".into();
    assert!(evaluate(&renamed, &gts).is_err());
}

#[test]
fn eval_command_reads_estimate_output() {
    let dir = TempDir::new().unwrap();
    let (input, gts) = write_pairs(&dir, "pairs.jsonl", &scene(Mode::Calibrated), 3);
    let gt = dir.path().join("gt.jsonl");
    fs::write(&gt, to_jsonl::<(), _>(None, &gts)).unwrap();
    let out = dir.path().join("out.jsonl");
    assert_eq!(run(&["estimate", "--input", p(&input), "--output", p(&out)]).0, 0);
    let (code, stdout, err) = run(&["eval", "--results", p(&out), "--gt", p(&gt)]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["pairs"], 3);
    assert!(v["auc20"].as_f64().unwrap() > 80.0);

    let short = dir.path().join("short.jsonl");
    fs::write(&short, to_jsonl::<(), _>(None, &gts[..2])).unwrap();
    assert_eq!(run(&["eval", "--results", p(&out), "--gt", p(&short)]).0, 3);
}

#[test]
fn generate_writes_pairs_and_ground_truth() {
    let dir = TempDir::new().unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    let gt = dir.path().join("gt.jsonl");
    let (code, _, err) = run(&["generate", "--count", "3", "--mode", "two-focal", "--output", p(&pairs), "--gt", p(&gt)]);
    assert_eq!(code, 0, "{err}");
    let recs: Vec<(usize, PairRecord)> = parse_records(&fs::read_to_string(&pairs).unwrap(), &pairs).unwrap();
    assert_eq!(recs.len(), 3);
    assert!(recs.iter().all(|(_, r)| r.intrinsics.is_none() && r.validate().is_ok()));
    let gts: Vec<(usize, GroundTruthRecord)> = parse_records(&fs::read_to_string(&gt).unwrap(), &gt).unwrap();
    assert!(gts.iter().all(|(_, g)| g.f1.is_some()));
}

#[test]
fn bench_shift_ablation_cardinality() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bench.toml");
    fs::write(
        &spec,
        "trials = 3\nshift_fractions = [0.0, 0.5]\nmethods = [\"full\", \"scale-only\"]\n[scene]\nn_points = 60\noutlier_fraction = 0.1\n[estimator]\nmin_iters = 100\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, stdout, err) = run(&["bench", "--spec", p(&spec), "--experiment", "shift-ablation", "--output-dir", p(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("scale-only"));
    let count = |name: &str| {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let v: Vec<(usize, serde_json::Value)> = parse_records(&text, Path::new(name)).unwrap();
        v.len()
    };
    assert_eq!(count("shift-ablation-records.jsonl"), 12);
    assert_eq!(count("shift-ablation-table.jsonl"), 4);
}

#[test]
fn bench_dry_run_and_errors() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bench.toml");
    fs::write(&spec, "experiment = \"noise-sweep\"\ntrials = 2\n").unwrap();
    let out = dir.path().join("out");
    let (code, stdout, _) = run(&["bench", "--spec", p(&spec), "--output-dir", p(&out), "--dry-run"]);
    assert_eq!(code, 0);
    assert!(!out.exists());
    let resolved = dir.path().join("resolved.toml");
    fs::write(&resolved, &stdout).unwrap();
    let (code, again, _) = run(&["bench", "--spec", p(&resolved), "--dry-run"]);
    assert_eq!(code, 0);
    assert_eq!(stdout, again);

    let (code, _, err) = run(&["bench", "--spec", p(&dir.path().join("nope.toml"))]);
    assert_eq!(code, 2);
    assert!(err.contains("nope.toml"), "{err}");
    assert_eq!(run(&["bench", "--spec", p(&spec), "--experiment", "fig9"]).0, 1);
    fs::write(&spec, "experiment = \"fig9\"\n").unwrap();
    assert_eq!(run(&["bench", "--spec", p(&spec), "--dry-run"]).0, 3);
}

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_records_round_trip(
        id in "[a-z0-9_-]{1,12}",
        matches in prop::collection::vec(prop::array::uniform6(finite()), 0..20),
        focal in prop::option::of(1.0..5000.0f64),
    ) {
        let k = focal.map(|f| [Intrinsics { focal: f, principal_point: [1.5, -2.0] }; 2]);
        let recs = vec![PairRecord { version: 1, pair_id: id, image_size: [640.0, 480.0, 320.0, 240.0], intrinsics: k, matches }];
        let text = to_jsonl::<(), _>(None, &recs);
        let back: Vec<PairRecord> = parse_records(&text, Path::new("x")).unwrap().into_iter().map(|(_, r)| r).collect();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(to_jsonl::<(), _>(None, &back), text);
    }

    #[test]
    fn result_records_round_trip(
        r in prop::array::uniform9(finite()),
        t in prop::array::uniform3(finite()),
        ab in prop::array::uniform3(finite()),
        f in prop::option::of(1.0..5000.0f64),
        n in prop::array::uniform3(0usize..1000),
        failed in any::<bool>(),
    ) {
        let rec = if failed {
            ResultRecord::failed("x", "no valid hypothesis")
        } else {
            ResultRecord {
                rotation: Some(r), translation: Some(t), alpha: Some(ab[0]), beta1: Some(ab[1]), beta2: Some(ab[2]),
                f1: f, f2: f, inliers: Some(n), score: Some(ab[0].abs()), iterations: n[0], elapsed_seconds: f,
                ..ResultRecord::failed("y", "")
            }
        };
        let text = to_jsonl(Some(&serde_json::json!({"kind": "header"})), std::slice::from_ref(&rec));
        let back: Vec<ResultRecord> = parse_records(&text, Path::new("x")).unwrap().into_iter().map(|(_, r)| r).collect();
        prop_assert_eq!(back, vec![rec]);
    }
}
