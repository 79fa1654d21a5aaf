//! The four subcommands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use depthpose::ransac::{estimate, EstimationConfig, Variant};
use depthpose::solvers::FocalGate;
use depthpose::synth::{generate_pair, run_hybrid_ablation, run_noise_sweep, run_shift_ablation, AucCell, MedianCell, Method, SceneSpec};
use depthpose::{pair_focal_error, pose_auc, pose_error, Mode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format::{
    read_ground_truth, read_pairs, read_results, rotation_row_major, to_jsonl, write_text, GroundTruthRecord, Header, Intrinsics, PairRecord,
    ResultRecord, Status, BOUNDS_SLACK, FORMAT_VERSION,
};
use crate::settings::{parse_method, BenchSpec, EstimateSettings, ExperimentKind};

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("missing {flag}")))
}

/// Estimates one pair. Problems with the pair itself produce a failed record.
pub fn estimate_pair(pair: &PairRecord, cfg: &EstimationConfig, focal_gate: bool, timing: bool) -> ResultRecord {
    let start = Instant::now();
    let (cam1, cam2) = match pair.cameras(cfg.mode) {
        Ok(c) => c,
        Err(m) => return ResultRecord::failed(&pair.pair_id, m),
    };
    let mut cfg = *cfg;
    if focal_gate && cfg.mode.has_focals() {
        let [w1, h1, w2, h2] = pair.image_size;
        cfg.focal_gate = FocalGate::from_image_size(w1.max(w2), h1.max(h2));
    }
    let mut rec = match estimate(&pair.correspondences(), &cam1, &cam2, &cfg) {
        Err(e) => ResultRecord::failed(&pair.pair_id, e.to_string()),
        Ok(report) => match &report.best {
            Some(h) => ResultRecord::ok(&pair.pair_id, h, report.masks.counts(), report.score, report.iterations),
            None => {
                let mut r = ResultRecord::failed(&pair.pair_id, "no valid hypothesis");
                r.iterations = report.iterations;
                r
            }
        },
    };
    if timing {
        rec.elapsed_seconds = Some(start.elapsed().as_secs_f64());
    }
    rec
}

pub fn cmd_estimate(settings: &EstimateSettings) -> CliResult<()> {
    let input = required(&settings.input, "--input")?;
    let output = required(&settings.output, "--output")?;
    let cfg = settings.estimation_config()?;
    let pairs = read_pairs(input)?;
    let results: Vec<ResultRecord> = pool(settings.threads)?.install(|| {
        pairs
            .par_iter()
            .map(|p| estimate_pair(p, &cfg, settings.focal_gate, settings.timing))
            .collect()
    });
    let failed = results.iter().filter(|r| r.status == Status::Failed).count();
    write_text(output, &to_jsonl(Some(&Header::new("estimate", settings)), &results))?;
    eprintln!("estimated {} pairs ({failed} failed) -> {}", results.len(), output.display());
    Ok(())
}

/// Metrics written by `eval`. Medians are `null` when infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub failed: usize,
    pub median_rotation_deg: Option<f64>,
    pub median_translation_deg: Option<f64>,
    /// Relative focal error in percent, when the ground truth has focals.
    pub median_focal_error_pct: Option<f64>,
    pub auc5: f64,
    pub auc10: f64,
    pub auc20: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn evaluate(results: &[ResultRecord], gt: &[GroundTruthRecord]) -> CliResult<EvalSummary> {
    if gt.is_empty() {
        return Err(CliError::Data("ground truth is empty".into()));
    }
    let mut by_id: HashMap<&str, &ResultRecord> = HashMap::new();
    for r in results {
        if by_id.insert(&r.pair_id, r).is_some() {
            return Err(CliError::Data(format!("duplicate result for pair '{}'", r.pair_id)));
        }
    }
    if results.len() != gt.len() {
        return Err(CliError::Data(format!("{} results but {} ground-truth pairs", results.len(), gt.len())));
    }
    let (mut rot, mut trans, mut pose, mut focal) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut failed = 0;
    for g in gt {
        let r = by_id
            .get(g.pair_id.as_str())
            .ok_or_else(|| CliError::Data(format!("no result for pair '{}'", g.pair_id)))?;
        let gt_pose = g.pose().map_err(CliError::Data)?;
        let (er, et) = match r.pose() {
            Some(p) => pose_error(&p, &gt_pose),
            None => {
                failed += 1;
                (f64::INFINITY, f64::INFINITY)
            }
        };
        rot.push(er);
        trans.push(et);
        pose.push(er.max(et));
        if let (Some(f1), Some(f2)) = (g.f1, g.f2) {
            focal.push(match (r.pose(), r.f1, r.f2) {
                (Some(_), Some(a), Some(b)) => pair_focal_error((a, b), (f1, f2)),
                _ => f64::INFINITY,
            });
        }
    }
    let auc = pose_auc(&pose, &[5.0, 10.0, 20.0])?;
    Ok(EvalSummary {
        pairs: gt.len(),
        failed,
        median_rotation_deg: finite(median(&rot)),
        median_translation_deg: finite(median(&trans)),
        median_focal_error_pct: if focal.is_empty() { None } else { finite(median(&focal)) },
        auc5: auc[0],
        auc10: auc[1],
        auc20: auc[2],
    })
}

pub fn cmd_eval(results: &Path, gt: &Path, output: Option<&Path>) -> CliResult<()> {
    let summary = evaluate(&read_results(results)?, &read_ground_truth(gt)?)?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Some(out) = output {
        write_text(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Synthetic data file spec for `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSpec {
    pub count: usize,
    pub output: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub scene: SceneSpec,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self { count: 10, output: None, gt: None, scene: SceneSpec::default() }
    }
}

/// Converts synthetic pairs to records. Intrinsics are written in calibrated
/// mode only; matches pushed outside the slack region by pixel noise are
/// dropped.
pub fn synthesize(scene: &SceneSpec, count: usize) -> CliResult<(Vec<PairRecord>, Vec<GroundTruthRecord>)> {
    scene.validate()?;
    let (w, h) = scene.image_size;
    let inside = |x: f64, y: f64| (-BOUNDS_SLACK..=w + BOUNDS_SLACK).contains(&x) && (-BOUNDS_SLACK..=h + BOUNDS_SLACK).contains(&y);
    let mut pairs = Vec::with_capacity(count);
    let mut gts = Vec::with_capacity(count);
    for i in 0..count {
        let pair = generate_pair(scene, &mut scene.pair_rng(i as u64))?;
        let pair_id = format!("pair-{i:04}");
        let (c1, c2) = pair.gt_cams;
        let intr = |c: depthpose::CameraModel| Intrinsics { focal: c.focal(), principal_point: [c.principal_point().x, c.principal_point().y] };
        pairs.push(PairRecord {
            version: FORMAT_VERSION,
            pair_id: pair_id.clone(),
            image_size: [w, h, w, h],
            intrinsics: (scene.mode == Mode::Calibrated).then(|| [intr(c1), intr(c2)]),
            matches: pair
                .correspondences
                .iter()
                .filter(|c| inside(c.p1.x, c.p1.y) && inside(c.p2.x, c.p2.y))
                .map(|c| [c.p1.x, c.p1.y, c.p2.x, c.p2.y, c.d1, c.d2])
                .collect(),
        });
        let t = pair.gt_pose.translation();
        let focals = scene.mode.has_focals();
        gts.push(GroundTruthRecord {
            version: FORMAT_VERSION,
            pair_id,
            rotation: rotation_row_major(pair.gt_pose.rotation()),
            translation: [t.x, t.y, t.z],
            f1: focals.then(|| c1.focal()),
            f2: focals.then(|| c2.focal()),
            alpha: Some(pair.gt_affine.alpha),
            beta1: Some(pair.gt_affine.beta1),
            beta2: Some(pair.gt_affine.beta2),
        });
    }
    Ok((pairs, gts))
}

pub fn cmd_generate(spec: &GenerateSpec) -> CliResult<()> {
    let output = required(&spec.output, "--output")?;
    let (pairs, gts) = synthesize(&spec.scene, spec.count)?;
    let header = Header::new("generate", spec);
    write_text(output, &to_jsonl(Some(&header), &pairs))?;
    if let Some(gt) = &spec.gt {
        write_text(gt, &to_jsonl(Some(&header), &gts))?;
    }
    eprintln!("wrote {} pairs -> {}", pairs.len(), output.display());
    Ok(())
}

/// Output of a benchmark run.
pub enum BenchReport {
    Medians(depthpose::synth::Experiment<MedianCell>),
    Aucs(depthpose::synth::Experiment<AucCell>),
}

pub fn run_bench(spec: &BenchSpec, kind: ExperimentKind) -> CliResult<BenchReport> {
    spec.validate()?;
    let cfg = spec.estimation_config()?;
    let methods = spec.methods.iter().map(|m| parse_method(m)).collect::<CliResult<Vec<Method>>>()?;
    pool(spec.threads)?.install(|| {
        Ok(match kind {
            ExperimentKind::ShiftAblation => BenchReport::Medians(run_shift_ablation(&spec.scene, &spec.shift_fractions, &methods, spec.trials, &cfg)?),
            ExperimentKind::NoiseSweep => BenchReport::Medians(run_noise_sweep(&spec.scene, &spec.noise_sigmas, &methods, spec.trials, &cfg)?),
            ExperimentKind::HybridAblation => {
                let variants = spec.variants.iter().map(|v| v.parse()).collect::<depthpose::Result<Vec<Variant>>>()?;
                BenchReport::Aucs(run_hybrid_ablation(&spec.scene, &spec.corpora, &variants, spec.trials, &cfg)?)
            }
        })
    })
}

fn render_table(report: &BenchReport) -> String {
    let mut s = String::new();
    match report {
        BenchReport::Medians(e) => {
            let _ = writeln!(s, "{:>10} {:>12} {:>10} {:>10}", "cell", "method", "med_R", "med_t");
            for c in &e.table {
                let _ = writeln!(s, "{:>10} {:>12} {:>10.4} {:>10.4}", c.cell, c.method, c.median_rotation, c.median_translation);
            }
        }
        BenchReport::Aucs(e) => {
            let _ = writeln!(s, "{:>10} {:>8} {:>8} {:>8} {:>8}", "corpus", "variant", "AUC@5", "AUC@10", "AUC@20");
            for c in &e.table {
                let _ = writeln!(s, "{:>10} {:>8} {:>8.2} {:>8.2} {:>8.2}", c.cell, c.method, c.auc5, c.auc10, c.auc20);
            }
        }
    }
    s
}

/// Runs a benchmark and writes `<experiment>-records.jsonl` and
/// `<experiment>-table.jsonl` into the output directory. With `dry_run` the
/// resolved spec is printed and nothing runs.
pub fn cmd_bench(spec: &BenchSpec, dry_run: bool) -> CliResult<()> {
    if dry_run {
        spec.validate()?;
        let text = toml::to_string(spec).map_err(|e| CliError::Usage(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let kind = spec.experiment.ok_or_else(|| CliError::Usage("missing --experiment".into()))?;
    let dir = required(&spec.output_dir, "--output-dir")?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let report = run_bench(spec, kind)?;
    let header = Header::new("bench", spec);
    let records = dir.join(format!("{}-records.jsonl", kind.name()));
    let table = dir.join(format!("{}-table.jsonl", kind.name()));
    match &report {
        BenchReport::Medians(e) => {
            write_text(&records, &to_jsonl(Some(&header), &e.records))?;
            write_text(&table, &to_jsonl(Some(&header), &e.table))?;
        }
        BenchReport::Aucs(e) => {
            write_text(&records, &to_jsonl(Some(&header), &e.records))?;
            write_text(&table, &to_jsonl(Some(&header), &e.table))?;
        }
    }
    print!("{}", render_table(&report));
    Ok(())
}
