//! Configuration files and their merge with command-line flags.

use std::path::{Path, PathBuf};

use depthpose::ransac::{EstimationConfig, Variant};
use depthpose::solvers::FocalGate;
use depthpose::synth::{Corpus, Method, SceneSpec};
use depthpose::{DepthModel, ErrorThresholds, Mode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format::read_text;

/// Settings of `estimate`; every field has a flag of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    #[serde(skip_serializing)]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub mode: Mode,
    pub tau_r: f64,
    pub tau_s: f64,
    pub lambda_s: f64,
    pub min_iters: usize,
    pub max_iters: usize,
    pub lo_steps: usize,
    pub seed: u64,
    pub threads: usize,
    pub confidence: f64,
    pub solver_floor_prob: f64,
    pub variant: String,
    /// Restrict focal estimates to `[0.1, 20]` image diagonals.
    pub focal_gate: bool,
    /// Record wall-clock time per pair; makes output non-reproducible.
    pub timing: bool,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        let cfg = EstimationConfig::default();
        Self {
            input: None,
            output: None,
            mode: cfg.mode,
            tau_r: cfg.thresholds.tau_r,
            tau_s: cfg.thresholds.tau_s,
            lambda_s: cfg.thresholds.lambda_s,
            min_iters: cfg.min_iterations,
            max_iters: cfg.max_iterations,
            lo_steps: cfg.lo_steps,
            seed: cfg.seed,
            threads: 1,
            confidence: cfg.confidence,
            solver_floor_prob: cfg.solver_floor_prob,
            variant: cfg.variant.to_string(),
            focal_gate: true,
            timing: false,
        }
    }
}

/// Flag values; `None` keeps the value from the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct EstimateFlags {
    /// Pair records to estimate
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where to write result records
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// calibrated, shared-focal or two-focal
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Reprojection threshold in pixels [default: 8]
    #[arg(long)]
    pub tau_r: Option<f64>,
    /// Sampson threshold in pixels [default: 2]
    #[arg(long)]
    pub tau_s: Option<f64>,
    /// Weight of the Sampson term [default: 1]
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// [default: 1000]
    #[arg(long)]
    pub min_iters: Option<usize>,
    /// [default: 10000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Local-optimization steps [default: 4]
    #[arg(long)]
    pub lo_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; pairs are distributed, results keep input order [default: 1]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Termination confidence [default: 0.9999]
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Minimum selection probability of either solver [default: 0.1]
    #[arg(long)]
    pub solver_floor_prob: Option<f64>,
    /// Solver/LO/scoring components, e.g. H/H/H [default: H/H/H]
    #[arg(long)]
    pub variant: Option<String>,
    /// Enable or disable the focal plausibility gate [default: true]
    #[arg(long)]
    pub focal_gate: Option<bool>,
    /// Record elapsed seconds per pair
    #[arg(long)]
    pub timing: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl EstimateSettings {
    pub fn apply(&mut self, f: EstimateFlags) {
        if f.input.is_some() {
            self.input = f.input;
        }
        if f.output.is_some() {
            self.output = f.output;
        }
        set(&mut self.mode, f.mode);
        set(&mut self.tau_r, f.tau_r);
        set(&mut self.tau_s, f.tau_s);
        set(&mut self.lambda_s, f.lambda_s);
        set(&mut self.min_iters, f.min_iters);
        set(&mut self.max_iters, f.max_iters);
        set(&mut self.lo_steps, f.lo_steps);
        set(&mut self.seed, f.seed);
        set(&mut self.threads, f.threads);
        set(&mut self.confidence, f.confidence);
        set(&mut self.solver_floor_prob, f.solver_floor_prob);
        set(&mut self.variant, f.variant);
        set(&mut self.focal_gate, f.focal_gate);
        self.timing |= f.timing;
    }

    /// Estimator config; the focal gate is set per pair from image sizes.
    pub fn estimation_config(&self) -> CliResult<EstimationConfig> {
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        let variant: Variant = self.variant.parse()?;
        let cfg = EstimationConfig {
            mode: self.mode,
            thresholds: ErrorThresholds::new(self.tau_r, self.tau_s, self.lambda_s)?,
            min_iterations: self.min_iters,
            max_iterations: self.max_iters,
            lo_steps: self.lo_steps,
            confidence: self.confidence,
            seed: self.seed,
            solver_floor_prob: self.solver_floor_prob,
            focal_gate: FocalGate::OPEN,
            variant,
            depth_model: DepthModel::Affine,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
        CliError::Parse { path: path.to_path_buf(), line, message: e.message().to_string() }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ShiftAblation,
    HybridAblation,
    NoiseSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ShiftAblation => "shift-ablation",
            ExperimentKind::HybridAblation => "hybrid-ablation",
            ExperimentKind::NoiseSweep => "noise-sweep",
        }
    }
}

/// Benchmark spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub experiment: Option<ExperimentKind>,
    pub output_dir: Option<PathBuf>,
    pub trials: usize,
    pub threads: usize,
    /// Shift fractions of the shift ablation.
    pub shift_fractions: Vec<f64>,
    /// Pixel noise levels of the noise sweep.
    pub noise_sigmas: Vec<f64>,
    /// Methods of the shift ablation and noise sweep: `full`, `scale-only`,
    /// `pnp` or a variant such as `D/H/H`.
    pub methods: Vec<String>,
    /// Variants of the hybrid ablation.
    pub variants: Vec<String>,
    pub corpora: Vec<Corpus>,
    pub scene: SceneSpec,
    pub estimator: BenchEstimator,
}

/// Estimator settings of a benchmark; the mode comes from the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchEstimator {
    pub tau_r: f64,
    pub tau_s: f64,
    pub lambda_s: f64,
    pub min_iters: usize,
    pub max_iters: usize,
    pub lo_steps: usize,
    pub seed: u64,
    pub confidence: f64,
    pub solver_floor_prob: f64,
}

impl Default for BenchEstimator {
    fn default() -> Self {
        let d = EstimateSettings::default();
        Self {
            tau_r: d.tau_r,
            tau_s: d.tau_s,
            lambda_s: d.lambda_s,
            min_iters: d.min_iters,
            max_iters: d.max_iters,
            lo_steps: d.lo_steps,
            seed: d.seed,
            confidence: d.confidence,
            solver_floor_prob: d.solver_floor_prob,
        }
    }
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            experiment: None,
            output_dir: None,
            trials: 100,
            threads: 1,
            shift_fractions: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0],
            noise_sigmas: vec![0.5, 1.0, 2.0, 4.0],
            methods: vec!["full".into(), "scale-only".into(), "pnp".into()],
            variants: vec!["H/H/H".into(), "D/D/D".into(), "P/P/P".into()],
            corpora: Corpus::standard(),
            scene: SceneSpec { depth_noise_sigma: 0.03, ..SceneSpec::default() },
            estimator: BenchEstimator::default(),
        }
    }
}

pub fn parse_method(s: &str) -> CliResult<Method> {
    match s {
        "full" => Ok(Method::FULL),
        "scale-only" => Ok(Method::ScaleOnly),
        "pnp" => Ok(Method::Pnp),
        v => Ok(Method::Hybrid(v.parse()?)),
    }
}

impl BenchSpec {
    pub fn estimation_config(&self) -> CliResult<EstimationConfig> {
        let e = &self.estimator;
        let cfg = EstimationConfig {
            mode: self.scene.mode,
            thresholds: ErrorThresholds::new(e.tau_r, e.tau_s, e.lambda_s)?,
            min_iterations: e.min_iters,
            max_iterations: e.max_iters,
            lo_steps: e.lo_steps,
            confidence: e.confidence,
            seed: e.seed,
            solver_floor_prob: e.solver_floor_prob,
            ..EstimationConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.trials == 0 || self.threads == 0 {
            return Err(CliError::Usage("trials and threads must be positive".into()));
        }
        self.scene.validate()?;
        self.estimation_config()?;
        for m in &self.methods {
            parse_method(m)?;
        }
        for v in &self.variants {
            v.parse::<Variant>()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut s: EstimateSettings = toml::from_str("tau_r = 4.0\nseed = 9\nmode = \"two-focal\"").unwrap();
        assert_eq!(s.tau_r, 4.0);
        assert_eq!(s.tau_s, 2.0);
        s.apply(EstimateFlags { seed: Some(3), ..Default::default() });
        assert_eq!(s.seed, 3);
        assert_eq!(s.mode, Mode::TwoFocal);
        assert_eq!(s.tau_r, 4.0);
    }

    #[test]
    fn defaults_match_estimator() {
        let cfg = EstimateSettings::default().estimation_config().unwrap();
        assert_eq!(cfg, EstimationConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<EstimateSettings>("tau_x = 1.0").is_err());
        assert!(toml::from_str::<BenchSpec>("[scene]\nnpoints = 3").is_err());
    }

    #[test]
    fn bench_spec_parses() {
        let s: BenchSpec = toml::from_str(
            "experiment = \"shift-ablation\"\ntrials = 3\nshift_fractions = [0.0, 0.5]\nmethods = [\"full\", \"D/D/D\"]\n[scene]\nn_points = 50\n",
        )
        .unwrap();
        s.validate().unwrap();
        assert_eq!(s.experiment, Some(ExperimentKind::ShiftAblation));
        assert_eq!(s.scene.n_points, 50);
        assert_eq!(parse_method("D/D/D").unwrap(), Method::Hybrid(Variant::DEPTH_ONLY));
        assert!(parse_method("nope").is_err());
    }
}
