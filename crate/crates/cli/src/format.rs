//! Line-delimited JSON records read and written by the command-line tool.
//!
//! Every file is a sequence of JSON objects, one per line. A line whose
//! object has `"kind": "header"` carries metadata (the effective config of
//! the run that produced the file) and is skipped by readers. Blank lines
//! are ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use depthpose::{AffineCorrection, CameraModel, Correspondence, Hypothesis, ImagePoint, Mode, Pose};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// Slack allowed around the image rectangle for match coordinates.
pub const BOUNDS_SLACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: [f64; 2],
}

/// One image pair: matches with the depth priors sampled at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub version: u32,
    pub pair_id: String,
    /// `[w1, h1, w2, h2]` in pixels.
    pub image_size: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<[Intrinsics; 2]>,
    /// `[x1, y1, x2, y2, d1, d2]` per match.
    pub matches: Vec<[f64; 6]>,
}

impl PairRecord {
    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported version {} (expected {FORMAT_VERSION})", self.version));
        }
        let [w1, h1, w2, h2] = self.image_size;
        if !self.image_size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err("image sizes must be positive".into());
        }
        if let Some(k) = &self.intrinsics {
            for i in k {
                if !(i.focal.is_finite() && i.focal > 0.0) || !i.principal_point.iter().all(|v| v.is_finite()) {
                    return Err("intrinsics need a positive focal and a finite principal point".into());
                }
            }
        }
        let inside = |x: f64, y: f64, w: f64, h: f64| {
            (-BOUNDS_SLACK..=w + BOUNDS_SLACK).contains(&x) && (-BOUNDS_SLACK..=h + BOUNDS_SLACK).contains(&y)
        };
        for (i, m) in self.matches.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(format!("match {i} has a non-finite value"));
            }
            if !inside(m[0], m[1], w1, h1) || !inside(m[2], m[3], w2, h2) {
                return Err(format!("match {i} lies outside the image bounds"));
            }
        }
        Ok(())
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.matches
            .iter()
            .map(|m| Correspondence::new(ImagePoint::new(m[0], m[1]), ImagePoint::new(m[2], m[3]), m[4], m[5]))
            .collect()
    }

    /// Cameras for estimation. Calibrated mode requires intrinsics. In the
    /// focal modes only the principal points are used, and they default to
    /// the image centers when intrinsics are absent.
    pub fn cameras(&self, mode: Mode) -> Result<(CameraModel, CameraModel), String> {
        let [w1, h1, w2, h2] = self.image_size;
        let (k1, k2) = match (&self.intrinsics, mode) {
            (Some([a, b]), _) => (*a, *b),
            (None, Mode::Calibrated) => return Err("calibrated mode requires intrinsics".into()),
            (None, _) => {
                let diag = |w: f64, h: f64| w.hypot(h);
                (
                    Intrinsics { focal: diag(w1, h1), principal_point: [w1 / 2.0, h1 / 2.0] },
                    Intrinsics { focal: diag(w2, h2), principal_point: [w2 / 2.0, h2 / 2.0] },
                )
            }
        };
        let cam = |k: Intrinsics| CameraModel::new(k.focal, ImagePoint::new(k.principal_point[0], k.principal_point[1])).map_err(|e| e.to_string());
        Ok((cam(k1)?, cam(k2)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// Estimate for one pair. Model fields are `null` when `status` is `failed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub version: u32,
    pub pair_id: String,
    pub status: Status,
    #[serde(rename = "R")]
    pub rotation: Option<[f64; 9]>,
    #[serde(rename = "t")]
    pub translation: Option<[f64; 3]>,
    pub alpha: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    /// Inliers of the forward reprojection, backward reprojection and
    /// Sampson terms.
    pub inliers: Option<[usize; 3]>,
    pub score: Option<f64>,
    pub iterations: usize,
    pub elapsed_seconds: Option<f64>,
    pub message: Option<String>,
}

impl ResultRecord {
    pub fn failed(pair_id: &str, message: impl Into<String>) -> Self {
        Self {
            version: FORMAT_VERSION,
            pair_id: pair_id.into(),
            status: Status::Failed,
            rotation: None,
            translation: None,
            alpha: None,
            beta1: None,
            beta2: None,
            f1: None,
            f2: None,
            inliers: None,
            score: None,
            iterations: 0,
            elapsed_seconds: None,
            message: Some(message.into()),
        }
    }

    pub fn ok(pair_id: &str, h: &Hypothesis, inliers: [usize; 3], score: f64, iterations: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            pair_id: pair_id.into(),
            status: Status::Ok,
            rotation: Some(rotation_row_major(h.pose.rotation())),
            translation: Some(vec3(h.pose.translation())),
            alpha: Some(h.affine.alpha),
            beta1: Some(h.affine.beta1),
            beta2: Some(h.affine.beta2),
            f1: h.focal1,
            f2: h.focal2,
            inliers: Some(inliers),
            score: Some(score),
            iterations,
            elapsed_seconds: None,
            message: None,
        }
    }

    /// The estimated pose, when the record is ok.
    pub fn pose(&self) -> Option<Pose> {
        match (self.status, self.rotation, self.translation) {
            (Status::Ok, Some(r), Some(t)) => Pose::from_approx(&Matrix3::from_row_slice(&r), Vector3::from(t)).ok(),
            _ => None,
        }
    }

    pub fn affine(&self) -> Option<AffineCorrection> {
        Some(AffineCorrection::new(self.alpha?, self.beta1?, self.beta2?))
    }
}

/// Ground truth for one pair, as consumed by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub version: u32,
    pub pair_id: String,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
}

impl GroundTruthRecord {
    pub fn pose(&self) -> Result<Pose, String> {
        Pose::from_approx(&Matrix3::from_row_slice(&self.rotation), Vector3::from(self.translation)).map_err(|e| e.to_string())
    }
}

pub fn rotation_row_major(r: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = r[(i, j)];
        }
    }
    out
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Header line written first in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Header<'a, C: Serialize> {
    pub kind: &'static str,
    pub version: u32,
    pub command: &'a str,
    pub config: &'a C,
}

impl<'a, C: Serialize> Header<'a, C> {
    pub fn new(command: &'a str, config: &'a C) -> Self {
        Self { kind: "header", version: FORMAT_VERSION, command, config }
    }
}

fn is_header(v: &serde_json::Value) -> bool {
    v.get("kind").and_then(|k| k.as_str()) == Some("header")
}

/// Parses line-delimited records, skipping headers and blank lines. Errors
/// name the 1-based line number.
pub fn parse_records<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CliError::Parse { path: path.to_path_buf(), line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if is_header(&value) {
            continue;
        }
        let rec = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<PairRecord>> {
    let records: Vec<(usize, PairRecord)> = parse_records(&read_text(path)?, path)?;
    records
        .into_iter()
        .map(|(line, r)| {
            r.validate().map_err(|message| CliError::Parse { path: path.to_path_buf(), line, message })?;
            Ok(r)
        })
        .collect()
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRecord>> {
    Ok(parse_records(&read_text(path)?, path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn read_ground_truth(path: &Path) -> CliResult<Vec<GroundTruthRecord>> {
    let records: Vec<(usize, GroundTruthRecord)> = parse_records(&read_text(path)?, path)?;
    records
        .into_iter()
        .map(|(line, r)| {
            r.pose().map_err(|message| CliError::Parse { path: path.to_path_buf(), line, message })?;
            Ok(r)
        })
        .collect()
}

/// Serializes one record per line, optionally preceded by a header.
pub fn to_jsonl<H: Serialize, T: Serialize>(header: Option<&H>, records: &[T]) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&serde_json::to_string(h).expect("header serializes"));
        out.push('\n');
    }
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
