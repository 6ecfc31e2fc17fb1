//! End-to-end composition: load a scene, align it, read the dial, score it.
//!
//! Score maps and recognizer probabilities enter as files or in-memory
//! fixtures. A scene on disk is a set of files sharing one base path:
//!
//! ```text
//! <base>.png            display image
//! <base>.pointer.pgm    pointer score map
//! <base>.keyscale.pgm   key-scale score map
//! <base>.json           annotation
//! <base>.probs.json     optional recognizer probabilities
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{greedy_decode, parse_numeric, Alphabet, CtcError, ProbMatrix};
use crate::geometry::{offsets_to_homography, GeometryError, Homography, QuadOffsets};
use crate::image::{load_image, ImageBuffer, ImageError, Point2, ScoreMap};
use crate::metrics::{summarize, EvalRecord, MetricsError};
use crate::reading::{read_meter_with, DialFrame, ReadOptions, ReadingError, ReadingResult};
use crate::synthmeter::{MeterAnnotation, SynthScene};
use crate::warp::{warp_image, warp_score_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Align,
    Recognize,
    Read,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Align => "align",
            Stage::Recognize => "recognize",
            Stage::Read => "read",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum ErrorKind {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Reading(#[from] ReadingError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

impl ErrorKind {
    /// Short machine-readable tag, e.g. `reading/empty_pointer`.
    pub fn tag(&self) -> String {
        let sub = match self {
            ErrorKind::Reading(e) => match e {
                ReadingError::DegenerateRay => "degenerate_ray",
                ReadingError::ZeroSpan(_) => "zero_span",
                ReadingError::InvalidAngle(_) => "invalid_angle",
                ReadingError::EmptyPointer(_) => "empty_pointer",
                ReadingError::InsufficientScales(_) => "insufficient_scales",
                ReadingError::AmbiguousScales(_) => "ambiguous_scales",
                ReadingError::Hough(_) => "hough",
            },
            _ => "",
        };
        let top = match self {
            ErrorKind::Image(_) => "image",
            ErrorKind::Geometry(_) => "geometry",
            ErrorKind::Reading(_) => "reading",
            ErrorKind::Ctc(_) => "ctc",
            ErrorKind::Metrics(_) => "metrics",
            ErrorKind::Io(_) => "io",
            ErrorKind::Json(_) => "json",
            ErrorKind::Config(_) => "config",
        };
        if sub.is_empty() {
            top.to_string()
        } else {
            format!("{top}/{sub}")
        }
    }
}

/// A module error tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("{stage} stage: {kind}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: impl Into<ErrorKind>) -> Self {
        Self {
            stage,
            kind: kind.into(),
        }
    }
}

fn at<E: Into<ErrorKind>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub binarize_tau: f64,
    pub hough_theta_bins: usize,
    pub dial_clockwise: bool,
    pub aligned_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            binarize_tau: 0.5,
            hough_theta_bins: 180,
            dial_clockwise: true,
            aligned_size: 640,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Stage::Load, ErrorKind::Config(m)));
        if !(self.binarize_tau > 0.0 && self.binarize_tau < 1.0) {
            return bad(format!(
                "binarize_tau {} must lie in (0, 1)",
                self.binarize_tau
            ));
        }
        if self.aligned_size < 32 {
            return bad(format!(
                "aligned_size {} must be at least 32",
                self.aligned_size
            ));
        }
        if self.hough_theta_bins == 0 {
            return bad("hough_theta_bins must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(at(Stage::Load))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn read_options(&self) -> ReadOptions {
        ReadOptions {
            threshold: self.binarize_tau,
            theta_bins: self.hough_theta_bins,
            ..ReadOptions::default()
        }
    }
}

/// How the detected image maps onto the undistorted dial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    /// Corner displacements of the distortion (undistorted → detected).
    Offsets(QuadOffsets),
    /// Explicit undistorted → detected homography.
    Homography(Homography),
}

/// Everything the pipeline consumes for one scene.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub name: String,
    pub image: Option<ImageBuffer>,
    pub pointer_map: ScoreMap,
    pub key_scale_map: ScoreMap,
    pub annotation: MeterAnnotation,
    pub number_probs: Option<ProbMatrix>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_map(path: &Path) -> Result<ScoreMap, PipelineError> {
    let img = load_image(path).map_err(at(Stage::Load))?;
    ScoreMap::try_from(img).map_err(at(Stage::Load))
}

impl SceneInput {
    /// Reads the scene files sharing base path `base` (e.g. `out/scene_0003`).
    pub fn load(base: &Path) -> Result<Self, PipelineError> {
        let load = Stage::Load;
        let image = load_image(with_suffix(base, ".png")).map_err(at(load))?;
        let pointer_map = load_map(&with_suffix(base, ".pointer.pgm"))?;
        let key_scale_map = load_map(&with_suffix(base, ".keyscale.pgm"))?;
        let ann_path = with_suffix(base, ".json");
        let text = std::fs::read_to_string(&ann_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::new(load, ImageError::MissingFile(ann_path.clone()))
            } else {
                PipelineError::new(load, e)
            }
        })?;
        let annotation: MeterAnnotation = serde_json::from_str(&text).map_err(at(load))?;
        let probs_path = with_suffix(base, ".probs.json");
        let number_probs = if probs_path.exists() {
            let text = std::fs::read_to_string(&probs_path).map_err(at(load))?;
            Some(serde_json::from_str(&text).map_err(at(load))?)
        } else {
            None
        };
        let name = base
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            name,
            image: Some(image),
            pointer_map,
            key_scale_map,
            annotation,
            number_probs,
        })
    }

    pub fn from_synth(name: impl Into<String>, scene: &SynthScene) -> Self {
        Self {
            name: name.into(),
            image: Some(scene.image.clone()),
            pointer_map: scene.pointer_map_gt.clone(),
            key_scale_map: scene.key_scale_map_gt.clone(),
            annotation: scene.annotation.clone(),
            number_probs: Some(scene.number_probs.clone()),
        }
    }

    fn source_size(&self) -> (usize, usize) {
        (self.pointer_map.width(), self.pointer_map.height())
    }
}

/// Homography taking detected-image pixels to an `aligned × aligned` raster of
/// the undistorted dial: the inverse distortion followed by a resize of the
/// undistorted frame onto the output.
pub fn alignment_homography(
    src_w: usize,
    src_h: usize,
    alignment: &Alignment,
    aligned: usize,
) -> Result<Homography, GeometryError> {
    let distortion = match alignment {
        Alignment::Offsets(d) => offsets_to_homography(src_w, src_h, d)?,
        Alignment::Homography(h) => *h,
    };
    let scale = Homography::scaling(
        (aligned as f64 - 1.0) / (src_w as f64 - 1.0).max(1.0),
        (aligned as f64 - 1.0) / (src_h as f64 - 1.0).max(1.0),
    )?;
    scale.compose(&distortion.inverse()?)
}

#[derive(Debug, Clone)]
pub struct AlignedScene {
    pub homography: Homography,
    pub image: Option<ImageBuffer>,
    pub pointer_map: ScoreMap,
    pub key_scale_map: ScoreMap,
}

/// Warps the maps, and the display image when `with_image` is set.
pub fn align_scene(
    input: &SceneInput,
    alignment: &Alignment,
    cfg: &PipelineConfig,
    with_image: bool,
) -> Result<AlignedScene, PipelineError> {
    let (w, h) = input.source_size();
    let n = cfg.aligned_size;
    let homography = alignment_homography(w, h, alignment, n).map_err(at(Stage::Align))?;
    let warp = |m: &ScoreMap| warp_score_map(m, &homography, n, n);
    let image = match (&input.image, with_image) {
        (Some(img), true) => Some(warp_image(img, &homography, n, n).map_err(at(Stage::Align))?),
        _ => None,
    };
    Ok(AlignedScene {
        homography,
        image,
        pointer_map: warp(&input.pointer_map).map_err(at(Stage::Align))?,
        key_scale_map: warp(&input.key_scale_map).map_err(at(Stage::Align))?,
    })
}

/// The key number: decoded probabilities when present, else the annotation.
pub fn recognize_number(input: &SceneInput) -> Result<f64, PipelineError> {
    let text = match &input.number_probs {
        Some(p) => greedy_decode(p, &Alphabet::meter_digits()),
        None => input.annotation.key_number.clone(),
    };
    parse_numeric(&text).map_err(at(Stage::Recognize))
}

/// Aligns with the annotated offsets and reads the dial.
pub fn run_scene(input: &SceneInput, cfg: &PipelineConfig) -> Result<ReadingResult, PipelineError> {
    run_scene_with(input, &Alignment::Offsets(input.annotation.offsets), cfg)
}

pub fn run_scene_with(
    input: &SceneInput,
    alignment: &Alignment,
    cfg: &PipelineConfig,
) -> Result<ReadingResult, PipelineError> {
    cfg.validate()?;
    let aligned = align_scene(input, alignment, cfg, false)?;
    let num_rec = recognize_number(input)?;
    let c = (cfg.aligned_size as f64 - 1.0) / 2.0;
    let (w, h) = input.source_size();
    let k = Point2::new(
        (cfg.aligned_size as f64 - 1.0) / (w as f64 - 1.0).max(1.0),
        (cfg.aligned_size as f64 - 1.0) / (h as f64 - 1.0).max(1.0),
    );
    let zero = input.annotation.zero_scale;
    let frame = DialFrame::new(Point2::new(c, c), cfg.dial_clockwise)
        .with_zero_hint(Point2::new(zero.x * k.x, zero.y * k.y));
    read_meter_with(
        &aligned.pointer_map,
        &aligned.key_scale_map,
        num_rec,
        &frame,
        &cfg.read_options(),
    )
    .map_err(at(Stage::Read))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub name: String,
    pub reading: ReadingResult,
    pub true_reading: f64,
    /// Meter range used for the reference error.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub name: String,
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenes: Vec<SceneReport>,
    /// Average relative error in percent over successful scenes.
    pub rel_percent: Option<f64>,
    /// Average reference error in percent over successful scenes.
    pub ref_percent: Option<f64>,
    pub failures: Vec<FailureReport>,
}

impl PipelineReport {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.scenes
            .iter()
            .map(|s| EvalRecord {
                predicted: s.reading.value,
                ground_truth: s.true_reading,
                range: s.range,
            })
            .collect()
    }
}

fn scene_report(input: &SceneInput, cfg: &PipelineConfig) -> Result<SceneReport, PipelineError> {
    let reading = run_scene(input, cfg)?;
    let range = parse_numeric(&input.annotation.key_number).map_err(at(Stage::Evaluate))?;
    Ok(SceneReport {
        name: input.name.clone(),
        reading,
        true_reading: input.annotation.true_reading,
        range,
    })
}

fn assemble(results: Vec<(String, Result<SceneReport, PipelineError>)>) -> PipelineReport {
    let mut scenes = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok(s) => scenes.push(s),
            Err(e) => failures.push(FailureReport {
                name,
                stage: e.stage,
                kind: e.kind.tag(),
                message: e.kind.to_string(),
            }),
        }
    }
    let mut report = PipelineReport {
        scenes,
        rel_percent: None,
        ref_percent: None,
        failures,
    };
    // zero ground truth has no relative error; such batches report none
    if let Ok(s) = summarize(&report.records()) {
        report.rel_percent = Some(s.rel_percent);
        report.ref_percent = Some(s.ref_percent);
    }
    report
}

/// Runs every in-memory scene; failures become report entries.
pub fn run_batch(inputs: &[SceneInput], cfg: &PipelineConfig, parallel: bool) -> PipelineReport {
    let one = |i: &SceneInput| (i.name.clone(), scene_report(i, cfg));
    let results = if parallel {
        inputs.par_iter().map(one).collect()
    } else {
        inputs.iter().map(one).collect()
    };
    assemble(results)
}

/// Loads and runs every scene base path; load failures are reported too.
pub fn run_batch_paths(bases: &[PathBuf], cfg: &PipelineConfig, parallel: bool) -> PipelineReport {
    let one = |base: &PathBuf| {
        let name = base
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        (
            name,
            SceneInput::load(base).and_then(|i| scene_report(&i, cfg)),
        )
    };
    let results = if parallel {
        bases.par_iter().map(one).collect()
    } else {
        bases.iter().map(one).collect()
    };
    assemble(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthmeter::{render, MeterSpec};

    fn spec() -> MeterSpec {
        MeterSpec {
            image_size: 160,
            dial_radius: 55.0,
            zero_angle: 135.0,
            span_angle: 270.0,
            pointer_fraction: 0.6,
            key_number: "2.5".into(),
            distortion: None,
            seed: 4,
        }
    }

    fn small() -> PipelineConfig {
        PipelineConfig {
            aligned_size: 320,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn undistorted_scene_reads_true_value() {
        let scene = render(&spec()).unwrap();
        let input = SceneInput::from_synth("s", &scene);
        let r = run_scene(&input, &small()).unwrap();
        let t = scene.annotation.true_reading;
        assert!((r.value - t).abs() / t < 0.005, "{} vs {t}", r.value);
    }

    #[test]
    fn empty_pointer_is_tagged_with_read_stage() {
        let scene = render(&spec()).unwrap();
        let mut input = SceneInput::from_synth("s", &scene);
        input.pointer_map = ScoreMap::new(160, 160, vec![0.0; 160 * 160]).unwrap();
        let err = run_scene(&input, &small()).unwrap_err();
        assert_eq!(err.stage, Stage::Read);
        assert_eq!(err.kind.tag(), "reading/empty_pointer");
        let report = run_batch(&[input], &small(), false);
        assert_eq!(report.failures.len(), 1);
        assert!(report.scenes.is_empty());
        assert_eq!(report.rel_percent, None);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = PipelineConfig {
            binarize_tau: 0.3,
            hough_theta_bins: 360,
            dial_clockwise: false,
            aligned_size: 256,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(
            PipelineConfig::from_json("{}").unwrap(),
            PipelineConfig::default()
        );
        assert!(PipelineConfig::from_json(r#"{"binarize_tau": 1.0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"aligned_size": 31}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"typo": 1}"#).is_err());
    }

    #[test]
    fn identity_offsets_give_pure_scaling() {
        let h = alignment_homography(5, 5, &Alignment::Offsets(QuadOffsets::zeros()), 9).unwrap();
        assert_eq!(h, Homography::scaling(2.0, 2.0).unwrap());
    }
}
