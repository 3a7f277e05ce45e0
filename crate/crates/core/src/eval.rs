//! Single-class detection scoring: IoU matching, precision–recall curves,
//! average precision and F1 at the best confidence threshold.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolabel::{
    parse_annotations, parse_number, within_unit_square, LabelParseError, UNIT_SQUARE_TOLERANCE,
    WALNUT_CLASS_INDEX,
};

/// Axis-aligned box by corners, `x_min <= x_max`, `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Corners {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(x_center: f64, y_center: f64, width: f64, height: f64) -> Self {
        Self::new(
            x_center - width / 2.0,
            y_center - height / 2.0,
            x_center + width / 2.0,
            y_center + height / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Corners, b: &Corners) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub confidence: f64,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl Detection {
    pub fn corners(&self) -> Corners {
        Corners::from_center(self.x_center, self.y_center, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: u32,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl GroundTruthBox {
    pub fn corners(&self) -> Corners {
        Corners::from_center(self.x_center, self.y_center, self.width, self.height)
    }
}

/// Indices of `confidences` from most to least confident; equal confidences
/// keep their input order.
pub fn confidence_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Greedy matching in descending confidence. Each detection takes the
/// still-unmatched ground truth of highest IoU (lowest index on ties) when
/// that IoU reaches `iou_threshold`. Returns one flag per detection in input
/// order, `true` for a true positive.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_threshold: f64) -> Vec<bool> {
    let confidences: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    let gt_boxes: Vec<Corners> = gts.iter().map(GroundTruthBox::corners).collect();
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in confidence_order(&confidences) {
        let d = dets[i].corners();
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt_boxes.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let o = iou(&d, g);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, o)) = best {
            if o >= iou_threshold {
                taken[j] = true;
                flags[i] = true;
            }
        }
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall after each detection, most confident first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gt: usize,
}

pub fn pr_curve(flags: &[bool], confidences: &[f64], total_gt: usize) -> PrCurve {
    assert_eq!(flags.len(), confidences.len(), "one confidence per flag");
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (k, i) in confidence_order(confidences).into_iter().enumerate() {
        if flags[i] {
            tp += 1;
        }
        points.push(PrPoint {
            confidence: confidences[i],
            recall: if total_gt > 0 { tp as f64 / total_gt as f64 } else { 0.0 },
            precision: tp as f64 / (k + 1) as f64,
        });
    }
    PrCurve { points, total_gt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the precision envelope at every recall step.
    #[default]
    Continuous,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "continuous" | "all-point" => Ok(Self::Continuous),
            "eleven-point" | "11-point" => Ok(Self::ElevenPoint),
            other => Err(format!("unknown interpolation {other:?} (continuous | eleven-point)")),
        }
    }
}

/// Area under the interpolated precision–recall curve, in `[0, 1]`.
pub fn average_precision(curve: &PrCurve, interpolation: Interpolation) -> f64 {
    if curve.points.is_empty() || curve.total_gt == 0 {
        return 0.0;
    }
    // envelope[k] = max precision over points k.. (recall is non-decreasing).
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len() - 1).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    match interpolation {
        Interpolation::Continuous => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (p, &env) in curve.points.iter().zip(&envelope) {
                if p.recall > prev_recall {
                    ap += (p.recall - prev_recall) * env;
                    prev_recall = p.recall;
                }
            }
            ap
        }
        Interpolation::ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                if let Some(k) = curve.points.iter().position(|p| p.recall >= r - 1e-12) {
                    sum += envelope[k];
                }
            }
            sum / 11.0
        }
    }
}

/// Scores in percent for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    pub f1: f64,
    /// Detections at or above this confidence count; `None` without detections.
    pub confidence_threshold: Option<f64>,
    pub iou_threshold: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub detections: usize,
    #[serde(default)]
    pub ground_truths: usize,
}

impl MetricsReport {
    /// A report carrying only the four headline numbers (percent).
    pub fn from_values(precision: f64, recall: f64, ap: f64, f1: f64) -> Self {
        Self {
            precision,
            recall,
            ap,
            f1,
            confidence_threshold: None,
            iou_threshold: 0.5,
            interpolation: Interpolation::Continuous,
            detections: 0,
            ground_truths: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let threshold = self
            .confidence_threshold
            .map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
        format!(
            "Precision (%)  Recall (%)  AP (%)  F1 (%)\n\
             {:>13.2}  {:>10.2}  {:>6.2}  {:>6.2}\n\
             confidence threshold: {threshold}\n\
             IoU threshold: {:.2}\n\
             detections: {}  ground truths: {}\n",
            self.precision, self.recall, self.ap, self.f1, self.iou_threshold, self.detections, self.ground_truths,
        )
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision, recall and F1 at the confidence threshold maximizing F1 (the
/// higher threshold wins ties), plus AP over the whole curve.
pub fn metrics_at_best_f1(curve: &PrCurve, iou_threshold: f64, interpolation: Interpolation) -> MetricsReport {
    let mut report = MetricsReport {
        precision: 0.0,
        recall: 0.0,
        ap: 0.0,
        f1: 0.0,
        confidence_threshold: None,
        iou_threshold,
        interpolation,
        detections: curve.points.len(),
        ground_truths: curve.total_gt,
    };
    let mut best: Option<(f64, usize)> = None;
    let pts = &curve.points;
    for k in 0..pts.len() {
        // A threshold admits every detection of equal confidence.
        if k + 1 < pts.len() && pts[k + 1].confidence == pts[k].confidence {
            continue;
        }
        let f1 = f1_of(pts[k].precision, pts[k].recall);
        if best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, k));
        }
    }
    if let Some((_, k)) = best {
        let p = pts[k].precision * 100.0;
        let r = pts[k].recall * 100.0;
        report.precision = p;
        report.recall = r;
        report.f1 = f1_of(p, r);
        report.confidence_threshold = Some(pts[k].confidence);
        report.ap = average_precision(curve, interpolation) * 100.0;
    }
    report
}

/// Two-row comparison table with the columns Precision, Recall, AP and F1
/// in percent.
pub fn compare_report(original: &MetricsReport, enhanced: &MetricsReport, title: &str) -> String {
    let mut out = String::new();
    if !title.is_empty() {
        writeln!(out, "{title}").unwrap();
    }
    writeln!(
        out,
        "{:<20}{:>15}{:>12}{:>8}{:>8}",
        "Test Set", "Precision (%)", "Recall (%)", "AP (%)", "F1 (%)"
    )
    .unwrap();
    for (name, r) in [("Original Image Set", original), ("Enhanced Image Set", enhanced)] {
        writeln!(
            out,
            "{:<20}{:>15.2}{:>12.2}{:>8.2}{:>8.2}",
            name, r.precision, r.recall, r.ap, r.f1
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: LabelParseError,
    },
    #[error("{path}: line {line}: confidence {value} outside [0, 1]")]
    Confidence { path: String, line: usize, value: f64 },
    #[error("IoU threshold {0} must lie in (0, 1)")]
    IouThreshold(f64),
}

/// Parses a prediction file body: `class confidence x_center y_center width
/// height` per line.
pub fn parse_predictions(text: &str) -> Result<Vec<Detection>, LabelParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(LabelParseError::FieldCount { line, found: f.len() });
        }
        let d = Detection {
            class_id: parse_number(f[0], line, "class_id")?,
            confidence: parse_number(f[1], line, "confidence")?,
            x_center: parse_number(f[2], line, "x_center")?,
            y_center: parse_number(f[3], line, "y_center")?,
            width: parse_number(f[4], line, "width")?,
            height: parse_number(f[5], line, "height")?,
        };
        if !within_unit_square(d.x_center, d.y_center, d.width, d.height, UNIT_SQUARE_TOLERANCE) {
            return Err(LabelParseError::OutOfBounds {
                line,
                x_center: d.x_center,
                y_center: d.y_center,
                width: d.width,
                height: d.height,
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn format_predictions(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.class_id, d.confidence, d.x_center, d.y_center, d.width, d.height
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// Only boxes of this class are scored.
    pub class_id: u32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: Interpolation::Continuous,
            class_id: WALNUT_CLASS_INDEX,
        }
    }
}

/// Ground truth and predictions of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub ground_truths: Vec<GroundTruthBox>,
    pub detections: Vec<Detection>,
}

/// Matches within each image, then pools every detection into one curve
/// ordered by confidence (ties in image order, then file order).
pub fn evaluate_images(images: &[ImageEval], options: &EvalOptions) -> Result<(MetricsReport, PrCurve), EvalError> {
    if !(options.iou_threshold > 0.0 && options.iou_threshold < 1.0) {
        return Err(EvalError::IouThreshold(options.iou_threshold));
    }
    let mut flags = Vec::new();
    let mut confidences = Vec::new();
    let mut total_gt = 0;
    for img in images {
        let gts: Vec<GroundTruthBox> = img
            .ground_truths
            .iter()
            .filter(|g| g.class_id == options.class_id)
            .copied()
            .collect();
        let dets: Vec<Detection> = img
            .detections
            .iter()
            .filter(|d| d.class_id == options.class_id)
            .copied()
            .collect();
        total_gt += gts.len();
        flags.extend(match_detections(&dets, &gts, options.iou_threshold));
        confidences.extend(dets.iter().map(|d| d.confidence));
    }
    let curve = pr_curve(&flags, &confidences, total_gt);
    let report = metrics_at_best_f1(&curve, options.iou_threshold, options.interpolation);
    Ok((report, curve))
}

fn txt_stems(dir: &Path) -> Result<BTreeSet<String>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut stems = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem() {
                stems.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(stems)
}

fn read_text(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads `<stem>.txt` ground-truth files from `gt_dir` and the matching
/// prediction files from `pred_dir`. A missing prediction file means no
/// detections; a prediction file without ground truth is a background image.
pub fn load_image_set(gt_dir: &Path, pred_dir: &Path) -> Result<Vec<(String, ImageEval)>, EvalError> {
    let gt_stems = txt_stems(gt_dir)?;
    let pred_stems = if pred_dir.exists() {
        txt_stems(pred_dir)?
    } else {
        BTreeSet::new()
    };
    let mut out = Vec::new();
    for stem in gt_stems.union(&pred_stems) {
        let mut img = ImageEval::default();
        if gt_stems.contains(stem) {
            let path: PathBuf = gt_dir.join(format!("{stem}.txt"));
            let anns = parse_annotations(&read_text(&path)?).map_err(|source| EvalError::Parse {
                path: path.display().to_string(),
                source,
            })?;
            img.ground_truths = anns
                .into_iter()
                .map(|a| GroundTruthBox {
                    class_id: a.class_id,
                    x_center: a.x_center,
                    y_center: a.y_center,
                    width: a.width,
                    height: a.height,
                })
                .collect();
        }
        if pred_stems.contains(stem) {
            let path = pred_dir.join(format!("{stem}.txt"));
            let dets = parse_predictions(&read_text(&path)?).map_err(|source| EvalError::Parse {
                path: path.display().to_string(),
                source,
            })?;
            if let Some((line, d)) = dets
                .iter()
                .enumerate()
                .find(|(_, d)| !(0.0..=1.0).contains(&d.confidence))
            {
                return Err(EvalError::Confidence {
                    path: path.display().to_string(),
                    line: line + 1,
                    value: d.confidence,
                });
            }
            img.detections = dets;
        }
        out.push((stem.clone(), img));
    }
    Ok(out)
}

pub fn evaluate_dirs(gt_dir: &Path, pred_dir: &Path, options: &EvalOptions) -> Result<MetricsReport, EvalError> {
    let images: Vec<ImageEval> = load_image_set(gt_dir, pred_dir)?
        .into_iter()
        .map(|(_, img)| img)
        .collect();
    evaluate_images(&images, options).map(|(report, _)| report)
}
