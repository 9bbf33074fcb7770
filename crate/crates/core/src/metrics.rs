//! Tolerance-aware confusion counts and precision/recall/F1.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryImage;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matched_gt: usize,
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            matched_gt: self.matched_gt + o.matched_gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Macro,
    Micro,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Aggregation::Macro),
            "micro" => Ok(Aggregation::Micro),
            _ => Err(Error::Config(format!("aggregation must be macro or micro, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tolerance_px: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance_px: 2.0,
            aggregation: Aggregation::Macro,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_px >= 0.0 && self.tolerance_px.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be a non-negative number, got {}",
                self.tolerance_px
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl ScoreTriple {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Offsets `(dy, dx)` with `dy^2 + dx^2 <= d^2`.
fn disk(d: f64) -> Vec<(isize, isize)> {
    let r = d.floor() as isize;
    let d2 = d * d;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dy * dy + dx * dx) as f64) <= d2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn dilate_disk(f: &BinaryImage, offsets: &[(isize, isize)]) -> BinaryImage {
    let (w, h) = (f.width() as isize, f.height() as isize);
    let mut out = BinaryImage::new(f.width(), f.height());
    for (r, c) in f.pixels() {
        for &(dy, dx) in offsets {
            let (y, x) = (r as isize + dy, c as isize + dx);
            if y >= 0 && x >= 0 && y < h && x < w {
                out.set(y as usize, x as usize, true);
            }
        }
    }
    out
}

/// A prediction is a TP iff a GT pixel lies within Euclidean distance `d`;
/// a GT pixel is matched iff a prediction lies within `d`.
pub fn match_with_tolerance(pred: &BinaryImage, gt: &BinaryImage, d: f64) -> Result<ConfusionCounts> {
    pred.same_size(gt)?;
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::Config(format!("tolerance must be non-negative, got {d}")));
    }
    let offsets = disk(d);
    let near_gt = dilate_disk(gt, &offsets);
    let near_pred = dilate_disk(pred, &offsets);
    let mut c = ConfusionCounts::default();
    for i in 0..pred.len() {
        if pred.data()[i] {
            if near_gt.data()[i] {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        if gt.data()[i] {
            if near_pred.data()[i] {
                c.matched_gt += 1;
            } else {
                c.fn_ += 1;
            }
        }
    }
    Ok(c)
}

pub fn compute_scores(c: &ConfusionCounts) -> ScoreTriple {
    let precision = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.matched_gt + c.fn_ == 0 {
        1.0
    } else {
        c.matched_gt as f64 / (c.matched_gt + c.fn_) as f64
    };
    ScoreTriple::from_pr(precision, recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image: String,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub scores: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    #[serde(rename = "macro")]
    pub macro_: ScoreTriple,
    pub micro: ScoreTriple,
    pub tolerance_px: f64,
    pub aggregation: Aggregation,
    #[serde(skip)]
    pub per_image: Vec<ImageScore>,
}

impl DatasetScores {
    /// Scores under the configured aggregation.
    pub fn headline(&self) -> ScoreTriple {
        match self.aggregation {
            Aggregation::Macro => self.macro_,
            Aggregation::Micro => self.micro,
        }
    }
}

/// Pairs predictions with ground truth by name and scores every pair.
pub fn evaluate_dataset(
    preds: &[(String, BinaryImage)],
    gts: &[(String, BinaryImage)],
    config: &EvalConfig,
) -> Result<DatasetScores> {
    config.validate()?;
    let gt_by_name: BTreeMap<&str, &BinaryImage> = gts.iter().map(|(n, g)| (n.as_str(), g)).collect();
    let pred_names: std::collections::HashSet<&str> = preds.iter().map(|(n, _)| n.as_str()).collect();
    if let Some((name, _)) = gts.iter().find(|(n, _)| !pred_names.contains(n.as_str())) {
        return Err(Error::Dataset(format!("no prediction for ground truth {name}")));
    }
    let mut per_image = Vec::with_capacity(preds.len());
    for (name, pred) in preds {
        let gt = gt_by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Dataset(format!("no ground truth for prediction {name}")))?;
        let counts = match_with_tolerance(pred, gt, config.tolerance_px)
            .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        per_image.push(ImageScore {
            image: name.clone(),
            counts,
            scores: compute_scores(&counts),
        });
    }
    Ok(aggregate(per_image, config))
}

pub fn aggregate(per_image: Vec<ImageScore>, config: &EvalConfig) -> DatasetScores {
    let n = per_image.len().max(1) as f64;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    let mut total = ConfusionCounts::default();
    for s in &per_image {
        p += s.scores.precision;
        r += s.scores.recall;
        f += s.scores.f1;
        total = total + s.counts;
    }
    DatasetScores {
        macro_: ScoreTriple {
            precision: p / n,
            recall: r / n,
            f1: f / n,
        },
        micro: compute_scores(&total),
        tolerance_px: config.tolerance_px,
        aggregation: config.aggregation,
        per_image,
    }
}

/// Name of the closing row in the evaluation CSV.
pub const SUMMARY_ROW: &str = "summary";

/// Writes `image,tp,fp,fn,matched_gt,precision,recall,f1`, one row per image
/// and a final `summary` row with pooled counts and the headline scores.
pub fn write_eval_csv(scores: &DatasetScores, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "tp", "fp", "fn", "matched_gt", "precision", "recall", "f1"])?;
    let record = |name: &str, c: &ConfusionCounts, s: &ScoreTriple| {
        [
            name.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.matched_gt.to_string(),
            format!("{:.6}", s.precision),
            format!("{:.6}", s.recall),
            format!("{:.6}", s.f1),
        ]
    };
    for s in &scores.per_image {
        w.write_record(record(&s.image, &s.counts, &s.scores))?;
    }
    let pooled = scores
        .per_image
        .iter()
        .fold(ConfusionCounts::default(), |acc, s| acc + s.counts);
    w.write_record(record(SUMMARY_ROW, &pooled, &scores.headline()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval_summary(scores: &DatasetScores, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(scores)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
