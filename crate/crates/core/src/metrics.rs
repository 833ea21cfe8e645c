//! Change-detection metrics with CDnet label semantics.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::training::{classify_gt, LabelClass};

/// Foreground iff `p ≥ theta`. `p` is a `(1, 1, H, W)` probability map;
/// the mask is returned row-major.
pub fn threshold_mask<T: Scalar>(p: &Tensor<T>, theta: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("threshold {theta} not in [0, 1]")));
    }
    let s = p.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!("threshold_mask expects (1, 1, H, W), got {s}")));
    }
    Ok(p.data().iter().map(|v| v.as_f64() >= theta).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Result of scoring one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub counts: ConfusionCounts,
    /// Pixels whose ground-truth value is not a known label; they are skipped.
    pub unknown: u64,
    /// `(row, col, value)` of the first unknown label.
    pub first_unknown: Option<(usize, usize, u8)>,
}

/// Scores a binary prediction against a ground-truth label map. Pixels
/// labelled 85/170, outside `roi`, or carrying an unknown label are skipped.
pub fn accumulate(pred: &[bool], gt: &[u8], roi: Option<&[bool]>, width: usize) -> Result<FrameCounts> {
    if pred.len() != gt.len() || roi.is_some_and(|r| r.len() != gt.len()) {
        return Err(Error::Shape(format!(
            "prediction ({}), ground truth ({}) and roi sizes differ",
            pred.len(),
            gt.len()
        )));
    }
    if width == 0 || gt.len() % width != 0 {
        return Err(Error::Shape(format!("width {width} does not divide {} pixels", gt.len())));
    }
    let mut out = FrameCounts::default();
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if roi.is_some_and(|r| !r[i]) {
            continue;
        }
        let c = &mut out.counts;
        match classify_gt(g) {
            Some(LabelClass::Foreground) if p => c.tp += 1,
            Some(LabelClass::Foreground) => c.fn_ += 1,
            Some(LabelClass::Background) if p => c.fp += 1,
            Some(LabelClass::Background) => c.tn += 1,
            Some(LabelClass::Ignored) => {}
            None => {
                out.unknown += 1;
                out.first_unknown.get_or_insert((i / width, i % width, g));
            }
        }
    }
    Ok(out)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2·precision·recall / (precision + recall)`; 1 when there is nothing to
/// detect and nothing detected, 0 when there are no true positives otherwise.
pub fn f_measure(c: &ConfusionCounts) -> f64 {
    if c.tp == 0 {
        return if c.fp == 0 && c.fn_ == 0 { 1.0 } else { 0.0 };
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Percentage of wrong classifications, `100·(fp + fn) / total`.
pub fn pwc(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Data("PWC undefined: no evaluated pixels".into()));
    }
    Ok(100.0 * (c.fp + c.fn_) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Ratios with `0/0 = 0`.
pub fn rates(c: &ConfusionCounts) -> Rates {
    Rates {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fmeasure: f64,
    pub pwc: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        let r = rates(c);
        Ok(Self {
            fmeasure: f_measure(c),
            pwc: pwc(c)?,
            precision: r.precision,
            recall: r.recall,
            fpr: r.fpr,
            fnr: r.fnr,
        })
    }

    /// Unweighted mean of each field.
    pub fn mean(items: &[Metrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Data("cannot average an empty group".into()));
        }
        let n = items.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            fmeasure: avg(|m| m.fmeasure),
            pwc: avg(|m| m.pwc),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            fpr: avg(|m| m.fpr),
            fnr: avg(|m| m.fnr),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: u32,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

/// Counts of one video, summed over its frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoCounts {
    pub category: String,
    pub video: String,
    pub counts: ConfusionCounts,
    pub frames: Vec<FrameReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub category: String,
    pub video: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub videos: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub videos: Vec<VideoReport>,
    pub categories: Vec<CategoryReport>,
    /// Mean over categories of the category means.
    pub overall_by_category: Metrics,
    /// Mean over all videos.
    pub overall_by_video: Metrics,
}

/// Video metrics from summed counts, category metrics as the mean over its
/// videos, overall both as the mean over categories and over videos.
/// Categories keep their order of first appearance.
pub fn aggregate(videos: Vec<VideoCounts>) -> Result<MetricReport> {
    if videos.is_empty() {
        return Err(Error::Data("no videos to aggregate".into()));
    }
    let mut reports = Vec::with_capacity(videos.len());
    for v in videos {
        let metrics = Metrics::from_counts(&v.counts)
            .map_err(|e| Error::Data(format!("video {}/{}: {e}", v.category, v.video)))?;
        reports.push(VideoReport {
            category: v.category,
            video: v.video,
            metrics,
            counts: v.counts,
            frames: v.frames,
        });
    }
    let mut order: Vec<&str> = Vec::new();
    for r in &reports {
        if !order.contains(&r.category.as_str()) {
            order.push(&r.category);
        }
    }
    let mut categories = Vec::with_capacity(order.len());
    for cat in order {
        let members: Vec<Metrics> = reports.iter().filter(|r| r.category == cat).map(|r| r.metrics).collect();
        categories.push(CategoryReport {
            category: cat.to_owned(),
            videos: members.len(),
            metrics: Metrics::mean(&members)?,
        });
    }
    let cat_metrics: Vec<Metrics> = categories.iter().map(|c| c.metrics).collect();
    let video_metrics: Vec<Metrics> = reports.iter().map(|r| r.metrics).collect();
    Ok(MetricReport {
        overall_by_category: Metrics::mean(&cat_metrics)?,
        overall_by_video: Metrics::mean(&video_metrics)?,
        videos: reports,
        categories,
    })
}
