//! Confusion-matrix metrics and dataset evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ImageSample;
use crate::error::{shape_err, Result};
use crate::generator::Generator;
use crate::{Error, Tensor};

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// 1 where `p >= threshold`, else 0.
pub fn binarize(m: &Tensor, threshold: f32) -> Tensor {
    m.map(|p| (p >= threshold) as u8 as f32)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn is_binary(v: f32) -> bool {
    v == 0.0 || v == 1.0
}

impl ConfusionCounts {
    /// Tallies over two equally long binary masks.
    pub fn from_masks(t: &[f32], p: &[f32]) -> Result<Self> {
        if t.len() != p.len() {
            return Err(shape_err!("mask lengths differ ({} vs {})", t.len(), p.len()));
        }
        let mut c = Self::default();
        for (&t, &p) in t.iter().zip(p) {
            if !is_binary(t) || !is_binary(p) {
                return Err(Error::Input("confusion counts need binary masks".into()));
            }
            match (t == 1.0, p == 1.0) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// No positive pixel in the ground truth.
    pub fn truth_empty(&self) -> bool {
        self.tp + self.fn_ == 0
    }
}

/// Per-image or dataset-mean metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f2: f64,
    pub n_images: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["dice", "iou", "recall", "precision", "accuracy", "f2"];

    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.iou, self.recall, self.precision, self.accuracy, self.f2]
    }
}

/// `num / den`, or 1 when the denominator vanishes and the ground truth has
/// no positives, 0 when it vanishes otherwise.
fn ratio(num: f64, den: f64, truth_empty: bool) -> f64 {
    if den == 0.0 {
        if truth_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num / den
    }
}

pub fn compute_metrics(c: ConfusionCounts) -> MetricsReport {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let empty = c.truth_empty();
    let precision = ratio(tp, tp + fp, empty);
    let recall = ratio(tp, tp + fn_, empty);
    MetricsReport {
        dice: ratio(2.0 * tp, 2.0 * tp + fp + fn_, empty),
        iou: ratio(tp, tp + fp + fn_, empty),
        recall,
        precision,
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn, empty),
        f2: ratio(5.0 * precision * recall, 4.0 * precision + recall, empty),
        n_images: 1,
    }
}

/// Arithmetic mean of per-image reports.
pub fn mean_report(per_image: &[MetricsReport]) -> Result<MetricsReport> {
    if per_image.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = per_image.len() as f64;
    let mut sum = [0.0f64; 6];
    for r in per_image {
        sum.iter_mut().zip(r.values()).for_each(|(s, v)| *s += v);
    }
    let [dice, iou, recall, precision, accuracy, f2] = sum.map(|s| s / n);
    Ok(MetricsReport { dice, iou, recall, precision, accuracy, f2, n_images: per_image.len() })
}

/// Anything that maps an image batch to mask probabilities.
pub trait Segmenter {
    fn segment(&self, image: &Tensor) -> Result<Tensor>;
}

impl Segmenter for Generator {
    fn segment(&self, image: &Tensor) -> Result<Tensor> {
        self.predict(image)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub report: MetricsReport,
}

/// Evaluates every sample one at a time, returning per-image rows and their
/// mean.
pub fn evaluate_dataset(
    model: &dyn Segmenter,
    samples: &[ImageSample],
    threshold: f32,
) -> Result<(MetricsReport, Vec<ImageMetrics>)> {
    evaluate_with(model, samples, threshold, |_, _| Ok(()))
}

/// [`evaluate_dataset`] that also hands each sample's probability map to
/// `on_prediction`.
pub fn evaluate_with(
    model: &dyn Segmenter,
    samples: &[ImageSample],
    threshold: f32,
    mut on_prediction: impl FnMut(&ImageSample, &Tensor) -> Result<()>,
) -> Result<(MetricsReport, Vec<ImageMetrics>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = model.segment(&s.image)?;
        on_prediction(s, &probs)?;
        let pred = binarize(&probs, threshold);
        let counts = ConfusionCounts::from_masks(s.mask.data(), pred.data())?;
        rows.push(ImageMetrics { id: s.id.clone(), report: compute_metrics(counts) });
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.report).collect();
    Ok((mean_report(&reports)?, rows))
}
