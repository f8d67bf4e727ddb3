//! Confusion-matrix-backed evaluation: per-class IoU, mean IoU, overall
//! accuracy, and report rendering (text table + CSV).

use crate::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics: {0}")]
    Validation(String),
}

/// C×C counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, truth: &[u32], pred: &[u32]) -> Result<(), MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::Validation(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred.iter()) {
            if t as usize >= self.classes || p as usize >= self.classes {
                return Err(MetricsError::Validation(format!(
                    "label pair ({t}, {p}) out of range [0, {})",
                    self.classes
                )));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Combine evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::Validation(format!(
                "cannot merge {}-class into {}-class matrix",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        Ok(())
    }

    fn check_nonempty(&self) -> Result<(), MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::Validation(
                "metrics requested on an empty confusion matrix".into(),
            ));
        }
        Ok(())
    }

    /// TP/(TP+FP+FN) per class; `None` where the class appears in neither
    /// truth nor prediction (0/0).
    pub fn iou_per_class(&self) -> Result<Vec<Option<Scalar>>, MetricsError> {
        self.check_nonempty()?;
        let c = self.classes;
        let mut out = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.count(k, k);
            let fp: u64 = (0..c).filter(|&t| t != k).map(|t| self.count(t, k)).sum();
            let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| self.count(k, p)).sum();
            let denom = tp + fp + fn_;
            out.push(if denom == 0 {
                None
            } else {
                Some(tp as Scalar / denom as Scalar)
            });
        }
        Ok(out)
    }

    /// Mean IoU over classes present in truth or prediction. With
    /// `absent_as_zero`, 0/0 classes count as zero instead of being
    /// excluded.
    pub fn miou_with(&self, absent_as_zero: bool) -> Result<Scalar, MetricsError> {
        let ious = self.iou_per_class()?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for iou in &ious {
            match iou {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None if absent_as_zero => n += 1,
                None => {}
            }
        }
        if n == 0 {
            return Err(MetricsError::Validation("no classes observed".into()));
        }
        Ok(sum / n as Scalar)
    }

    pub fn miou(&self) -> Result<Scalar, MetricsError> {
        self.miou_with(false)
    }

    /// Overall accuracy: trace / total.
    pub fn oa(&self) -> Result<Scalar, MetricsError> {
        self.check_nonempty()?;
        let correct: u64 = (0..self.classes).map(|k| self.count(k, k)).sum();
        Ok(correct as Scalar / self.total() as Scalar)
    }
}

/// Text table: one row per class IoU, then mIoU and OA.
pub fn render_report(
    cm: &ConfusionMatrix,
    class_names: &[String],
) -> Result<String, MetricsError> {
    let ious = cm.iou_per_class()?;
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:>8}\n", "class", "IoU"));
    for (k, iou) in ious.iter().enumerate() {
        let name = class_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("class{k}"));
        match iou {
            Some(v) => out.push_str(&format!("{name:<16} {:>8.4}\n", v)),
            None => out.push_str(&format!("{name:<16} {:>8}\n", "-")),
        }
    }
    out.push_str(&format!("{:<16} {:>8.4}\n", "mIoU", cm.miou()?));
    out.push_str(&format!("{:<16} {:>8.4}\n", "OA", cm.oa()?));
    Ok(out)
}

/// Machine-readable twin of the text table.
pub fn render_report_csv(
    cm: &ConfusionMatrix,
    class_names: &[String],
) -> Result<String, MetricsError> {
    let ious = cm.iou_per_class()?;
    let mut out = String::from("name,iou\n");
    for (k, iou) in ious.iter().enumerate() {
        let name = class_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("class{k}"));
        match iou {
            Some(v) => out.push_str(&format!("{name},{v:.6}\n")),
            None => out.push_str(&format!("{name},\n")),
        }
    }
    out.push_str(&format!("mIoU,{:.6}\n", cm.miou()?));
    out.push_str(&format!("OA,{:.6}\n", cm.oa()?));
    Ok(out)
}
