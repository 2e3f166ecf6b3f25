//! Accuracy and IoU metrics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Evaluation summary. `confusion[t][p]` counts samples of true class `t`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub mean_iou: f64,
    pub part_avg_iou: Option<f64>,
    pub mean_category_part_iou: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

pub fn confusion(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::validation(format!("label {} outside {num_classes} classes", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// OA, mean per-class accuracy and dataset-aggregated mean IoU.
///
/// Classes without ground-truth samples are left out of the class-accuracy
/// mean; classes absent from both predictions and ground truth are left out
/// of the IoU mean.
pub fn compute_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    let m = confusion(pred, truth, num_classes)?;
    let total: u64 = m.iter().flatten().sum();
    let trace: u64 = (0..num_classes).map(|i| m[i][i]).sum();
    let mut accs = Vec::new();
    let mut ious = Vec::new();
    for c in 0..num_classes {
        let support: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|row| row[c]).sum();
        let tp = m[c][c];
        if support > 0 {
            accs.push(tp as f64 / support as f64);
        }
        let union = support + predicted - tp;
        if union > 0 {
            ious.push(tp as f64 / union as f64);
        }
    }
    Ok(Metrics {
        overall_accuracy: ratio(trace, total),
        mean_class_accuracy: mean(&accs),
        mean_iou: mean(&ious),
        part_avg_iou: None,
        mean_category_part_iou: None,
        confusion: m,
    })
}

/// Per-point predictions for one segmented shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeResult {
    pub category: usize,
    pub pred: Vec<usize>,
    pub truth: Vec<usize>,
}

/// IoU of one shape: the mean over its category's parts, where a part absent
/// from both prediction and ground truth scores 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> f64 {
    let ious: Vec<f64> = parts
        .iter()
        .map(|&part| {
            let (mut inter, mut union) = (0u64, 0u64);
            for (&p, &t) in pred.iter().zip(truth) {
                let (a, b) = (p == part, t == part);
                inter += u64::from(a && b);
                union += u64::from(a || b);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    mean(&ious)
}

/// Point-level metrics plus the part-averaged IoU (mean of [`shape_iou`]
/// over shapes) and its per-category mean.
pub fn segmentation_metrics(shapes: &[ShapeResult], part_sets: &[Vec<usize>], num_parts: usize) -> Result<Metrics> {
    let mut all_pred = Vec::new();
    let mut all_truth = Vec::new();
    let mut per_category = vec![Vec::new(); part_sets.len()];
    let mut per_shape = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        if s.pred.len() != s.truth.len() {
            return Err(Error::validation(format!("shape {i}: prediction and ground-truth lengths differ")));
        }
        let parts = part_sets
            .get(s.category)
            .ok_or_else(|| Error::validation(format!("shape {i}: unknown category {}", s.category)))?;
        let iou = shape_iou(&s.pred, &s.truth, parts);
        per_shape.push(iou);
        per_category[s.category].push(iou);
        all_pred.extend_from_slice(&s.pred);
        all_truth.extend_from_slice(&s.truth);
    }
    let mut m = compute_metrics(&all_pred, &all_truth, num_parts)?;
    m.part_avg_iou = Some(mean(&per_shape));
    let cats: Vec<f64> = per_category.iter().filter(|v| !v.is_empty()).map(|v| mean(v)).collect();
    m.mean_category_part_iou = Some(mean(&cats));
    Ok(m)
}

impl Metrics {
    /// `key=value` lines with fixed formatting.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "overall_accuracy={:.6}\nmean_class_accuracy={:.6}\nmean_iou={:.6}\n",
            self.overall_accuracy, self.mean_class_accuracy, self.mean_iou
        );
        if let Some(p) = self.part_avg_iou {
            s += &format!("part_avg_iou={p:.6}\n");
        }
        if let Some(p) = self.mean_category_part_iou {
            s += &format!("mean_category_part_iou={p:.6}\n");
        }
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .collect();
        s += &format!("confusion={}\n", rows.join(";"));
        s
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
