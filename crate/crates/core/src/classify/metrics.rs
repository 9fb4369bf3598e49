use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Ground-truth instances.
    pub support: u64,
    pub predicted: u64,
    pub true_positives: u64,
    /// `None` when the class has neither ground truth nor predictions.
    pub precision: Option<f64>,
    /// `None` when the class has no ground truth.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Accuracy plus macro-averaged recall, precision and F1.
///
/// Averaging conventions:
/// - recall averages over classes with ground truth;
/// - precision and F1 average over classes that have ground truth or were
///   predicted; a class with ground truth that is never predicted scores
///   precision 0, and a predicted class without ground truth scores 0 too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// `confusion[label][prediction]`
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no samples to score".into()));
    }
    if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Validation(format!("class index {bad} out of range for {n_classes}")));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let active = support > 0 || predicted > 0;
            let precision = active.then(|| if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 });
            let recall = (support > 0).then(|| tp as f64 / support as f64);
            let f1 = active.then(|| {
                let fp_fn = (predicted - tp) + (support - tp);
                if tp == 0 {
                    0.0
                } else {
                    2.0 * tp as f64 / (2 * tp + fp_fn) as f64
                }
            });
            ClassMetrics {
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_avg = |pick: fn(&ClassMetrics) -> Option<f64>| {
        let vals: Vec<f64> = per_class.iter().filter_map(pick).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        accuracy: correct as f64 / labels.len() as f64,
        recall: macro_avg(|m| m.recall),
        precision: macro_avg(|m| m.precision),
        f1: macro_avg(|m| m.f1),
        confusion,
        per_class,
    })
}
