use serde::Serialize;

use super::EvalError;
use crate::corruption::TokenSequence;
use crate::ingest::FlowRecord;
use crate::model::{ModelCheckpoint, Nethira, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of records whose true label is this class.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion matrix indexed `[true][predicted]`, per-class scores, and their
/// unweighted means. A ratio with a zero denominator is 0; such classes still
/// count toward the macro means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub zero_division: f64,
}

impl MetricsReport {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.n_classes()).map(|i| self.confusion[i][i]).sum();
        ratio(correct, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report_from_confusion(confusion: Vec<Vec<u64>>) -> MetricsReport {
    let n = confusion.len();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let macro_avg = MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    MetricsReport {
        confusion,
        per_class,
        macro_avg,
        zero_division: 0.0,
    }
}

pub fn metrics_from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<MetricsReport, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        let max = t.max(p);
        if max >= n_classes {
            return Err(EvalError::ClassCountMismatch {
                model: n_classes,
                data: max + 1,
            });
        }
        confusion[t][p] += 1;
    }
    Ok(report_from_confusion(confusion))
}

/// Arg-max class of every record.
pub fn predict<F: Real>(model: &Nethira<F>, records: &[FlowRecord]) -> Result<Vec<usize>, EvalError> {
    records
        .iter()
        .map(|r| Ok(model.classify(&TokenSequence::from_record(r))?.argmax()))
        .collect()
}

pub(crate) fn labels(records: &[FlowRecord]) -> Result<Vec<usize>, EvalError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.map(|l| l as usize).ok_or(EvalError::Unlabeled { index: i }))
        .collect()
}

pub fn evaluate_model<F: Real>(model: &Nethira<F>, test: &[FlowRecord]) -> Result<MetricsReport, EvalError> {
    let n_classes = model.config().n_classes.ok_or(crate::model::ModelError::NoClassifierHead)?;
    let truth = labels(test)?;
    if let Some(&max) = truth.iter().max() {
        if max >= n_classes {
            return Err(EvalError::ClassCountMismatch {
                model: n_classes,
                data: max + 1,
            });
        }
    }
    let pred = predict(model, test)?;
    metrics_from_predictions(&truth, &pred, n_classes)
}

/// Metrics of a fine-tuned checkpoint on labeled records.
pub fn evaluate<F: Real>(ckpt: &ModelCheckpoint<F>, test: &[FlowRecord]) -> Result<MetricsReport, EvalError> {
    evaluate_model(&ckpt.model, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_class_case() {
        let r = report_from_confusion(vec![vec![3, 1], vec![2, 4]]);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 8.0 / 11.0).abs() < 1e-12);
        assert!((r.macro_avg.f1 - 0.6970).abs() < 5e-5);
        assert_eq!(r.total(), 10);
    }

    #[test]
    fn absent_class_scores_zero_and_counts() {
        let r = metrics_from_predictions(&[0, 1, 0], &[0, 1, 0], 3).unwrap();
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!((r.macro_avg.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = metrics_from_predictions(&y, &y, 3).unwrap();
        assert_eq!(r.macro_avg.f1, 1.0);
        assert_eq!(r.macro_avg.precision, 1.0);
        assert_eq!(r.macro_avg.recall, 1.0);
    }

    #[test]
    fn label_beyond_classes_is_a_mismatch() {
        assert!(matches!(
            metrics_from_predictions(&[0, 3], &[0, 0], 2),
            Err(EvalError::ClassCountMismatch { model: 2, data: 4 })
        ));
    }
}
