//! Confusion matrix and the classification scores derived from it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::ClassVocabulary;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for l in [truth, predicted] {
            if l >= self.classes {
                return Err(Error::LabelOutOfRange { label: l, classes: self.classes });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    /// Elementwise sum, for combining shards evaluated separately.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::DimensionMismatch { expected: self.classes, found: other.classes });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.classes).map(|c| self.row(c).to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Header of class names, then one row of counts per true class.
    pub fn to_csv(&self, vocabulary: &ClassVocabulary) -> String {
        let mut out = vocabulary.names().join(",");
        out.push('\n');
        for c in 0..self.classes {
            let row: Vec<String> = self.row(c).iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall_micro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Macro averages run over classes that occur as a true label.
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let c = confusion.classes();
        let accuracy = confusion.trace() as f64 / total as f64;
        let (mut recall_sum, mut f1_sum, mut f1_weighted, mut present) = (0.0, 0.0, 0.0, 0usize);
        for k in 0..c {
            let support: u64 = confusion.row(k).iter().sum();
            if support == 0 {
                continue;
            }
            let tp = confusion.get(k, k) as f64;
            let predicted: u64 = (0..c).map(|r| confusion.get(r, k)).sum();
            let recall = tp / support as f64;
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            recall_sum += recall;
            f1_sum += f1;
            f1_weighted += f1 * support as f64;
            present += 1;
        }
        Ok(Self {
            accuracy,
            // single-label classification: pooled TP over pooled support
            recall_micro: confusion.trace() as f64 / total as f64,
            recall_macro: recall_sum / present as f64,
            f1_macro: f1_sum / present as f64,
            f1_weighted: f1_weighted / total as f64,
            samples: total,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), found: predicted.len() });
        }
        let mut confusion = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion.record(t, p)?;
        }
        Self::from_confusion(confusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 2, 2, 1];
        let r = MetricsReport::from_predictions(&truth, &truth, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1_macro, 1.0);
        for t in 0..3 {
            for p in 0..3 {
                if t != p {
                    assert_eq!(r.confusion.get(t, p), 0);
                }
            }
        }
    }

    #[test]
    fn four_sample_hand_example() {
        // class 1 misread as class 0 once
        let r = MetricsReport::from_predictions(&[0, 1, 0, 1], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.confusion.rows(), vec![vec![2, 0], vec![1, 1]]);
        assert_eq!(r.recall_macro, 0.75);
        // class 0: P = 2/3, R = 1 -> F1 = 0.8; class 1: P = 1, R = 1/2 -> F1 = 2/3
        let f1_0 = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
        let f1_1 = 2.0 * 1.0 * 0.5 / 1.5;
        assert!((r.f1_macro - (f1_0 + f1_1) / 2.0).abs() < 1e-15);
        assert!((r.f1_macro - 0.7333333).abs() < 1e-6);
        assert_eq!(r.recall_micro, r.accuracy);
    }

    #[test]
    fn absent_classes_are_skipped_in_macro() {
        let r = MetricsReport::from_predictions(&[0, 0, 2], &[0, 1, 2], 4).unwrap();
        assert_eq!(r.recall_macro, (0.5 + 1.0) / 2.0);
        assert!(MetricsReport::from_predictions(&[], &[], 3).is_err());
    }

    #[test]
    fn merge_and_csv() {
        let mut a = ConfusionMatrix::new(2);
        a.record(0, 1).unwrap();
        let mut b = ConfusionMatrix::new(2);
        b.record(1, 1).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 2);
        let vocab = ClassVocabulary::new(vec!["el".into(), "su".into()]).unwrap();
        assert_eq!(a.to_csv(&vocab), "el,su\n0,1\n0,1\n");
        assert!(a.record(2, 0).is_err());
    }
}
