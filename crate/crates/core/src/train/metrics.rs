//! Confusion matrix, per-class accuracy and overall accuracy.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Recall per class; 0 for classes absent from the truth vector.
    pub per_class_acc: Vec<f64>,
    pub oa: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("confusion matrix must be square and non-empty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let per_class_acc = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        Ok(Metrics {
            oa: trace as f64 / total as f64,
            per_class_acc,
            confusion,
        })
    }

    /// Builds the confusion matrix from 0-based class indices.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Contract(format!("class index out of range 0..{n_classes}")));
            }
            confusion[t][p] += 1;
        }
        Metrics::from_confusion(confusion)
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Test samples of class `i`.
    pub fn count(&self, i: usize) -> u64 {
        self.confusion[i].iter().sum()
    }

    pub fn correct(&self, i: usize) -> u64 {
        self.confusion[i][i]
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// `class,name,count,correct,accuracy` rows followed by an `OA` row.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,name,count,correct,accuracy\n");
        for i in 0..self.n_classes() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("");
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                i + 1,
                name,
                self.count(i),
                self.correct(i),
                self.per_class_acc[i]
            );
        }
        let trace: u64 = (0..self.n_classes()).map(|i| self.correct(i)).sum();
        let _ = writeln!(out, "OA,all,{},{},{:.6}", self.total(), trace, self.oa);
        out
    }

    /// Human-readable key/value report with the confusion matrix as CSV.
    pub fn report(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "oa: {:.6}", self.oa);
        let _ = writeln!(out, "samples: {}", self.total());
        for i in 0..self.n_classes() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "class {} ({name}): {:.6}", i + 1, self.per_class_acc[i]);
        }
        let _ = writeln!(out, "confusion (rows = truth):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_example() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![0, 4]]).unwrap();
        assert_eq!(m.oa, 7.0 / 8.0);
        assert_eq!(m.per_class_acc, vec![0.75, 1.0]);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truth = [0, 1, 2, 2, 1];
        let m = Metrics::from_predictions(&truth, &truth, 3).unwrap();
        assert_eq!(m.oa, 1.0);
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn csv_layout() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![0, 4]]).unwrap();
        let csv = m.to_csv(&["a".into(), "b".into()]);
        assert_eq!(
            csv,
            "class,name,count,correct,accuracy\n1,a,4,3,0.750000\n2,b,4,4,1.000000\nOA,all,8,7,0.875000\n"
        );
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(Metrics::from_predictions(&[], &[], 2).is_err());
        assert!(Metrics::from_predictions(&[0], &[0, 1], 2).is_err());
        assert!(Metrics::from_predictions(&[2], &[0], 2).is_err());
    }
}
