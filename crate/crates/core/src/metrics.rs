//! Weighted and unweighted accuracy.

use serde::{Deserialize, Serialize};

use crate::data::{Emotion, NUM_CLASSES};
use crate::error::{invalid, Result};

/// `confusion[true][predicted]` counts with the two accuracies derived from
/// it. `wa` is overall accuracy; `ua` is the mean recall over classes that
/// occur in the reference labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wa: f64,
    pub ua: f64,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub n: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        let n: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let recalls: Vec<f64> = confusion
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().sum::<usize>() > 0)
            .map(|(c, row)| row[c] as f64 / row.iter().sum::<usize>() as f64)
            .collect();
        EvalReport {
            wa: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            ua: if recalls.is_empty() {
                0.0
            } else {
                recalls.iter().sum::<f64>() / recalls.len() as f64
            },
            confusion,
            n,
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(invalid!("{} labels but {} predictions", truth.len(), predicted.len()));
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(invalid!("class index out of range: true {t}, predicted {p}"));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        let row = &self.confusion[class];
        let total: usize = row.iter().sum();
        (total > 0).then(|| row[class] as f64 / total as f64)
    }

    /// Plain-text summary with the confusion matrix.
    pub fn render(&self) -> String {
        let mut s = format!("n = {}\nWA = {:.4}\nUA = {:.4}\n\n{:>10}", self.n, self.wa, self.ua, "true\\pred");
        for e in Emotion::ALL {
            s.push_str(&format!("{:>9}", e.name()));
        }
        s.push('\n');
        for (e, row) in Emotion::ALL.iter().zip(&self.confusion) {
            s.push_str(&format!("{:>10}", e.name()));
            for c in row {
                s.push_str(&format!("{c:>9}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 3, 3];
        let r = EvalReport::from_predictions(&y, &y).unwrap();
        assert_eq!((r.wa, r.ua, r.n), (1.0, 1.0, 5));
    }

    #[test]
    fn majority_class_on_imbalanced_labels() {
        let mut truth = vec![0; 10];
        truth.extend([1; 10]);
        truth.extend([2; 10]);
        truth.extend([3; 70]);
        let r = EvalReport::from_predictions(&truth, &[3; 100]).unwrap();
        assert_eq!(r.wa, 0.7);
        assert_eq!(r.ua, 0.25);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
        }
    }

    #[test]
    fn duplicating_a_class_moves_wa_not_ua() {
        let base = [[8, 2, 0, 0], [1, 5, 4, 0], [0, 0, 10, 0], [3, 0, 0, 7]];
        let mut dup = base;
        dup[1].iter_mut().for_each(|c| *c *= 3);
        let (a, b) = (EvalReport::from_confusion(base), EvalReport::from_confusion(dup));
        assert!((a.ua - b.ua).abs() < 1e-15);
        assert!((a.wa - b.wa).abs() > 1e-3);
    }

    #[test]
    fn absent_classes_do_not_count_toward_ua() {
        let r = EvalReport::from_predictions(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert!((r.ua - 0.75).abs() < 1e-15);
        assert_eq!(r.recall(2), None);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(EvalReport::from_predictions(&[0], &[]).is_err());
        assert!(EvalReport::from_predictions(&[4], &[0]).is_err());
    }
}
