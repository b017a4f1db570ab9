use std::fmt;

use crate::error::{HsdaError, Result};

/// Binary confusion counts (class 1 is positive) and derived percentages.
/// A ratio with a zero denominator is reported as 0 and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<Metrics> {
        let total = tp + fp + fn_ + tn;
        if total == 0 {
            return Err(HsdaError::Usage("no samples to evaluate".into()));
        }
        let (p, p_undef) = ratio(tp, tp + fp);
        let (r, r_undef) = ratio(tp, tp + fn_);
        let (f1, f1_undef) = if p + r > 0.0 {
            (2.0 * p * r / (p + r), false)
        } else {
            (0.0, true)
        };
        Ok(Metrics {
            tp,
            fp,
            fn_,
            tn,
            accuracy: 100.0 * (tp + tn) as f64 / total as f64,
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
            precision_undefined: p_undef,
            recall_undefined: r_undef,
            f1_undefined: f1_undef,
        })
    }

    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
        if predicted.len() != truth.len() {
            return Err(HsdaError::Usage("prediction and label counts differ".into()));
        }
        let mut c = [[0usize; 2]; 2];
        for (&p, &t) in predicted.iter().zip(truth) {
            c[t.min(1)][p.min(1)] += 1;
        }
        Metrics::from_counts(c[1][1], c[0][1], c[1][0], c[0][0])
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The four headline values rounded to two decimals, in the order
    /// F1, accuracy, precision, recall.
    pub fn rounded(&self) -> [String; 4] {
        [self.f1, self.accuracy, self.precision, self.recall].map(|v| format!("{v:.2}"))
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let [f1, acc, prec, rec] = self.rounded();
        vec![
            ("accuracy", acc),
            ("precision", prec),
            ("recall", rec),
            ("f1", f1),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("tn", self.tn.to_string()),
            ("precision_undefined", self.precision_undefined.to_string()),
            ("recall_undefined", self.recall_undefined.to_string()),
            ("f1_undefined", self.f1_undefined.to_string()),
        ]
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [f1, acc, prec, rec] = self.rounded();
        writeln!(f, "{:<10} {:>8} {:>8} {:>9} {:>8}", "", "F1", "Accuracy", "Precision", "Recall")?;
        writeln!(f, "{:<10} {f1:>8} {acc:>8} {prec:>9} {rec:>8}", "test")?;
        write!(f, "confusion: tp={} fp={} fn={} tn={}", self.tp, self.fp, self.fn_, self.tn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_denominators_flagged() {
        let m = Metrics::from_counts(0, 0, 5, 5).unwrap();
        assert!(m.precision_undefined && m.f1_undefined && !m.recall_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(Metrics::from_counts(0, 0, 0, 0).is_err());
    }
}
