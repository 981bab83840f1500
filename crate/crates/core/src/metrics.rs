//! Binary classification metrics with the diagnosed class as positive, and
//! per-example loss weights for the imbalanced 1:9 setting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(predictions: &[Label], labels: &[Label]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "f1",
                left: vec![predictions.len()],
                right: vec![labels.len()],
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("label list"));
        }
        let mut c = Confusion::default();
        for (p, y) in predictions.iter().zip(labels) {
            match (p.is_positive(), y.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// Precision, recall and F1, each 0 when its denominator is 0.
    pub fn scores(&self) -> Scores {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Scores { precision, recall, f1 }
    }
}

pub fn f1(predictions: &[Label], labels: &[Label]) -> Result<Scores> {
    Ok(Confusion::count(predictions, labels)?.scores())
}

/// Expected F1 of a classifier that says "diagnosed" with probability
/// `p_positive` regardless of input, when a fraction `prevalence` of users
/// is diagnosed.
pub fn random_baseline_f1(prevalence: f64, p_positive: f64) -> f64 {
    let tp = prevalence * p_positive;
    let denom = prevalence + p_positive;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// How training losses weight the two classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    /// Every example counts once.
    None,
    /// Each class gets half the total weight; weights still average to 1.
    #[default]
    Balanced,
}

impl ClassWeighting {
    /// Weights for `(positive, negative)` examples.
    pub fn weights(self, n_pos: usize, n_neg: usize) -> (f64, f64) {
        match self {
            ClassWeighting::Balanced if n_pos > 0 && n_neg > 0 => {
                let n = (n_pos + n_neg) as f64;
                (n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64))
            }
            _ => (1.0, 1.0),
        }
    }

    pub fn per_example(self, positive: &[bool]) -> Vec<f64> {
        let n_pos = positive.iter().filter(|&&p| p).count();
        let (wp, wn) = self.weights(n_pos, positive.len() - n_pos);
        positive.iter().map(|&p| if p { wp } else { wn }).collect()
    }
}

impl fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassWeighting::None => "none",
            ClassWeighting::Balanced => "balanced",
        })
    }
}

impl FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClassWeighting::None),
            "balanced" => Ok(ClassWeighting::Balanced),
            other => Err(Error::invalid(format!("unknown class weighting {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Control as C, Diagnosed as D};

    #[test]
    fn worked_example() {
        // TP=3, FP=1, FN=2 plus some true negatives.
        let pred = [D, D, D, D, C, C, C, C];
        let gold = [D, D, D, C, D, D, C, C];
        let s = f1(&pred, &gold).unwrap();
        assert_eq!(s.precision, 0.75);
        assert!((s.recall - 0.6).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conventions() {
        assert_eq!(f1(&[D, C], &[D, C]).unwrap(), Scores { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(f1(&[C, C], &[D, C]).unwrap(), Scores::default());
        assert!(f1(&[C], &[D, C]).is_err());
        assert!(f1(&[], &[]).is_err());
    }

    #[test]
    fn random_baseline() {
        assert!((random_baseline_f1(0.1, 0.5) - 1.0 / 6.0).abs() < 1e-15);
        assert!((random_baseline_f1(0.1, 1.0) - 2.0 * 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn balanced_weights_average_one() {
        let w = ClassWeighting::Balanced.per_example(&[true, false, false, false]);
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert_eq!(ClassWeighting::Balanced.per_example(&[true, true]), vec![1.0, 1.0]);
        assert_eq!(ClassWeighting::None.per_example(&[true, false]), vec![1.0, 1.0]);
    }
}
