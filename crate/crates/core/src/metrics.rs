//! Evaluation metrics: Matthews correlation, accuracy, binary F1, Pearson and
//! Spearman correlation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mcc,
    Accuracy,
    F1,
    Pearson,
    Spearman,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mcc => "mcc",
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
            MetricKind::Pearson => "pearson",
            MetricKind::Spearman => "spearman",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcc" => Ok(MetricKind::Mcc),
            "accuracy" => Ok(MetricKind::Accuracy),
            "f1" => Ok(MetricKind::F1),
            "pearson" => Ok(MetricKind::Pearson),
            "spearman" => Ok(MetricKind::Spearman),
            other => Err(Error::Usage(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

/// Computes `kind` over paired predictions and labels.
///
/// Classification metrics read values as class ids; MCC and F1 are binary
/// with class 1 as the positive class. A degenerate MCC confusion matrix
/// (zero denominator) yields 0.0, as does F1 with no true positives.
pub fn metric(kind: MetricKind, predictions: &[f64], labels: &[f64]) -> Result<MetricValue> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(Error::Metric("need at least 2 examples".into()));
    }
    let value = match kind {
        MetricKind::Accuracy => {
            let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
            hits as f64 / labels.len() as f64
        }
        MetricKind::Mcc => {
            let c = Confusion::binary(predictions, labels)?;
            let denom = ((c.tp + c.fp) * (c.tp + c.fn_) * (c.tn + c.fp) * (c.tn + c.fn_)).sqrt();
            if denom == 0.0 {
                0.0
            } else {
                (c.tp * c.tn - c.fp * c.fn_) / denom
            }
        }
        MetricKind::F1 => {
            let c = Confusion::binary(predictions, labels)?;
            if c.tp == 0.0 {
                0.0
            } else {
                2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn_)
            }
        }
        MetricKind::Pearson => pearson(predictions, labels)?,
        MetricKind::Spearman => pearson(&fractional_ranks(predictions), &fractional_ranks(labels))?,
    };
    Ok(MetricValue { kind, value })
}

struct Confusion {
    tp: f64,
    tn: f64,
    fp: f64,
    fn_: f64,
}

impl Confusion {
    fn binary(predictions: &[f64], labels: &[f64]) -> Result<Self> {
        let mut c = Confusion {
            tp: 0.0,
            tn: 0.0,
            fp: 0.0,
            fn_: 0.0,
        };
        for (&p, &l) in predictions.iter().zip(labels) {
            let (p, l) = (binary_class(p)?, binary_class(l)?);
            match (p, l) {
                (true, true) => c.tp += 1.0,
                (false, false) => c.tn += 1.0,
                (true, false) => c.fp += 1.0,
                (false, true) => c.fn_ += 1.0,
            }
        }
        Ok(c)
    }
}

fn binary_class(v: f64) -> Result<bool> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::Metric(format!("binary metric got class {v}")))
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(kind: MetricKind, p: &[f64], l: &[f64]) -> f64 {
        metric(kind, p, l).unwrap().value
    }

    #[test]
    fn perfect_binary_predictions() {
        let l = [0.0, 1.0, 1.0, 0.0, 1.0];
        assert_eq!(value(MetricKind::Mcc, &l, &l), 1.0);
        assert_eq!(value(MetricKind::Accuracy, &l, &l), 1.0);
        assert_eq!(value(MetricKind::F1, &l, &l), 1.0);
    }

    #[test]
    fn inverted_binary_predictions() {
        let l = [0.0, 1.0, 1.0, 0.0];
        let p: Vec<f64> = l.iter().map(|v| 1.0 - v).collect();
        assert_eq!(value(MetricKind::Mcc, &p, &l), -1.0);
        assert_eq!(value(MetricKind::Accuracy, &p, &l), 0.0);
    }

    #[test]
    fn degenerate_mcc_is_zero() {
        assert_eq!(value(MetricKind::Mcc, &[1.0, 1.0, 1.0], &[0.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn monotone_linear_correlations() {
        let p = [1.0, 2.0, 3.0, 4.0];
        let l = [2.0, 4.0, 6.0, 8.0];
        assert!((value(MetricKind::Pearson, &p, &l) - 1.0).abs() < 1e-15);
        assert!((value(MetricKind::Spearman, &p, &l) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_get_averaged_ranks() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn zero_variance_correlation_is_error() {
        assert!(matches!(
            metric(MetricKind::Pearson, &[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn length_checks() {
        assert!(metric(MetricKind::Accuracy, &[1.0], &[1.0]).is_err());
        assert!(metric(MetricKind::Accuracy, &[1.0, 0.0], &[1.0]).is_err());
        assert!(metric(MetricKind::Mcc, &[2.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
