//! Evaluation metrics: accuracy, Matthews correlation (binary), Spearman and
//! Pearson correlation.
//!
//! Degenerate inputs (a confusion-matrix margin of zero, a constant vector)
//! score 0 rather than NaN so that low-data runs still produce a number.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Matthews,
    Spearman,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Matthews => "matthews",
            Metric::Spearman => "spearman",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

/// A correlation value and whether it was forced to 0 by zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(Error::validation(format!("length mismatch: {a} vs {b}")));
    }
    if a < min {
        return Err(Error::validation(format!("need at least {min} values, got {a}")));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), gold.len(), 1)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn matthews_corr(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), gold.len(), 1)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {
                return Err(Error::validation(format!(
                    "matthews correlation needs binary labels, got {p} / {g}"
                )))
            }
        }
    }
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_lengths(x.len(), y.len(), 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(x, y).map(|c| c.value)
}

/// 1-based ranks with ties sharing the mean of the positions they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold 1-based ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<Correlation> {
    check_lengths(pred.len(), gold.len(), 2)?;
    let c = pearson(&fractional_ranks(pred), &fractional_ranks(gold))?;
    if c.degenerate {
        log::warn!("spearman correlation undefined for a constant input; reporting 0");
    }
    Ok(c)
}

pub fn spearman_corr(pred: &[f64], gold: &[f64]) -> Result<f64> {
    spearman(pred, gold).map(|c| c.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1, 0], &[1, 1, 1, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn matthews_cases() {
        assert_eq!(matthews_corr(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(matthews_corr(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(matthews_corr(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(matthews_corr(&[0, 1], &[1, 0]).unwrap(), -1.0);
        assert!(matthews_corr(&[2, 0], &[1, 0]).is_err());
    }

    #[test]
    fn spearman_cases() {
        let inc = [1.0, 2.0, 5.0, 9.0];
        assert!((spearman_corr(&inc, &[0.1, 0.2, 0.3, 0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_corr(&inc, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        let c = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
        assert!(spearman_corr(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn tie_ranks() {
        assert_eq!(fractional_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn pearson_affine() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson_corr(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_corr(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson_corr(&x, &y[..3]).is_err());
    }
}
