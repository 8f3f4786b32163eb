use std::collections::BTreeSet;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::{Result, SearchError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Accuracy plus macro-averaged precision, recall and F1 over the classes
/// present in `y_true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsClassification {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics<L: Ord + Clone + Display>(y_true: &[L], y_pred: &[L]) -> Result<MetricsClassification> {
    if y_true.len() != y_pred.len() {
        return Err(SearchError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(SearchError::EmptyInput);
    }
    let classes: BTreeSet<&L> = y_true.iter().collect();
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    let per_class: Vec<ClassMetrics> = classes
        .iter()
        .map(|&c| {
            let tp = y_true.iter().zip(y_pred).filter(|(t, p)| *t == c && *p == c).count();
            let predicted = y_pred.iter().filter(|p| *p == c).count();
            let support = y_true.iter().filter(|t| *t == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { label: c.to_string(), precision, recall, f1, support }
        })
        .collect();
    let k = per_class.len() as f64;
    Ok(MetricsClassification {
        accuracy: ratio(correct, y_true.len()),
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRegression {
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
}

pub fn mean_absolute_error(y_true: &[f64], y_pred: &[f64]) -> f64 {
    y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y_true.len() as f64
}

pub fn mean_squared_error(y_true: &[f64], y_pred: &[f64]) -> f64 {
    y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y_true.len() as f64
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsRegression> {
    if y_true.len() != y_pred.len() {
        return Err(SearchError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(SearchError::EmptyInput);
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(SearchError::ConstantTruth);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(MetricsRegression {
        mae: mean_absolute_error(y_true, y_pred),
        mse: mean_squared_error(y_true, y_pred),
        r2: 1.0 - ss_res / ss_tot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::SignClass::{self, *};

    #[test]
    fn perfect_classification() {
        let y = [Neutral, Positive, Negative, Neutral];
        let m = classification_metrics(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_confusion() {
        let t = [Neutral, Neutral, Positive, Positive];
        let p = [Neutral, Positive, Positive, Positive];
        let m = classification_metrics(&t, &p).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        assert!((m.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert_eq!(m.per_class.len(), 2);
    }

    #[test]
    fn absent_predicted_class_scores_zero() {
        let t = [Neutral, Neutral];
        let p: [SignClass; 2] = [Positive, Neutral];
        let m = classification_metrics(&t, &p).unwrap();
        // macro over classes present in y_true only
        assert_eq!(m.per_class.len(), 1);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!(classification_metrics(&t, &p[..1]).is_err());
    }

    #[test]
    fn symmetric_errors_make_f1_equal_accuracy() {
        let t = [0, 0, 0, 0, 1, 1, 1, 1];
        let p = [0, 0, 0, 1, 1, 1, 1, 0];
        let m = classification_metrics(&t, &p).unwrap();
        assert!((m.f1 - m.accuracy).abs() < 1e-15);
    }

    #[test]
    fn regression_examples() {
        let m = regression_metrics(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!((m.mae, m.mse, m.r2), (0.0, 0.0, 1.0));
        let m = regression_metrics(&[0.0, 1.0], &[0.25, 0.75]).unwrap();
        assert!((m.mae - 0.25).abs() < 1e-12);
        assert!((m.mse - 0.0625).abs() < 1e-12);
        assert!((m.r2 - 0.75).abs() < 1e-12);
        let y = [0.2, 0.4, 0.9];
        let mean = [0.5; 3];
        assert!(regression_metrics(&y, &mean).unwrap().r2.abs() < 1e-12);
        assert_eq!(regression_metrics(&[1.0, 1.0], &[1.0, 0.0]), Err(SearchError::ConstantTruth));
        assert!(regression_metrics(&[1.0], &[]).is_err());
    }
}
