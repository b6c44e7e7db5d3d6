//! Shared test oracles, deliberately implemented on different routes than
//! the library: scoring goes through an explicit confusion matrix, and the
//! PCA reference eigensolver uses cyclic Jacobi rotations.

#![allow(dead_code)]

use std::collections::BTreeMap;

use domainrc::corpus::DomainId;
use domainrc::evaluation::PredictionRecord;
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Confusion-matrix scorer: counts the full gold-by-predicted matrix, then
/// reads per-label precision/recall off its rows and columns.
pub fn confusion_matrix_prf(records: &[PredictionRecord]) -> BTreeMap<String, OracleScores> {
    let mut labels: Vec<String> = records
        .iter()
        .flat_map(|r| [r.gold.clone(), r.predicted.clone()])
        .collect();
    labels.sort();
    labels.dedup();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let n = labels.len();
    let mut matrix = vec![vec![0usize; n]; n];
    for record in records {
        matrix[index[record.gold.as_str()]][index[record.predicted.as_str()]] += 1;
    }

    let mut scores = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let tp = matrix[i][i];
        let gold_total: usize = matrix[i].iter().sum();
        let pred_total: usize = matrix.iter().map(|row| row[i]).sum();
        let precision = if pred_total == 0 {
            0.0
        } else {
            tp as f64 / pred_total as f64
        };
        let recall = if gold_total == 0 {
            0.0
        } else {
            tp as f64 / gold_total as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        scores.insert(
            label.clone(),
            OracleScores {
                precision,
                recall,
                f1,
                support: gold_total,
            },
        );
    }
    scores
}

pub fn confusion_matrix_macro_f1(records: &[PredictionRecord]) -> f64 {
    let scores = confusion_matrix_prf(records);
    scores.values().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(matrix: &Array2<f64>) -> Vec<f64> {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols());
    let mut a = matrix.clone();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigenvalues: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    eigenvalues.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigenvalues
}

pub fn record(id: usize, domain: DomainId, gold: &str, predicted: &str) -> PredictionRecord {
    PredictionRecord {
        instance_id: format!("r{id}"),
        domain,
        gold: gold.to_string(),
        predicted: predicted.to_string(),
    }
}
