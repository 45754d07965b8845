//! Clustering accuracy under optimal one-to-one cluster matching, normalized
//! mutual information (geometric normalization, natural log) and the
//! adjusted Rand index.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as WeightMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::Labels;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    /// `confusion[t][p]`: instances with true label `t` and predicted `p`.
    pub confusion: Vec<Vec<usize>>,
    /// `mapping[p]`: true cluster matched to predicted cluster `p`, if any.
    pub mapping: Vec<Option<usize>>,
}

fn check_lengths(pred: &Labels, truth: &Labels) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predicted labels vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `table[t][p]` counts.
pub fn contingency(pred: &Labels, truth: &Labels) -> Result<Vec<Vec<usize>>> {
    check_lengths(pred, truth)?;
    let mut table = vec![vec![0usize; pred.n_clusters()]; truth.n_clusters()];
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        table[t][p] += 1;
    }
    Ok(table)
}

/// Best matched fraction and the predicted→true mapping that achieves it.
pub fn accuracy(pred: &Labels, truth: &Labels) -> Result<(f64, Vec<Option<usize>>)> {
    let table = contingency(pred, truth)?;
    let n = pred.len();
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let (ct, cp) = (truth.n_clusters(), pred.n_clusters());
    let k = ct.max(cp);
    // square padding: rows are predicted clusters, columns true clusters
    let weights = WeightMatrix::from_fn(k, k, |(p, t)| {
        if p < cp && t < ct {
            table[t][p] as i64
        } else {
            0
        }
    });
    let (matched, assignment) = kuhn_munkres(&weights);
    let mapping = (0..cp)
        .map(|p| Some(assignment[p]).filter(|&t| t < ct))
        .collect();
    Ok((matched as f64 / n as f64, mapping))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; truth) / sqrt(H(pred) · H(truth))`.
///
/// When either entropy is zero the score is 1 for identical partitions and
/// 0 otherwise.
pub fn nmi(pred: &Labels, truth: &Labels) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..pred.n_clusters())
        .map(|p| table.iter().map(|r| r[p]).sum())
        .collect();
    let h_truth = entropy(row.iter().copied(), n);
    let h_pred = entropy(col.iter().copied(), n);
    if h_truth == 0.0 || h_pred == 0.0 {
        let same = h_truth == 0.0 && h_pred == 0.0;
        return Ok(if same { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (t, r) in table.iter().enumerate() {
        for (p, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (row[t] as f64 * col[p] as f64)).ln();
            }
        }
    }
    Ok((mi / (h_pred * h_truth).sqrt()).clamp(0.0, 1.0))
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index.
pub fn ari(pred: &Labels, truth: &Labels) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len();
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_t: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_p: f64 = (0..pred.n_clusters())
        .map(|p| pairs(table.iter().map(|r| r[p]).sum()))
        .sum();
    let total = pairs(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_t * sum_p / total;
    let max = 0.5 * (sum_t + sum_p);
    if max == expected {
        // both partitions trivial (all singletons or one cluster each)
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Per-row argmax; ties go to the lowest column.
pub fn labels_from_assignment(y: &Matrix) -> Labels {
    Labels(
        y.row_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect(),
    )
}

pub fn evaluate(pred: &Labels, truth: &Labels) -> Result<MetricsReport> {
    let (acc, mapping) = accuracy(pred, truth)?;
    Ok(MetricsReport {
        acc,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        confusion: contingency(pred, truth)?,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(v: &[usize]) -> Labels {
        Labels(v.to_vec())
    }

    #[test]
    fn accuracy_examples() {
        let truth = l(&[0, 0, 1, 1]);
        assert_eq!(accuracy(&truth, &truth).unwrap().0, 1.0);
        assert_eq!(accuracy(&l(&[1, 1, 0, 0]), &truth).unwrap().0, 1.0);
        let (acc, mapping) = accuracy(&l(&[0, 1, 1, 1]), &truth).unwrap();
        assert_eq!(acc, 0.75);
        assert_eq!(mapping, vec![Some(0), Some(1)]);
    }

    #[test]
    fn accuracy_rectangular() {
        // three predicted clusters against two true ones
        let truth = l(&[0, 0, 0, 1, 1, 1]);
        let pred = l(&[0, 0, 2, 1, 1, 1]);
        let (acc, mapping) = accuracy(&pred, &truth).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(mapping.iter().filter(|m| m.is_none()).count(), 1);
        // fewer predicted clusters than true ones
        let (acc, _) = accuracy(&l(&[0, 0, 0, 0]), &l(&[0, 1, 2, 2])).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            evaluate(&l(&[0, 1]), &l(&[0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nmi_examples() {
        let truth = l(&[0, 0, 1, 1, 2, 2]);
        assert!((nmi(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&l(&[0, 0, 0, 0]), &l(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(nmi(&l(&[0, 0, 0]), &l(&[0, 0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn nmi_hand_value() {
        // truth [0,0,1,1], pred [0,1,1,1]: contingency [[1,1],[0,2]]
        let ln = f64::ln;
        let mi = 0.25 * ln(4.0 * 1.0 / (2.0 * 1.0))
            + 0.25 * ln(4.0 * 1.0 / (2.0 * 3.0))
            + 0.5 * ln(4.0 * 2.0 / (2.0 * 3.0));
        let h_t = ln(2.0);
        let h_p = -(0.25 * ln(0.25) + 0.75 * ln(0.75));
        let expected = mi / (h_t * h_p).sqrt();
        let got = nmi(&l(&[0, 1, 1, 1]), &l(&[0, 0, 1, 1])).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ari_examples() {
        let truth = l(&[0, 0, 1, 1, 2]);
        assert_eq!(ari(&truth, &truth).unwrap(), 1.0);
        assert_eq!(ari(&l(&[0, 0, 0, 0]), &l(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(ari(&l(&[0, 0]), &l(&[1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        let y = Matrix::from_rows(&[[0.5, 0.5], [0.2, 0.8], [0.0, 1.0]]);
        assert_eq!(labels_from_assignment(&y), l(&[0, 1, 1]));
    }
}
