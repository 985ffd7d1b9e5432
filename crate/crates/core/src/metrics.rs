//! Ranking metrics and seed-level confidence intervals.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Inconsistent("NaN score".into()));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision: mean of precision at the rank of each positive, with
/// items ordered by score descending and ties kept in index order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Mean with a normal-approximation 95% interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        };
        Some(MeanCi { mean, half_width, n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let r = auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r, 1.0);
        let r = auroc(&[0.9, 0.2, 0.8, 0.1], &[true, false, false, true]).unwrap();
        assert_eq!(r, 0.5);
        let r = auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r, 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap(), 1.0);
        let n = 7;
        let mut scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / 10.0).collect();
        scores[n - 1] = 0.0;
        let mut labels = vec![false; n];
        labels[n - 1] = true;
        assert!((auprc(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        assert!(matches!(auprc(&[0.5], &[false]), Err(Error::NoPositives)));
    }

    #[test]
    fn tied_scores_keep_index_order() {
        // positive at index 1 ties with a negative at index 0 → rank 2
        assert_eq!(auprc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn ci_of_constant_values_is_zero() {
        let ci = MeanCi::from_values(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((ci.mean, ci.half_width, ci.n), (0.5, 0.0, 3));
        assert!(MeanCi::from_values(&[]).is_none());
        let ci = MeanCi::from_values(&[0.0, 1.0]).unwrap();
        assert!((ci.half_width - 1.96 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_lengths_and_nan() {
        assert!(matches!(auroc(&[0.1], &[true, false]), Err(Error::Shape(_))));
        assert!(auroc(&[f64::NAN, 0.1], &[true, false]).is_err());
    }
}
