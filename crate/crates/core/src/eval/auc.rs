//! ROC curves and the Mann-Whitney AUC.

use crate::error::{Error, Result};

fn check(scores: &[f64], anomalous: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != anomalous.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: anomalous.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("scores contain NaN".into()));
    }
    let pos = anomalous.iter().filter(|&&a| a).count();
    let neg = anomalous.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(
            "AUC needs both benign and anomalous labels".into(),
        ));
    }
    Ok((pos, neg))
}

/// Probability that a random anomalous score exceeds a random benign one,
/// ties counted as one half. Higher scores mean more anomalous.
pub fn roc_auc(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, anomalous)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the anomalous class, so tied mid-ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let hits = order[i..=j].iter().filter(|&&o| anomalous[o]).count() as u128;
        twice_rank_sum += twice_mid * hits;
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// ROC points `(fpr, tpr)` from the strictest threshold to the loosest.
/// Tied scores move both rates in one step.
pub fn roc_curve(scores: &[f64], anomalous: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, anomalous)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if anomalous[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(
            roc_auc(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[5.0; 4], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            roc_auc(&[1.0, 3.0, 2.0, 4.0], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert_eq!(
            roc_auc(&[1.0, 3.0, 2.0, 4.0], &[false, true, false, true]).unwrap(),
            1.0
        );
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[true, true]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn curve_ends() {
        let c = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(c.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.last(), Some(&(1.0, 1.0)));
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn infinite_scores_rank_highest() {
        let auc = roc_auc(&[1.0, f64::INFINITY, 2.0], &[false, true, false]).unwrap();
        assert_eq!(auc, 1.0);
    }
}
