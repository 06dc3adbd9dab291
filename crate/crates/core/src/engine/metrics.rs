//! Evaluation metrics.

use crate::error::{Error, Result};

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(format!("{} predictions, {} targets", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `1 - SS_res / SS_tot`. A constant target gives 1 for a perfect fit and
/// 0 otherwise.
pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of `score >= threshold` decisions agreeing with binary labels.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(Error::SizeMismatch("scores and labels differ in length".into()));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Threshold among 101 evenly spaced values in `[0, 1]` maximizing
/// accuracy; ties go to the smallest threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let a = accuracy(scores, labels, t)?;
        if a > best.0 {
            best = (a, t);
        }
    }
    Ok(best.1)
}

/// Area under the ROC curve via the rank-sum statistic with midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(Error::SizeMismatch("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn regression_metrics() {
        let t = [1.0, 2.0, 4.0];
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        let m = 7.0 / 3.0;
        assert!(r2(&[m; 3], &t).unwrap().abs() < 1e-15);
        assert!(matches!(mse(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn auc_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(brute_auc(&s, &l), 0.75);
        assert!(matches!(roc_auc(&s, &[true; 4]), Err(Error::SingleClassAuc)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..200);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            l[0] = true;
            l[1] = false;
            assert!((roc_auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn thresholds() {
        let s = [0.1, 0.2, 0.7, 0.9];
        let l = [false, false, true, true];
        assert_eq!(accuracy(&s, &l, 0.5).unwrap(), 1.0);
        let t = best_threshold(&s, &l).unwrap();
        assert_eq!(accuracy(&s, &l, t).unwrap(), 1.0);
        assert!(t > 0.2 && t <= 0.7);
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}
