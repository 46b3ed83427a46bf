//! Rank statistics: Spearman correlation, ROC-AUC and contamination rate.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::QualityLabel;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks<F: Scalar>(x: &[F]) -> Result<Vec<F>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in ranked data"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).expect("no NaN"));
    let mut ranks = vec![F::zero(); x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let avg = F::lit((start + 1 + end) as f64 / 2.0);
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Result<F> {
    let n = F::lit(x.len() as f64);
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::Undefined("correlation of a constant sequence"));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-F::one()).min(F::one()))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman<F: Scalar>(x: &[F], y: &[F]) -> Result<F> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman needs at least two observations"));
    }
    pearson(&average_ranks(x)?, &average_ranks(y)?)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney form).
pub fn roc_auc<F: Scalar>(scores: &[F], labels: &[bool]) -> Result<F> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC-AUC needs both classes"));
    }
    let ranks = average_ranks(scores)?;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r.as_f64())
        .sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(F::lit((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Share of low-quality items in `subset`.
pub fn contamination_gamma<S: AsRef<str>>(subset: &[S], labels: &IndexMap<String, QualityLabel>) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Empty("subset"));
    }
    let mut low = 0usize;
    for id in subset {
        let id = id.as_ref();
        match labels.get(id) {
            Some(l) => low += l.is_low_quality() as usize,
            None => return Err(Error::invalid(format!("item `{id}` has no quality label"))),
        }
    }
    Ok(low as f64 / subset.len() as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 1 - 6 sum d^2 / (n (n^2 - 1)), valid without ties
    fn rank_formula(x: &[f64], y: &[f64]) -> f64 {
        let rx = average_ranks(x).unwrap();
        let ry = average_ranks(y).unwrap();
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let (x, y) = ([1.0, 2.0, 3.0, 4.0], [2.0, 1.0, 4.0, 3.0]);
        assert!((rank_formula(&x, &y) - 0.6).abs() < 1e-15);
        assert!((spearman(&x, &y).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]).unwrap(), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn auc_examples() {
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &l).unwrap(), 0.0);
        let s = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(pair_count_auc(&s, &l), 0.75);
        assert!((roc_auc(&s, &l).unwrap() - 0.75).abs() < 1e-15);
        assert!(roc_auc(&s, &[true; 4]).is_err());
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn gamma_examples() {
        let labels: IndexMap<String, QualityLabel> = (0..10)
            .map(|i| {
                let l = if i < 3 { QualityLabel::LowA } else { QualityLabel::Original };
                (format!("q{i}"), l)
            })
            .collect();
        let all: Vec<String> = labels.keys().cloned().collect();
        assert!((contamination_gamma(&all, &labels).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(contamination_gamma(&all[3..], &labels).unwrap(), 0.0);
        assert_eq!(contamination_gamma(&all[..3], &labels).unwrap(), 1.0);
        assert!(contamination_gamma::<String>(&[], &labels).is_err());
        assert!(contamination_gamma(&["nope"], &labels).is_err());
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() + 3.0).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * v * v).collect();
                let r2 = spearman(&tx, &ty).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn auc_matches_pair_count_and_complement(
            pairs in proptest::collection::vec((0u32..1000, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            if let Ok(a) = roc_auc(&scores, &labels) {
                prop_assert!((a - pair_count_auc(&scores, &labels)).abs() < 1e-12);
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                sorted.dedup();
                if sorted.len() == scores.len() {
                    prop_assert!((a + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn gamma_ignores_order(mut ids in proptest::collection::vec(0usize..20, 1..20)) {
            let labels: IndexMap<String, QualityLabel> = (0..20)
                .map(|i| (i.to_string(), if i % 3 == 0 { QualityLabel::LowB } else { QualityLabel::Original }))
                .collect();
            let a = contamination_gamma(&ids.iter().map(|i| i.to_string()).collect::<Vec<_>>(), &labels).unwrap();
            ids.reverse();
            let b = contamination_gamma(&ids.iter().map(|i| i.to_string()).collect::<Vec<_>>(), &labels).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
