//! Detection, depth and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pairs<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::input("empty input"));
    }
    Ok(())
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// 1-based average ranks, ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input("metric undefined for single-class labels"));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pairs(scores, labels)?;
    check_finite(scores)?;
    let (pos, neg) = class_counts(labels)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: precision at each distinct score threshold weighted by
/// the recall gained there.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pairs(scores, labels)?;
    check_finite(scores)?;
    let (pos, _) = class_counts(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_stats(tp: usize, fp: usize, fn_: usize, tn: usize) -> DetectionStats {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    DetectionStats {
        precision,
        recall,
        f1,
        fpr: ratio(fp, fp + tn),
    }
}

/// Predictions are `score >= threshold`. Undefined ratios are reported as 0.
pub fn f1_fpr(scores: &[f64], labels: &[bool], threshold: f64) -> Result<DetectionStats> {
    check_pairs(scores, labels)?;
    check_finite(scores)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(confusion_stats(tp, fp, fn_, tn))
}

/// FPR at the highest threshold whose recall reaches `target_recall`.
pub fn fpr_at_recall(scores: &[f64], labels: &[bool], target_recall: f64) -> Result<f64> {
    check_pairs(scores, labels)?;
    check_finite(scores)?;
    let (pos, neg) = class_counts(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 / pos as f64 >= target_recall {
            break;
        }
    }
    Ok(fp as f64 / neg as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthErrors {
    pub rae: f64,
    pub rmse: f64,
    pub mae: f64,
    pub log10: f64,
}

fn check_depths(d: &[f64], d_hat: &[f64]) -> Result<()> {
    check_pairs(d, d_hat)?;
    check_finite(d)?;
    check_finite(d_hat)?;
    if d.iter().chain(d_hat).any(|&v| v <= 0.0) {
        return Err(Error::input("depth metrics need positive depths"));
    }
    Ok(())
}

pub fn depth_errors(d: &[f64], d_hat: &[f64]) -> Result<DepthErrors> {
    check_depths(d, d_hat)?;
    let n = d.len() as f64;
    let (mut rae, mut se, mut ae, mut lg) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in d.iter().zip(d_hat) {
        let diff = (a - b).abs();
        rae += diff / a;
        se += diff * diff;
        ae += diff;
        lg += (a.log10() - b.log10()).abs();
    }
    Ok(DepthErrors {
        rae: rae / n,
        rmse: (se / n).sqrt(),
        mae: ae / n,
        log10: lg / n,
    })
}

/// Fraction of pairs with `max(d/d_hat, d_hat/d) < delta`.
pub fn delta_accuracy(d: &[f64], d_hat: &[f64], delta: f64) -> Result<f64> {
    check_depths(d, d_hat)?;
    let hits = d
        .iter()
        .zip(d_hat)
        .filter(|(&a, &b)| (a / b).max(b / a) < delta)
        .count();
    Ok(hits as f64 / d.len() as f64)
}

/// Standard thresholds 1.25, 1.25^2, 1.25^3.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

pub fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powf(g) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of gains listed in ranked order; 0 when every gain is zero.
pub fn ndcg_at_k(gains: &[f64], k: usize) -> Result<f64> {
    check_finite(gains)?;
    if gains.iter().any(|&g| g < 0.0) {
        return Err(Error::input("gains must be >= 0"));
    }
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(gains, k) / idcg)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::input("correlation undefined for a constant input"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pairs(a, b)?;
    check_finite(a)?;
    check_finite(b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Kendall tau-b.
pub fn kendall(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pairs(a, b)?;
    check_finite(a)?;
    check_finite(b)?;
    let n = a.len();
    let (mut s, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = (a[i] - a[j]).signum() as i64 * (a[i] != a[j]) as i64;
            let db = (b[i] - b[j]).signum() as i64 * (b[i] != b[j]) as i64;
            s += da * db;
            ties_a += (da == 0) as i64;
            ties_b += (db == 0) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let den = (((n0 - ties_a) * (n0 - ties_b)) as f64).sqrt();
    if den == 0.0 {
        return Err(Error::input("correlation undefined for a constant input"));
    }
    Ok(s as f64 / den)
}
