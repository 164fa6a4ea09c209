//! Ranking and calibration metrics: AUC, LogLoss, PCOC and ECE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOGLOSS_EPS: f64 = 1e-12;
pub const DEFAULT_ECE_BUCKETS: usize = 100;

fn check(preds: &[f64], labels: &[bool]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: preds.len(), got: labels.len() });
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("prediction {p} outside [0, 1]")));
    }
    Ok(())
}

/// Rank-sum AUC; tied predictions share their average rank.
pub fn auc(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check(preds, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("AUC needs both positives and negatives".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 averaged.
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg * pos_in_tie as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

pub fn logloss(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check(preds, labels)?;
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Predicted over observed conversions.
pub fn pcoc(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check(preds, labels)?;
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::InvalidInput("PCOC needs at least one positive".into()));
    }
    Ok(preds.iter().sum::<f64>() / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub mean_pred: f64,
    pub mean_label: f64,
    /// Sum of `y - p` over the bucket.
    pub signed_error: f64,
}

/// Equal-count buckets over predictions sorted ascending (stable, so ties keep
/// input order); the first `N mod K` buckets take one extra sample.
pub fn ece_buckets(preds: &[f64], labels: &[bool], k: usize) -> Result<Vec<Bucket>> {
    check(preds, labels)?;
    if k == 0 {
        return Err(Error::InvalidInput("ECE needs at least one bucket".into()));
    }
    let n = preds.len();
    if k > n {
        return Err(Error::InvalidInput(format!("{k} buckets for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let (base, extra) = (n / k, n % k);
    let mut buckets = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        let idx = &order[start..start + len];
        let sum_p: f64 = idx.iter().map(|&i| preds[i]).sum();
        let sum_y = idx.iter().filter(|&&i| labels[i]).count() as f64;
        buckets.push(Bucket {
            count: len,
            mean_pred: sum_p / len as f64,
            mean_label: sum_y / len as f64,
            signed_error: sum_y - sum_p,
        });
        start += len;
    }
    Ok(buckets)
}

pub fn ece(preds: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    let buckets = ece_buckets(preds, labels, k)?;
    Ok(buckets.iter().map(|b| b.signed_error.abs()).sum::<f64>() / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub logloss: f64,
    pub pcoc: f64,
    pub ece: f64,
    pub k: usize,
    #[serde(skip)]
    pub buckets: Vec<Bucket>,
}

/// All four metrics. `k` is capped at the sample count.
pub fn evaluate(preds: &[f64], labels: &[bool], k: usize) -> Result<MetricsReport> {
    let k = k.min(preds.len()).max(1);
    let buckets = ece_buckets(preds, labels, k)?;
    Ok(MetricsReport {
        n: preds.len(),
        positives: labels.iter().filter(|&&y| y).count(),
        auc: auc(preds, labels)?,
        logloss: logloss(preds, labels)?,
        pcoc: pcoc(preds, labels)?,
        ece: buckets.iter().map(|b| b.signed_error.abs()).sum::<f64>() / preds.len() as f64,
        k,
        buckets,
    })
}

impl MetricsReport {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn buckets_csv(&self) -> String {
        let mut out = String::from("bucket,count,mean_pred,mean_label\n");
        for (i, b) in self.buckets.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", b.count, b.mean_pred, b.mean_label));
        }
        out
    }
}
