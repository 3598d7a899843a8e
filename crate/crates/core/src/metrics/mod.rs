//! Evaluation metrics: AUC, demographic-parity and equalized-odds gaps,
//! per-group confusion rates and SAR accuracy.
//!
//! Groups are binary ids (0 or 1). Hard predictions are `score >= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Where evaluation-time group ids come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSource {
    /// Ground-truth sensitive attribute.
    True,
    /// Thresholded SAR output `ŝ`.
    Pseudo,
}

impl std::str::FromStr for GroupSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(GroupSource::True),
            "pseudo" => Ok(GroupSource::Pseudo),
            other => Err(Error::Usage(format!(
                "groups source must be `true` or `pseudo`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub positive_rate: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub auc: f64,
    pub ddp: f64,
    pub deo: f64,
    /// Indexed by group id.
    pub group_rates: Vec<GroupRates>,
    pub sar_accuracy: f64,
    pub threshold: f64,
}

pub fn threshold_labels(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&p| p >= threshold).collect()
}

/// Binary group ids from 0/1 values (`s` or thresholded `ŝ`).
pub fn group_ids(values: &[f64], threshold: f64) -> Vec<usize> {
    values
        .iter()
        .map(|&v| usize::from(v >= threshold))
        .collect()
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    if a == 0 {
        return Err(Error::Metric(format!("{what}: no rows")));
    }
    Ok(())
}

fn check_groups(groups: &[usize]) -> Result<[usize; 2]> {
    let mut counts = [0usize; 2];
    for &g in groups {
        match counts.get_mut(g) {
            Some(c) => *c += 1,
            None => return Err(Error::Metric(format!("group id {g} is not binary"))),
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Metric(format!("group {g} has no rows")));
    }
    Ok(counts)
}

fn positive_rates(pred: &[bool], groups: &[usize]) -> Result<[f64; 2]> {
    check_len(pred.len(), groups.len(), "delta_dp")?;
    let counts = check_groups(groups)?;
    let mut pos = [0usize; 2];
    for (&p, &g) in pred.iter().zip(groups) {
        pos[g] += usize::from(p);
    }
    Ok([
        pos[0] as f64 / counts[0] as f64,
        pos[1] as f64 / counts[1] as f64,
    ])
}

/// `(tpr, fpr)` per group.
fn odds_rates(pred: &[bool], y: &[f64], groups: &[usize]) -> Result<[(f64, f64); 2]> {
    check_len(pred.len(), y.len(), "delta_eo")?;
    check_len(pred.len(), groups.len(), "delta_eo")?;
    check_groups(groups)?;
    // [group][label][prediction]
    let mut cm = [[[0usize; 2]; 2]; 2];
    for ((&p, &y), &g) in pred.iter().zip(y).zip(groups) {
        cm[g][usize::from(y >= 0.5)][usize::from(p)] += 1;
    }
    let mut out = [(0.0, 0.0); 2];
    for g in 0..2 {
        let [neg, pos] = cm[g];
        for (class, n) in [("positive", pos), ("negative", neg)] {
            if n[0] + n[1] == 0 {
                return Err(Error::Metric(format!("group {g} has no {class} labels")));
            }
        }
        out[g] = (
            pos[1] as f64 / (pos[0] + pos[1]) as f64,
            neg[1] as f64 / (neg[0] + neg[1]) as f64,
        );
    }
    Ok(out)
}

/// `|P(ŷ=1 | g=0) − P(ŷ=1 | g=1)|`.
pub fn delta_dp(pred: &[bool], groups: &[usize]) -> Result<f64> {
    let [a, b] = positive_rates(pred, groups)?;
    Ok((a - b).abs())
}

/// `|TPR_0 − TPR_1| + |FPR_0 − FPR_1|`.
pub fn delta_eo(pred: &[bool], y: &[f64], groups: &[usize]) -> Result<f64> {
    let [(t0, f0), (t1, f1)] = odds_rates(pred, y, groups)?;
    Ok((t0 - t1).abs() + (f0 - f1).abs())
}

/// Rank-sum AUC with midranks for ties.
pub fn auc_roc(scores: &[f64], y: &[f64]) -> Result<f64> {
    check_len(scores.len(), y.len(), "auc_roc")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("auc_roc: NaN score".into()));
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
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&r| y[r] >= 0.5).count() as f64;
        i = j + 1;
    }
    let n_pos = y.iter().filter(|&&v| v >= 0.5).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Metric(
            "auc_roc: both label classes are required".into(),
        ));
    }
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Fraction of rows where thresholded `ŝ` equals `s`.
pub fn sar_accuracy(pseudo: &[f64], s: &[f64]) -> Result<f64> {
    check_len(pseudo.len(), s.len(), "sar_accuracy")?;
    let hits = pseudo
        .iter()
        .zip(s)
        .filter(|(&p, &s)| (p >= 0.5) == (s >= 0.5))
        .count();
    Ok(hits as f64 / s.len() as f64)
}

pub fn group_rates(pred: &[bool], y: &[f64], groups: &[usize]) -> Result<Vec<GroupRates>> {
    let rates = positive_rates(pred, groups)?;
    let odds = odds_rates(pred, y, groups)?;
    let counts = check_groups(groups)?;
    Ok((0..2)
        .map(|g| GroupRates {
            positive_rate: rates[g],
            tpr: odds[g].0,
            fpr: odds[g].1,
            count: counts[g],
        })
        .collect())
}

impl FairnessReport {
    /// Metrics of `scores` against labels `y` with fairness gaps over
    /// `groups`. `pseudo` and `s` feed the SAR accuracy.
    pub fn compute(
        scores: &[f64],
        y: &[f64],
        groups: &[usize],
        pseudo: &[f64],
        s: &[f64],
        threshold: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Usage(format!("threshold {threshold} not in [0, 1]")));
        }
        let pred = threshold_labels(scores, threshold);
        let group_rates = group_rates(&pred, y, groups)?;
        let (a, b) = (&group_rates[0], &group_rates[1]);
        Ok(FairnessReport {
            auc: auc_roc(scores, y)?,
            ddp: (a.positive_rate - b.positive_rate).abs(),
            deo: (a.tpr - b.tpr).abs() + (a.fpr - b.fpr).abs(),
            sar_accuracy: sar_accuracy(pseudo, s)?,
            group_rates,
            threshold,
        })
    }
}
