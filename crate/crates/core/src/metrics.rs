//! Ranking metrics and the clerk-cost Profit metric.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: String,
    },
    #[error("invalid metric argument: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the labels contain a single class.
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub benefit: f64,
    pub cost: f64,
    pub potential: f64,
    pub profit: f64,
    pub threshold: f64,
    pub clerk_cost: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricError::Config(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 1) {
        return Err(MetricError::Config(format!("label {bad} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::Config("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
///
/// Sweeps the scores in ascending order, accumulating the Mann-Whitney U
/// statistic tie-group by tie-group. Every partial sum is a multiple of 0.5,
/// so the result is exact for any realistic sample size.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::Undefined {
            metric: "auroc",
            reason: format!("need both classes, got {n_pos} positives and {n_neg} negatives"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut u = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0.0, 0.0);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_here += 1.0;
            } else {
                neg_here += 1.0;
            }
            j += 1;
        }
        u += pos_here * neg_below + 0.5 * pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank, ranking by score descending and index ascending.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, _) = check_inputs(scores, labels)?;
    if n_pos == 0 {
        return Err(MetricError::Undefined {
            metric: "aupr",
            reason: "no positive labels".into(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Benefit, Cost, Potential and Profit at `threshold`, plus AUROC and AUPR
/// where defined. A claim is flagged when its score is strictly above the
/// threshold.
pub fn profit_report(
    scores: &[f64],
    labels: &[u8],
    corrections: &[f64],
    clerk_cost: f64,
    threshold: f64,
) -> Result<EvalReport> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if corrections.len() != labels.len() {
        return Err(MetricError::Config(format!(
            "{} corrections but {} labels",
            corrections.len(),
            labels.len()
        )));
    }
    if !(clerk_cost >= 0.0) || !clerk_cost.is_finite() {
        return Err(MetricError::Config(format!(
            "clerk cost must be a nonnegative number, got {clerk_cost}"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricError::Config(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let (mut benefit, mut cost, mut potential) = (0.0, 0.0, 0.0);
    for ((&s, &y), &c) in scores.iter().zip(labels).zip(corrections) {
        let flagged = s > threshold;
        if y == 1 {
            if c <= 0.0 {
                return Err(MetricError::Config(format!(
                    "positive claim with nonpositive correction {c}"
                )));
            }
            potential += c - clerk_cost;
            if flagged {
                benefit += c - clerk_cost;
            }
        } else if flagged {
            cost += clerk_cost;
        }
    }
    if !(potential > 0.0) {
        return Err(MetricError::Undefined {
            metric: "profit",
            reason: format!("potential is {potential}, must be positive"),
        });
    }
    Ok(EvalReport {
        auroc: auroc(scores, labels).ok(),
        aupr: aupr(scores, labels).ok(),
        benefit,
        cost,
        potential,
        profit: (benefit - cost) / potential,
        threshold,
        clerk_cost,
        n_pos,
        n_neg,
    })
}
