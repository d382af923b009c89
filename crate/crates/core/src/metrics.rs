//! Ranking and agreement metrics, and multi-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary scores with their ground-truth labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Validation(format!("binary label must be 0 or 1, got {l}")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Validation("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn extend(&mut self, scores: &[f64], labels: &[u8]) {
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Indices sorted by descending score.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }

    /// Runs of equal scores in descending order, as `(positives, negatives)`.
    fn tie_groups(&self) -> Vec<(usize, usize)> {
        let order = self.ranked();
        let mut groups = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let s = self.scores[order[k]];
            let (mut pos, mut neg) = (0, 0);
            while k < order.len() && self.scores[order[k]] == s {
                if self.labels[order[k]] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                k += 1;
            }
            groups.push((pos, neg));
        }
        groups
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let p = set.positives();
    let n = set.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    // Walk groups from the lowest score up, counting negatives already seen.
    let mut negatives_below = 0usize;
    let mut wins = 0.0;
    for (pos, neg) in set.tie_groups().into_iter().rev() {
        wins += pos as f64 * (negatives_below as f64 + 0.5 * neg as f64);
        negatives_below += neg;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there. Equal scores form a single threshold.
pub fn aucpr(set: &ScoredSet) -> Result<f64> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::UndefinedMetric("AUCPR needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (pos, neg) in set.tie_groups() {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (pos as f64 / p as f64);
        }
    }
    Ok(ap)
}

/// `C × C` counts, rows indexed by the true class.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(Error::Validation(format!(
            "{} true labels for {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Validation(format!(
                "class pair ({t}, {p}) outside 0..{classes}"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Cohen's kappa with linear disagreement weights `|i - j| / (C - 1)`.
pub fn linear_weighted_kappa(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Validation("kappa of an empty sample".into()));
    }
    if classes < 2 {
        return Err(Error::UndefinedMetric("kappa needs at least two classes".into()));
    }
    let observed = confusion_matrix(truth, pred, classes)?;
    let n = truth.len() as f64;
    let row: Vec<f64> = observed.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..classes)
        .map(|j| observed.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let scale = (classes - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..classes {
        for j in 0..classes {
            let w = i.abs_diff(j) as f64 / scale;
            num += w * observed[i][j] as f64;
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "kappa: expected disagreement is zero (degenerate marginals)".into(),
        ));
    }
    Ok(1.0 - num / den)
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub values: Vec<f64>,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
}

/// Welford's running update.
pub fn aggregate_seeds(values: &[f64]) -> Result<MetricsReport> {
    if values.is_empty() {
        return Err(Error::Validation("no values to aggregate".into()));
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let std = (values.len() >= 2).then(|| (m2 / (values.len() - 1) as f64).sqrt());
    Ok(MetricsReport {
        values: values.to_vec(),
        mean,
        std,
    })
}
