//! Clustering accuracy under the best one-to-one cluster/class matching,
//! adjusted Rand index, and ROC analysis of pairwise same-cluster scores.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::constraints::PairwiseConstraint;
use crate::error::{Error, Result};
use crate::mmc::{best_diff_assignment, best_same_assignment, ClusterWeights};

/// Counts `table[p][t]` of points predicted `p` with true label `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty labeling"));
        }
        let rows = pred.iter().max().unwrap() + 1;
        let cols = truth.iter().max().unwrap() + 1;
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[p][t] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

/// Minimum-cost perfect matching on a square cost matrix. Returns, for every
/// row, its assigned column.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation; column 0 is a sentinel.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Fraction of points whose cluster maps to their class under the best
/// one-to-one mapping. Unmatched clusters count as errors.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let m = table.counts.len().max(table.counts[0].len());
    let mut square = vec![vec![0u64; m]; m];
    for (p, row) in table.counts.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            square[p][t] = c;
        }
    }
    let cost: Vec<Vec<i64>> = square
        .iter()
        .map(|r| r.iter().map(|&c| -(c as i64)).collect())
        .collect();
    let matched: u64 = hungarian(&cost).iter().enumerate().map(|(p, &t)| square[p][t]).sum();
    Ok(matched as f64 / table.n as f64)
}

fn choose2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Hubert–Arabie adjusted Rand index, computed in exact integer arithmetic.
/// Two identical trivial partitions score 1.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let index: i128 = table.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let a: i128 = table.row_sums().into_iter().map(choose2).sum();
    let b: i128 = table.col_sums().into_iter().map(choose2).sum();
    let total = choose2(table.n);
    // ARI = (index - a·b/C) / ((a+b)/2 - a·b/C), scaled by 2C
    let num = 2 * (index * total - a * b);
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Same-cluster score of each pair: best joint score with both points in
/// one cluster minus the best with them in different clusters.
pub fn pairwise_scores(w: &ClusterWeights, codes: &ArrayView2<f64>, pairs: &[PairwiseConstraint]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|c| {
            if c.i >= codes.nrows() || c.j >= codes.nrows() {
                return Err(Error::invalid(format!("pair ({}, {}) out of range", c.i, c.j)));
            }
            let (h1, h2) = (codes.row(c.i), codes.row(c.j));
            let (_, same) = best_same_assignment(w, &h1, &h2)?;
            let (_, _, diff) = best_diff_assignment(w, &h1, &h2)?;
            Ok(same - diff)
        })
        .collect()
}

fn check_scores(scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC analysis needs both positive and negative pairs"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve: the probability a random positive outscores a
/// random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, positive)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            if positive[idx] {
                pos_rank_sum += mid;
            }
        }
        start = end + 1;
    }
    let u = pos_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from (0,0) to (1,1), one point per distinct score threshold,
/// predicting positive when `score >= threshold`.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scores(scores, positive)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if positive[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve from [`roc_curve`].
pub fn curve_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}
