//! Must-link / cannot-link constraints: sampling from ground truth,
//! train/test splitting, and the split into C⁺, C⁻ and the unlabeled set U.
//!
//! Constraint files hold one constraint per line as `i<TAB>j<TAB>flag`
//! with 0-based indices and flag 1 for must-link, 0 for cannot-link.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairwiseConstraint {
    pub i: usize,
    pub j: usize,
    /// `true` for must-link.
    pub same: bool,
}

impl PairwiseConstraint {
    pub fn new(i: usize, j: usize, same: bool) -> Result<Self> {
        if i == j {
            return Err(Error::invalid(format!(
                "constraint pairs an instance with itself ({i})"
            )));
        }
        Ok(Self { i, j, same })
    }

    pub fn must(i: usize, j: usize) -> Self {
        Self { i, j, same: true }
    }

    pub fn cannot(i: usize, j: usize) -> Self {
        Self { i, j, same: false }
    }

    /// Unordered pair key.
    pub fn key(&self) -> (usize, usize) {
        (self.i.min(self.j), self.i.max(self.j))
    }
}

/// The constraint sets used by the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSplit {
    pub must_link: Vec<(usize, usize)>,
    pub cannot_link: Vec<(usize, usize)>,
    /// Indices touched by no constraint, ascending.
    pub unlabeled: Vec<usize>,
    pub n_instances: usize,
}

impl ConstraintSplit {
    pub fn n_plus(&self) -> usize {
        self.must_link.len()
    }

    pub fn n_minus(&self) -> usize {
        self.cannot_link.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }
}

/// Draw `n_pairs` distinct unordered pairs, `round(balance · n_pairs)` of
/// them must-links, uniformly among pairs of each kind.
///
/// Rejection sampling over uniform random pairs; gives up with
/// [`Error::SamplingExhausted`] after `1000 + 200 · n_pairs` draws.
pub fn sample_constraints(
    labels: &[usize],
    n_pairs: usize,
    balance: f64,
    rng: &mut SeededRng,
) -> Result<Vec<PairwiseConstraint>> {
    let n = labels.len();
    if !(balance > 0.0 && balance < 1.0) {
        return Err(Error::invalid(format!("balance must lie in (0, 1), got {balance}")));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be positive"));
    }
    let distinct: HashSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::invalid("constraint sampling needs at least two classes"));
    }
    let want_must = (balance * n_pairs as f64).round() as usize;
    let want_cannot = n_pairs - want_must;

    let max_draws = 1000 + 200 * n_pairs;
    let mut seen = HashSet::with_capacity(n_pairs);
    let mut out = Vec::with_capacity(n_pairs);
    let (mut n_must, mut n_cannot) = (0, 0);
    let mut draws = 0;
    while n_must < want_must || n_cannot < want_cannot {
        if draws == max_draws {
            return Err(Error::SamplingExhausted {
                attempts: draws,
                reason: format!("found {n_must}/{want_must} must-links and {n_cannot}/{want_cannot} cannot-links"),
            });
        }
        draws += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let same = labels[i] == labels[j];
        if (same && n_must == want_must) || (!same && n_cannot == want_cannot) {
            continue;
        }
        let c = PairwiseConstraint { i, j, same };
        if !seen.insert(c.key()) {
            continue;
        }
        if same {
            n_must += 1;
        } else {
            n_cannot += 1;
        }
        out.push(c);
    }
    Ok(out)
}

/// Stratified by kind: `round(fraction · total)` constraints go to the
/// training list, shared across kinds in proportion to their counts. Both
/// outputs keep the input order.
pub fn split_train_test(
    constraints: &[PairwiseConstraint],
    train_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<PairwiseConstraint>, Vec<PairwiseConstraint>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut in_train = vec![false; constraints.len()];
    let strata: Vec<Vec<usize>> = [true, false]
        .iter()
        .map(|&kind| {
            (0..constraints.len())
                .filter(|&k| constraints[k].same == kind)
                .collect()
        })
        .collect();
    for (s, kind) in strata.iter().zip(["must-link", "cannot-link"]) {
        if s.is_empty() {
            log::warn!("no {kind} constraints to split");
        }
    }
    // Largest-remainder allocation of round(fraction · total) over the strata.
    let total = (train_fraction * constraints.len() as f64).round() as usize;
    let quotas: Vec<f64> = strata.iter().map(|s| train_fraction * s.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut missing = total.saturating_sub(take.iter().sum());
    for &s in order.iter().cycle().take(strata.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[s] < strata[s].len() {
            take[s] += 1;
            missing -= 1;
        }
    }
    for (mut idx, n) in strata.into_iter().zip(take) {
        idx.shuffle(rng);
        for &k in &idx[..n] {
            in_train[k] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = constraints.iter().zip(&in_train).partition(|(_, &t)| t);
    Ok((
        train.into_iter().map(|(c, _)| *c).collect(),
        test.into_iter().map(|(c, _)| *c).collect(),
    ))
}

pub fn partition(train: &[PairwiseConstraint], n_instances: usize) -> Result<ConstraintSplit> {
    let mut touched = vec![false; n_instances];
    let mut must_link = Vec::new();
    let mut cannot_link = Vec::new();
    for c in train {
        if c.i >= n_instances || c.j >= n_instances {
            return Err(Error::invalid(format!(
                "constraint ({}, {}) out of range for {n_instances} instances",
                c.i, c.j
            )));
        }
        if c.i == c.j {
            return Err(Error::invalid(format!(
                "constraint pairs an instance with itself ({})",
                c.i
            )));
        }
        touched[c.i] = true;
        touched[c.j] = true;
        if c.same {
            must_link.push((c.i, c.j));
        } else {
            cannot_link.push((c.i, c.j));
        }
    }
    let unlabeled = (0..n_instances).filter(|&k| !touched[k]).collect();
    Ok(ConstraintSplit {
        must_link,
        cannot_link,
        unlabeled,
        n_instances,
    })
}

pub fn write_constraints(path: &Path, constraints: &[PairwiseConstraint]) -> Result<()> {
    let mut buf = Vec::new();
    for c in constraints {
        writeln!(buf, "{}\t{}\t{}", c.i, c.j, c.same as u8).expect("write to Vec");
    }
    crate::data::write_atomic(path, &buf)
}

pub fn read_constraints(path: &Path) -> Result<Vec<PairwiseConstraint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_constraints(&text, path)
}

pub fn parse_constraints(text: &str, path: &Path) -> Result<Vec<PairwiseConstraint>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let i: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad index {:?}", fields[0])))?;
        let j: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad index {:?}", fields[1])))?;
        let same = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("flag must be 0 or 1, got {other:?}"))),
        };
        if i == j {
            return Err(err(format!("self-pair ({i}, {j})")));
        }
        let c = PairwiseConstraint { i, j, same };
        if !seen.insert(c.key()) {
            return Err(err(format!("duplicate pair ({i}, {j})")));
        }
        out.push(c);
    }
    Ok(out)
}
