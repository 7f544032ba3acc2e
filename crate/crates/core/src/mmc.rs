//! Transductive semi-supervised maximum-margin clustering on learned codes.
//!
//! Cluster `z` scores a code `h` as `⟨w_z, h⟩`, where `w_z` is block `z` of
//! the flat weight vector. Training minimizes
//!
//! ```text
//! λ/2‖W‖² + 1/n⁺ Σ_{C⁺} [1 − (same − diff)]₊ + 1/n⁻ Σ_{C⁻} [1 − (diff − same)]₊
//!         + β/(U·K) Σ_{u∈U} [1 − (top − runner-up)]₊
//! ```
//!
//! jointly over `W` and the encoder weights by subgradient descent, where
//! `same`/`diff` are the best joint scores with both points in one cluster
//! or in two different clusters. Every argmax breaks ties toward the
//! smallest (lexicographically smallest) cluster indices. Clusters are
//! 0-based.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSplit;
use crate::encoder::DeepNet;
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::numeric::DataMatrix;
use crate::rbm::{pretrain_stack, PretrainConfig};
use crate::rng::SeededRng;

pub const KMEANS_ITERS: usize = 25;
pub const KMEANS_RESTARTS: usize = 3;
/// Consecutive iterations a cluster may win no point before a warning.
pub const COLLAPSE_PATIENCE: usize = 20;

/// Flat weight vector of length K·d; block `z` holds cluster `z`'s weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterWeights {
    w: Array1<f64>,
    k: usize,
    d: usize,
}

impl ClusterWeights {
    pub fn new(w: Array1<f64>, k: usize, d: usize) -> Result<Self> {
        if k == 0 || d == 0 || w.len() != k * d {
            return Err(Error::invalid(format!(
                "weight vector of length {} is not {k}x{d}",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cluster weights must be finite"));
        }
        Ok(Self { w, k, d })
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            w: Array1::zeros(k * d),
            k,
            d,
        }
    }

    /// Rows of `m` (K × d) become the blocks.
    pub fn from_blocks(m: &ArrayView2<f64>) -> Result<Self> {
        let (k, d) = m.dim();
        Self::new(m.iter().copied().collect(), k, d)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_vector(&self) -> &Array1<f64> {
        &self.w
    }

    pub fn block(&self, z: usize) -> ArrayView1<'_, f64> {
        self.w.slice(ndarray::s![z * self.d..(z + 1) * self.d])
    }

    /// K × d view of the blocks.
    pub fn blocks(&self) -> ArrayView2<'_, f64> {
        self.w
            .view()
            .into_shape_with_order((self.k, self.d))
            .expect("contiguous K·d vector")
    }

    pub fn norm_sq(&self) -> f64 {
        self.w.dot(&self.w)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w: &self.w * c,
            k: self.k,
            d: self.d,
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.d {
            return Err(Error::invalid(format!(
                "code length {len} does not match weight blocks of {}",
                self.d
            )));
        }
        Ok(())
    }

    /// `⟨w_z, h⟩` for every cluster.
    pub fn scores(&self, h: &ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(h.len())?;
        Ok(self.blocks().dot(h))
    }

    /// N × K score table for codes `h` (N × d).
    pub fn score_matrix(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(h.ncols())?;
        Ok(h.dot(&self.blocks().t()).as_standard_layout().into_owned())
    }

    pub fn apply_step(&mut self, grad: &Array1<f64>, rate: f64) {
        self.w.scaled_add(-rate, grad);
    }
}

/// `Φ(h, z)`: `h` placed in block `z` of a zero vector of length K·d.
pub fn joint_feature(h: &ArrayView1<f64>, z: usize, k: usize) -> Result<Array1<f64>> {
    if z >= k {
        return Err(Error::invalid(format!("cluster {z} out of range for K={k}")));
    }
    let d = h.len();
    let mut out = Array1::zeros(k * d);
    out.slice_mut(ndarray::s![z * d..(z + 1) * d]).assign(h);
    Ok(out)
}

/// `Φ(h1, h2, z1, z2) = Φ(h1, z1) + Φ(h2, z2)`.
pub fn pair_feature(h1: &ArrayView1<f64>, h2: &ArrayView1<f64>, z1: usize, z2: usize, k: usize) -> Result<Array1<f64>> {
    if h1.len() != h2.len() {
        return Err(Error::invalid("pair codes differ in length"));
    }
    Ok(joint_feature(h1, z1, k)? + joint_feature(h2, z2, k)?)
}

/// First maximum of a score row.
fn argmax(s: &[f64]) -> (usize, f64) {
    let mut best = (0, s[0]);
    for (z, &v) in s.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (z, v);
        }
    }
    best
}

/// Top cluster, runner-up among the others, and their scores.
fn top_two(s: &[f64]) -> (usize, f64, usize, f64) {
    let (top, top_score) = argmax(s);
    let mut runner = (usize::MAX, f64::NEG_INFINITY);
    for (z, &v) in s.iter().enumerate() {
        if z != top && (runner.0 == usize::MAX || v > runner.1) {
            runner = (z, v);
        }
    }
    (top, top_score, runner.0, runner.1)
}

fn same_from_scores(s1: &[f64], s2: &[f64]) -> (usize, f64) {
    let mut best = (0, s1[0] + s2[0]);
    for z in 1..s1.len() {
        let v = s1[z] + s2[z];
        if v > best.1 {
            best = (z, v);
        }
    }
    best
}

fn diff_from_scores(s1: &[f64], s2: &[f64]) -> (usize, usize, f64) {
    let k = s1.len();
    let mut best = (usize::MAX, usize::MAX, f64::NEG_INFINITY);
    for z1 in 0..k {
        for z2 in 0..k {
            if z1 == z2 {
                continue;
            }
            let v = s1[z1] + s2[z2];
            if best.0 == usize::MAX || v > best.2 {
                best = (z1, z2, v);
            }
        }
    }
    best
}

/// `argmax_z ⟨w_z, h⟩` and its score.
pub fn infer_cluster(w: &ClusterWeights, h: &ArrayView1<f64>) -> Result<(usize, f64)> {
    let s = w.scores(h)?;
    Ok(argmax(s.as_slice().expect("contiguous")))
}

/// Best assignment of both points to one cluster.
pub fn best_same_assignment(w: &ClusterWeights, h1: &ArrayView1<f64>, h2: &ArrayView1<f64>) -> Result<(usize, f64)> {
    let s1 = w.scores(h1)?;
    let s2 = w.scores(h2)?;
    Ok(same_from_scores(s1.as_slice().unwrap(), s2.as_slice().unwrap()))
}

/// Best assignment of the two points to two different clusters.
pub fn best_diff_assignment(
    w: &ClusterWeights,
    h1: &ArrayView1<f64>,
    h2: &ArrayView1<f64>,
) -> Result<(usize, usize, f64)> {
    if w.k() < 2 {
        return Err(Error::invalid("different-cluster assignment needs K >= 2"));
    }
    let s1 = w.scores(h1)?;
    let s2 = w.scores(h2)?;
    Ok(diff_from_scores(s1.as_slice().unwrap(), s2.as_slice().unwrap()))
}

/// A constraint pair with its maximizing assignments at the current weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMargin {
    pub i: usize,
    pub j: usize,
    /// Argmax over shared clusters (z⁺).
    pub same: usize,
    /// Argmax over distinct clusters (z₁⁻, z₂⁻).
    pub diff: (usize, usize),
    pub same_score: f64,
    pub diff_score: f64,
}

impl PairMargin {
    /// `same − diff` for must-links, `diff − same` for cannot-links.
    pub fn margin(&self, must_link: bool) -> f64 {
        if must_link {
            self.same_score - self.diff_score
        } else {
            self.diff_score - self.same_score
        }
    }
}

/// An unlabeled point whose top score beats the runner-up by less than 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledMargin {
    pub index: usize,
    pub top: usize,
    pub runner_up: usize,
    pub margin: f64,
}

/// Constraints with positive hinge at the current parameters (A⁺, A⁻ and the
/// active unlabeled points), together with the set sizes that normalize them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolatedSets {
    pub must_link: Vec<PairMargin>,
    pub cannot_link: Vec<PairMargin>,
    pub unlabeled: Vec<UnlabeledMargin>,
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_unlabeled: usize,
    pub k: usize,
}

impl ViolatedSets {
    /// Sum of hinge terms (without the regularizer).
    pub fn hinge_loss(&self, beta: f64) -> f64 {
        let mut total = 0.0;
        if self.n_plus > 0 {
            total += self.must_link.iter().map(|p| 1.0 - p.margin(true)).sum::<f64>() / self.n_plus as f64;
        }
        if self.n_minus > 0 {
            total += self.cannot_link.iter().map(|p| 1.0 - p.margin(false)).sum::<f64>() / self.n_minus as f64;
        }
        if self.n_unlabeled > 0 {
            let scale = beta / (self.n_unlabeled * self.k) as f64;
            total += scale * self.unlabeled.iter().map(|u| 1.0 - u.margin).sum::<f64>();
        }
        total
    }

    fn unlabeled_scale(&self, beta: f64) -> f64 {
        if self.n_unlabeled == 0 {
            0.0
        } else {
            beta / (self.n_unlabeled * self.k) as f64
        }
    }
}

fn check_codes(w: &ClusterWeights, codes: &ArrayView2<f64>, split: &ConstraintSplit) -> Result<()> {
    if codes.nrows() != split.n_instances {
        return Err(Error::invalid(format!(
            "{} codes for a split over {} instances",
            codes.nrows(),
            split.n_instances
        )));
    }
    if w.k() < 2 {
        return Err(Error::invalid("clustering needs K >= 2"));
    }
    w.check_dim(codes.ncols())
}

fn pair_margin(scores: &Array2<f64>, i: usize, j: usize) -> PairMargin {
    let s1 = scores.row(i);
    let s2 = scores.row(j);
    let (s1, s2) = (s1.as_slice().unwrap(), s2.as_slice().unwrap());
    let (same, same_score) = same_from_scores(s1, s2);
    let (z1, z2, diff_score) = diff_from_scores(s1, s2);
    PairMargin {
        i,
        j,
        same,
        diff: (z1, z2),
        same_score,
        diff_score,
    }
}

/// Finds every constraint and unlabeled point with margin below 1.
pub fn violated_sets(w: &ClusterWeights, codes: &ArrayView2<f64>, split: &ConstraintSplit) -> Result<ViolatedSets> {
    check_codes(w, codes, split)?;
    let scores = w.score_matrix(codes)?;
    let mut out = ViolatedSets {
        n_plus: split.n_plus(),
        n_minus: split.n_minus(),
        n_unlabeled: split.n_unlabeled(),
        k: w.k(),
        ..Default::default()
    };
    for &(i, j) in &split.must_link {
        let p = pair_margin(&scores, i, j);
        if p.margin(true) < 1.0 {
            out.must_link.push(p);
        }
    }
    for &(i, j) in &split.cannot_link {
        let p = pair_margin(&scores, i, j);
        if p.margin(false) < 1.0 {
            out.cannot_link.push(p);
        }
    }
    for &u in &split.unlabeled {
        let row = scores.row(u);
        let (top, ts, runner_up, rs) = top_two(row.as_slice().unwrap());
        let margin = ts - rs;
        if margin < 1.0 {
            out.unlabeled.push(UnlabeledMargin {
                index: u,
                top,
                runner_up,
                margin,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of clusters K.
    pub clusters: usize,
    /// Regularization weight λ.
    pub lambda: f64,
    /// Weight β of the unlabeled hinge; 0 disables it.
    pub beta: f64,
    /// Iteration cap T.
    pub max_iters: usize,
    /// Fixed step size for the encoder weights.
    pub net_rate: f64,
    /// Relative objective change over [`TrainConfig::window`] iterations
    /// below which training stops.
    pub tolerance: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            lambda: 0.02,
            beta: 1.0,
            max_iters: 300,
            net_rate: 0.01,
            tolerance: 1e-4,
            window: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::invalid("need at least 2 clusters"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.net_rate > 0.0 && self.net_rate.is_finite()) {
            return Err(Error::invalid("net_rate must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("stopping window must be positive"));
        }
        Ok(())
    }
}

/// `λ/2‖W‖²` plus the hinge terms, from precomputed violated sets.
pub fn objective_from_sets(w: &ClusterWeights, sets: &ViolatedSets, cfg: &TrainConfig) -> f64 {
    0.5 * cfg.lambda * w.norm_sq() + sets.hinge_loss(cfg.beta)
}

/// Objective on codes `H`.
pub fn objective_on_codes(
    w: &ClusterWeights,
    codes: &ArrayView2<f64>,
    split: &ConstraintSplit,
    cfg: &TrainConfig,
) -> Result<f64> {
    let sets = violated_sets(w, codes, split)?;
    Ok(objective_from_sets(w, &sets, cfg))
}

/// Objective with `H = encode(net, x)`.
pub fn objective(
    w: &ClusterWeights,
    net: &DeepNet,
    x: &ArrayView2<f64>,
    split: &ConstraintSplit,
    cfg: &TrainConfig,
) -> Result<f64> {
    let codes = net.transform(x)?;
    objective_on_codes(w, &codes.view(), split, cfg)
}

fn check_fresh(w: &ClusterWeights, codes: &ArrayView2<f64>, sets: &ViolatedSets) -> Result<()> {
    let scores = w.score_matrix(codes)?;
    let pairs = sets.must_link.iter().chain(&sets.cannot_link);
    for p in pairs {
        let fresh = pair_margin(&scores, p.i, p.j);
        if fresh.same != p.same || fresh.diff != p.diff {
            return Err(Error::ContractViolation(format!(
                "stale argmax for pair ({}, {}): stored {:?}/{:?}, current {:?}/{:?}",
                p.i, p.j, p.same, p.diff, fresh.same, fresh.diff
            )));
        }
    }
    for u in &sets.unlabeled {
        let row = scores.row(u.index);
        let (top, _, runner_up, _) = top_two(row.as_slice().unwrap());
        if top != u.top || runner_up != u.runner_up {
            return Err(Error::ContractViolation(format!(
                "stale argmax for unlabeled point {}",
                u.index
            )));
        }
    }
    Ok(())
}

/// Subgradient of the objective with respect to `W`, using the argmaxes
/// stored in `sets`. In debug builds the stored argmaxes are checked
/// against `codes`.
pub fn grad_w(
    w: &ClusterWeights,
    codes: &ArrayView2<f64>,
    sets: &ViolatedSets,
    cfg: &TrainConfig,
) -> Result<Array1<f64>> {
    w.check_dim(codes.ncols())?;
    if cfg!(debug_assertions) {
        check_fresh(w, codes, sets)?;
    }
    let d = w.d();
    let mut g = w.as_vector() * cfg.lambda;
    {
        let mut add = |z: usize, h: ArrayView1<f64>, scale: f64| {
            g.slice_mut(ndarray::s![z * d..(z + 1) * d]).scaled_add(scale, &h);
        };
        if sets.n_plus > 0 {
            let c = 1.0 / sets.n_plus as f64;
            for p in &sets.must_link {
                let (h1, h2) = (codes.row(p.i), codes.row(p.j));
                add(p.same, h1, -c);
                add(p.same, h2, -c);
                add(p.diff.0, h1, c);
                add(p.diff.1, h2, c);
            }
        }
        if sets.n_minus > 0 {
            let c = 1.0 / sets.n_minus as f64;
            for p in &sets.cannot_link {
                let (h1, h2) = (codes.row(p.i), codes.row(p.j));
                add(p.diff.0, h1, -c);
                add(p.diff.1, h2, -c);
                add(p.same, h1, c);
                add(p.same, h2, c);
            }
        }
        let c = sets.unlabeled_scale(cfg.beta);
        if c != 0.0 {
            for u in &sets.unlabeled {
                let h = codes.row(u.index);
                add(u.top, h, -c);
                add(u.runner_up, h, c);
            }
        }
    }
    Ok(g)
}

/// Gradient of the objective with respect to the codes (N × d). Rows of
/// instances in several violated constraints accumulate; others are zero.
pub fn grad_h(w: &ClusterWeights, sets: &ViolatedSets, cfg: &TrainConfig, n: usize) -> Result<Array2<f64>> {
    let mut dh = Array2::zeros((n, w.d()));
    let mut add = |row: usize, z: usize, scale: f64| -> Result<()> {
        if row >= n {
            return Err(Error::invalid(format!("instance {row} out of range for {n} codes")));
        }
        dh.row_mut(row).scaled_add(scale, &w.block(z));
        Ok(())
    };
    if sets.n_plus > 0 {
        let c = 1.0 / sets.n_plus as f64;
        for p in &sets.must_link {
            add(p.i, p.same, -c)?;
            add(p.i, p.diff.0, c)?;
            add(p.j, p.same, -c)?;
            add(p.j, p.diff.1, c)?;
        }
    }
    if sets.n_minus > 0 {
        let c = 1.0 / sets.n_minus as f64;
        for p in &sets.cannot_link {
            add(p.i, p.diff.0, -c)?;
            add(p.i, p.same, c)?;
            add(p.j, p.diff.1, -c)?;
            add(p.j, p.same, c)?;
        }
    }
    let c = sets.unlabeled_scale(cfg.beta);
    if c != 0.0 {
        for u in &sets.unlabeled {
            add(u.index, u.top, -c)?;
            add(u.index, u.runner_up, c)?;
        }
    }
    Ok(dh)
}

/// k-means on the codes; block `z` is centroid `z` scaled to unit norm.
pub fn init_cluster_weights(codes: &ArrayView2<f64>, k: usize, rng: &mut SeededRng) -> Result<ClusterWeights> {
    if k < 2 {
        return Err(Error::invalid("cluster weight initialization needs K >= 2"));
    }
    if codes.nrows() == 0 {
        return Err(Error::invalid("no codes to initialize from"));
    }
    if k > codes.nrows() {
        return Err(Error::invalid(format!(
            "K={k} exceeds the {} available codes",
            codes.nrows()
        )));
    }
    let mut km = kmeans(codes, k, KMEANS_ITERS, KMEANS_RESTARTS, rng)?;
    for mut c in km.centroids.rows_mut() {
        let norm = c.dot(&c).sqrt();
        if norm > 0.0 {
            c.mapv_inplace(|v| v / norm);
        }
    }
    ClusterWeights::from_blocks(&km.centroids.view())
}

/// Step size for `W` at iteration `iter` (0-based): `1 / (λ (iter + 1))`.
pub fn lr_schedule(lambda: f64, iter: usize) -> f64 {
    1.0 / (lambda * (iter as f64 + 1.0))
}

/// Encoder plus cluster weights: everything needed for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub net: DeepNet,
    pub weights: ClusterWeights,
}

impl ClusterModel {
    pub fn new(net: DeepNet, weights: ClusterWeights) -> Result<Self> {
        if net.code_dim() != weights.d() {
            return Err(Error::invalid(format!(
                "network emits {}-dim codes but cluster weights expect {}",
                net.code_dim(),
                weights.d()
            )));
        }
        Ok(Self { net, weights })
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let codes = self.net.transform(x)?;
        self.predict_codes(&codes.view())
    }

    pub fn predict_codes(&self, codes: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let scores = self.weights.score_matrix(codes)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()).0)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective at the parameters entering each iteration.
    pub objective: Vec<f64>,
    pub must_violated: Vec<usize>,
    pub cannot_violated: Vec<usize>,
    pub unlabeled_active: Vec<usize>,
    pub stop_reason: StopReason,
    pub model: ClusterModel,
    /// Per RBM layer, per epoch mean reconstruction error.
    pub pretrain_error: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }
}

fn converged(trace: &[f64], window: usize, tolerance: f64) -> bool {
    let n = trace.len();
    if n <= window {
        return false;
    }
    let (now, then) = (trace[n - 1], trace[n - 1 - window]);
    (now - then).abs() / then.abs().max(f64::MIN_POSITIVE) < tolerance
}

/// Pretrains the encoder, initializes `W` from k-means on the codes, then
/// alternates projection and subgradient steps until the objective settles.
pub fn train(
    x: &DataMatrix,
    split: &ConstraintSplit,
    layer_sizes: &[usize],
    cfg: &TrainConfig,
    pre_cfg: &PretrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if split.n_instances != x.n_rows() {
        return Err(Error::invalid(format!(
            "split covers {} instances but the data has {}",
            split.n_instances,
            x.n_rows()
        )));
    }
    let rng = SeededRng::new(cfg.seed);
    let stack = pretrain_stack(x, layer_sizes, pre_cfg, &mut rng.substream(1))?;
    let net = DeepNet::from_rbm_stack(&stack.layers)?;
    let codes = net.transform(&x.values().view())?;
    let weights = init_cluster_weights(&codes.view(), cfg.clusters, &mut rng.substream(2))?;
    let mut report = fit(&x.values().view(), split, net, weights, cfg)?;
    report.pretrain_error = stack.reconstruction_error;
    Ok(report)
}

/// The alternating optimization from given initial parameters.
pub fn fit(
    x: &ArrayView2<f64>,
    split: &ConstraintSplit,
    mut net: DeepNet,
    mut weights: ClusterWeights,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if weights.k() != cfg.clusters {
        return Err(Error::invalid("cluster weights disagree with the configured K"));
    }
    let n = x.nrows();
    let mut objective = Vec::new();
    let mut must_violated = Vec::new();
    let mut cannot_violated = Vec::new();
    let mut unlabeled_active = Vec::new();
    let mut starved = vec![0usize; cfg.clusters];
    let mut stop_reason = StopReason::MaxIterations;

    for iter in 0..cfg.max_iters {
        let trace = net.encode(x)?;
        let codes = trace.codes().view();
        let sets = violated_sets(&weights, &codes, split)?;
        let obj = objective_from_sets(&weights, &sets, cfg);
        if !obj.is_finite() {
            return Err(Error::NonFinite {
                iteration: iter,
                dump: format!(
                    "|W|^2={}, violated must/cannot/unlabeled={}/{}/{}, previous objective {:?}",
                    weights.norm_sq(),
                    sets.must_link.len(),
                    sets.cannot_link.len(),
                    sets.unlabeled.len(),
                    objective.last()
                ),
            });
        }
        objective.push(obj);
        must_violated.push(sets.must_link.len());
        cannot_violated.push(sets.cannot_link.len());
        unlabeled_active.push(sets.unlabeled.len());
        log::trace!(
            "iter {iter}: objective {obj:.6}, violated {}/{}/{}",
            sets.must_link.len(),
            sets.cannot_link.len(),
            sets.unlabeled.len()
        );

        track_collapse(&weights, &codes, &mut starved, iter)?;

        if converged(&objective, cfg.window, cfg.tolerance) {
            stop_reason = StopReason::Converged;
            break;
        }

        let gw = grad_w(&weights, &codes, &sets, cfg)?;
        let dh = grad_h(&weights, &sets, cfg, n)?;
        let dtheta = net.backprop(&trace, &dh.view())?;
        weights.apply_step(&gw, lr_schedule(cfg.lambda, iter));
        net.apply_update(&dtheta, cfg.net_rate)?;
    }

    Ok(TrainReport {
        objective,
        must_violated,
        cannot_violated,
        unlabeled_active,
        stop_reason,
        model: ClusterModel::new(net, weights)?,
        pretrain_error: Vec::new(),
    })
}

fn track_collapse(w: &ClusterWeights, codes: &ArrayView2<f64>, starved: &mut [usize], iter: usize) -> Result<()> {
    let scores = w.score_matrix(codes)?;
    let mut wins = vec![0usize; w.k()];
    for r in scores.rows() {
        wins[argmax(r.as_slice().unwrap()).0] += 1;
    }
    for (z, count) in wins.iter().enumerate() {
        if *count == 0 {
            starved[z] += 1;
            if starved[z] == COLLAPSE_PATIENCE {
                log::warn!("cluster {z} has won no point for {COLLAPSE_PATIENCE} iterations (iteration {iter})");
            }
        } else {
            starved[z] = 0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{partition, PairwiseConstraint};
    use ndarray::array;
    use rand::Rng;

    fn brute_same(w: &ClusterWeights, h1: &ArrayView1<f64>, h2: &ArrayView1<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for z in 0..w.k() {
            let v = w.as_vector().dot(&pair_feature(h1, h2, z, z, w.k()).unwrap());
            if v > best.1 {
                best = (z, v);
            }
        }
        best
    }

    #[test]
    fn joint_feature_placement() {
        let h = array![0.5, 0.25];
        assert_eq!(
            joint_feature(&h.view(), 1, 3).unwrap(),
            array![0.0, 0.0, 0.5, 0.25, 0.0, 0.0]
        );
        assert_eq!(joint_feature(&h.view(), 0, 1).unwrap(), h);
        assert!(joint_feature(&h.view(), 3, 3).is_err());
    }

    #[test]
    fn joint_feature_dot_is_block_dot() {
        let mut rng = SeededRng::new(4);
        let w = ClusterWeights::new(Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5), 4, 3).unwrap();
        let h = Array1::from_shape_fn(3, |_| rng.random::<f64>());
        for z in 0..4 {
            let lhs = w.as_vector().dot(&joint_feature(&h.view(), z, 4).unwrap());
            assert!((lhs - w.block(z).dot(&h)).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_feature_cases() {
        let h1 = array![1.0, 2.0];
        let h2 = array![0.5, -1.0];
        let same = pair_feature(&h1.view(), &h2.view(), 1, 1, 2).unwrap();
        assert_eq!(same, array![0.0, 0.0, 1.5, 1.0]);
        let diff = pair_feature(&h1.view(), &h2.view(), 0, 1, 2).unwrap();
        assert_eq!(diff, array![1.0, 2.0, 0.5, -1.0]);
        let swapped = pair_feature(&h2.view(), &h1.view(), 1, 0, 2).unwrap();
        assert_eq!(diff, swapped);
    }

    #[test]
    fn inference_examples() {
        let w = ClusterWeights::new(array![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        assert_eq!(infer_cluster(&w, &array![0.9, 0.1].view()).unwrap(), (0, 0.9));
        let zero = ClusterWeights::zeros(3, 2);
        assert_eq!(infer_cluster(&zero, &array![0.9, 0.1].view()).unwrap(), (0, 0.0));
        assert!(infer_cluster(&w, &array![1.0].view()).is_err());
    }

    #[test]
    fn same_and_diff_examples() {
        let w = ClusterWeights::new(array![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let (h1, h2) = (array![1.0, 0.0], array![0.0, 1.0]);
        assert_eq!(best_same_assignment(&w, &h1.view(), &h2.view()).unwrap(), (0, 1.0));
        assert_eq!(best_diff_assignment(&w, &h1.view(), &h2.view()).unwrap(), (0, 1, 2.0));
        let zero = ClusterWeights::zeros(2, 2);
        assert_eq!(best_same_assignment(&zero, &h1.view(), &h2.view()).unwrap(), (0, 0.0));
        assert_eq!(
            best_diff_assignment(&zero, &h1.view(), &h2.view()).unwrap(),
            (0, 1, 0.0)
        );
        let single = ClusterWeights::zeros(1, 2);
        assert!(best_diff_assignment(&single, &h1.view(), &h2.view()).is_err());
    }

    #[test]
    fn same_matches_brute_force() {
        let mut rng = SeededRng::new(10);
        for _ in 0..50 {
            let w = ClusterWeights::new(Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5), 4, 3).unwrap();
            let h1 = Array1::from_shape_fn(3, |_| rng.random::<f64>());
            let h2 = Array1::from_shape_fn(3, |_| rng.random::<f64>());
            let got = best_same_assignment(&w, &h1.view(), &h2.view()).unwrap();
            let want = brute_same(&w, &h1.view(), &h2.view());
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_covariance_of_inference() {
        let mut rng = SeededRng::new(2);
        let w = ClusterWeights::new(Array1::from_shape_fn(15, |_| rng.random::<f64>() - 0.5), 5, 3).unwrap();
        let h = Array1::from_shape_fn(3, |_| rng.random::<f64>());
        let (z, s) = infer_cluster(&w, &h.view()).unwrap();
        let (z2, s2) = infer_cluster(&w.scaled(3.5), &h.view()).unwrap();
        assert_eq!(z, z2);
        assert!((s2 - 3.5 * s).abs() < 1e-12);
    }

    fn small_split() -> ConstraintSplit {
        partition(
            &[
                PairwiseConstraint::must(0, 1),
                PairwiseConstraint::must(2, 3),
                PairwiseConstraint::cannot(0, 2),
                PairwiseConstraint::cannot(1, 4),
            ],
            7,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_violate_everything() {
        let split = small_split();
        let codes = Array2::from_elem((7, 3), 0.5);
        let w = ClusterWeights::zeros(3, 3);
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        assert_eq!(sets.must_link.len(), 2);
        assert_eq!(sets.cannot_link.len(), 2);
        assert_eq!(sets.unlabeled.len(), 2);
        let cfg = TrainConfig {
            clusters: 3,
            beta: 1.0,
            ..Default::default()
        };
        let obj = objective_on_codes(&w, &codes.view(), &split, &cfg).unwrap();
        assert!((obj - (2.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn satisfied_must_link_excluded() {
        // same = 2·1.25 = 2.5 (both in block 0); best diff = 1.25 + 0 ... chosen so margin = 1.5
        let w = ClusterWeights::new(array![1.25, 0.5], 2, 1).unwrap();
        let codes = array![[1.0], [1.0]];
        let split = partition(&[PairwiseConstraint::must(0, 1)], 2).unwrap();
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        let p = pair_margin(&w.score_matrix(&codes.view()).unwrap(), 0, 1);
        assert!((p.margin(true) - 0.75).abs() < 1e-15);
        assert_eq!(sets.must_link.len(), 1);

        let w = ClusterWeights::new(array![2.0, 0.5], 2, 1).unwrap();
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        // same 4.0, diff 2.5
        assert!(sets.must_link.is_empty());
    }

    #[test]
    fn regularizer_only_when_no_constraints() {
        let split = partition(&[], 4).unwrap();
        let cfg = TrainConfig {
            clusters: 2,
            beta: 0.0,
            lambda: 0.3,
            ..Default::default()
        };
        let w = ClusterWeights::new(array![1.0, -2.0, 0.5, 0.0], 2, 2).unwrap();
        let codes = Array2::from_elem((4, 2), 0.3);
        let obj = objective_on_codes(&w, &codes.view(), &split, &cfg).unwrap();
        assert!((obj - 0.15 * 5.25).abs() < 1e-15);
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        assert_eq!(grad_w(&w, &codes.view(), &sets, &cfg).unwrap(), w.as_vector() * 0.3);
        assert!(grad_h(&w, &sets, &cfg, 4).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_scales_unlabeled_contribution_linearly() {
        let split = partition(&[PairwiseConstraint::must(0, 1)], 5).unwrap();
        let mut rng = SeededRng::new(6);
        let w = ClusterWeights::new(Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.5), 3, 2).unwrap();
        let codes = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>());
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        let g = |beta: f64| {
            let cfg = TrainConfig {
                clusters: 3,
                beta,
                ..Default::default()
            };
            grad_w(&w, &codes.view(), &sets, &cfg).unwrap()
        };
        let (g0, g1, g2) = (g(0.0), g(1.0), g(2.0));
        let unl1 = &g1 - &g0;
        let unl2 = &g2 - &g0;
        for (a, b) in unl1.iter().zip(unl2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shared_instance_accumulates() {
        let w = ClusterWeights::new(array![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let codes = array![[0.6, 0.4], [0.4, 0.6], [0.5, 0.5]];
        let cfg = TrainConfig {
            clusters: 2,
            beta: 0.0,
            ..Default::default()
        };
        let both = partition(&[PairwiseConstraint::must(0, 1), PairwiseConstraint::must(0, 2)], 3).unwrap();
        let sets = violated_sets(&w, &codes.view(), &both).unwrap();
        assert_eq!(sets.must_link.len(), 2);
        let dh = grad_h(&w, &sets, &cfg, 3).unwrap();
        let single = |c: PairwiseConstraint| {
            let mut s = violated_sets(&w, &codes.view(), &partition(&[c], 3).unwrap()).unwrap();
            s.n_plus = 2;
            grad_h(&w, &s, &cfg, 3).unwrap()
        };
        let sum = single(PairwiseConstraint::must(0, 1)) + single(PairwiseConstraint::must(0, 2));
        assert_eq!(dh, sum);
    }

    #[test]
    fn stale_sets_detected() {
        let w = ClusterWeights::new(array![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let codes = array![[0.9, 0.1], [0.8, 0.2]];
        let split = partition(&[PairwiseConstraint::must(0, 1)], 2).unwrap();
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        let flipped = ClusterWeights::new(array![0.0, 1.0, 1.0, 0.0], 2, 2).unwrap();
        let cfg = TrainConfig::default();
        let r = grad_w(&flipped, &codes.view(), &sets, &cfg);
        if cfg!(debug_assertions) {
            assert!(matches!(r, Err(Error::ContractViolation(_))));
        }
    }

    #[test]
    fn schedule() {
        assert!((lr_schedule(0.02, 0) - 50.0).abs() < 1e-12);
        assert!((lr_schedule(0.02, 99) - 0.5).abs() < 1e-12);
        for i in 0..100 {
            assert!(lr_schedule(0.02, i + 1) < lr_schedule(0.02, i));
        }
    }

    #[test]
    fn init_rejects_bad_k() {
        let codes = Array2::from_elem((3, 2), 0.5);
        assert!(init_cluster_weights(&codes.view(), 1, &mut SeededRng::new(0)).is_err());
        assert!(init_cluster_weights(&codes.view(), 4, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn init_agrees_with_kmeans_partition() {
        let mut rng = SeededRng::new(3);
        let mut codes = Array2::zeros((100, 2));
        for i in 0..100 {
            let (cx, cy) = if i < 50 { (0.9, 0.1) } else { (0.1, 0.9) };
            codes[[i, 0]] = cx + 0.05 * (rng.random::<f64>() - 0.5);
            codes[[i, 1]] = cy + 0.05 * (rng.random::<f64>() - 0.5);
        }
        let w = init_cluster_weights(&codes.view(), 2, &mut SeededRng::new(1)).unwrap();
        let km = kmeans(&codes.view(), 2, KMEANS_ITERS, KMEANS_RESTARTS, &mut SeededRng::new(1)).unwrap();
        let pred = ClusterModel::new(DeepNet::new(vec![Array2::zeros((3, 2))]).unwrap(), w.clone())
            .unwrap()
            .predict_codes(&codes.view())
            .unwrap();
        let agree = pred.iter().zip(&km.assignment).filter(|(a, b)| a == b).count();
        assert!(agree >= 95, "agreement {agree}/100");
        for z in 0..2 {
            assert!((w.block(z).dot(&w.block(z)) - 1.0).abs() < 1e-12);
        }
        let again = init_cluster_weights(&codes.view(), 2, &mut SeededRng::new(1)).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn regularizer_shrinkage_without_constraints() {
        let mut rng = SeededRng::new(8);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
        let net = DeepNet::new(vec![Array2::from_shape_fn((4, 2), |_| rng.random::<f64>() - 0.5)]).unwrap();
        let w = ClusterWeights::new(Array1::from_shape_fn(4, |_| rng.random::<f64>() - 0.5), 2, 2).unwrap();
        let split = partition(&[], 6).unwrap();
        let cfg = TrainConfig {
            clusters: 2,
            beta: 0.0,
            max_iters: 10,
            ..Default::default()
        };
        let report = fit(&x.view(), &split, net, w, &cfg).unwrap();
        for pair in report.objective.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }
}
