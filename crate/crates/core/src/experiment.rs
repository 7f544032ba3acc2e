//! Experiment orchestration: a grid over constraint counts × β × seeds,
//! each run fully independent, and CSV/JSON report emission.
//!
//! Per seed `s`, stream 0 of `SeededRng::new(s)` draws the constraints and
//! their train/test split, stream 1 the RBM pretraining, stream 2 the
//! k-means initialization. Runs for the same seed therefore share
//! constraints across β values, and share pretraining across both.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{partition, sample_constraints, split_train_test, PairwiseConstraint};
use crate::data::{load_csv, load_idx, write_atomic, LabelColumn};
use crate::error::{Error, Result};
use crate::evaluation::{adjusted_rand_index, clustering_accuracy, pairwise_scores, roc_auc, roc_curve, RocPoint};
use crate::mmc::{train, StopReason, TrainConfig};
use crate::model_io::{ModelMetadata, Preprocessing, SavedModel};
use crate::numeric::{pca_project, DataMatrix, FeatureKind, Standardizer};
use crate::rbm::PretrainConfig;
use crate::rng::SeededRng;

const STREAM_CONSTRAINTS: u64 = 0;
const STREAM_SUBSAMPLE: u64 = 3;
const STREAM_SYNTHETIC: u64 = 4;
const STREAM_SPLIT: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    /// Isotropic Gaussian blobs from [`synthetic_blobs`].
    Blobs {
        n: usize,
        clusters: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

impl DatasetSource {
    /// `limit` subsampling for IDX data draws from `seed`.
    pub fn load(&self, seed: u64) -> Result<DataMatrix> {
        match self {
            Self::Csv { path, label_column } => load_csv(path, *label_column),
            Self::Idx { images, labels, limit } => load_idx(
                images,
                labels,
                *limit,
                &mut SeededRng::new(seed).substream(STREAM_SUBSAMPLE),
            ),
            Self::Blobs {
                n,
                clusters,
                dim,
                separation,
                seed,
            } => synthetic_blobs(*n, *clusters, *dim, *separation, *seed),
        }
    }
}

/// `n` points split evenly over `clusters` unit-variance Gaussians in
/// `dim` dimensions. Centers are drawn from a standard normal and scaled by
/// `separation`.
pub fn synthetic_blobs(n: usize, clusters: usize, dim: usize, separation: f64, seed: u64) -> Result<DataMatrix> {
    if clusters == 0 || n < clusters || dim == 0 {
        return Err(Error::invalid("blobs need n >= clusters >= 1 and dim >= 1"));
    }
    let mut rng = SeededRng::new(seed).substream(STREAM_SYNTHETIC);
    let centers = Array2::from_shape_fn((clusters, dim), |_| {
        separation * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let labels: Vec<usize> = (0..n).map(|i| i * clusters / n).collect();
    let values = Array2::from_shape_fn((n, dim), |(i, j)| {
        centers[[labels[i], j]] + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    DataMatrix::new(values, Some(labels), FeatureKind::Continuous)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub layer_sizes: Vec<usize>,
    /// Defaults to the number of label classes.
    pub clusters: Option<usize>,
    /// `clusters` and `seed` are overridden per run.
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    /// Total constraints sampled per run (training plus held-out).
    pub n_pairs: Vec<usize>,
    pub betas: Vec<f64>,
    /// Fraction of sampled constraints that are must-links.
    pub balance: f64,
    /// Fraction of sampled constraints used for training; the rest score AUC.
    pub train_fraction: f64,
    pub pca_dim: Option<usize>,
    pub seeds: Vec<u64>,
    /// Replaces sampling: every run splits this fixed pool.
    pub constraints: Option<Vec<PairwiseConstraint>>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            layer_sizes: vec![100],
            clusters: None,
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            n_pairs: vec![200],
            betas: vec![1.0],
            balance: 0.5,
            train_fraction: 0.5,
            pca_dim: None,
            seeds: vec![1, 2, 3, 4, 5],
            constraints: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("seed list repeats a seed"));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::invalid(
                "layer sizes must be a non-empty list of positive widths",
            ));
        }
        if self.n_pairs.is_empty() && self.constraints.is_none() {
            return Err(Error::invalid("no constraint counts given"));
        }
        if self.betas.is_empty() {
            return Err(Error::invalid("no beta values given"));
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return Err(Error::invalid("balance must lie in (0, 1)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0, 1)"));
        }
        if self.clusters.is_some_and(|k| k < 2) {
            return Err(Error::invalid("need at least 2 clusters"));
        }
        for &beta in &self.betas {
            TrainConfig {
                beta,
                ..self.train.clone()
            }
            .validate()?;
        }
        self.pretrain.validate()?;
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.exists() {
                return Err(Error::invalid(format!("dataset {} does not exist", path.display())));
            }
        }
        if let DatasetSource::Idx { images, labels, .. } = &self.dataset {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::invalid(format!("dataset {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Grid points in report order: n_pairs, then beta, then seed.
    fn jobs(&self) -> Vec<(usize, f64, u64)> {
        let pairs = match &self.constraints {
            Some(pool) => vec![pool.len()],
            None => self.n_pairs.clone(),
        };
        let mut jobs = Vec::new();
        for &n in &pairs {
            for &b in &self.betas {
                for &s in &self.seeds {
                    jobs.push((n, b, s));
                }
            }
        }
        jobs
    }
}

/// Data after the seed-independent transforms, plus the transforms.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub x: DataMatrix,
    pub preprocessing: Preprocessing,
}

/// Optional PCA, then column standardization for continuous data.
pub fn prepare(raw: &DataMatrix, pca_dim: Option<usize>) -> Result<PreparedData> {
    let mut pre = Preprocessing::default();
    let mut x = raw.clone();
    if let Some(k) = pca_dim {
        let (projected, basis) = pca_project(&x, k)?;
        x = projected;
        pre.pca = Some(basis);
    }
    if x.kind() == FeatureKind::Continuous {
        let s = Standardizer::fit(&x.values().view())?;
        x = x.with_values(s.apply(&x.values().view())?, FeatureKind::Continuous)?;
        pre.standardizer = Some(s);
    }
    Ok(PreparedData { x, preprocessing: pre })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub ari: f64,
    /// `None` when the held-out pairs lack one of the two kinds.
    pub auc: Option<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub objective: Vec<f64>,
    pub must_violated: Vec<usize>,
    pub cannot_violated: Vec<usize>,
    pub unlabeled_active: Vec<usize>,
    pub roc: Vec<RocPoint>,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n_pairs: usize,
    pub beta: f64,
    pub seconds: f64,
    pub outcome: std::result::Result<RunMetrics, String>,
    #[serde(skip)]
    pub model: Option<SavedModel>,
    #[serde(skip)]
    pub constraints: Vec<PairwiseConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_pairs: usize,
    pub beta: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub accuracy: Option<Stat>,
    pub ari: Option<Stat>,
    pub auc: Option<Stat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub n_instances: usize,
    pub n_features: usize,
    pub clusters: usize,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<GridSummary>,
    pub seconds: f64,
}

impl RunReport {
    pub fn summary(&self, n_pairs: usize, beta: f64) -> Option<&GridSummary> {
        self.summaries.iter().find(|s| s.n_pairs == n_pairs && s.beta == beta)
    }
}

pub fn summarize(runs: &[RunRecord]) -> Vec<GridSummary> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|&(n, b)| n == r.n_pairs && b == r.beta) {
            keys.push((r.n_pairs, r.beta));
        }
    }
    keys.into_iter()
        .map(|(n, b)| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.n_pairs == n && r.beta == b).collect();
            let ok: Vec<&RunMetrics> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let acc: Vec<f64> = ok.iter().map(|m| m.accuracy).collect();
            let ari: Vec<f64> = ok.iter().map(|m| m.ari).collect();
            let auc: Vec<f64> = ok.iter().filter_map(|m| m.auc).collect();
            GridSummary {
                n_pairs: n,
                beta: b,
                succeeded: ok.len(),
                failed: group.len() - ok.len(),
                accuracy: Stat::of(&acc),
                ari: Stat::of(&ari),
                auc: Stat::of(&auc),
            }
        })
        .collect()
}

fn run_one(
    data: &PreparedData,
    cfg: &ExperimentConfig,
    clusters: usize,
    n_pairs: usize,
    beta: f64,
    seed: u64,
) -> Result<(RunMetrics, SavedModel, Vec<PairwiseConstraint>)> {
    let labels = data
        .x
        .labels()
        .ok_or_else(|| Error::invalid("experiments need labeled data"))?;
    let mut rng = SeededRng::new(seed).substream(STREAM_CONSTRAINTS);
    let pool = match &cfg.constraints {
        Some(pool) => pool.clone(),
        None => sample_constraints(labels, n_pairs, cfg.balance, &mut rng)?,
    };
    // A pool replayed from a file must split exactly as it did when sampled.
    let mut split_rng = SeededRng::new(seed).substream(STREAM_SPLIT);
    let (train_pairs, test_pairs) = split_train_test(&pool, cfg.train_fraction, &mut split_rng)?;
    let split = partition(&train_pairs, data.x.n_rows())?;
    let tcfg = TrainConfig {
        clusters,
        beta,
        seed,
        ..cfg.train.clone()
    };
    let report = train(&data.x, &split, &cfg.layer_sizes, &tcfg, &cfg.pretrain)?;
    let model = report.model.clone();
    let codes = model.net.transform(&data.x.values().view())?;
    let pred = model.predict_codes(&codes.view())?;
    let accuracy = clustering_accuracy(&pred, labels)?;
    let ari = adjusted_rand_index(&pred, labels)?;
    let scores = pairwise_scores(&model.weights, &codes.view(), &test_pairs)?;
    let positive: Vec<bool> = test_pairs.iter().map(|c| c.same).collect();
    let (auc, roc) = match (roc_auc(&scores, &positive), roc_curve(&scores, &positive)) {
        (Ok(a), Ok(r)) => (Some(a), r),
        _ => (None, Vec::new()),
    };
    let metrics = RunMetrics {
        accuracy,
        ari,
        auc,
        iterations: report.iterations(),
        stop_reason: report.stop_reason,
        objective: report.objective,
        must_violated: report.must_violated,
        cannot_violated: report.cannot_violated,
        unlabeled_active: report.unlabeled_active,
        roc,
        n_train_pairs: train_pairs.len(),
        n_test_pairs: test_pairs.len(),
    };
    let saved = SavedModel {
        metadata: ModelMetadata {
            k: clusters,
            d: model.weights.d(),
            lambda: tcfg.lambda,
            beta,
            seed,
        },
        model,
        preprocessing: data.preprocessing.clone(),
    };
    Ok((metrics, saved, pool))
}

/// Loads and prepares the dataset, then runs the grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let raw = cfg.dataset.load(cfg.seeds[0])?;
    let data = prepare(&raw, cfg.pca_dim)?;
    run_prepared(&data, cfg)
}

/// Runs every (n_pairs, β, seed) job in parallel; a failing job is
/// recorded and does not stop the others.
pub fn run_prepared(data: &PreparedData, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let clusters = match cfg.clusters {
        Some(k) => k,
        None => data
            .x
            .num_classes()
            .ok_or_else(|| Error::invalid("cluster count not given and the data has no labels"))?,
    };
    let start = Instant::now();
    let runs: Vec<RunRecord> = cfg
        .jobs()
        .into_par_iter()
        .map(|(n_pairs, beta, seed)| {
            let t = Instant::now();
            let result = run_one(data, cfg, clusters, n_pairs, beta, seed);
            let seconds = t.elapsed().as_secs_f64();
            match result {
                Ok((metrics, model, constraints)) => RunRecord {
                    seed,
                    n_pairs,
                    beta,
                    seconds,
                    outcome: Ok(metrics),
                    model: Some(model),
                    constraints,
                },
                Err(e) => {
                    log::error!("run seed={seed} n_pairs={n_pairs} beta={beta} failed: {e}");
                    RunRecord {
                        seed,
                        n_pairs,
                        beta,
                        seconds,
                        outcome: Err(e.to_string()),
                        model: None,
                        constraints: Vec::new(),
                    }
                }
            }
        })
        .collect();
    Ok(RunReport {
        config: cfg.clone(),
        n_instances: data.x.n_rows(),
        n_features: data.x.n_features(),
        clusters,
        summaries: summarize(&runs),
        runs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRICS_HEADER: &str = "seed,n_pairs,beta,accuracy,ari,auc,iterations";

/// One row per run; failed runs have empty metric fields. Timing lives in
/// `timings.csv` so this file depends only on the configuration.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in &report.runs {
        let (acc, ari, auc, iters) = match &r.outcome {
            Ok(m) => (Some(m.accuracy), Some(m.ari), m.auc, m.iterations.to_string()),
            Err(_) => (None, None, None, String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.seed,
            r.n_pairs,
            r.beta,
            opt(acc),
            opt(ari),
            opt(auc),
            iters
        )
        .unwrap();
    }
    out
}

pub fn roc_csv(report: &RunReport) -> String {
    let mut out = String::from("seed,n_pairs,beta,threshold,fpr,tpr\n");
    for r in &report.runs {
        if let Ok(m) = &r.outcome {
            for p in &m.roc {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.seed, r.n_pairs, r.beta, p.threshold, p.fpr, p.tpr
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn traces_csv(report: &RunReport) -> String {
    let mut out =
        String::from("seed,n_pairs,beta,iteration,objective,must_violated,cannot_violated,unlabeled_active\n");
    for r in &report.runs {
        if let Ok(m) = &r.outcome {
            for t in 0..m.objective.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.seed,
                    r.n_pairs,
                    r.beta,
                    t,
                    m.objective[t],
                    m.must_violated[t],
                    m.cannot_violated[t],
                    m.unlabeled_active[t]
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn timings_csv(report: &RunReport) -> String {
    let mut out = String::from("seed,n_pairs,beta,seconds\n");
    for r in &report.runs {
        writeln!(out, "{},{},{},{}", r.seed, r.n_pairs, r.beta, r.seconds).unwrap();
    }
    out
}

pub const REPORT_FILES: [&str; 5] = [
    "report.json",
    "metrics.csv",
    "roc_points.csv",
    "objective_traces.csv",
    "timings.csv",
];

/// Writes every report file into `dir` (created if missing), each atomically.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report)?;
    let contents = [
        json,
        metrics_csv(report),
        roc_csv(report),
        traces_csv(report),
        timings_csv(report),
    ];
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> RunReport {
        RunReport {
            config: ExperimentConfig::new(DatasetSource::Blobs {
                n: 30,
                clusters: 3,
                dim: 2,
                separation: 5.0,
                seed: 1,
            }),
            n_instances: 0,
            n_features: 0,
            clusters: 3,
            runs: Vec::new(),
            summaries: Vec::new(),
            seconds: 0.0,
        }
    }

    #[test]
    fn empty_report_has_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&empty_report(), dir.path()).unwrap();
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics, format!("{METRICS_HEADER}\n"));
        for f in REPORT_FILES {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn stat_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn blobs_shape() {
        let d = synthetic_blobs(600, 3, 5, 2.0, 7).unwrap();
        assert_eq!(d.values().dim(), (600, 5));
        assert_eq!(d.num_classes(), Some(3));
        assert_eq!(d.labels().unwrap().iter().filter(|&&l| l == 2).count(), 200);
        assert_eq!(d, synthetic_blobs(600, 3, 5, 2.0, 7).unwrap());
    }

    #[test]
    fn small_grid_runs_and_isolates_failures() {
        let mut cfg = ExperimentConfig::new(DatasetSource::Blobs {
            n: 60,
            clusters: 3,
            dim: 2,
            separation: 6.0,
            seed: 3,
        });
        cfg.layer_sizes = vec![8];
        cfg.pretrain.epochs = 5;
        cfg.train.max_iters = 20;
        cfg.n_pairs = vec![20, 5000];
        cfg.seeds = vec![1, 2];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert!(report.runs[..2].iter().all(|r| r.outcome.is_ok()));
        // 5000 distinct pairs do not exist among 60 points
        assert!(report.runs[2..].iter().all(|r| r.outcome.is_err()));
        assert_eq!(report.summaries[1].failed, 2);
        assert_eq!(metrics_csv(&report).lines().count(), 5);
    }
}
