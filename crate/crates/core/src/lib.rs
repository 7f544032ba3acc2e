//! Deep semi-supervised maximum-margin clustering.
//!
//! A stack of RBMs pretrains a logistic encoder; a multi-class max-margin
//! clusterer is then trained jointly with the encoder under must-link and
//! cannot-link constraints, with an optional transductive margin on the
//! unconstrained points.
//!
//! ```no_run
//! use deepmmc::{constraints, mmc, numeric, rbm, rng::SeededRng};
//! # fn main() -> deepmmc::Result<()> {
//! let data = deepmmc::data::load_csv("data/wine.csv".as_ref(), deepmmc::data::LabelColumn::Last)?;
//! let (x, _) = numeric::standardize_columns(&data)?;
//! let labels = x.labels().unwrap();
//! let pairs = constraints::sample_constraints(labels, 100, 0.5, &mut SeededRng::new(1))?;
//! let split = constraints::partition(&pairs, x.n_rows())?;
//! let cfg = mmc::TrainConfig { clusters: 3, ..Default::default() };
//! let report = mmc::train(&x, &split, &[100], &cfg, &rbm::PretrainConfig::default())?;
//! let pred = report.model.predict(&x.values().view())?;
//! # Ok(()) }
//! ```

// Index loops follow the cluster algebra; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod kmeans;
pub mod mmc;
pub mod model_io;
pub mod numeric;
pub mod rbm;
pub mod rng;

pub use error::{Error, Result};
