//! Data-centric distrust scoring for individual predictions.
//!
//! Given a tabular training set, a [`DistrustModel`] answers, for any query
//! point, how poorly the data supports a prediction there. Two probabilities
//! are combined:
//!
//! * `p_o`, lack of representation: how unusual the query's k-vicinity radius
//!   is compared to the radii of the training tuples themselves;
//! * `p_u`, lack of certainty: how unusual the target disagreement (entropy
//!   for classification, residual sum of squares for regression) inside the
//!   query's k-vicinity is.
//!
//! The strong measure `sdt = p_o * p_u` flags queries failing both tests, the
//! weak measure `wdt = p_o + p_u - p_o * p_u` flags queries failing either.
//! Scoring costs one k-NN lookup plus two binary searches after a one-time
//! [`DistrustModel::fit`].
//!
//! ```
//! use distrust_core::{dataset, DistrustModel, OracleParams};
//!
//! let raw = dataset::RawTable::from_rows(
//!     vec!["x".into(), "y".into()],
//!     (0..20).map(|i| vec![format!("{}", i), (i % 2).to_string()]).collect(),
//! )
//! .unwrap();
//! let schema = dataset::infer_schema(&raw, "y", None).unwrap();
//! let data = dataset::encode(&raw, schema).unwrap();
//! let params = OracleParams { k: 3, ..OracleParams::default() };
//! let model = DistrustModel::fit(data, params).unwrap();
//! let score = model.score(&[0.5]).unwrap();
//! assert!(score.sdt <= score.wdt);
//! ```

mod codec;
pub mod dataset;
pub mod distrust;
mod error;
pub mod eval;
pub mod knn;
pub mod metrics;
pub mod oracles;
pub mod stats;
pub mod surrogate;
pub mod tuning;

#[cfg(test)]
pub(crate) mod testutil;

pub use dataset::{Dataset, Points, Targets, Task};
pub use distrust::{DistrustModel, DistrustScore};
pub use error::{Error, Result};
pub use knn::{KnnIndex, Neighborhood, Strategy};
pub use metrics::MetricId;
pub use oracles::{OracleParams, RankList};
