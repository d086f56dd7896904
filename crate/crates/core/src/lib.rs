//! Weighted record linkage over an evolution knowledge graph.
//!
//! Linked training records yield evolution triples `(v_i, v_j, a)`: the
//! value of attribute `a` changed from `v_i` to `v_j` between two records of
//! the same entity. Translation embeddings are trained on those triples, a
//! per-attribute weight vector is learned on top of them, and candidate pairs
//! are scored with `P = sigmoid(sum_a w_a * S(v, u) * EA(v, u, a))`.
//!
//! ```no_run
//! use werl::pipeline::{run_experiment, ExperimentConfig};
//!
//! let run = run_experiment(&ExperimentConfig::febrl_like()).unwrap();
//! println!("{}", run.report.metrics_line());
//! ```

pub mod ekg;
pub mod embed;
mod error;
pub mod ingest;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod weights;

pub use error::{Error, Result};
