//! Rule-guided graph neural network recommendation over knowledge graphs.
//!
//! The pipeline: build the user-augmented graph ([`kg`]), mine chain rules
//! that connect users to their items ([`rules`]), rank them by embedding
//! composition or closed-world confidence ([`embed`], [`rules`]), pre-train
//! per-rule weights ([`weights`]), then train the rule-guided aggregation
//! model ([`model`]) and evaluate it ([`eval`]). [`pipeline`] wires the
//! stages together with cached artifacts.

pub mod binio;
pub mod config;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod intern;
pub mod kg;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rules;
pub mod seed;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
