//! Dual-graph embedding enhancement for click-through-rate prediction.
//!
//! Feature embeddings are refined by field-wise propagation over attribute
//! graphs and then by a two-stage schedule over a collaborative graph
//! (user-user and item-item edges first, user-item edges second) before an
//! inner-product + MLP classifier scores each instance.

pub mod aggregators;
pub mod attrconv;
pub mod collabconv;
pub mod config;
pub mod data;
pub mod error;
pub mod graphs;
mod io_util;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seeding;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
