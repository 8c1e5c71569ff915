//! Edge-aware vehicle trajectory prediction with bounded interaction graphs
//! and one-shot Bézier decoding.
//!
//! A window of observed tracks goes through four stages:
//!
//! 1. [`edge_builder`] links each vehicle to at most `K` neighbors within
//!    radius `r` of its last position.
//! 2. [`encoder`] embeds each history and aggregates neighbor features with
//!    one round of sum message passing.
//! 3. [`decoder`] turns the encoded sequence into one latent token per
//!    vehicle with a small transformer decoder, in a single pass.
//! 4. [`curve_head`] maps that token to the control points of a quartic
//!    Bézier curve anchored at the last observed position and samples it
//!    at every future step.
//!
//! [`training`] fits the model, [`metrics`] scores it and [`bench`]
//! measures end-to-end latency.
//!
//! ```
//! use edgevtp::curve_head::evaluate_bezier;
//!
//! let ctrl = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
//! let samples = evaluate_bezier(&ctrl, 4).unwrap();
//! assert_eq!(samples, vec![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]);
//! ```

pub mod bench;
pub mod container;
pub mod curve_head;
pub mod data;
pub mod decoder;
pub mod edge_builder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use edge_builder::{build_edges, EdgeMode, EdgeSet, UNCAPPED};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, Predictor};
pub use training::TrainConfig;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/edges.md")]
    mod edges {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/curves.md")]
    mod curves {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/latency.md")]
    mod latency {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
