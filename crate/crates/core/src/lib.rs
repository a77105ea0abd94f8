pub mod ablation;
pub mod brainnet;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoders;
pub mod error;
pub mod explain;
pub mod geometry;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod popgraph;
pub mod rng;
pub mod stages;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
