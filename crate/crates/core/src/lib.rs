//! Origin-destination demand forecasting on closed highways.
//!
//! The crate covers the whole experimental pipeline: corridor topology and
//! its line graph, a small reverse-mode tensor engine, the fusion line-graph
//! GCN, a state-augmented Kalman filter baseline, a synthetic corridor
//! simulator, supervised windowing, training and evaluation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod kalman;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
