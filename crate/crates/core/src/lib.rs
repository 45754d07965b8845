//! Incomplete multi-view clustering with graph-based missing-view handling,
//! GCN encoders, attention fusion, contrastive objectives and high-confidence
//! self-guidance.
//!
//! The pipeline: [`graphs`] builds per-view KNN graphs and fills the rows of
//! missing instances from their observed views, [`network`] encodes each view
//! with a GCN and fuses the views with instance-level attention,
//! [`objectives`] defines the training losses and [`trainer`] runs the
//! optimization. [`metrics`] scores the resulting partition.

pub mod dataio;
pub mod error;
pub mod graphs;
pub mod metrics;
pub mod network;
pub mod numkit;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use dataio::{Labels, ObservationMask, ViewSet};
pub use error::{Error, Result};
pub use numkit::Matrix;
pub use trainer::{train, TrainConfig, TrainResult};
