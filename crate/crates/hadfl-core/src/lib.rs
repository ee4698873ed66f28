//! Heterogeneity-aware decentralized federated learning engine.
//!
//! The crate implements a decentralized training protocol for clusters of
//! devices with unequal compute power, together with a deterministic
//! virtual-clock simulator and an experiment runner:
//!
//! - [`model`]: tiny models, gradients, seeded SGD loops, synthetic data.
//! - [`schedule`]: warm-up speed measurement, rational hyperperiods, and
//!   per-device local-step budgets.
//! - [`predict`]: double-exponential smoothing of observed parameter
//!   versions.
//! - [`select`]: version-driven participant selection, ring topologies and
//!   device grouping.
//! - [`gossip`]: segmented scatter-gather ring aggregation with handshake /
//!   bypass fault tolerance, plus the peer wire format.
//! - [`simnet`]: single-threaded discrete-event simulator with exact
//!   rational virtual time and byte-level traffic accounting.
//! - [`coordinator`]: liveness, strategy generation, runtime supervision
//!   and model backup.
//! - [`config`], [`runner`], [`metrics`], [`compare`]: the experiment
//!   front end shared by the CLI.

pub mod compare;
pub mod config;
pub mod coordinator;
pub mod error;
pub mod gossip;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod rat;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod select;
pub mod simnet;

pub use error::{Error, Result};

/// Device identifier. The coordinator is addressed by [`COORDINATOR_ID`].
pub type DeviceId = u32;

/// Reserved id for the cloud coordinator on simulated links.
pub const COORDINATOR_ID: DeviceId = u32::MAX;
