//! Learning substrate: tiny models, gradients, SGD loops and synthetic data.
//!
//! Everything here is a pure function of its inputs plus an explicit seed,
//! so values can move freely between simulated devices.

mod data;
mod spec;
mod train;
mod vector;

pub use data::{
    make_synthetic_dataset, partition_dataset, DataPartition, Dataset, PartitionScheme, Sample,
    SynthTask,
};
pub use spec::{LossKind, ModelKind, ModelSpec};
pub use train::{compute_gradient, evaluate, local_train, sgd_step, HyperParams};
pub use vector::ParamVector;
