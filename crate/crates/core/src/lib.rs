//! Allocation-only core of the divide/optimize/merge agent optimizer.
//!
//! This crate holds everything that does not need an operating system:
//! the domain types shared by every stage, task-set partitioning, module
//! featurization and clustering, the text conventions used to talk to
//! language models, and the structural checks on merge trees. IO, model
//! backends, environments and the CLI live in the `fgo` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod ids;
pub mod partition;
pub mod text;
pub mod tree;
pub mod types;

pub use cluster::{
    bisecting_kmeans, cluster_count, cosine, featurize, kmeans, wcss, Clustering, ClusterError,
    ClusteringKind, FeatureVector, KMeansParams,
};
pub use ids::{content_id, derive_seed};
pub use partition::{partition_category, partition_random, verify_partition, PartitionError};
pub use tree::{MergeTree, TreeViolation};
pub use types::*;
