//! Congestion-aware distributed task offloading in wireless multi-hop
//! networks.
//!
//! The library models a network as a connectivity graph plus a conflict
//! graph over its links, extends it with virtual links that encode compute
//! capacity, and estimates per-link packet delays under contention with an
//! iterative queueing estimator. Offloading decisions are made per task by
//! shortest-path costs over those delays. A small graph convolutional
//! network, trained end to end through the (differentiable) estimator,
//! produces congestion-aware link weights that let distributed decisions
//! account for the traffic of other tasks.
//!
//! Numeric code is generic over the scalar type ([`Scalar`], `f32`/`f64`);
//! the file formats and the CLI pipeline use `f64`.

pub mod gcnn;
pub mod graph;
pub mod instance;
pub mod policy;
pub mod queueing;
pub mod rng;
pub mod scalar;
pub mod train;

pub use graph::{
    line_graph, ConflictGraph, ConnectivityGraph, ExtendedGraph, ExtendedLineGraph, GraphError,
    InstanceTopology, LinkId, NodeId, NodeRole,
};
pub use instance::{NetworkInstance, Task, TaskSet};
pub use queueing::{DelayVector, ServiceEstimate};
pub use scalar::Scalar;

/// Concrete aliases for the default double-precision pipeline.
pub type ExtendedGraph64 = ExtendedGraph<f64>;
pub type InstanceTopology64 = InstanceTopology<f64>;
pub type DelayVector64 = DelayVector<f64>;
pub type GcnnModel64 = gcnn::GcnnModel<f64>;
