//! Distributed simulation of a two-dimensional grid of cortical columns
//! built from leaky integrate-and-fire neurons with spike-frequency
//! adaptation.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: grid geometry, the lateral stencil and closed-form
//!   synapse counts.
//! - [`model`]: neuron parameters and the per-step integrator.
//! - [`netgen`]: reproducible, partition-independent network generation
//!   and external input.
//! - [`partition`]: column ownership and worker routing.
//! - [`transport`]: the spike-batch wire format and its backends.
//! - [`engine`]: the epoch-driven simulation loop.
//! - [`scaling`]: strong/weak scaling sweeps and CSV metrics.

pub mod engine;
pub mod model;
pub mod netgen;
pub mod partition;
pub mod scaling;
pub mod topology;
pub mod transport;

pub use engine::{
    run, run_rank, EngineError, InitialPotential, MemoryAccount, Raster, RunOutput, RunReport,
    SimConfig,
};
pub use model::{NeuronParams, NeuronState};
pub use partition::{assign_columns, routing_table, Partition, RoutingTable, WorkerId};
pub use scaling::MetricRow;
pub use topology::{expected_counts, Boundary, ColumnId, CountsReport, GridSpec};
pub use transport::TransportMode;
