//! Two-layer CPG locomotion for chains of five-joint modules, plus a
//! simulated master/slave pipeline that streams joint trajectories.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod cpg;
pub mod error;
pub mod gaits;
pub mod hierarchy;
pub mod integrate;
pub mod report;
pub mod runtime;
pub mod sim;
pub mod transport;

pub use cpg::{JointOutput, NetworkState, OscillatorNetwork, OscillatorNetworkParams};
pub use error::{Error, Result};
pub use gaits::{Catalog, GaitPreset, Gains, ModuleGait};
pub use hierarchy::{HierarchicalCpg, Injection, SystemConfig, SystemState};
pub use sim::{Mode, RunConfig, RunOutput};
pub use transport::{JointVector, StatusMessage, TrajectorySegmentMessage};
