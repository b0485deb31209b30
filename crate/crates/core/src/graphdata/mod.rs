//! Dynamic-graph samples from forum activity logs.
//!
//! An activity log is turned into a sequence of per-window transition
//! graphs: one node per subforum, a directed edge for every within-window
//! move between two distinct subforums, and node features built from each
//! subforum's keyword profile scaled by the user's activity there. The
//! module also ships a synthetic generator with a planted stage/subforum
//! correlation (standing in for real forum data), the two reduced input
//! forms used by the baseline ablation modes, and a deterministic
//! user-level dataset split.

mod dataset;
mod event;
mod snapshot;
mod split;
mod synthetic;
mod vocab;

pub use dataset::{
    read_dataset, read_events, read_profiles, write_dataset, write_events, write_profiles,
    PlantedInfo,
};
pub use event::{Action, EventRecord};
pub use snapshot::{
    aggregate_static, build_dynamic_graph, flatten_to_sequence, DynGraphSample, SnapshotGraph,
    SubforumProfile, DEFAULT_WINDOW_SECONDS,
};
pub use split::split_dataset;
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
pub use vocab::StageVocab;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphDataError {
    /// Caller violated an ordering/shape precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The data itself is inconsistent (ids out of range, empty splits...).
    #[error("data error: {0}")]
    Data(String),
    /// A configuration value is outside its documented domain.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphDataError>;
