//! Dynamic-graph-to-sequence learning on forum-activity data.
//!
//! A user's month-by-month movement between subforums is modelled as a
//! sequence of snapshot transition graphs; an encoder-decoder network with
//! two levels of attention (node-to-graph and graph-to-sequence) maps that
//! dynamic graph to a sequence of health-stage tokens. The crate ships its
//! own small f64 autodiff engine, a synthetic data generator with planted
//! stage/subforum correlations, BLEU/ROUGE evaluation, and a deterministic
//! training loop with two reduced baseline modes for ablation.

pub mod autodiff;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod graphdata;
pub mod metrics;
pub mod model;
pub mod train;
#[cfg(test)]
pub(crate) mod testutil;

pub use autodiff::{DiffError, ParamStore, Tape, Tensor};
pub use encoder::{EncoderConfig, EncoderTrace, PoolingMode};
pub use graphdata::{DynGraphSample, SnapshotGraph, StageVocab};
pub use metrics::EvalReport;
pub use model::{ModelConfig, ModelError, ModelMode};
pub use train::{RunLog, TrainConfig};
