use serde::{Deserialize, Serialize};

use super::event::EventRecord;
use super::{GraphDataError, Result};

/// 30-day window, the fixed approximation of one calendar month.
pub const DEFAULT_WINDOW_SECONDS: i64 = 2_592_000;

/// One time window's transition graph: a weighted directed adjacency over
/// the N subforum nodes plus an N x D node-feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    /// `adjacency[i][j]` counts within-window moves from subforum i to j.
    pub adjacency: Vec<Vec<f64>>,
    /// Row i is the subforum's keyword profile scaled by the user's activity
    /// count there, with the raw count appended as the last dimension, so a
    /// row is zero exactly when the user had no activity in that subforum.
    pub features: Vec<Vec<f64>>,
}

impl SnapshotGraph {
    pub fn zero(n: usize, d: usize) -> Self {
        SnapshotGraph {
            adjacency: vec![vec![0.0; n]; n],
            features: vec![vec![0.0; d]; n],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |r| r.len())
    }

    /// Forward neighbors of `n`: nodes reachable by an out-edge.
    pub fn forward_neighbors(&self, n: usize) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&u| self.adjacency[n][u] > 0.0)
            .collect()
    }

    /// Backward neighbors of `n`: nodes with an edge into `n`.
    pub fn backward_neighbors(&self, n: usize) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&u| self.adjacency[u][n] > 0.0)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.adjacency.iter().flatten().all(|v| *v == 0.0)
            && self.features.iter().flatten().all(|v| *v == 0.0)
    }
}

/// A subforum's keyword-frequency profile, L1-normalised when nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubforumProfile {
    pub subforum_id: usize,
    pub topic_vector: Vec<f64>,
}

/// One user's ordered snapshot sequence, the per-window visit sequences the
/// snapshots were built from, and the target stage-token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynGraphSample {
    pub user_id: String,
    pub snapshots: Vec<SnapshotGraph>,
    /// Per-window subforum visit order with consecutive duplicates collapsed.
    /// Snapshot adjacencies are transition *counts* and cannot be unfolded
    /// back into an order, so the sequence-input reduction keeps it here.
    pub visits: Vec<Vec<usize>>,
    /// Stage token ids, BOS/EOS excluded.
    pub target: Vec<usize>,
}

impl DynGraphSample {
    pub fn num_windows(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.num_nodes())
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.feature_dim())
    }
}

/// Build the per-window transition graphs for one user's sorted event log.
///
/// Windows are aligned to the epoch (`window = timestamp / window_seconds`)
/// and run consecutively from the first event's window to the last; windows
/// without events yield all-zero snapshots. Within a window, each move
/// between two *distinct* consecutive subforums adds 1 to that directed
/// edge. Feature dimension is `profile_len + 1` (appended activity count).
pub fn build_dynamic_graph(
    events: &[EventRecord],
    window_seconds: i64,
    profiles: &[SubforumProfile],
) -> Result<(Vec<SnapshotGraph>, Vec<Vec<usize>>)> {
    if events.is_empty() {
        return Err(GraphDataError::Contract(
            "build_dynamic_graph requires at least one event".into(),
        ));
    }
    if window_seconds <= 0 {
        return Err(GraphDataError::Config(
            "window_seconds must be positive".into(),
        ));
    }
    let n = profiles.len();
    for w in events.windows(2) {
        if w[1].timestamp < w[0].timestamp {
            return Err(GraphDataError::Contract(format!(
                "events not sorted by timestamp: {} after {}",
                w[1].timestamp, w[0].timestamp
            )));
        }
    }
    for e in events {
        if e.timestamp < 0 {
            return Err(GraphDataError::Data(format!(
                "negative timestamp {}",
                e.timestamp
            )));
        }
        if e.subforum_id >= n {
            return Err(GraphDataError::Data(format!(
                "subforum_id {} out of range (N = {n})",
                e.subforum_id
            )));
        }
    }

    let keyword_dims = profiles.first().map_or(0, |p| p.topic_vector.len());
    let d = keyword_dims + 1;
    let first_window = events[0].timestamp / window_seconds;
    let last_window = events[events.len() - 1].timestamp / window_seconds;
    let num_windows = (last_window - first_window + 1) as usize;

    let mut snapshots = vec![SnapshotGraph::zero(n, d); num_windows];
    let mut visits: Vec<Vec<usize>> = vec![Vec::new(); num_windows];
    let mut counts = vec![vec![0usize; n]; num_windows];

    for e in events {
        let w = (e.timestamp / window_seconds - first_window) as usize;
        counts[w][e.subforum_id] += 1;
        if visits[w].last() != Some(&e.subforum_id) {
            if let Some(&prev) = visits[w].last() {
                snapshots[w].adjacency[prev][e.subforum_id] += 1.0;
            }
            visits[w].push(e.subforum_id);
        }
    }

    for (w, snap) in snapshots.iter_mut().enumerate() {
        for i in 0..n {
            let c = counts[w][i];
            if c > 0 {
                let row = &mut snap.features[i];
                for (j, p) in profiles[i].topic_vector.iter().enumerate() {
                    row[j] = p * c as f64;
                }
                row[keyword_dims] = c as f64;
            }
        }
    }

    Ok((snapshots, visits))
}

/// Collapse a dynamic sample into a single static snapshot by summing all
/// adjacencies and feature matrices element-wise. Order information is
/// deliberately lost; this is the static-graph baseline's input.
pub fn aggregate_static(sample: &DynGraphSample) -> DynGraphSample {
    let n = sample.num_nodes();
    let d = sample.feature_dim();
    let mut agg = SnapshotGraph::zero(n, d);
    for snap in &sample.snapshots {
        for i in 0..n {
            for j in 0..n {
                agg.adjacency[i][j] += snap.adjacency[i][j];
            }
            for j in 0..d {
                agg.features[i][j] += snap.features[i][j];
            }
        }
    }
    // The aggregate acts as one big window: join the visit sequences and
    // collapse duplicates across the joins too.
    let mut visits = Vec::new();
    for w in &sample.visits {
        for &v in w {
            if visits.last() != Some(&v) {
                visits.push(v);
            }
        }
    }
    DynGraphSample {
        user_id: sample.user_id.clone(),
        snapshots: vec![agg],
        visits: vec![visits],
        target: sample.target.clone(),
    }
}

/// Concatenate the per-window visit sequences in time order. Subforum
/// features are dropped; this is the sequence-input baseline's view.
pub fn flatten_to_sequence(sample: &DynGraphSample) -> Vec<usize> {
    sample.visits.iter().flatten().copied().collect()
}
