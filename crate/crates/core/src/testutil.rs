//! Shared builders for unit tests: tiny configurations, random snapshots
//! and random samples with valid targets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderConfig, PoolingMode};
use crate::graphdata::{DynGraphSample, SnapshotGraph, StageVocab};
use crate::model::{ModelConfig, ModelMode};

pub fn tiny_config(pooling: PoolingMode, graph_attention: bool) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            hops: 2,
            hidden: 4,
            pooling,
            feature_dim: 2,
        },
        mode: ModelMode::Dynamic,
        graph_attention,
        vocab_size: StageVocab.size(),
        num_subforums: 3,
        max_len: 12,
    }
}

pub fn random_snapshot(rng: &mut ChaCha8Rng, n: usize, d: usize, edge_prob: f64) -> SnapshotGraph {
    let mut snap = SnapshotGraph::zero(n, d);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < edge_prob {
                snap.adjacency[i][j] = rng.gen_range(1..4) as f64;
            }
        }
        for v in &mut snap.features[i] {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    snap
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize, d: usize, t: usize, m: usize) -> DynGraphSample {
    let vocab = StageVocab;
    let snapshots = (0..t).map(|_| random_snapshot(rng, n, d, 0.4)).collect();
    let visits = (0..t)
        .map(|_| {
            let len = rng.gen_range(1..4);
            (0..len).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    let target = (0..m).map(|_| vocab.stage_token(rng.gen_range(0..vocab.stage_count()))).collect();
    DynGraphSample {
        user_id: "test_user".into(),
        snapshots,
        visits,
        target,
    }
}

/// Apply a node permutation jointly to adjacency rows/columns and feature
/// rows: node `v` of the input becomes node `perm[v]` of the output.
pub fn permute_snapshot(snap: &SnapshotGraph, perm: &[usize]) -> SnapshotGraph {
    let n = snap.num_nodes();
    let d = snap.feature_dim();
    let mut out = SnapshotGraph::zero(n, d);
    for i in 0..n {
        for j in 0..n {
            out.adjacency[perm[i]][perm[j]] = snap.adjacency[i][j];
        }
        out.features[perm[i]] = snap.features[i].clone();
    }
    out
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}
