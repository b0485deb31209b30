//! Per-snapshot bidirectional k-hop graph convolution, node-to-graph
//! pooling, and the recurrent graph-embedding sequence encoder.
//!
//! Hop 1 consumes the node features: for node n the forward part is the
//! element-wise mean of `relu(W.F_u + b)` over forward neighbors u (an
//! out-edge n->u), the backward part the same over in-edges, and the two
//! halves are concatenated. Later hops repeat the scheme, with their own
//! weights, over the previous hop's concatenated embeddings. One weight
//! set per (hop, direction) is shared across all time steps. Neighbor
//! membership comes from nonzero adjacency entries; edge weights do not
//! enter the mean. An empty neighborhood contributes a zero vector.

use serde::{Deserialize, Serialize};

use crate::autodiff::{recurrent_cell, CellParamIds, Tape, Tensor, ValueId};
use crate::graphdata::SnapshotGraph;
use crate::model::{ModelError, Result};

/// How node embeddings are aggregated into a snapshot-level embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Fully-connected layer followed by element-wise max over nodes.
    MaxPool,
    /// Learned per-node scores, softmax weights, weighted sum.
    NodeAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Neighborhood depth k.
    pub hops: usize,
    /// Hidden size per direction; node embeddings are twice this wide.
    pub hidden: usize,
    pub pooling: PoolingMode,
    /// Input feature size D.
    pub feature_dim: usize,
}

/// One conv layer's parameters on the tape: `weight: [d, in]`, `bias: [d]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayerIds {
    pub weight: ValueId,
    pub bias: ValueId,
}

/// Pooling parameters on the tape.
#[derive(Debug, Clone, Copy)]
pub enum PoolIds {
    Max {
        weight: ValueId,
        bias: ValueId,
    },
    /// Scorer `a(h) = w2 . tanh(w1.h + b1)`, one hidden layer.
    Attention {
        w1: ValueId,
        b1: ValueId,
        w2: ValueId,
    },
}

/// Tape handles of everything the encoder produced for one sample.
#[derive(Debug, Clone)]
pub struct EncTraceIds {
    /// Per step: `[N, 2d]` node embeddings (graph modes only).
    pub node_embeddings: Vec<ValueId>,
    /// Per step: `[N]` attention weights; `None` outside node-attention mode.
    pub node_attention: Option<Vec<ValueId>>,
    /// Per step: `[2d]` snapshot embedding g_t.
    pub graph_embeddings: Vec<ValueId>,
    /// Per step: `[d_enc]` recurrent output o_t.
    pub encoder_hiddens: Vec<ValueId>,
    /// `[d_enc]` final cell state C_T.
    pub final_cell: ValueId,
}

/// Materialised encoder outputs for inspection and export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrace {
    pub node_embeddings: Vec<Tensor>,
    pub node_attention: Option<Vec<Tensor>>,
    pub graph_embeddings: Vec<Tensor>,
    pub encoder_hiddens: Vec<Tensor>,
    pub final_cell: Tensor,
}

impl EncoderTrace {
    pub fn from_ids(tape: &Tape, ids: &EncTraceIds) -> Self {
        let grab = |v: &[ValueId]| v.iter().map(|&id| tape.value(id).clone()).collect();
        EncoderTrace {
            node_embeddings: grab(&ids.node_embeddings),
            node_attention: ids.node_attention.as_ref().map(|a| grab(a)),
            graph_embeddings: grab(&ids.graph_embeddings),
            encoder_hiddens: grab(&ids.encoder_hiddens),
            final_cell: tape.value(ids.final_cell).clone(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.encoder_hiddens.len()
    }
}

/// k-hop bidirectional convolution over one snapshot: `[N, 2d]` embeddings.
pub fn encode_snapshot(
    tape: &mut Tape,
    snapshot: &SnapshotGraph,
    conv: &[(ConvLayerIds, ConvLayerIds)],
    cfg: &EncoderConfig,
) -> Result<ValueId> {
    let n = snapshot.num_nodes();
    if snapshot.feature_dim() != cfg.feature_dim {
        return Err(ModelError::Input(format!(
            "snapshot feature dim {} does not match configured {}",
            snapshot.feature_dim(),
            cfg.feature_dim
        )));
    }
    if conv.len() != cfg.hops {
        return Err(ModelError::Input(format!(
            "{} conv layers for {} hops",
            conv.len(),
            cfg.hops
        )));
    }

    let features: Vec<f64> = snapshot.features.iter().flatten().copied().collect();
    let mut x = tape.input(Tensor::new(vec![n, cfg.feature_dim], features)?);

    let fwd_neighbors: Vec<Vec<usize>> = (0..n).map(|v| snapshot.forward_neighbors(v)).collect();
    let bwd_neighbors: Vec<Vec<usize>> = (0..n).map(|v| snapshot.backward_neighbors(v)).collect();

    for (fwd, bwd) in conv {
        // Activations are shared across nodes: compute relu(X.W^T + b) once
        // per direction, then mean the relevant rows per node.
        let mut halves = Vec::with_capacity(2);
        for (layer, neighbors) in [(fwd, &fwd_neighbors), (bwd, &bwd_neighbors)] {
            let z = tape.matmul_bt(x, layer.weight)?;
            let z = tape.add_row_broadcast(z, layer.bias)?;
            let act = tape.relu(z);
            let parts: Result<Vec<ValueId>> = (0..n)
                .map(|v| Ok(tape.mean_selected_rows(act, neighbors[v].clone())?))
                .collect();
            halves.push(parts?);
        }
        let rows: Result<Vec<ValueId>> = (0..n)
            .map(|v| Ok(tape.concat2(halves[0][v], halves[1][v])?))
            .collect();
        x = tape.stack(&rows?)?;
    }
    Ok(x)
}

/// Projected element-wise max over nodes: `g = max_n (W.h_n + b)`.
pub fn pool_max(tape: &mut Tape, h: ValueId, weight: ValueId, bias: ValueId) -> Result<ValueId> {
    if tape.value(h).shape()[0] == 0 {
        return Err(ModelError::Input("pool_max over zero nodes".into()));
    }
    let projected = tape.matmul_bt(h, weight)?;
    let projected = tape.add_row_broadcast(projected, bias)?;
    Ok(tape.max_rows(projected)?)
}

/// Node-to-graph attention: scores `e_n = w2 . tanh(w1.h_n + b1)`, weights
/// `alpha = softmax(e)`, embedding `g = sum_n alpha_n h_n`.
pub fn pool_attention(
    tape: &mut Tape,
    h: ValueId,
    w1: ValueId,
    b1: ValueId,
    w2: ValueId,
) -> Result<(ValueId, ValueId)> {
    let n = tape.value(h).shape()[0];
    if n == 0 {
        return Err(ModelError::Input("pool_attention over zero nodes".into()));
    }
    let hidden = tape.matmul_bt(h, w1)?;
    let hidden = tape.add_row_broadcast(hidden, b1)?;
    let hidden = tape.tanh(hidden);
    let scores = tape.matmul_bt(hidden, w2)?; // [N, 1]
    let scores = tape.reshape(scores, vec![n])?;
    let alpha = tape.softmax_vec(scores)?;
    let g = tape.weighted_sum_rows(alpha, h)?;
    Ok((g, alpha))
}

/// Recurrent pass over the snapshot embeddings from a zero initial state:
/// returns every step's hidden output and the final cell state.
pub fn encode_sequence(
    tape: &mut Tape,
    graph_embeddings: &[ValueId],
    cell: &CellParamIds,
) -> Result<(Vec<ValueId>, ValueId)> {
    if graph_embeddings.is_empty() {
        return Err(ModelError::Input("encode_sequence over zero steps".into()));
    }
    let d_enc = tape.value(cell.b).shape()[0] / 4;
    let mut h = tape.zeros(vec![d_enc]);
    let mut c = tape.zeros(vec![d_enc]);
    let mut outputs = Vec::with_capacity(graph_embeddings.len());
    for &g in graph_embeddings {
        let (nh, nc) = recurrent_cell(tape, g, h, c, cell)?;
        h = nh;
        c = nc;
        outputs.push(h);
    }
    Ok((outputs, c))
}
