//! Model configuration, parameter layout and the mode dispatch that ties
//! the encoder and decoder together.
//!
//! Three input modes share one decoder:
//! * `dynamic` — the full per-window snapshot pipeline;
//! * `static_aggregate` — the same architecture on a single summed snapshot;
//! * `sequence_only` — subforum-token embeddings fed straight to the
//!   recurrent encoder, no graph convolution and no node features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{glorot_uniform, CellParamIds, DiffError, ParamStore, Tape, ValueId};
use crate::decoder::{greedy_decode, DecodeResult};
use crate::encoder::{
    encode_sequence, encode_snapshot, pool_attention, pool_max, ConvLayerIds, EncTraceIds,
    EncoderConfig, EncoderTrace, PoolIds, PoolingMode,
};
use crate::graphdata::{aggregate_static, flatten_to_sequence, DynGraphSample, SnapshotGraph};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid token id {token} for vocabulary of size {vocab}")]
    InvalidToken { token: usize, vocab: usize },
    #[error("target length {len} exceeds max_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("model input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which reduction of the dynamic graph the encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Dynamic,
    StaticAggregate,
    SequenceOnly,
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelMode::Dynamic => "dynamic",
            ModelMode::StaticAggregate => "static_aggregate",
            ModelMode::SequenceOnly => "sequence_only",
        })
    }
}

/// Everything needed to rebuild the parameter set and run the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mode: ModelMode,
    /// Graph-to-sequence attention in the decoder; off reduces the decoder
    /// to its plain recurrent form.
    pub graph_attention: bool,
    pub vocab_size: usize,
    /// Subforum count N; sizes the token table of `sequence_only` mode.
    pub num_subforums: usize,
    /// Decode-length cap. Stage histories are short; default is twice the
    /// stage vocabulary.
    pub max_len: usize,
}

impl ModelConfig {
    /// Node embedding width after the forward/backward concat.
    pub fn node_width(&self) -> usize {
        2 * self.encoder.hidden
    }

    /// Recurrent state width. Equal to the node width so the final cell
    /// state feeds the decoder without a projection.
    pub fn d_enc(&self) -> usize {
        2 * self.encoder.hidden
    }
}

/// Tape handles of every parameter used by the configured mode.
#[derive(Debug, Clone)]
pub struct ModelParamIds {
    /// Per hop: (forward-direction, backward-direction) conv layers.
    pub conv: Vec<(ConvLayerIds, ConvLayerIds)>,
    pub pool: Option<PoolIds>,
    /// Subforum token table, `sequence_only` mode.
    pub seq_embed: Option<ValueId>,
    pub enc_cell: CellParamIds,
    pub dec_embed: ValueId,
    pub dec_cell: CellParamIds,
    pub attn_wa: Option<ValueId>,
    pub combine_w: Option<ValueId>,
    pub out_w: ValueId,
    pub out_b: ValueId,
}

fn uses_graph_encoder(mode: ModelMode) -> bool {
    mode != ModelMode::SequenceOnly
}

/// Freshly initialised parameters for a configuration, deterministic in
/// `seed`. Slot order is fixed by construction order.
pub fn build_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.encoder.hidden;
    let width = cfg.node_width();
    let d_enc = cfg.d_enc();

    let mut add = |store: &mut ParamStore, name: String, shape: Vec<usize>| -> Result<()> {
        store.add(&name, glorot_uniform(&mut rng, shape))?;
        Ok(())
    };

    if uses_graph_encoder(cfg.mode) {
        for hop in 1..=cfg.encoder.hops {
            let in_dim = if hop == 1 {
                cfg.encoder.feature_dim
            } else {
                width
            };
            for dir in ["fwd", "bwd"] {
                add(&mut store, format!("conv{hop}.{dir}.weight"), vec![d, in_dim])?;
                add(&mut store, format!("conv{hop}.{dir}.bias"), vec![d])?;
            }
        }
        match cfg.encoder.pooling {
            PoolingMode::MaxPool => {
                add(&mut store, "pool.weight".into(), vec![width, width])?;
                add(&mut store, "pool.bias".into(), vec![width])?;
            }
            PoolingMode::NodeAttention => {
                add(&mut store, "pool_attn.w1".into(), vec![d, width])?;
                add(&mut store, "pool_attn.b1".into(), vec![d])?;
                add(&mut store, "pool_attn.w2".into(), vec![1, d])?;
            }
        }
    } else {
        add(&mut store, "seq_embed.table".into(), vec![cfg.num_subforums, width])?;
    }

    add(&mut store, "enc.cell.w".into(), vec![4 * d_enc, width])?;
    add(&mut store, "enc.cell.u".into(), vec![4 * d_enc, d_enc])?;
    add(&mut store, "enc.cell.b".into(), vec![4 * d_enc])?;

    add(&mut store, "dec.embed".into(), vec![cfg.vocab_size, d_enc])?;
    add(&mut store, "dec.cell.w".into(), vec![4 * d_enc, d_enc])?;
    add(&mut store, "dec.cell.u".into(), vec![4 * d_enc, d_enc])?;
    add(&mut store, "dec.cell.b".into(), vec![4 * d_enc])?;
    if cfg.graph_attention {
        add(&mut store, "dec.attn.wa".into(), vec![d_enc, d_enc])?;
        add(&mut store, "dec.combine.w".into(), vec![d_enc, 2 * d_enc])?;
    }
    add(&mut store, "dec.out.weight".into(), vec![cfg.vocab_size, d_enc])?;
    add(&mut store, "dec.out.bias".into(), vec![cfg.vocab_size])?;
    Ok(store)
}

/// Register every parameter of the configured mode on a fresh tape.
pub fn register_params(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
) -> Result<ModelParamIds> {
    let mut conv = Vec::new();
    let mut pool = None;
    let mut seq_embed = None;
    if uses_graph_encoder(cfg.mode) {
        for hop in 1..=cfg.encoder.hops {
            let fwd = ConvLayerIds {
                weight: tape.param(store, &format!("conv{hop}.fwd.weight"))?,
                bias: tape.param(store, &format!("conv{hop}.fwd.bias"))?,
            };
            let bwd = ConvLayerIds {
                weight: tape.param(store, &format!("conv{hop}.bwd.weight"))?,
                bias: tape.param(store, &format!("conv{hop}.bwd.bias"))?,
            };
            conv.push((fwd, bwd));
        }
        pool = Some(match cfg.encoder.pooling {
            PoolingMode::MaxPool => PoolIds::Max {
                weight: tape.param(store, "pool.weight")?,
                bias: tape.param(store, "pool.bias")?,
            },
            PoolingMode::NodeAttention => PoolIds::Attention {
                w1: tape.param(store, "pool_attn.w1")?,
                b1: tape.param(store, "pool_attn.b1")?,
                w2: tape.param(store, "pool_attn.w2")?,
            },
        });
    } else {
        seq_embed = Some(tape.param(store, "seq_embed.table")?);
    }

    let enc_cell = CellParamIds {
        w: tape.param(store, "enc.cell.w")?,
        u: tape.param(store, "enc.cell.u")?,
        b: tape.param(store, "enc.cell.b")?,
    };
    let dec_embed = tape.param(store, "dec.embed")?;
    let dec_cell = CellParamIds {
        w: tape.param(store, "dec.cell.w")?,
        u: tape.param(store, "dec.cell.u")?,
        b: tape.param(store, "dec.cell.b")?,
    };
    let (attn_wa, combine_w) = if cfg.graph_attention {
        (
            Some(tape.param(store, "dec.attn.wa")?),
            Some(tape.param(store, "dec.combine.w")?),
        )
    } else {
        (None, None)
    };
    let out_w = tape.param(store, "dec.out.weight")?;
    let out_b = tape.param(store, "dec.out.bias")?;

    Ok(ModelParamIds {
        conv,
        pool,
        seq_embed,
        enc_cell,
        dec_embed,
        dec_cell,
        attn_wa,
        combine_w,
        out_w,
        out_b,
    })
}

/// A sample reduced to the form the configured mode consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedInput {
    Graphs(Vec<SnapshotGraph>),
    Tokens(Vec<usize>),
}

impl PreparedInput {
    pub fn len(&self) -> usize {
        match self {
            PreparedInput::Graphs(g) => g.len(),
            PreparedInput::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Apply the mode's input reduction to one sample.
pub fn prepare_input(sample: &DynGraphSample, mode: ModelMode) -> Result<PreparedInput> {
    match mode {
        ModelMode::Dynamic => Ok(PreparedInput::Graphs(sample.snapshots.clone())),
        ModelMode::StaticAggregate => Ok(PreparedInput::Graphs(
            aggregate_static(sample).snapshots,
        )),
        ModelMode::SequenceOnly => {
            let tokens = flatten_to_sequence(sample);
            if tokens.is_empty() {
                return Err(ModelError::Input(format!(
                    "sample {} has no visits to flatten",
                    sample.user_id
                )));
            }
            Ok(PreparedInput::Tokens(tokens))
        }
    }
}

/// Run the configured encoder over a prepared input.
pub fn encode(
    tape: &mut Tape,
    ids: &ModelParamIds,
    cfg: &ModelConfig,
    input: &PreparedInput,
) -> Result<EncTraceIds> {
    if input.is_empty() {
        return Err(ModelError::Input("encoder input has no steps".into()));
    }
    let mut node_embeddings = Vec::new();
    let mut node_attention: Option<Vec<ValueId>> = match cfg.encoder.pooling {
        PoolingMode::NodeAttention => Some(Vec::new()),
        PoolingMode::MaxPool => None,
    };
    let mut graph_embeddings = Vec::new();

    match input {
        PreparedInput::Graphs(snapshots) => {
            for snap in snapshots {
                let h = encode_snapshot(tape, snap, &ids.conv, &cfg.encoder)?;
                node_embeddings.push(h);
                match ids.pool.as_ref().expect("graph mode has pooling params") {
                    PoolIds::Max { weight, bias } => {
                        graph_embeddings.push(pool_max(tape, h, *weight, *bias)?);
                    }
                    PoolIds::Attention { w1, b1, w2 } => {
                        let (g, alpha) = pool_attention(tape, h, *w1, *b1, *w2)?;
                        graph_embeddings.push(g);
                        node_attention.as_mut().expect("attention mode").push(alpha);
                    }
                }
            }
        }
        PreparedInput::Tokens(tokens) => {
            let table = ids.seq_embed.expect("sequence mode has a token table");
            node_attention = None;
            for &tok in tokens {
                if tok >= cfg.num_subforums {
                    return Err(ModelError::InvalidToken {
                        token: tok,
                        vocab: cfg.num_subforums,
                    });
                }
                graph_embeddings.push(tape.embed_row(table, tok)?);
            }
        }
    }

    let (encoder_hiddens, final_cell) = encode_sequence(tape, &graph_embeddings, &ids.enc_cell)?;
    Ok(EncTraceIds {
        node_embeddings,
        node_attention,
        graph_embeddings,
        encoder_hiddens,
        final_cell,
    })
}

/// Encode one sample and greedy-decode it on a frozen store, returning the
/// materialised trace (for attention export) and the decode result.
pub fn run_sample(
    store: &ParamStore,
    cfg: &ModelConfig,
    sample: &DynGraphSample,
) -> Result<(EncoderTrace, DecodeResult)> {
    let input = prepare_input(sample, cfg.mode)?;
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, store, cfg)?;
    let trace = encode(&mut tape, &ids, cfg, &input)?;
    let decoded = greedy_decode(&mut tape, &trace, &ids, cfg)?;
    let materialised = EncoderTrace::from_ids(&tape, &trace);
    Ok((materialised, decoded))
}
