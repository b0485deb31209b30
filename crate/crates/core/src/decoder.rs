//! Recurrent sequence decoder with graph-to-sequence attention.
//!
//! The decoder starts from a zero hidden state with its cell set to the
//! encoder's final cell state, embeds the previous token, and per step
//! attends over the encoder outputs with a bilinear score
//! `score(s, o_t) = s . (Wa o_t)`. Hidden state and context combine through
//! `tanh(Wc [hidden; context])` before the linear vocabulary projection.
//! With graph attention disabled the projection reads the hidden state
//! directly. Greedy decoding emits argmax tokens (ties break to the lowest
//! id) until EOS or the configured length cap.

use serde::{Deserialize, Serialize};

use crate::autodiff::{recurrent_cell, Tape, ValueId};
use crate::encoder::EncTraceIds;
use crate::graphdata::StageVocab;
use crate::model::{ModelConfig, ModelError, ModelParamIds, Result};

/// Recurrent decoder state between steps.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: ValueId,
    pub cell: ValueId,
    pub prev_token: usize,
}

/// One decode step's outputs.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Unnormalised vocabulary scores.
    pub logits: ValueId,
    pub state: DecoderState,
    /// Attention over encoder steps; `None` when graph attention is off.
    pub beta: Option<ValueId>,
}

/// Greedy decode output: emitted tokens (EOS excluded) and one attention
/// row per emitted token. With graph attention disabled the rows are
/// uniform `1/T`, recording that no step was preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub beta: Vec<Vec<f64>>,
}

/// Bilinear attention over the encoder outputs: weights `beta = softmax_t
/// (s . Wa o_t)` and context `sum_t beta_t o_t`.
pub fn graph_to_seq_attend(
    tape: &mut Tape,
    hidden: ValueId,
    encoder_hiddens: &[ValueId],
    wa: ValueId,
) -> Result<(ValueId, ValueId)> {
    if encoder_hiddens.is_empty() {
        return Err(ModelError::Input("attention over zero encoder steps".into()));
    }
    let mut scores = Vec::with_capacity(encoder_hiddens.len());
    for &o in encoder_hiddens {
        let proj = tape.matvec(wa, o)?;
        scores.push(tape.dot(hidden, proj)?);
    }
    let stacked = tape.stack(&scores)?; // [T, 1]
    let flat = tape.reshape(stacked, vec![scores.len()])?;
    let beta = tape.softmax_vec(flat)?;
    let outputs = tape.stack(encoder_hiddens)?; // [T, d_enc]
    let context = tape.weighted_sum_rows(beta, outputs)?;
    Ok((context, beta))
}

/// One decoder step: embed the previous token, advance the recurrent cell,
/// attend (if enabled), combine and project to vocabulary logits.
pub fn decode_step(
    tape: &mut Tape,
    state: &DecoderState,
    encoder_hiddens: &[ValueId],
    ids: &ModelParamIds,
    cfg: &ModelConfig,
) -> Result<StepOutput> {
    if state.prev_token >= cfg.vocab_size {
        return Err(ModelError::InvalidToken {
            token: state.prev_token,
            vocab: cfg.vocab_size,
        });
    }
    let x = tape.embed_row(ids.dec_embed, state.prev_token)?;
    let (h, c) = recurrent_cell(tape, x, state.hidden, state.cell, &ids.dec_cell)?;

    let (features, beta) = if cfg.graph_attention {
        let wa = ids.attn_wa.expect("graph attention params");
        let wc = ids.combine_w.expect("graph attention params");
        let (context, beta) = graph_to_seq_attend(tape, h, encoder_hiddens, wa)?;
        let joined = tape.concat2(h, context)?;
        let combined = tape.matvec(wc, joined)?;
        (tape.tanh(combined), Some(beta))
    } else {
        (h, None)
    };

    let projected = tape.matvec(ids.out_w, features)?;
    let logits = tape.add(projected, ids.out_b)?;
    Ok(StepOutput {
        logits,
        state: DecoderState {
            hidden: h,
            cell: c,
            prev_token: state.prev_token,
        },
        beta,
    })
}

fn argmax_lowest(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from BOS with hidden = 0 and cell = C_T.
pub fn greedy_decode(
    tape: &mut Tape,
    trace: &EncTraceIds,
    ids: &ModelParamIds,
    cfg: &ModelConfig,
) -> Result<DecodeResult> {
    let steps = trace.encoder_hiddens.len();
    let d_enc = cfg.d_enc();
    let hidden = tape.zeros(vec![d_enc]);
    let mut state = DecoderState {
        hidden,
        cell: trace.final_cell,
        prev_token: StageVocab::BOS,
    };

    let mut tokens = Vec::new();
    let mut beta = Vec::new();
    for _ in 0..cfg.max_len {
        let out = decode_step(tape, &state, &trace.encoder_hiddens, ids, cfg)?;
        let token = argmax_lowest(tape.value(out.logits).data());
        if token == StageVocab::EOS {
            break;
        }
        tokens.push(token);
        beta.push(match out.beta {
            Some(b) => tape.value(b).data().to_vec(),
            None => vec![1.0 / steps as f64; steps],
        });
        state = DecoderState {
            prev_token: token,
            ..out.state
        };
    }
    Ok(DecodeResult { tokens, beta })
}

/// Teacher forcing over one encoded sample.
pub struct TeacherForcing {
    /// Mean token-level cross entropy over the M+1 positions (EOS included).
    pub loss: ValueId,
    /// Per-position logits, for accuracy diagnostics.
    pub step_logits: Vec<ValueId>,
    /// Per-position target tokens (`target` shifted, EOS appended).
    pub step_targets: Vec<usize>,
}

/// Decode with ground-truth previous tokens and return the mean
/// cross-entropy loss over the BOS-prefixed, EOS-suffixed sequence.
pub fn teacher_forced_loss(
    tape: &mut Tape,
    trace: &EncTraceIds,
    target: &[usize],
    ids: &ModelParamIds,
    cfg: &ModelConfig,
) -> Result<TeacherForcing> {
    if target.len() > cfg.max_len {
        return Err(ModelError::TargetTooLong {
            len: target.len(),
            max: cfg.max_len,
        });
    }
    for &t in target {
        if t >= cfg.vocab_size {
            return Err(ModelError::InvalidToken {
                token: t,
                vocab: cfg.vocab_size,
            });
        }
    }
    let d_enc = cfg.d_enc();
    let hidden = tape.zeros(vec![d_enc]);
    let mut state = DecoderState {
        hidden,
        cell: trace.final_cell,
        prev_token: StageVocab::BOS,
    };

    let mut inputs = Vec::with_capacity(target.len() + 1);
    inputs.push(StageVocab::BOS);
    inputs.extend_from_slice(target);
    let mut step_targets = target.to_vec();
    step_targets.push(StageVocab::EOS);

    let mut losses = Vec::with_capacity(step_targets.len());
    let mut step_logits = Vec::with_capacity(step_targets.len());
    for (prev, &tgt) in inputs.iter().zip(&step_targets) {
        state.prev_token = *prev;
        let out = decode_step(tape, &state, &trace.encoder_hiddens, ids, cfg)?;
        losses.push(tape.cross_entropy_logits(out.logits, tgt)?);
        step_logits.push(out.logits);
        state = DecoderState {
            prev_token: *prev,
            ..out.state
        };
    }
    let total = tape.add_n(&losses)?;
    let loss = tape.scale_const(total, 1.0 / losses.len() as f64);
    Ok(TeacherForcing {
        loss,
        step_logits,
        step_targets,
    })
}

/// Fraction of teacher-forced positions whose argmax matches the target.
pub fn teacher_forced_accuracy(tape: &Tape, tf: &TeacherForcing) -> f64 {
    let hits = tf
        .step_logits
        .iter()
        .zip(&tf.step_targets)
        .filter(|(&logits, &tgt)| argmax_lowest(tape.value(logits).data()) == tgt)
        .count();
    hits as f64 / tf.step_targets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamStore, Tensor};
    use crate::encoder::PoolingMode;
    use crate::model::{build_params, encode, prepare_input, register_params};
    use crate::testutil::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encoded(
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &crate::model::ModelConfig,
        seed: u64,
    ) -> (crate::model::ModelParamIds, EncTraceIds) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = random_sample(&mut rng, cfg.num_subforums, cfg.encoder.feature_dim, 3, 2);
        let input = prepare_input(&sample, cfg.mode).unwrap();
        let ids = register_params(tape, store, cfg).unwrap();
        let trace = encode(tape, &ids, cfg, &input).unwrap();
        (ids, trace)
    }

    #[test]
    fn attend_single_step_is_identity() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &store, &cfg).unwrap();
        let o = tape.input(Tensor::vector(vec![0.3; 8]));
        let s = tape.input(Tensor::vector(vec![0.1; 8]));
        let (ctx, beta) = graph_to_seq_attend(&mut tape, s, &[o], ids.attn_wa.unwrap()).unwrap();
        assert_eq!(tape.value(beta).data(), &[1.0]);
        assert_eq!(tape.value(ctx).data(), tape.value(o).data());
    }

    #[test]
    fn attend_uniform_over_identical_outputs() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &store, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let os: Vec<ValueId> = (0..4).map(|_| tape.input(Tensor::vector(row.clone()))).collect();
        let s = tape.input(Tensor::vector((0..8).map(|_| rng.gen_range(-1.0..=1.0)).collect()));
        let (_, beta) = graph_to_seq_attend(&mut tape, s, &os, ids.attn_wa.unwrap()).unwrap();
        for b in tape.value(beta).data() {
            assert!((b - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_crafted_scores_dominate_step() {
        // Wa scaled so the hidden state aligns with o_3 overwhelmingly.
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut store = build_params(&cfg, 3).unwrap();
        let mut wa = vec![0.0; 64];
        for i in 0..8 {
            wa[i * 8 + i] = 100.0;
        }
        store.set("dec.attn.wa", Tensor::matrix(8, 8, wa).unwrap()).unwrap();
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &store, &cfg).unwrap();
        let mut os = Vec::new();
        for t in 0..5 {
            let mut v = vec![0.0; 8];
            if t == 3 {
                v[0] = 1.0;
            } else {
                v[0] = -1.0;
            }
            os.push(tape.input(Tensor::vector(v)));
        }
        let mut s = vec![0.0; 8];
        s[0] = 1.0;
        let s = tape.input(Tensor::vector(s));
        let (_, beta) = graph_to_seq_attend(&mut tape, s, &os, ids.attn_wa.unwrap()).unwrap();
        let b = tape.value(beta).data();
        let argmax = b.iter().enumerate().max_by(|a, c| a.1.partial_cmp(c.1).unwrap()).unwrap().0;
        assert_eq!(argmax, 3);
        assert!(b[3] > 0.99, "beta = {b:?}");
    }

    #[test]
    fn zero_weights_give_flat_logits_and_uniform_beta() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut store = build_params(&cfg, 4).unwrap();
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store.set(&name, Tensor::zeros(shape)).unwrap();
        }
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 5);
        let hidden = tape.zeros(vec![8]);
        let state = DecoderState {
            hidden,
            cell: trace.final_cell,
            prev_token: StageVocab::BOS,
        };
        let out = decode_step(&mut tape, &state, &trace.encoder_hiddens, &ids, &cfg).unwrap();
        assert!(tape.value(out.logits).data().iter().all(|v| *v == 0.0));
        let beta = tape.value(out.beta.unwrap()).data();
        for b in beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_step_is_pure() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 6).unwrap();
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 7);
        let hidden = tape.zeros(vec![8]);
        let state = DecoderState {
            hidden,
            cell: trace.final_cell,
            prev_token: StageVocab::BOS,
        };
        let a = decode_step(&mut tape, &state, &trace.encoder_hiddens, &ids, &cfg).unwrap();
        let b = decode_step(&mut tape, &state, &trace.encoder_hiddens, &ids, &cfg).unwrap();
        assert_eq!(tape.value(a.logits).data(), tape.value(b.logits).data());
        assert_eq!(
            tape.value(a.beta.unwrap()).data(),
            tape.value(b.beta.unwrap()).data()
        );
    }

    #[test]
    fn invalid_previous_token_rejected() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 8).unwrap();
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 9);
        let hidden = tape.zeros(vec![8]);
        let state = DecoderState {
            hidden,
            cell: trace.final_cell,
            prev_token: cfg.vocab_size,
        };
        assert!(matches!(
            decode_step(&mut tape, &state, &trace.encoder_hiddens, &ids, &cfg),
            Err(ModelError::InvalidToken { .. })
        ));
    }

    fn rig_output_bias(store: &mut ParamStore, vocab: usize, winner: usize) {
        let mut bias = vec![0.0; vocab];
        bias[winner] = 50.0;
        store.set("dec.out.bias", Tensor::vector(bias)).unwrap();
        store
            .set("dec.out.weight", Tensor::zeros(vec![vocab, 8]))
            .unwrap();
    }

    #[test]
    fn rigged_eos_halts_immediately_with_no_beta_rows() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut store = build_params(&cfg, 10).unwrap();
        rig_output_bias(&mut store, cfg.vocab_size, StageVocab::EOS);
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 11);
        let out = greedy_decode(&mut tape, &trace, &ids, &cfg).unwrap();
        assert!(out.tokens.is_empty());
        assert!(out.beta.is_empty());
    }

    #[test]
    fn rigged_repeater_hits_length_cap() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut store = build_params(&cfg, 12).unwrap();
        rig_output_bias(&mut store, cfg.vocab_size, 4);
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 13);
        let out = greedy_decode(&mut tape, &trace, &ids, &cfg).unwrap();
        assert_eq!(out.tokens, vec![4; cfg.max_len]);
        assert_eq!(out.beta.len(), cfg.max_len);
    }

    #[test]
    fn greedy_decode_is_deterministic_and_reads_only_o_and_cell() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 14).unwrap();
        let run = |node_noise: bool| {
            let mut tape = Tape::new();
            let (ids, mut trace) = encoded(&mut tape, &store, &cfg, 15);
            if node_noise {
                // Perturbing node-level fields must not affect decoding.
                trace.node_embeddings.clear();
                trace.node_attention = None;
                trace.graph_embeddings.clear();
            }
            let out = greedy_decode(&mut tape, &trace, &ids, &cfg).unwrap();
            (out.tokens, out.beta)
        };
        let (t1, b1) = run(false);
        let (t2, b2) = run(false);
        assert_eq!(t1, t2);
        assert_eq!(b1, b2);
        let (t3, b3) = run(true);
        assert_eq!(t1, t3);
        assert_eq!(b1, b3);
    }

    #[test]
    fn beta_rows_stay_on_simplex() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..20 {
            let store = build_params(&cfg, 1000 + i).unwrap();
            let mut tape = Tape::new();
            let (ids, trace) = encoded(&mut tape, &store, &cfg, rng.gen());
            let out = greedy_decode(&mut tape, &trace, &ids, &cfg).unwrap();
            for row in &out.beta {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        // All-zero parameters produce all-zero logits at every position, so
        // every token's cross entropy is ln(9).
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let mut store = build_params(&cfg, 20).unwrap();
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store.set(&name, Tensor::zeros(shape)).unwrap();
        }
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 21);
        let tf = teacher_forced_loss(&mut tape, &trace, &[3, 4], &ids, &cfg).unwrap();
        assert!((tape.value(tf.loss).item() - (9.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn peaked_correct_logits_drive_loss_to_zero() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::vector(vec![200.0, 0.0, 0.0]));
        let ce = tape.cross_entropy_logits(logits, 0).unwrap();
        assert!(tape.value(ce).item() < 1e-12);
    }

    #[test]
    fn overlong_target_is_data_error() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 23).unwrap();
        let mut tape = Tape::new();
        let (ids, trace) = encoded(&mut tape, &store, &cfg, 24);
        let target = vec![3; cfg.max_len + 1];
        assert!(matches!(
            teacher_forced_loss(&mut tape, &trace, &target, &ids, &cfg),
            Err(ModelError::TargetTooLong { .. })
        ));
    }

    #[test]
    fn teacher_forced_loss_gradients_pass_finite_differences() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let sample = random_sample(&mut rng, cfg.num_subforums, cfg.encoder.feature_dim, 2, 2);
        let input = prepare_input(&sample, cfg.mode).unwrap();
        let report = grad_check(
            &store,
            |s, tape| {
                let ids = register_params(tape, s, &cfg).map_err(flatten_model_err)?;
                let trace = encode(tape, &ids, &cfg, &input).map_err(flatten_model_err)?;
                let tf = teacher_forced_loss(tape, &trace, &sample.target, &ids, &cfg)
                    .map_err(flatten_model_err)?;
                Ok(tf.loss)
            },
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(
            report.passed(),
            "worst {} in {:?}",
            report.max_rel_err,
            report.failed
        );
    }

    fn flatten_model_err(e: ModelError) -> crate::autodiff::DiffError {
        match e {
            ModelError::Diff(d) => d,
            other => panic!("unexpected model error in grad check: {other}"),
        }
    }
}
