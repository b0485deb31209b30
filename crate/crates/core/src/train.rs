//! Mini-batch training with validation-based model selection, plus the
//! multi-run evaluation protocol used for reporting.
//!
//! Training is fully deterministic given the seed: parameter init and the
//! per-epoch shuffle derive from it, batches run single-threaded, and the
//! gradient accumulation order is fixed. Each epoch ends with a greedy
//! decode of the validation split; the checkpoint with the highest
//! validation BLEU-1 wins (earliest epoch on ties). A fixed global-norm
//! gradient clip of 5 guards against recurrent blow-up.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, clip_gradients, AdamConfig, ParamStore, Tape};
use crate::decoder::{greedy_decode, teacher_forced_accuracy, teacher_forced_loss, DecodeResult};
use crate::graphdata::{split_dataset, DynGraphSample, GraphDataError, StageVocab};
use crate::metrics::{bleu, rouge1, EvalReport, MetricError, MetricSummary};
use crate::model::{encode, prepare_input, register_params, ModelConfig, ModelError, PreparedInput};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] crate::autodiff::DiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] GraphDataError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Training hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global L2 gradient clip.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 50,
            max_epochs: 300,
            patience: 20,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

/// Per-epoch diagnostics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub train_loss: Vec<f64>,
    pub val_bleu1: Vec<f64>,
    pub train_token_acc: Vec<f64>,
    /// 0-based index of the epoch whose checkpoint was kept.
    pub best_epoch: usize,
    /// Not exported to artifact files (it would break reproducible
    /// checksums); surfaced for logging only.
    pub wall_seconds: f64,
}

/// One sample of a padded batch: inputs padded to the batch maxima with
/// explicit true lengths. Padded steps never enter the recurrent encoder
/// and padded target positions never enter the loss, so a sample's loss
/// contribution is identical in any batch.
#[derive(Debug, Clone)]
pub struct PaddedSample {
    pub input: PreparedInput,
    pub target: Vec<usize>,
    pub true_steps: usize,
    pub true_target_len: usize,
}

/// Pad `(input, target)` pairs to their batch maxima: zero snapshots (or a
/// zero token) over steps, PAD over targets.
pub fn pad_batch(items: &[(PreparedInput, Vec<usize>)]) -> Vec<PaddedSample> {
    let max_steps = items.iter().map(|(i, _)| i.len()).max().unwrap_or(0);
    let max_target = items.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    items
        .iter()
        .map(|(input, target)| {
            let true_steps = input.len();
            let true_target_len = target.len();
            let input = match input {
                PreparedInput::Graphs(graphs) => {
                    let mut padded = graphs.clone();
                    if let Some(first) = graphs.first() {
                        while padded.len() < max_steps {
                            padded.push(crate::graphdata::SnapshotGraph::zero(
                                first.num_nodes(),
                                first.feature_dim(),
                            ));
                        }
                    }
                    PreparedInput::Graphs(padded)
                }
                PreparedInput::Tokens(tokens) => {
                    let mut padded = tokens.clone();
                    padded.resize(max_steps, 0);
                    PreparedInput::Tokens(padded)
                }
            };
            let mut target = target.clone();
            target.resize(max_target, StageVocab::PAD);
            PaddedSample {
                input,
                target,
                true_steps,
                true_target_len,
            }
        })
        .collect()
}

/// The unpadded view the forward pass consumes.
fn unpadded(sample: &PaddedSample) -> (PreparedInput, &[usize]) {
    let input = match &sample.input {
        PreparedInput::Graphs(g) => PreparedInput::Graphs(g[..sample.true_steps].to_vec()),
        PreparedInput::Tokens(t) => PreparedInput::Tokens(t[..sample.true_steps].to_vec()),
    };
    (input, &sample.target[..sample.true_target_len])
}

/// Teacher-forced loss and accuracy of one padded sample on a fresh tape.
/// Gradients are accumulated into the store scaled by `grad_scale`
/// (0 skips backward).
pub fn sample_loss(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    sample: &PaddedSample,
    grad_scale: f64,
) -> Result<(f64, f64)> {
    let (input, target) = unpadded(sample);
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, store, cfg)?;
    let trace = encode(&mut tape, &ids, cfg, &input)?;
    let tf = teacher_forced_loss(&mut tape, &trace, target, &ids, cfg)?;
    let loss = tape.value(tf.loss).item();
    let acc = teacher_forced_accuracy(&tape, &tf);
    if grad_scale != 0.0 {
        tape.backward(tf.loss)?;
        tape.accumulate_param_grads(store, grad_scale);
    }
    Ok((loss, acc))
}

/// Greedy-decode one prepared input on a frozen store.
pub fn decode_prepared(
    store: &ParamStore,
    cfg: &ModelConfig,
    input: &PreparedInput,
) -> Result<DecodeResult> {
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, store, cfg)?;
    let trace = encode(&mut tape, &ids, cfg, input)?;
    Ok(greedy_decode(&mut tape, &trace, &ids, cfg)?)
}

fn decode_corpus(
    store: &ParamStore,
    cfg: &ModelConfig,
    inputs: &[PreparedInput],
) -> Result<Vec<Vec<usize>>> {
    inputs
        .iter()
        .map(|input| Ok(decode_prepared(store, cfg, input)?.tokens))
        .collect()
}

fn prepare_all(
    samples: &[DynGraphSample],
    cfg: &ModelConfig,
) -> Result<Vec<(PreparedInput, Vec<usize>)>> {
    samples
        .iter()
        .map(|s| Ok((prepare_input(s, cfg.mode)?, s.target.clone())))
        .collect()
}

const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Mini-batch Adam training with validation-BLEU-1 model selection.
///
/// Returns the best checkpoint and the per-epoch log. `initial` resumes
/// from existing parameters instead of a fresh seeded init.
pub fn train(
    train_set: &[DynGraphSample],
    val_set: &[DynGraphSample],
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    initial: Option<ParamStore>,
) -> Result<(ParamStore, RunLog)> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let start = Instant::now();

    let prepared = prepare_all(train_set, model_cfg)?;
    let val_inputs: Vec<PreparedInput> = prepare_all(val_set, model_cfg)?
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let val_refs: Vec<Vec<usize>> = val_set.iter().map(|s| s.target.clone()).collect();

    let mut store = match initial {
        Some(s) => s,
        None => crate::model::build_params(model_cfg, tc.seed)?,
    };
    let adam = AdamConfig {
        lr: tc.learning_rate,
        ..AdamConfig::default()
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ SHUFFLE_SALT);
    let mut log = RunLog {
        train_loss: Vec::new(),
        val_bleu1: Vec::new(),
        train_token_acc: Vec::new(),
        best_epoch: 0,
        wall_seconds: 0.0,
    };
    let mut best: Option<(f64, ParamStore)> = None;

    for epoch in 0..tc.max_epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let items: Vec<(PreparedInput, Vec<usize>)> =
                chunk.iter().map(|&i| prepared[i].clone()).collect();
            let batch = pad_batch(&items);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for sample in &batch {
                let (loss, acc) = sample_loss(&mut store, model_cfg, sample, scale)?;
                batch_loss += loss * scale;
                acc_sum += acc;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
            clip_gradients(&mut store, tc.clip_norm);
            adam_step(&mut store, &adam)?;
        }

        let epoch_loss = loss_sum / prepared.len() as f64;
        let epoch_acc = acc_sum / prepared.len() as f64;
        let decoded = decode_corpus(&store, model_cfg, &val_inputs)?;
        let val_score = bleu(&decoded, &val_refs, 1)?;

        log.train_loss.push(epoch_loss);
        log.train_token_acc.push(epoch_acc);
        log.val_bleu1.push(val_score);

        if best.as_ref().map_or(true, |(b, _)| val_score > *b) {
            best = Some((val_score, store.clone()));
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch > tc.patience {
            break;
        }
    }

    log.wall_seconds = start.elapsed().as_secs_f64();
    let (_, best_store) = best.expect("at least one epoch ran");
    Ok((best_store, log))
}

/// The five reported metrics of a decoded corpus, in table order.
pub fn score_corpus(
    candidates: &[Vec<usize>],
    references: &[Vec<usize>],
) -> Result<Vec<(&'static str, f64)>> {
    Ok(vec![
        ("BLEU-1", bleu(candidates, references, 1)?),
        ("BLEU-2", bleu(candidates, references, 2)?),
        ("BLEU-3", bleu(candidates, references, 3)?),
        ("BLEU-4", bleu(candidates, references, 4)?),
        ("ROUGE", rouge1(candidates, references)?),
    ])
}

fn aggregate_runs(per_run: Vec<Vec<(&'static str, f64)>>) -> EvalReport {
    let names: Vec<&str> = per_run[0].iter().map(|(n, _)| *n).collect();
    let metrics = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let scores: Vec<f64> = per_run.iter().map(|r| r[i].1).collect();
            MetricSummary::from_scores(name, scores)
        })
        .collect();
    EvalReport {
        runs: per_run.len(),
        metrics,
    }
}

/// Decode-only evaluation of a fixed checkpoint on a test split, repeated
/// `runs` times (identical scores, SD 0 — the baseline sanity mode).
pub fn evaluate_checkpoint(
    store: &ParamStore,
    cfg: &ModelConfig,
    test: &[DynGraphSample],
    runs: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    if runs == 0 {
        return Err(TrainError::Metric(MetricError::Config(
            "runs must be at least 1".into(),
        )));
    }
    let inputs: Vec<PreparedInput> = prepare_all(test, cfg)?.into_iter().map(|(i, _)| i).collect();
    let refs: Vec<Vec<usize>> = test.iter().map(|s| s.target.clone()).collect();
    let mut per_run = Vec::with_capacity(runs);
    for _ in 0..runs {
        let decoded = decode_corpus(store, cfg, &inputs)?;
        per_run.push(score_corpus(&decoded, &refs)?);
    }
    Ok(aggregate_runs(per_run))
}

/// Train-and-evaluate protocol: one full training run per seed, metrics on
/// the test split, aggregated mean and SD.
///
/// With `resample_splits` the dataset is re-split per run (split seed =
/// run seed); otherwise one fixed split (from `split_seed`) is shared and
/// runs differ only in initialisation/shuffling. Runs execute in parallel;
/// each is isolated and deterministic in its seed.
pub fn evaluate_multi_run(
    samples: &[DynGraphSample],
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    seeds: &[u64],
    resample_splits: bool,
    split_seed: u64,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(TrainError::Metric(MetricError::Config(
            "at least one seed required".into(),
        )));
    }
    let ratios = (0.70, 0.10, 0.20);
    let per_run: Result<Vec<Vec<(&'static str, f64)>>> = seeds
        .par_iter()
        .map(|&seed| {
            let split_with = if resample_splits { seed } else { split_seed };
            let (train_set, val_set, test_set) =
                split_dataset(samples.to_vec(), ratios, split_with)?;
            if test_set.is_empty() {
                return Err(TrainError::EmptySplit("test"));
            }
            let run_tc = TrainConfig { seed, ..tc.clone() };
            let (best, _) = train(&train_set, &val_set, model_cfg, &run_tc, None)?;
            let inputs: Vec<PreparedInput> = prepare_all(&test_set, model_cfg)?
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let refs: Vec<Vec<usize>> = test_set.iter().map(|s| s.target.clone()).collect();
            let decoded = decode_corpus(&best, model_cfg, &inputs)?;
            score_corpus(&decoded, &refs)
        })
        .collect();
    Ok(aggregate_runs(per_run?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, PoolingMode};
    use crate::graphdata::{generate_synthetic, SyntheticConfig};
    use crate::model::{build_params, ModelMode};

    fn small_dataset(seed: u64, users: usize) -> Vec<DynGraphSample> {
        generate_synthetic(&SyntheticConfig {
            num_users: users,
            num_subforums: 6,
            keyword_dims: 3,
            t_max: 5,
            stage_count: 4,
            emission_strength: 0.9,
            events_per_window: 4,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .samples
    }

    fn small_model(mode: ModelMode) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hops: 1,
                hidden: 4,
                pooling: PoolingMode::NodeAttention,
                feature_dim: 4,
            },
            mode,
            graph_attention: true,
            vocab_size: StageVocab.size(),
            num_subforums: 6,
            max_len: 12,
        }
    }

    fn quick_tc(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            batch_size: 4,
            seed,
            patience: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn padding_never_changes_a_samples_loss_contribution() {
        let samples = small_dataset(1, 6);
        let cfg = small_model(ModelMode::Dynamic);
        let mut store = build_params(&cfg, 5).unwrap();

        let prepared = prepare_all(&samples, &cfg).unwrap();
        // Alone: batch of one (no padding applied).
        let solo = pad_batch(&prepared[0..1]);
        let (solo_loss, _) = sample_loss(&mut store, &cfg, &solo[0], 0.0).unwrap();
        // In a batch with longer samples: padded over steps and targets.
        let batch = pad_batch(&prepared);
        assert!(batch[0].input.len() >= prepared[0].0.len());
        let (batched_loss, _) = sample_loss(&mut store, &cfg, &batch[0], 0.0).unwrap();
        assert!(
            (solo_loss - batched_loss).abs() < 1e-10,
            "{solo_loss} vs {batched_loss}"
        );
        // Bit-identical, in fact: the padded view never reaches the math.
        assert_eq!(solo_loss.to_bits(), batched_loss.to_bits());
    }

    #[test]
    fn same_seed_gives_bit_identical_run_logs() {
        let samples = small_dataset(2, 8);
        let cfg = small_model(ModelMode::Dynamic);
        let tc = quick_tc(7, 3);
        let (_, log_a) = train(&samples, &samples, &cfg, &tc, None).unwrap();
        let (_, log_b) = train(&samples, &samples, &cfg, &tc, None).unwrap();
        assert_eq!(log_a.train_loss, log_b.train_loss);
        assert_eq!(log_a.val_bleu1, log_b.val_bleu1);
    }

    #[test]
    fn patience_zero_single_epoch_returns_first_checkpoint() {
        let samples = small_dataset(3, 6);
        let cfg = small_model(ModelMode::Dynamic);
        let tc = TrainConfig {
            max_epochs: 1,
            patience: 0,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, log) = train(&samples, &samples, &cfg, &tc, None).unwrap();
        assert_eq!(log.train_loss.len(), 1);
        assert_eq!(log.best_epoch, 0);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let samples = small_dataset(4, 4);
        let cfg = small_model(ModelMode::Dynamic);
        let tc = quick_tc(0, 1);
        assert!(matches!(
            train(&[], &samples, &cfg, &tc, None),
            Err(TrainError::EmptySplit("train"))
        ));
        assert!(matches!(
            train(&samples, &[], &cfg, &tc, None),
            Err(TrainError::EmptySplit("validation"))
        ));
    }

    #[test]
    fn checkpoint_round_trip_reproduces_validation_bleu() {
        let samples = small_dataset(5, 8);
        let cfg = small_model(ModelMode::Dynamic);
        let tc = quick_tc(11, 3);
        let (best, log) = train(&samples, &samples, &cfg, &tc, None).unwrap();
        let report = evaluate_checkpoint(&best, &cfg, &samples, 1).unwrap();
        let direct = report.metric("BLEU-1").unwrap().mean;
        assert_eq!(direct, log.val_bleu1[log.best_epoch]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        crate::checkpoint::save(&path, &best, &cfg).unwrap();
        let (loaded, loaded_cfg) = crate::checkpoint::load(&path).unwrap();
        let report2 = evaluate_checkpoint(&loaded, &loaded_cfg, &samples, 1).unwrap();
        assert_eq!(report2.metric("BLEU-1").unwrap().mean, direct);
    }

    #[test]
    fn evaluate_only_has_zero_sd_across_runs() {
        let samples = small_dataset(6, 6);
        let cfg = small_model(ModelMode::Dynamic);
        let store = build_params(&cfg, 2).unwrap();
        let report = evaluate_checkpoint(&store, &cfg, &samples, 3).unwrap();
        for m in &report.metrics {
            assert_eq!(m.sd, 0.0, "{}", m.name);
            assert_eq!(m.scores.len(), 3);
        }
        let single = evaluate_checkpoint(&store, &cfg, &samples, 1).unwrap();
        assert_eq!(single.metrics[0].sd, 0.0);
    }

    #[test]
    fn reduced_modes_train_end_to_end() {
        let samples = small_dataset(7, 8);
        for mode in [ModelMode::StaticAggregate, ModelMode::SequenceOnly] {
            let cfg = small_model(mode);
            let tc = quick_tc(3, 2);
            let (store, log) = train(&samples, &samples, &cfg, &tc, None).unwrap();
            assert_eq!(log.train_loss.len(), 2);
            // Decodes cleanly on the frozen checkpoint.
            let input = prepare_input(&samples[0], mode).unwrap();
            if mode == ModelMode::StaticAggregate {
                assert_eq!(input.len(), 1);
            }
            decode_prepared(&store, &cfg, &input).unwrap();
        }
    }

    #[test]
    fn resume_continues_from_given_parameters() {
        let samples = small_dataset(8, 8);
        let cfg = small_model(ModelMode::Dynamic);
        let (first, log_first) = train(&samples, &samples, &cfg, &quick_tc(5, 4), None).unwrap();
        let (_, log_resumed) =
            train(&samples, &samples, &cfg, &quick_tc(5, 2), Some(first)).unwrap();
        // Resumed training starts near the converged loss, not the fresh one.
        assert!(
            log_resumed.train_loss[0] < log_first.train_loss[0],
            "{} vs {}",
            log_resumed.train_loss[0],
            log_first.train_loss[0]
        );
    }

    #[test]
    fn multi_run_report_aggregates_each_seed() {
        let samples = small_dataset(9, 12);
        let cfg = small_model(ModelMode::Dynamic);
        let tc = quick_tc(0, 2);
        let report =
            evaluate_multi_run(&samples, &cfg, &tc, &[0, 1], false, 99).unwrap();
        assert_eq!(report.runs, 2);
        for m in &report.metrics {
            assert_eq!(m.scores.len(), 2);
        }
        // Deterministic: same call yields the same report.
        let again = evaluate_multi_run(&samples, &cfg, &tc, &[0, 1], false, 99).unwrap();
        assert_eq!(report, again);
    }
}
