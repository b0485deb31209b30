//! Scratch experiment runner (not part of the deliverable).

use dynseq::encoder::{EncoderConfig, PoolingMode};
use dynseq::graphdata::{generate_synthetic, SyntheticConfig, StageVocab};
use dynseq::model::{ModelConfig, ModelMode};
use dynseq::train::{score_corpus, train, TrainConfig};
use dynseq::DynGraphSample;
use std::time::Instant;

fn model_cfg(mode: ModelMode, d: usize, k: usize, n: usize, feat: usize, att: bool) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { hops: k, hidden: d, pooling: PoolingMode::NodeAttention, feature_dim: feat },
        mode,
        graph_attention: att,
        vocab_size: StageVocab.size(),
        num_subforums: n,
        max_len: 12,
    }
}

fn decode_all(store: &dynseq::ParamStore, cfg: &ModelConfig, samples: &[DynGraphSample]) -> Vec<Vec<usize>> {
    samples.iter().map(|s| {
        let input = dynseq::model::prepare_input(s, cfg.mode).unwrap();
        dynseq::train::decode_prepared(store, cfg, &input).unwrap().tokens
    }).collect()
}

fn overfit() {
    let t0 = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 64, num_subforums: 10, keyword_dims: 10, t_max: 8,
        stage_count: 6, emission_strength: 0.9, stay_prob: 0.5,
        events_per_window: 6, seed: 7, ..SyntheticConfig::default()
    }).unwrap();
    let cfg = model_cfg(ModelMode::Dynamic, 16, 2, 10, 11, true);
    let tc = TrainConfig { batch_size: 16, max_epochs: 300, patience: 300, seed: 0, ..TrainConfig::default() };
    let (best, log) = train(&ds.samples, &ds.samples, &cfg, &tc, None).unwrap();
    let decoded = decode_all(&best, &cfg, &ds.samples);
    let refs: Vec<Vec<usize>> = ds.samples.iter().map(|s| s.target.clone()).collect();
    let scores = score_corpus(&decoded, &refs).unwrap();
    let max_acc = log.train_token_acc.iter().cloned().fold(0.0, f64::max);
    println!("OVERFIT: epochs={} best_epoch={} final_acc={:.4} max_acc={:.4} bleu1={:.2} time={:.1}s",
        log.train_loss.len(), log.best_epoch, log.train_token_acc.last().unwrap(), max_acc, scores[0].1, t0.elapsed().as_secs_f64());
    for e in [0, 24, 49, 99, 149, 199, 249, 299] {
        if e < log.train_loss.len() {
            println!("  epoch {e}: loss={:.4} acc={:.4} val_bleu1={:.2}", log.train_loss[e], log.train_token_acc[e], log.val_bleu1[e]);
        }
    }
}

fn ablation(epochs: usize, seeds: &[u64]) {
    let t0 = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 550, num_subforums: 10, keyword_dims: 10, t_max: 12,
        stage_count: 6, emission_strength: 0.7, stay_prob: 0.5,
        events_per_window: 4, seed: 2024, ..SyntheticConfig::default()
    }).unwrap();
    let train_set = &ds.samples[..400];
    let val_set = &ds.samples[400..450];
    let test_set = &ds.samples[450..550];
    let refs: Vec<Vec<usize>> = test_set.iter().map(|s| s.target.clone()).collect();

    for mode in [ModelMode::Dynamic, ModelMode::StaticAggregate, ModelMode::SequenceOnly] {
        let cfg = model_cfg(mode, 16, 2, 10, 11, true);
        use rayon::prelude::*;
        let bleus: Vec<f64> = seeds.par_iter().map(|&seed| {
            let tc = TrainConfig { batch_size: 50, max_epochs: epochs, patience: 10, seed, ..TrainConfig::default() };
            let (best, log) = train(train_set, val_set, &cfg, &tc, None).unwrap();
            let decoded = decode_all(&best, &cfg, test_set);
            let s = score_corpus(&decoded, &refs).unwrap();
            eprintln!("  mode={mode} seed={seed}: bleu1={:.2} epochs={} best={}", s[0].1, log.train_loss.len(), log.best_epoch);
            s[0].1
        }).collect();
        let mean = bleus.iter().sum::<f64>() / bleus.len() as f64;
        println!("ABLATION mode={mode}: mean_bleu1={mean:.2} ({bleus:?}) elapsed={:.0}s", t0.elapsed().as_secs_f64());
    }
}

fn interpret() {
    let t0 = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 260, num_subforums: 10, keyword_dims: 10, t_max: 8,
        stage_count: 6, emission_strength: 0.9, stay_prob: 0.5,
        events_per_window: 6, seed: 4242, ..SyntheticConfig::default()
    }).unwrap();
    let train_set = &ds.samples[..200];
    let val_set = &ds.samples[200..220];
    let test_set = &ds.samples[220..260];
    let cfg = model_cfg(ModelMode::Dynamic, 16, 2, 10, 11, true);
    let tc = TrainConfig { batch_size: 25, max_epochs: 120, patience: 20, seed: 0, ..TrainConfig::default() };
    let (best, log) = train(train_set, val_set, &cfg, &tc, None).unwrap();
    println!("interp train done: {} epochs, val_bleu1 best {:.2}, {:.0}s", log.train_loss.len(), log.val_bleu1[log.best_epoch], t0.elapsed().as_secs_f64());

    let vocab = StageVocab;
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in test_set {
        let (trace, decoded) = dynseq::model::run_sample(&best, &cfg, s).unwrap();
        let alphas = trace.node_attention.as_ref().unwrap();
        for (m, &tok) in decoded.tokens.iter().enumerate() {
            let Some(stage) = vocab.stage_of_token(tok) else { continue };
            let beta_row = &decoded.beta[m];
            let t_star = beta_row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            let alpha = alphas[t_star].data();
            let n_star = alpha.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            total += 1;
            if n_star == ds.planted[stage] { hits += 1; }
        }
    }
    println!("INTERP: hits={hits}/{total} = {:.3} time={:.0}s", hits as f64 / total as f64, t0.elapsed().as_secs_f64());
}

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_default();
    match arg.as_str() {
        "overfit" => overfit(),
        "ablation" => ablation(60, &[0, 1, 2, 3, 4]),
        "interp" => interpret(),
        _ => { overfit(); }
    }
}
