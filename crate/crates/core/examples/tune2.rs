//! Scratch: ablation configuration probes.
use dynseq::encoder::{EncoderConfig, PoolingMode};
use dynseq::graphdata::{generate_synthetic, SyntheticConfig, StageVocab};
use dynseq::model::{ModelConfig, ModelMode};
use dynseq::train::{score_corpus, train, TrainConfig};
use std::time::Instant;

fn main() {
    use rayon::prelude::*;
    let t_all = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 550, num_subforums: 10, keyword_dims: 10, t_max: 16,
        stage_count: 6, emission_strength: 0.7, stay_prob: 0.6,
        events_per_window: 8, seed: 2024, ..SyntheticConfig::default()
    }).unwrap();
    let train_set = &ds.samples[..400];
    let val_set = &ds.samples[400..450];
    let test_set = &ds.samples[450..550];
    let refs: Vec<Vec<usize>> = test_set.iter().map(|s| s.target.clone()).collect();
    let lens: Vec<usize> = ds.samples.iter().map(|s| dynseq::graphdata::flatten_to_sequence(s).len()).collect();
    println!("stream lengths: min={} max={} mean={:.1}", lens.iter().min().unwrap(), lens.iter().max().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64);

    let jobs: Vec<(ModelMode, u64)> = [ModelMode::Dynamic, ModelMode::SequenceOnly, ModelMode::StaticAggregate]
        .into_iter().flat_map(|m| (0..3u64).map(move |s| (m, s))).collect();
    let results: Vec<(ModelMode, u64, f64)> = jobs.par_iter().map(|&(mode, seed)| {
        let t0 = Instant::now();
        let cfg = ModelConfig {
            encoder: EncoderConfig { hops: 2, hidden: 16, pooling: PoolingMode::NodeAttention, feature_dim: 11 },
            mode, graph_attention: true,
            vocab_size: StageVocab.size(), num_subforums: 10, max_len: 12,
        };
        let tc = TrainConfig { batch_size: 50, max_epochs: 120, patience: 15, seed, ..TrainConfig::default() };
        let (best, log) = train(train_set, val_set, &cfg, &tc, None).unwrap();
        let decoded: Vec<Vec<usize>> = test_set.iter().map(|s| {
            let input = dynseq::model::prepare_input(s, cfg.mode).unwrap();
            dynseq::train::decode_prepared(&best, &cfg, &input).unwrap().tokens
        }).collect();
        let s = score_corpus(&decoded, &refs).unwrap();
        eprintln!("  mode={mode} seed={seed}: bleu1={:.2} epochs={} best={} t={:.0}s", s[0].1, log.train_loss.len(), log.best_epoch, t0.elapsed().as_secs_f64());
        (mode, seed, s[0].1)
    }).collect();
    for mode in [ModelMode::Dynamic, ModelMode::SequenceOnly, ModelMode::StaticAggregate] {
        let scores: Vec<f64> = results.iter().filter(|(m, _, _)| *m == mode).map(|(_, _, s)| *s).collect();
        println!("MODE {mode}: mean={:.2} {scores:?}", scores.iter().sum::<f64>() / scores.len() as f64);
    }
    println!("total {:.0}s", t_all.elapsed().as_secs_f64());
}
