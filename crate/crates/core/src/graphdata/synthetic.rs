use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{Action, EventRecord};
use super::snapshot::{
    build_dynamic_graph, DynGraphSample, SubforumProfile, DEFAULT_WINDOW_SECONDS,
};
use super::vocab::StageVocab;
use super::{GraphDataError, Result};

/// Knobs of the synthetic forum-activity generator.
///
/// Each user follows a hidden left-to-right stage chain: the chain starts at
/// a random stage, persists in each stage for a geometric number of windows
/// (`stay_prob` per extra window) and then jumps to a strictly later stage,
/// never revisiting one. Every stage has a planted preferred subforum, and
/// each window emits `events_per_window` events that hit the planted
/// subforum with probability `emission_strength` (uniform otherwise).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    /// Node count N; must be at least `stage_count`.
    pub num_subforums: usize,
    /// Keyword profile length; snapshot feature dim is this plus one.
    pub keyword_dims: usize,
    /// Hard cap on the number of windows per user.
    pub t_max: usize,
    pub stage_count: usize,
    /// Probability that a window's events go to the planted subforum, in (0, 1].
    pub emission_strength: f64,
    /// Geometric persistence: probability of staying in the current stage.
    pub stay_prob: f64,
    pub events_per_window: usize,
    pub window_seconds: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 64,
            num_subforums: 10,
            keyword_dims: 10,
            t_max: 8,
            stage_count: 6,
            emission_strength: 0.9,
            stay_prob: 0.5,
            events_per_window: 6,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            seed: 0,
        }
    }
}

/// Generator output: the samples plus the ground truth needed by
/// interpretability checks (profiles and the planted stage->subforum map).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub samples: Vec<DynGraphSample>,
    pub profiles: Vec<SubforumProfile>,
    /// `planted[s]` is the preferred subforum of stage index `s`.
    pub planted: Vec<usize>,
}

fn validate(cfg: &SyntheticConfig) -> Result<()> {
    let vocab = StageVocab;
    if cfg.stage_count == 0 || cfg.stage_count > vocab.stage_count() {
        return Err(GraphDataError::Config(format!(
            "stage_count {} outside 1..={}",
            cfg.stage_count,
            vocab.stage_count()
        )));
    }
    if cfg.num_subforums < cfg.stage_count {
        return Err(GraphDataError::Config(format!(
            "num_subforums {} smaller than stage_count {}",
            cfg.num_subforums, cfg.stage_count
        )));
    }
    if !(cfg.emission_strength > 0.0 && cfg.emission_strength <= 1.0) {
        return Err(GraphDataError::Config(
            "emission_strength must lie in (0, 1]".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.stay_prob) {
        return Err(GraphDataError::Config("stay_prob must lie in [0, 1)".into()));
    }
    if cfg.t_max == 0 || cfg.events_per_window == 0 || cfg.num_users == 0 {
        return Err(GraphDataError::Config(
            "num_users, t_max and events_per_window must be positive".into(),
        ));
    }
    if cfg.window_seconds <= 0 {
        return Err(GraphDataError::Config(
            "window_seconds must be positive".into(),
        ));
    }
    Ok(())
}

/// Sample a hidden stage chain: one stage per window, strictly increasing
/// stage indices, geometric persistence, capped at `t_max` windows.
fn sample_chain(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Vec<usize> {
    let mut chain = Vec::new();
    let mut stage = rng.gen_range(0..cfg.stage_count);
    loop {
        chain.push(stage);
        if chain.len() == cfg.t_max {
            break;
        }
        if rng.gen::<f64>() < cfg.stay_prob {
            continue;
        }
        if stage + 1 >= cfg.stage_count {
            break;
        }
        stage = rng.gen_range(stage + 1..cfg.stage_count);
    }
    chain
}

/// Generate a dataset with known ground truth. Deterministic in `seed`;
/// per-user streams are seeded with `seed ^ user_index`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    validate(cfg)?;
    let vocab = StageVocab;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let profiles: Vec<SubforumProfile> = (0..cfg.num_subforums)
        .map(|i| {
            let mut v: Vec<f64> = (0..cfg.keyword_dims).map(|_| rng.gen::<f64>()).collect();
            let mass: f64 = v.iter().sum();
            if mass > 0.0 {
                for x in &mut v {
                    *x /= mass;
                }
            }
            SubforumProfile {
                subforum_id: i,
                topic_vector: v,
            }
        })
        .collect();

    // Distinct planted subforums, one per stage (partial Fisher-Yates).
    let mut pool: Vec<usize> = (0..cfg.num_subforums).collect();
    let mut planted = Vec::with_capacity(cfg.stage_count);
    for _ in 0..cfg.stage_count {
        let k = rng.gen_range(0..pool.len());
        planted.push(pool.swap_remove(k));
    }

    let mut samples = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let mut urng = ChaCha8Rng::seed_from_u64(cfg.seed ^ u as u64);
        let chain = sample_chain(&mut urng, cfg);

        let gap = cfg.window_seconds / cfg.events_per_window as i64;
        let mut events = Vec::with_capacity(chain.len() * cfg.events_per_window);
        for (w, &stage) in chain.iter().enumerate() {
            for j in 0..cfg.events_per_window {
                let subforum = if urng.gen::<f64>() < cfg.emission_strength {
                    planted[stage]
                } else {
                    urng.gen_range(0..cfg.num_subforums)
                };
                let action = if urng.gen::<bool>() {
                    Action::Post
                } else {
                    Action::Reply
                };
                events.push(EventRecord {
                    user_id: format!("user_{u}"),
                    timestamp: w as i64 * cfg.window_seconds + j as i64 * gap,
                    subforum_id: subforum,
                    action,
                });
            }
        }

        let (snapshots, visits) = build_dynamic_graph(&events, cfg.window_seconds, &profiles)?;
        debug_assert_eq!(snapshots.len(), chain.len());

        let mut target = Vec::new();
        for &s in &chain {
            let token = vocab.stage_token(s);
            if target.last() != Some(&token) {
                target.push(token);
            }
        }

        samples.push(DynGraphSample {
            user_id: format!("user_{u}"),
            snapshots,
            visits,
            target,
        });
    }

    Ok(SyntheticDataset {
        samples,
        profiles,
        planted,
    })
}
