use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::snapshot::DynGraphSample;
use super::{GraphDataError, Result};

/// Deterministic user-level train/validation/test split.
///
/// Users (not samples) are shuffled and partitioned, so a user lands in
/// exactly one partition. Partition sizes are the rounded ratios, computed
/// by largest remainder so they always sum to the user count.
pub fn split_dataset(
    samples: Vec<DynGraphSample>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<DynGraphSample>, Vec<DynGraphSample>, Vec<DynGraphSample>)> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(GraphDataError::Config(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    if samples.len() < 3 {
        return Err(GraphDataError::Data(format!(
            "need at least 3 samples to split, got {}",
            samples.len()
        )));
    }

    // Unique users in first-appearance order.
    let mut users: Vec<String> = Vec::new();
    for s in &samples {
        if !users.contains(&s.user_id) {
            users.push(s.user_id.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);

    let n = users.len();
    let parts = largest_remainder(n, &[ratios.0, ratios.1, ratios.2]);
    let train_users = &users[..parts[0]];
    let val_users = &users[parts[0]..parts[0] + parts[1]];

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        if train_users.contains(&s.user_id) {
            train.push(s);
        } else if val_users.contains(&s.user_id) {
            val.push(s);
        } else {
            test.push(s);
        }
    }
    Ok((train, val, test))
}

fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::snapshot::SnapshotGraph;

    fn users(n: usize) -> Vec<DynGraphSample> {
        (0..n)
            .map(|i| DynGraphSample {
                user_id: format!("user_{i}"),
                snapshots: vec![SnapshotGraph::zero(2, 2)],
                visits: vec![vec![0]],
                target: vec![3],
            })
            .collect()
    }

    #[test]
    fn ten_users_split_seven_one_two() {
        let (train, val, test) = split_dataset(users(10), (0.70, 0.10, 0.20), 0).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 1, 2));
    }

    #[test]
    fn same_seed_gives_identical_partitions() {
        let a = split_dataset(users(20), (0.70, 0.10, 0.20), 42).unwrap();
        let b = split_dataset(users(20), (0.70, 0.10, 0.20), 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn partitions_cover_input_and_are_disjoint() {
        let input = users(23);
        let (train, val, test) = split_dataset(input.clone(), (0.70, 0.10, 0.20), 7).unwrap();
        let mut all: Vec<String> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|s| s.user_id.clone())
            .collect();
        assert_eq!(all.len(), input.len());
        all.sort();
        all.dedup();
        assert_eq!(all.len(), input.len(), "partitions overlap");
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            split_dataset(users(2), (0.70, 0.10, 0.20), 0),
            Err(GraphDataError::Data(_))
        ));
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(matches!(
            split_dataset(users(10), (0.5, 0.1, 0.2), 0),
            Err(GraphDataError::Config(_))
        ));
    }
}
