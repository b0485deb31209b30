//! Line-delimited JSON file formats for events, samples and profiles.
//!
//! Events: one JSON object per line with fields `user_id`, `timestamp`,
//! `subforum_id`, `action`. Samples: one object per line with `user_id`,
//! `snapshots` (dense `adjacency` and `features`), `visits` and `target`.
//! Profiles and planted-map files are single JSON documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::event::EventRecord;
use super::snapshot::{DynGraphSample, SubforumProfile};
use super::synthetic::SyntheticConfig;
use super::Result;

/// Ground-truth sidecar written next to a synthetic dataset: the planted
/// stage->subforum map (keyed by stage token name), the subforum profiles
/// and the generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedInfo {
    pub stage_to_subforum: Vec<(String, usize)>,
    pub profiles: Vec<SubforumProfile>,
    pub config: SyntheticConfig,
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}

pub fn write_dataset(path: &Path, samples: &[DynGraphSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DynGraphSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(samples)
}

pub fn write_profiles(path: &Path, profiles: &[SubforumProfile]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, profiles)?;
    out.flush()?;
    Ok(())
}

pub fn read_profiles(path: &Path) -> Result<Vec<SubforumProfile>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::synthetic::generate_synthetic;

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let cfg = SyntheticConfig {
            num_users: 4,
            seed: 1,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        write_dataset(&path, &ds.samples).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds.samples);
    }

    #[test]
    fn events_round_trip() {
        use crate::graphdata::event::Action;
        let events = vec![
            EventRecord {
                user_id: "u1".into(),
                timestamp: 0,
                subforum_id: 2,
                action: Action::Post,
            },
            EventRecord {
                user_id: "u1".into(),
                timestamp: 100,
                subforum_id: 5,
                action: Action::Reply,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        write_events(&path, &events).unwrap();
        assert_eq!(read_events(&path).unwrap(), events);
    }
}
