//! Corpus-level BLEU-1..4, unigram-recall ROUGE-1 and a position-wise
//! token accuracy for stage-sequence evaluation, with mean/SD aggregation
//! over repeated runs.
//!
//! BLEU pools clipped n-gram counts over the whole corpus (no smoothing:
//! a zero pooled precision zeroes the score) and applies the brevity
//! penalty `exp(1 - r/c)` when the candidate corpus is shorter. ROUGE-1 is
//! pure unigram recall. Scores are reported on a 0..100 scale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric config error: {0}")]
    Config(String),
    #[error("metric domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

type Seq = [usize];

fn validate_corpus(candidates: &[Vec<usize>], references: &[Vec<usize>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(MetricError::Domain(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(MetricError::Domain("empty corpus".into()));
    }
    Ok(())
}

fn ngram_counts(seq: &Seq, m: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= m {
        for w in seq.windows(m) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n in [0, 100]: geometric mean of the pooled modified
/// m-gram precisions for m = 1..=n times the brevity penalty.
pub fn bleu(candidates: &[Vec<usize>], references: &[Vec<usize>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::Config(format!("bleu order {n} outside 1..=4")));
    }
    validate_corpus(candidates, references)?;

    let mut log_precision_sum = 0.0;
    for m in 1..=n {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (cand, rf) in candidates.iter().zip(references) {
            let ref_counts = ngram_counts(rf, m);
            for (gram, count) in ngram_counts(cand, m) {
                clipped += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total += cand.len().saturating_sub(m - 1);
        }
        if clipped == 0 || total == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (clipped as f64 / total as f64).ln();
    }

    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_precision_sum / n as f64).exp())
}

/// Corpus-level unigram recall in [0, 100]: clipped matched unigrams over
/// total reference unigrams.
pub fn rouge1(candidates: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    validate_corpus(candidates, references)?;
    let mut matched = 0usize;
    let mut ref_total = 0usize;
    for (cand, rf) in candidates.iter().zip(references) {
        let cand_counts = ngram_counts(cand, 1);
        for (gram, count) in ngram_counts(rf, 1) {
            matched += count.min(cand_counts.get(gram).copied().unwrap_or(0));
        }
        ref_total += rf.len();
    }
    if ref_total == 0 {
        return Err(MetricError::Domain("references contain no tokens".into()));
    }
    Ok(100.0 * matched as f64 / ref_total as f64)
}

/// Position-wise exact-match fraction over the min-length prefix of each
/// pair, averaged over the corpus. A pair of empty sequences counts as 1;
/// an empty side against a non-empty one counts as 0.
pub fn token_accuracy(candidates: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    validate_corpus(candidates, references)?;
    let mut sum = 0.0;
    for (cand, rf) in candidates.iter().zip(references) {
        let m = cand.len().min(rf.len());
        sum += if m == 0 {
            if cand.is_empty() && rf.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            let hits = cand.iter().zip(rf).filter(|(a, b)| a == b).count();
            hits as f64 / m as f64
        };
    }
    Ok(sum / candidates.len() as f64)
}

/// One metric's scores across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 for a single run.
    pub sd: f64,
    pub scores: Vec<f64>,
}

impl MetricSummary {
    pub fn from_scores(name: &str, scores: Vec<f64>) -> Self {
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MetricSummary {
            name: name.to_string(),
            mean,
            sd,
            scores,
        }
    }
}

/// Mean and SD per metric across evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// Aligned text table: one column per metric, `mean +/- sd` cells.
    pub fn render_table(&self, label: &str) -> String {
        let mut header = format!("{:<28}", "Model");
        let mut row = format!("{label:<28}");
        for m in &self.metrics {
            header.push_str(&format!("{:>16}", m.name));
            row.push_str(&format!("{:>16}", format!("{:.2}±{:.2}", m.mean, m.sd)));
        }
        format!("{header}\n{row}\n(runs = {})\n", self.runs)
    }
}
