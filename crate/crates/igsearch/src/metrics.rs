//! Per-iteration training metrics and their line-delimited JSON archive.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ig::IgRecord;

/// Evaluation results over a question set, overall and split by hop depth
/// (index 0 holds 1-hop questions).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub em: f64,
    pub f1: f64,
    pub em_by_hops: [f64; 3],
    pub f1_by_hops: [f64; 3],
    pub count_by_hops: [usize; 3],
    pub mean_searches: f64,
    pub mean_searches_by_hops: [f64; 3],
    pub mean_query_len: f64,
}

/// Mean raw and stabilized IG at one (hop depth, step index) slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgPositionStat {
    pub hops: usize,
    pub step: usize,
    pub mean_raw: f64,
    pub mean_value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub train_reward_mean: f64,
    pub train_f1_mean: f64,
    pub mean_searches: f64,
    pub mean_query_len: f64,
    pub ig_raw_mean: f64,
    pub ig_value_mean: f64,
    /// Fraction of steps whose IG survived the dead zone.
    pub ig_active_fraction: f64,
    pub ig_positions: Vec<IgPositionStat>,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    /// Cumulative batched scorer invocations.
    pub scorer_calls: u64,
    /// Present on evaluation iterations.
    pub eval: Option<EvalSummary>,
}

/// One archived IG computation, tagged with where it happened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgLogRecord {
    pub iter: usize,
    pub question: usize,
    pub hops: usize,
    pub slot: usize,
    /// Search action that produced the step.
    pub action: usize,
    /// Whether the rollout's chain was already resolved when the step ran.
    pub resolved: bool,
    #[serde(flatten)]
    pub record: IgRecord,
}

pub fn append_jsonl<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path).map_err(|_| {
        Error::MissingMetrics(format!("cannot open {}", path.display()))
    })?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    if out.is_empty() {
        return Err(Error::MissingMetrics(format!("{} holds no records", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let rows = vec![
            IterationMetrics { iter: 0, loss: 0.5, ..Default::default() },
            IterationMetrics { iter: 1, eval: Some(EvalSummary::default()), ..Default::default() },
        ];
        let mut f = std::fs::File::create(&path).unwrap();
        for r in &rows {
            append_jsonl(&mut f, r).unwrap();
        }
        drop(f);
        let back: Vec<IterationMetrics> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].iter, 1);
        assert!(back[1].eval.is_some());
    }

    #[test]
    fn missing_or_empty_archive_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.jsonl");
        assert!(matches!(
            read_jsonl::<IterationMetrics>(&missing),
            Err(Error::MissingMetrics(_))
        ));
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            read_jsonl::<IterationMetrics>(&empty),
            Err(Error::MissingMetrics(_))
        ));
    }
}
