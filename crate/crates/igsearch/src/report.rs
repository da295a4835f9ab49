//! Plot-ready TSV exports from a training run directory.
//!
//! Every table is written with fixed six-decimal formatting so repeated
//! exports of the same run are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{read_jsonl, IgLogRecord, IterationMetrics};

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn write_table(out_dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = out_dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

fn learning_curve(metrics: &[IterationMetrics]) -> String {
    let mut t = String::from("iter\ttrain_reward\ttrain_f1\teval_em\teval_f1\teval_em_1hop\teval_em_2hop\teval_em_3hop\n");
    for m in metrics {
        if let Some(e) = &m.eval {
            let _ = writeln!(
                t,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.iter,
                f(m.train_reward_mean),
                f(m.train_f1_mean),
                f(e.em),
                f(e.f1),
                f(e.em_by_hops[0]),
                f(e.em_by_hops[1]),
                f(e.em_by_hops[2]),
            );
        }
    }
    t
}

fn ig_pipeline(metrics: &[IterationMetrics]) -> String {
    let mut t = String::from("iter\tig_raw_mean\tig_value_mean\tig_active_fraction\tloss\tgrad_norm\tmean_kl\tclip_fraction\n");
    for m in metrics {
        let _ = writeln!(
            t,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.iter,
            f(m.ig_raw_mean),
            f(m.ig_value_mean),
            f(m.ig_active_fraction),
            f(m.loss),
            f(m.grad_norm),
            f(m.mean_kl),
            f(m.clip_fraction),
        );
    }
    t
}

fn ig_by_position(records: &[IgLogRecord]) -> String {
    let mut by_pos: std::collections::BTreeMap<(usize, usize), (f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for r in records {
        let e = by_pos.entry((r.hops, r.record.step)).or_insert((0.0, 0.0, 0));
        e.0 += r.record.raw;
        e.1 += r.record.value;
        e.2 += 1;
    }
    let mut t = String::from("hops\tstep\tmean_raw\tmean_value\tcount\n");
    for ((hops, step), (raw, value, count)) in by_pos {
        let _ = writeln!(
            t,
            "{hops}\t{step}\t{}\t{}\t{count}",
            f(raw / count as f64),
            f(value / count as f64),
        );
    }
    t
}

/// Raw-IG histogram with markers for the dead-zone band and the clip knee.
fn ig_histogram(records: &[IgLogRecord], delta: f64, eta: f64) -> String {
    const LO: f64 = -6.0;
    const HI: f64 = 6.0;
    const WIDTH: f64 = 0.25;
    let bins = ((HI - LO) / WIDTH) as usize;
    let mut counts = vec![0usize; bins + 2]; // underflow, bins, overflow
    for r in records {
        let v = r.record.raw;
        let idx = if v < LO {
            0
        } else if v >= HI {
            bins + 1
        } else {
            1 + ((v - LO) / WIDTH) as usize
        };
        counts[idx] += 1;
    }
    let mut t = String::from("bin_lo\tbin_hi\tcount\tin_dead_zone\tbeyond_knee\n");
    let mut row = |lo: f64, hi: f64, count: usize| {
        let mid = (lo + hi) / 2.0;
        let _ = writeln!(
            t,
            "{}\t{}\t{count}\t{}\t{}",
            f(lo),
            f(hi),
            u8::from(mid.abs() < delta),
            u8::from(mid.abs() > eta),
        );
    };
    row(f64::NEG_INFINITY, LO, counts[0]);
    for b in 0..bins {
        row(LO + b as f64 * WIDTH, LO + (b + 1) as f64 * WIDTH, counts[1 + b]);
    }
    row(HI, f64::INFINITY, counts[bins + 1]);
    t
}

fn search_behavior(metrics: &[IterationMetrics]) -> String {
    let mut t = String::from("iter\tmean_searches\tmean_query_len\teval_searches_1hop\teval_searches_2hop\teval_searches_3hop\n");
    for m in metrics {
        let by = m
            .eval
            .as_ref()
            .map(|e| e.mean_searches_by_hops)
            .unwrap_or([f64::NAN; 3]);
        if by[0].is_nan() {
            continue;
        }
        let _ = writeln!(
            t,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.iter,
            f(m.mean_searches),
            f(m.mean_query_len),
            f(by[0]),
            f(by[1]),
            f(by[2]),
        );
    }
    t
}

/// Read `metrics.jsonl`, `ig_records.jsonl`, and `config.json` from
/// `run_dir` and write the five plot tables into `out_dir`.
pub fn export_plots(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics: Vec<IterationMetrics> = read_jsonl(&run_dir.join("metrics.jsonl"))?;
    let records: Vec<IgLogRecord> =
        read_jsonl(&run_dir.join("ig_records.jsonl")).unwrap_or_default();
    let cfg: RunConfig = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("config.json"))
            .map_err(|_| Error::MissingMetrics("config.json not found in run directory".into()))?,
    )?;
    std::fs::create_dir_all(out_dir)?;
    let ig = cfg.ig_config();
    Ok(vec![
        write_table(out_dir, "learning_curve.tsv", &learning_curve(&metrics))?,
        write_table(out_dir, "ig_pipeline.tsv", &ig_pipeline(&metrics))?,
        write_table(out_dir, "ig_by_position.tsv", &ig_by_position(&records))?,
        write_table(out_dir, "ig_histogram.tsv", &ig_histogram(&records, ig.delta, ig.eta))?,
        write_table(out_dir, "search_behavior.tsv", &search_behavior(&metrics))?,
    ])
}
