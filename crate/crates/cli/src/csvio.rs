//! CSV serialization for metrics, evaluation and comparison records.
//!
//! Floats are written in Rust's shortest round-trip form, so files parse back
//! into bit-identical records and identical runs produce byte-identical files.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use gsbench_core::trainer::{EpochRecord, IterRecord};

pub const METRICS_HEADER: &str =
    "epoch,iter,loss_sum,loss_mean,active_fraction,grad_norm_preclip,clipped";
pub const EPOCHS_HEADER: &str = "epoch,plan_build_seconds,train_seconds";
pub const EVAL_HEADER: &str = "split,seed,rank1,map,num_queries";
pub const COMPARISON_HEADER: &str =
    "sampler,seed,macc,active_frac_epoch1,iters_to_target,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub split: String,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
    pub num_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub sampler: String,
    pub seed: u64,
    pub macc: f64,
    pub active_frac_epoch1: f64,
    /// First iteration reaching the target mAP; empty cell when never reached.
    pub iters_to_target: Option<usize>,
    pub wall_seconds: f64,
}

pub fn write_metrics_csv(rows: &[IterRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.iter,
            r.loss_sum,
            r.loss_mean,
            r.active_fraction,
            r.grad_norm_preclip,
            u8::from(r.clipped)
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<IterRecord>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                bail!("unexpected metrics header {line:?}");
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            bail!("metrics line {} has {} fields", i + 1, f.len());
        }
        rows.push(IterRecord {
            epoch: f[0].parse().context("epoch")?,
            iter: f[1].parse().context("iter")?,
            loss_sum: f[2].parse().context("loss_sum")?,
            loss_mean: f[3].parse().context("loss_mean")?,
            active_fraction: f[4].parse().context("active_fraction")?,
            grad_norm_preclip: f[5].parse().context("grad_norm_preclip")?,
            clipped: match f[6] {
                "0" => false,
                "1" => true,
                other => bail!("clipped flag {other:?}"),
            },
        });
    }
    Ok(rows)
}

pub fn write_epochs_csv(rows: &[EpochRecord]) -> String {
    let mut out = String::from(EPOCHS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.epoch, r.plan_build_seconds, r.train_seconds
        );
    }
    out
}

pub fn parse_epochs_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != EPOCHS_HEADER {
                bail!("unexpected epochs header {line:?}");
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            bail!("epochs line {} has {} fields", i + 1, f.len());
        }
        rows.push(EpochRecord {
            epoch: f[0].parse().context("epoch")?,
            plan_build_seconds: f[1].parse().context("plan_build_seconds")?,
            train_seconds: f[2].parse().context("train_seconds")?,
        });
    }
    Ok(rows)
}

pub fn write_eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.split, r.seed, r.rank1, r.map, r.num_queries
        );
    }
    out
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != EVAL_HEADER {
                bail!("unexpected eval header {line:?}");
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("eval line {} has {} fields", i + 1, f.len());
        }
        rows.push(EvalRow {
            split: f[0].to_string(),
            seed: f[1].parse().context("seed")?,
            rank1: f[2].parse().context("rank1")?,
            map: f[3].parse().context("map")?,
            num_queries: f[4].parse().context("num_queries")?,
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        let iters = r
            .iters_to_target
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sampler, r.seed, r.macc, r.active_frac_epoch1, iters, r.wall_seconds
        );
    }
    out
}

pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != COMPARISON_HEADER {
                bail!("unexpected comparison header {line:?}");
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("comparison line {} has {} fields", i + 1, f.len());
        }
        rows.push(ComparisonRow {
            sampler: f[0].to_string(),
            seed: f[1].parse().context("seed")?,
            macc: f[2].parse().context("macc")?,
            active_frac_epoch1: f[3].parse().context("active_frac_epoch1")?,
            iters_to_target: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().context("iters_to_target")?)
            },
            wall_seconds: f[5].parse().context("wall_seconds")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_is_lossless() {
        let rows = vec![
            IterRecord {
                epoch: 0,
                iter: 0,
                loss_sum: 12.375,
                loss_mean: 0.7734375,
                active_fraction: 0.5,
                grad_norm_preclip: 9.000000000000002,
                clipped: true,
            },
            IterRecord {
                epoch: 1,
                iter: 3,
                loss_sum: 1.0 / 3.0,
                loss_mean: 0.1 + 0.2,
                active_fraction: 1.0,
                grad_norm_preclip: 1e-17,
                clipped: false,
            },
        ];
        let text = write_metrics_csv(&rows);
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
    }

    #[test]
    fn comparison_round_trip_handles_missing_targets() {
        let rows = vec![
            ComparisonRow {
                sampler: "gs".into(),
                seed: 3,
                macc: 0.925,
                active_frac_epoch1: 0.99,
                iters_to_target: Some(128),
                wall_seconds: 1.25,
            },
            ComparisonRow {
                sampler: "pk".into(),
                seed: 3,
                macc: 0.875,
                active_frac_epoch1: 0.61,
                iters_to_target: None,
                wall_seconds: 1.5,
            },
        ];
        let text = write_comparison_csv(&rows);
        assert_eq!(parse_comparison_csv(&text).unwrap(), rows);
    }

    #[test]
    fn eval_and_epoch_round_trips() {
        let eval = vec![EvalRow {
            split: "test".into(),
            seed: 9,
            rank1: 0.8125,
            map: 0.90625,
            num_queries: 64,
        }];
        assert_eq!(parse_eval_csv(&write_eval_csv(&eval)).unwrap(), eval);
        let epochs = vec![EpochRecord {
            epoch: 0,
            plan_build_seconds: 0.0125,
            train_seconds: 1.375,
        }];
        assert_eq!(parse_epochs_csv(&write_epochs_csv(&epochs)).unwrap(), epochs);
    }
}
