//! Sampler comparison driver: trains every requested sampler from identical
//! data, model init and seeds, and aggregates mAcc, first-epoch active
//! fractions, iterations-to-target and wall-clock per run.

use std::time::Instant;

use anyhow::{bail, Result};
use gsbench_core::data::LabeledFeatureSet;
use gsbench_core::eval::{evaluate, macc, EvalSplit};
use gsbench_core::sampler::SamplerKind;
use gsbench_core::trainer::{train_with_hook, TrainConfig};

use crate::config::ExperimentConfig;
use crate::csvio::ComparisonRow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMap {
    /// Each run's target is that run's final PK mAP.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub experiment: ExperimentConfig,
    pub samplers: Vec<SamplerKind>,
    pub target: TargetMap,
    /// Evaluate held-out mAP every n-th iteration.
    pub eval_every: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    /// One row per (sampler, run), in the requested sampler order.
    pub rows: Vec<ComparisonRow>,
    /// sha256 of the training data, one entry per row, for audit logs.
    pub hash_log: Vec<(String, u64, String)>,
    /// Per sampler: (name, macc mean, macc sample std).
    pub aggregates: Vec<(String, f64, f64)>,
}

struct RunTrace {
    /// (global iteration, held-out mAP) at every evaluated step.
    map_trace: Vec<(usize, f64)>,
    final_map: f64,
    final_macc: f64,
    active_frac_epoch1: f64,
    wall_seconds: f64,
    seed: u64,
}

fn run_one(
    train_set: &LabeledFeatureSet,
    split: &EvalSplit,
    base: &TrainConfig,
    kind: SamplerKind,
    run_index: usize,
    eval_every: usize,
) -> Result<RunTrace> {
    // Each run owns a stream derived as seed xor run-index; the model init
    // depends only on the run seed, so all samplers start from the same
    // untrained model.
    let run_seed = base.seed ^ run_index as u64;
    let cfg = TrainConfig {
        seed: run_seed,
        sampler: gsbench_core::sampler::SamplerConfig {
            seed: run_seed,
            ..base.sampler.clone()
        },
        ..base.clone()
    };
    let mut map_trace: Vec<(usize, f64)> = Vec::new();
    let t0 = Instant::now();
    let (model, log) = train_with_hook(train_set, &cfg, kind, |ev| {
        if ev.global_iter % eval_every == 0 {
            let rep = evaluate(ev.model, split, cfg.metric).expect("eval during bench");
            map_trace.push((ev.global_iter, rep.map));
        }
    })?;
    let wall_seconds = t0.elapsed().as_secs_f64();
    let report = evaluate(&model, split, cfg.metric)?;
    if map_trace.last().map(|&(_, m)| m) != Some(report.map) {
        let total = log.iterations.len();
        map_trace.push((total, report.map));
    }
    Ok(RunTrace {
        map_trace,
        final_map: report.map,
        final_macc: macc(std::slice::from_ref(&report))?,
        active_frac_epoch1: log.epoch_active_fraction(0),
        wall_seconds,
        seed: run_seed,
    })
}

/// Runs every sampler for `runs` seeded rounds and assembles the comparison
/// table. With an automatic target, PK must be among the samplers: its final
/// mAP per run defines that run's target for everyone.
pub fn run_bench(
    train_set: &LabeledFeatureSet,
    split: &EvalSplit,
    settings: &BenchSettings,
    data_sha256: &str,
) -> Result<BenchOutcome> {
    if settings.samplers.is_empty() {
        bail!("no samplers requested");
    }
    if settings.eval_every == 0 {
        bail!("eval_every must be >= 1");
    }
    if settings.target == TargetMap::Auto && !settings.samplers.contains(&SamplerKind::Pk) {
        bail!("automatic target needs the pk sampler in the comparison");
    }
    let runs = settings.experiment.runs;
    let base = &settings.experiment.train;

    // PK goes first so automatic targets exist before the others finish.
    let mut order = settings.samplers.clone();
    order.sort_by_key(|&k| (k != SamplerKind::Pk) as u8);
    order.dedup();

    let mut traces: Vec<(SamplerKind, Vec<RunTrace>)> = Vec::new();
    for &kind in &order {
        let mut per_run = Vec::with_capacity(runs);
        for r in 0..runs {
            let trace = run_one(train_set, split, base, kind, r, settings.eval_every)?;
            log::info!(
                "bench sampler={} seed={} train_data_sha256={} macc={:.4} wall={:.2}s",
                kind.name(),
                trace.seed,
                data_sha256,
                trace.final_macc,
                trace.wall_seconds
            );
            per_run.push(trace);
        }
        traces.push((kind, per_run));
    }

    let pk_finals: Option<Vec<f64>> = traces
        .iter()
        .find(|(k, _)| *k == SamplerKind::Pk)
        .map(|(_, rs)| rs.iter().map(|t| t.final_map).collect());

    let mut rows = Vec::new();
    let mut hash_log = Vec::new();
    let mut aggregates = Vec::new();
    for &kind in &settings.samplers {
        let Some((_, per_run)) = traces.iter().find(|(k, _)| *k == kind) else {
            continue;
        };
        let mut maccs = Vec::with_capacity(runs);
        for (r, trace) in per_run.iter().enumerate() {
            let target = match settings.target {
                TargetMap::Fixed(t) => t,
                TargetMap::Auto => pk_finals.as_ref().expect("validated above")[r],
            };
            let iters_to_target = trace
                .map_trace
                .iter()
                .find(|&&(_, m)| m >= target)
                .map(|&(gi, _)| gi);
            rows.push(ComparisonRow {
                sampler: kind.name().to_string(),
                seed: trace.seed,
                macc: trace.final_macc,
                active_frac_epoch1: trace.active_frac_epoch1,
                iters_to_target,
                wall_seconds: trace.wall_seconds,
            });
            hash_log.push((kind.name().to_string(), trace.seed, data_sha256.to_string()));
            maccs.push(trace.final_macc);
        }
        let mean = maccs.iter().sum::<f64>() / maccs.len() as f64;
        let std = if maccs.len() > 1 {
            (maccs.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
                / (maccs.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        aggregates.push((kind.name().to_string(), mean, std));
    }

    Ok(BenchOutcome {
        rows,
        hash_log,
        aggregates,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{b:02x}");
    }
    out
}
