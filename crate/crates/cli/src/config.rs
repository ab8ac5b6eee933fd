//! Resolved experiment configuration: CLI flags beat config-file entries,
//! which beat built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use gsbench_core::loss::LossConfig;
use gsbench_core::metric::{MetricKind, RerankConfig, RerankMode};
use gsbench_core::model::{ModelConfig, ModelKind};
use gsbench_core::sampler::{SamplerConfig, SamplerKind};
use gsbench_core::trainer::TrainConfig;

use crate::args::RunFlags;

const KNOWN_KEYS: &[&str] = &[
    "sampler",
    "batch_size",
    "k",
    "margin",
    "clip",
    "epochs",
    "decay_epoch",
    "decay_factor",
    "lr",
    "seed",
    "metric",
    "rerank",
    "k1",
    "k2",
    "rerank_lambda",
    "model",
    "dim_out",
    "hidden",
    "bias",
    "l2norm",
    "match_gs_iters",
    "clusters",
    "queries_per_class",
    "runs",
    "holdout_per_class",
];

/// Flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "{}:{}: expected `key = value`, got {:?}",
                path.display(),
                lineno + 1,
                raw
            );
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key {:?}", path.display(), lineno + 1, key);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse_key<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    <T as FromStr>::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => match raw.parse::<T>() {
            Ok(v) => Ok(Some(v)),
            Err(e) => bail!("config key {key} = {raw:?}: {e}"),
        },
    }
}

fn parse_bool(file: &BTreeMap<String, String>, key: &str) -> Result<Option<bool>> {
    match file.get(key).map(String::as_str) {
        None => Ok(None),
        Some("true") | Some("1") => Ok(Some(true)),
        Some("false") | Some("0") => Ok(Some(false)),
        Some(other) => bail!("config key {key} = {other:?}: expected a boolean"),
    }
}

/// Parses the `--clip` surface form: `none` or a positive number.
fn parse_clip(raw: &str) -> Result<Option<f64>> {
    if raw == "none" {
        return Ok(None);
    }
    let t: f64 = raw
        .parse()
        .with_context(|| format!("clip must be `none` or a number, got {raw:?}"))?;
    if !(t > 0.0) {
        bail!("clip threshold must be > 0, got {t}; use `--clip none` to disable");
    }
    Ok(Some(t))
}

/// Everything a run needs, after precedence resolution.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub sampler_kind: SamplerKind,
    pub queries_per_class: usize,
    pub runs: usize,
    pub holdout_per_class: usize,
}

impl ExperimentConfig {
    /// Applies flag > file > default precedence and validates the result.
    pub fn resolve(flags: &RunFlags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };

        let sampler_name: String = flags
            .sampler
            .clone()
            .or(parse_key(&file, "sampler")?)
            .unwrap_or_else(|| "gs".to_string());
        let sampler_kind = SamplerKind::from_str(&sampler_name)?;

        let batch_size = flags
            .batch_size
            .or(parse_key(&file, "batch_size")?)
            .unwrap_or(64);
        let k = flags.k.or(parse_key(&file, "k")?).unwrap_or(2);
        let margin = flags.margin.or(parse_key(&file, "margin")?).unwrap_or(16.0);
        let clip = match (&flags.clip, file.get("clip")) {
            (Some(raw), _) => parse_clip(raw)?,
            (None, Some(raw)) => parse_clip(raw)?,
            (None, None) => Some(8.0),
        };
        let epochs = flags.epochs.or(parse_key(&file, "epochs")?).unwrap_or(15);
        let decay_epoch = flags
            .decay_epoch
            .or(parse_key(&file, "decay_epoch")?)
            .unwrap_or(10.min(epochs));
        let decay_factor = flags
            .decay_factor
            .or(parse_key(&file, "decay_factor")?)
            .unwrap_or(0.1);
        let lr = flags.lr.or(parse_key(&file, "lr")?).unwrap_or(0.01);
        let seed = flags.seed.or(parse_key(&file, "seed")?).unwrap_or(0);
        let metric_name: String = flags
            .metric
            .clone()
            .or(parse_key(&file, "metric")?)
            .unwrap_or_else(|| "euclidean".to_string());
        let metric = MetricKind::from_str(&metric_name)?;
        let rerank_name: String = flags
            .rerank
            .clone()
            .or(parse_key(&file, "rerank")?)
            .unwrap_or_else(|| "kreciprocal".to_string());
        let rerank_mode = RerankMode::from_str(&rerank_name)?;
        let rerank = RerankConfig {
            mode: rerank_mode,
            k1: flags.k1.or(parse_key(&file, "k1")?).unwrap_or(20),
            k2: flags.k2.or(parse_key(&file, "k2")?).unwrap_or(6),
            lambda: flags
                .rerank_lambda
                .or(parse_key(&file, "rerank_lambda")?)
                .unwrap_or(0.3),
        };
        let model_name: String = flags
            .model
            .clone()
            .or(parse_key(&file, "model")?)
            .unwrap_or_else(|| "linear".to_string());
        let model_kind = ModelKind::from_str(&model_name)?;
        let dim_out = flags.dim_out.or(parse_key(&file, "dim_out")?).unwrap_or(128);
        let hidden = flags
            .hidden
            .or(parse_key(&file, "hidden")?)
            .unwrap_or(dim_out);
        let bias = flags.bias.or(parse_bool(&file, "bias")?).unwrap_or(false);
        let l2norm = flags
            .l2norm
            .or(parse_bool(&file, "l2norm")?)
            .unwrap_or(false);
        let match_gs_iters = flags.match_gs_iters
            || parse_bool(&file, "match_gs_iters")?.unwrap_or(false);
        let clusters = flags
            .clusters
            .or(parse_key(&file, "clusters")?)
            .unwrap_or(10);
        let queries_per_class = flags
            .queries_per_class
            .or(parse_key(&file, "queries_per_class")?)
            .unwrap_or(1);
        let runs: usize = parse_key(&file, "runs")?.unwrap_or(4);
        let holdout_per_class: usize = parse_key(&file, "holdout_per_class")?.unwrap_or(3);

        let train = TrainConfig {
            lr,
            decay_factor,
            decay_epoch,
            total_epochs: epochs,
            clip_threshold: clip,
            seed,
            eval_mode_exemplars: true,
            metric,
            rerank,
            loss: LossConfig { margin },
            sampler: SamplerConfig {
                batch_size,
                instances_per_class: k,
                seed,
            },
            model: ModelConfig {
                kind: model_kind,
                embed_dim: dim_out,
                hidden_dim: hidden,
                bias,
                l2_normalize_output: l2norm,
            },
            match_gs_iters,
            cluster_count: clusters,
        };
        train.validate()?;

        Ok(Self {
            train,
            sampler_kind,
            queries_per_class,
            runs,
            holdout_per_class,
        })
    }

    /// Deterministic key=value echo of the resolved configuration.
    pub fn manifest_body(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "sampler = {}", self.sampler_kind.name());
        let _ = writeln!(s, "batch_size = {}", t.sampler.batch_size);
        let _ = writeln!(s, "k = {}", t.sampler.instances_per_class);
        let _ = writeln!(s, "margin = {}", t.loss.margin);
        match t.clip_threshold {
            Some(v) => {
                let _ = writeln!(s, "clip = {v}");
            }
            None => {
                let _ = writeln!(s, "clip = none");
            }
        }
        let _ = writeln!(s, "epochs = {}", t.total_epochs);
        let _ = writeln!(s, "decay_epoch = {}", t.decay_epoch);
        let _ = writeln!(s, "decay_factor = {}", t.decay_factor);
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "metric = {}", t.metric.name());
        let rerank_name = match t.rerank.mode {
            RerankMode::None => "none",
            RerankMode::KReciprocal => "kreciprocal",
        };
        let _ = writeln!(s, "rerank = {rerank_name}");
        let _ = writeln!(s, "k1 = {}", t.rerank.k1);
        let _ = writeln!(s, "k2 = {}", t.rerank.k2);
        let _ = writeln!(s, "rerank_lambda = {}", t.rerank.lambda);
        let _ = writeln!(s, "model = {}", t.model.kind.name());
        let _ = writeln!(s, "dim_out = {}", t.model.embed_dim);
        let _ = writeln!(s, "hidden = {}", t.model.hidden_dim);
        let _ = writeln!(s, "bias = {}", t.model.bias);
        let _ = writeln!(s, "l2norm = {}", t.model.l2_normalize_output);
        let _ = writeln!(s, "match_gs_iters = {}", t.match_gs_iters);
        let _ = writeln!(s, "clusters = {}", t.cluster_count);
        let _ = writeln!(s, "queries_per_class = {}", self.queries_per_class);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "holdout_per_class = {}", self.holdout_per_class);
        s
    }
}
