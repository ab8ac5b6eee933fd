//! Training loop: analytic gradients through the batch-hard loss, gradient
//! norm clipping, SGD with single-step decay, and the per-epoch plan drivers
//! for all three samplers.

use std::time::Instant;

use crate::data::{build_index, DatasetIndex, LabeledFeatureSet};
use crate::error::{Error, Result};
use crate::loss::{batch_hard_triplet, LossConfig, LossOutput, SimilarityMatrix};
use crate::matrix::{dot, norm2, Matrix};
use crate::metric::{
    mask_diagonal, pairwise_distance, rerank, EmbeddingMatrix, MetricKind, RerankConfig,
};
use crate::model::{EmbeddingModel, ModelConfig};
use crate::sampler::{
    build_class_graph, cluster_classes, cluster_epoch_plan, data_sized_num_batches, gs_epoch_plan,
    merge_small_clusters, pk_epoch_plan, select_exemplars, BatchPlan, SamplerConfig, SamplerKind,
};
use crate::seeding::{derive, derive_epoch, stream};

/// Flat parameter gradient with its Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl Gradient {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let norm = norm2(&values);
        Ok(Self { values, norm })
    }
}

/// Full training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_epoch: usize,
    pub total_epochs: usize,
    /// Gradient norm threshold T; `None` disables clipping.
    pub clip_threshold: Option<f64>,
    pub seed: u64,
    /// Kept for parity with pipelines whose backbone behaves differently in
    /// inference mode; the linear and mlp1 models here have no such layers,
    /// so exemplar extraction is identical either way.
    pub eval_mode_exemplars: bool,
    pub metric: MetricKind,
    pub rerank: RerankConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    /// PK/cluster epochs run `ceil(N/B)` batches by default; setting this
    /// matches their epoch length to the C iterations of graph sampling.
    pub match_gs_iters: bool,
    /// Cluster count M for the clustering baseline.
    pub cluster_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            decay_factor: 0.1,
            decay_epoch: 10,
            total_epochs: 15,
            clip_threshold: Some(8.0),
            seed: 0,
            eval_mode_exemplars: true,
            metric: MetricKind::Euclidean,
            rerank: RerankConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            match_gs_iters: false,
            cluster_count: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "decay_epoch {} exceeds total_epochs {}",
                self.decay_epoch, self.total_epochs
            )));
        }
        if let Some(t) = self.clip_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "clip threshold must be > 0, got {t}; disable clipping instead"
                )));
            }
        }
        if self.cluster_count < 1 {
            return Err(Error::Config("cluster_count must be >= 1".into()));
        }
        if !self.loss.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        Ok(())
    }
}

/// One optimizer-step row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub epoch: usize,
    pub iter: usize,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub active_fraction: f64,
    pub grad_norm_preclip: f64,
    pub clipped: bool,
}

/// Per-epoch wall-clock row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub plan_build_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub iterations: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl MetricsLog {
    /// Mean active-triplet fraction over one epoch's iterations.
    pub fn epoch_active_fraction(&self, epoch: usize) -> f64 {
        let rows: Vec<&IterRecord> = self
            .iterations
            .iter()
            .filter(|r| r.epoch == epoch)
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.active_fraction).sum::<f64>() / rows.len() as f64
    }

    pub fn epoch_mean_loss(&self, epoch: usize) -> f64 {
        let rows: Vec<&IterRecord> = self
            .iterations
            .iter()
            .filter(|r| r.epoch == epoch)
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.loss_mean).sum::<f64>() / rows.len() as f64
    }
}

/// Computes the loss of one mini-batch and its gradient with respect to all
/// model parameters, by the chain rule through `similarity = -distance` and
/// the embedding map.
pub fn loss_and_grad(
    model: &EmbeddingModel,
    features: &Matrix,
    labels: &[usize],
    metric: MetricKind,
    loss_cfg: &LossConfig,
) -> Result<(LossOutput, Gradient)> {
    let cache = model.forward_cached(features)?;
    let emb = EmbeddingMatrix {
        values: cache.e.clone(),
    };
    let sim = SimilarityMatrix::from_embeddings(&emb, labels, metric)?;
    let out = batch_hard_triplet(&sim, loss_cfg)?;
    let grad_e = similarity_backward(&cache.e, &out.grad_similarity, metric);
    let flat = model.backward(features, &cache, &grad_e);
    let grad = Gradient::new(flat)?;
    Ok((out, grad))
}

/// `d loss / d embeddings` given `d loss / d similarity`, for
/// `s(a, b) = -distance(e_a, e_b)`.
fn similarity_backward(e: &Matrix, grad_sim: &Matrix, kind: MetricKind) -> Matrix {
    let b = e.rows();
    let dim = e.cols();
    let mut out = Matrix::zeros(b, dim);
    match kind {
        MetricKind::Euclidean => {
            for a in 0..b {
                for j in 0..b {
                    let w = grad_sim.get(a, j);
                    if w == 0.0 {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for k in 0..dim {
                        let diff = e.get(a, k) - e.get(j, k);
                        d2 += diff * diff;
                    }
                    let d = d2.sqrt();
                    if d == 0.0 {
                        continue; // coincident points: subgradient 0
                    }
                    for k in 0..dim {
                        let u = (e.get(a, k) - e.get(j, k)) / d;
                        *out.row_mut(a).get_mut(k).unwrap() -= w * u;
                        *out.row_mut(j).get_mut(k).unwrap() += w * u;
                    }
                }
            }
        }
        MetricKind::CosineDistance => {
            let norms: Vec<f64> = (0..b).map(|i| norm2(e.row(i))).collect();
            for a in 0..b {
                for j in 0..b {
                    let w = grad_sim.get(a, j);
                    if w == 0.0 || norms[a] == 0.0 || norms[j] == 0.0 {
                        continue; // zero vectors sit at constant distance 1
                    }
                    let cos = dot(e.row(a), e.row(j)) / (norms[a] * norms[j]);
                    for k in 0..dim {
                        let ga = e.get(j, k) / (norms[a] * norms[j])
                            - cos * e.get(a, k) / (norms[a] * norms[a]);
                        let gj = e.get(a, k) / (norms[a] * norms[j])
                            - cos * e.get(j, k) / (norms[j] * norms[j]);
                        *out.row_mut(a).get_mut(k).unwrap() += w * ga;
                        *out.row_mut(j).get_mut(k).unwrap() += w * gj;
                    }
                }
            }
        }
    }
    out
}

/// Norm clipping: `g <- min(1, T / |g|) * g`. Zero gradients pass through.
pub fn clip_gradient(g: &Gradient, t: f64) -> Result<Gradient> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("clip threshold must be > 0, got {t}")));
    }
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    if g.norm <= t {
        return Ok(g.clone());
    }
    let scale = t / g.norm;
    Gradient::new(g.values.iter().map(|v| v * scale).collect())
}

/// Learning rate after the single decay step.
pub fn effective_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch >= cfg.decay_epoch {
        cfg.lr * cfg.decay_factor
    } else {
        cfg.lr
    }
}

/// One SGD update: `theta <- theta - lr(epoch) * g`.
pub fn sgd_step(
    model: &mut EmbeddingModel,
    g: &Gradient,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    model.add_scaled(&g.values, -effective_lr(cfg, epoch))
}

/// Snapshot handed to the per-iteration hook during training.
pub struct IterationEvent<'a> {
    pub epoch: usize,
    pub iter: usize,
    pub global_iter: usize,
    pub model: &'a EmbeddingModel,
    pub loss: &'a LossOutput,
}

/// Builds the epoch plan for the requested sampler using the current model.
pub fn build_epoch_plan(
    model: &EmbeddingModel,
    dataset: &LabeledFeatureSet,
    index: &DatasetIndex,
    cfg: &TrainConfig,
    kind: SamplerKind,
    epoch: usize,
) -> Result<BatchPlan> {
    let epoch_sampler = SamplerConfig {
        seed: derive_epoch(cfg.seed, stream::PLAN, epoch),
        ..cfg.sampler.clone()
    };
    let num_batches = if cfg.match_gs_iters {
        index.num_classes()
    } else {
        data_sized_num_batches(index, &cfg.sampler)
    };
    match kind {
        SamplerKind::Pk => pk_epoch_plan(index, &epoch_sampler, num_batches),
        SamplerKind::Gs => {
            let exemplars =
                select_exemplars(index, derive_epoch(cfg.seed, stream::EXEMPLARS, epoch));
            // Snapshot semantics: the whole graph is built from one frozen
            // set of parameters.
            let features = dataset.features.gather_rows(&exemplars);
            let emb = model.forward(&features)?;
            let dist = pairwise_distance(&emb, &emb, cfg.metric)?;
            let reranked = rerank(&dist, &cfg.rerank.capped_for(emb.len()))?;
            let masked = mask_diagonal(&reranked)?;
            let graph = build_class_graph(&masked, cfg.sampler.classes_per_batch())?;
            gs_epoch_plan(&graph, index, &epoch_sampler)
        }
        SamplerKind::Cluster => {
            let exemplars =
                select_exemplars(index, derive_epoch(cfg.seed, stream::EXEMPLARS, epoch));
            let features = dataset.features.gather_rows(&exemplars);
            let emb = model.forward(&features)?;
            let m = cfg.cluster_count.min(index.num_classes());
            let assignment = cluster_classes(
                &emb,
                m,
                derive_epoch(cfg.seed, stream::CLUSTER, epoch),
            )?;
            let merged =
                merge_small_clusters(&assignment, &emb, cfg.sampler.classes_per_batch())?;
            cluster_epoch_plan(&merged, index, &epoch_sampler, num_batches)
        }
    }
}

/// Trains an embedding model with the given sampler.
pub fn train(
    dataset: &LabeledFeatureSet,
    cfg: &TrainConfig,
    kind: SamplerKind,
) -> Result<(EmbeddingModel, MetricsLog)> {
    train_with_hook(dataset, cfg, kind, |_| {})
}

/// Like [`train`], with a callback after every optimizer step. The callback
/// sees the already-updated model.
pub fn train_with_hook<F: FnMut(&IterationEvent)>(
    dataset: &LabeledFeatureSet,
    cfg: &TrainConfig,
    kind: SamplerKind,
    mut hook: F,
) -> Result<(EmbeddingModel, MetricsLog)> {
    cfg.validate()?;
    dataset.validate()?;
    let index = build_index(dataset)?;
    cfg.sampler.validate(index.num_classes())?;

    let mut model = EmbeddingModel::init(
        &cfg.model,
        dataset.dim(),
        derive(cfg.seed, stream::MODEL_INIT),
    )?;
    let mut log = MetricsLog::default();
    let mut global_iter = 0usize;

    for epoch in 0..cfg.total_epochs {
        let plan_t0 = Instant::now();
        let plan = build_epoch_plan(&model, dataset, &index, cfg, kind, epoch)?;
        let plan_build_seconds = plan_t0.elapsed().as_secs_f64();

        let train_t0 = Instant::now();
        for (iter, batch) in plan.batches.iter().enumerate() {
            let indices: Vec<usize> = batch.iter().map(|&(i, _)| i).collect();
            let labels: Vec<usize> = batch.iter().map(|&(_, c)| c).collect();
            let features = dataset.features.gather_rows(&indices);

            let (loss_out, grad) = loss_and_grad(&model, &features, &labels, cfg.metric, &cfg.loss)
                .map_err(|e| Error::Diverged {
                    epoch,
                    iter,
                    detail: e.to_string(),
                })?;
            if !loss_out.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    iter,
                    detail: format!("loss value {}", loss_out.value),
                });
            }

            let preclip_norm = grad.norm;
            let (stepped, clipped) = match cfg.clip_threshold {
                Some(t) => {
                    let clipped_grad = clip_gradient(&grad, t).map_err(|e| Error::Diverged {
                        epoch,
                        iter,
                        detail: e.to_string(),
                    })?;
                    let was_clipped = preclip_norm > t;
                    (clipped_grad, was_clipped)
                }
                None => (grad, false),
            };
            sgd_step(&mut model, &stepped, epoch, cfg)?;
            global_iter += 1;

            log.iterations.push(IterRecord {
                epoch,
                iter,
                loss_sum: loss_out.value,
                loss_mean: loss_out.mean(),
                active_fraction: loss_out.active_fraction(),
                grad_norm_preclip: preclip_norm,
                clipped,
            });
            hook(&IterationEvent {
                epoch,
                iter,
                global_iter,
                model: &model,
                loss: &loss_out,
            });
        }
        let train_seconds = train_t0.elapsed().as_secs_f64();
        log.epochs.push(EpochRecord {
            epoch,
            plan_build_seconds,
            train_seconds,
        });
        log::debug!(
            "epoch {epoch}: plan {plan_build_seconds:.3}s train {train_seconds:.3}s mean loss {:.4}",
            log.epoch_mean_loss(epoch)
        );
    }

    Ok((model, log))
}
