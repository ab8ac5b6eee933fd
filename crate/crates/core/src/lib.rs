//! Desk-scale benchmark toolkit for mini-batch samplers in deep metric
//! learning: a graph-based sampler that pairs each class with its nearest
//! neighboring classes, the PK and clustering baselines, the batch-hard
//! triplet loss with analytic gradients, gradient-norm clipping, an SGD
//! trainer, and single-query retrieval evaluation (Rank-1 / mAP / mAcc).
//!
//! ```
//! use gsbench_core::{
//!     evaluate, generate_synthetic, make_holdout, make_split, train,
//!     SamplerConfig, SamplerKind, SyntheticConfig, TrainConfig,
//! };
//!
//! let full = generate_synthetic(&SyntheticConfig {
//!     num_classes: 12,
//!     num_groups: 3,
//!     ambient_dim: 8,
//!     nuisance_dim: 4,
//!     nuisance_sigma: 2.0,
//!     seed: 1,
//!     ..SyntheticConfig::default()
//! })?;
//! let (train_set, eval_pool) = make_holdout(&full, 2, 1)?;
//! let cfg = TrainConfig {
//!     total_epochs: 3,
//!     decay_epoch: 2,
//!     sampler: SamplerConfig { batch_size: 8, instances_per_class: 2, seed: 1 },
//!     ..TrainConfig::default()
//! };
//! let (model, log) = train(&train_set, &cfg, SamplerKind::Gs)?;
//! assert_eq!(log.iterations.len(), 12 * 3); // one batch per class per epoch
//!
//! let split = make_split(&eval_pool, 1, 1)?;
//! let report = evaluate(&model, &split, cfg.metric)?;
//! assert!(report.map > 0.0 && report.map <= 1.0);
//! # Ok::<(), gsbench_core::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod metric;
pub mod model;
pub mod sampler;
pub mod seeding;
pub mod trainer;

pub use data::{
    build_index, generate_synthetic, load_featureset, save_featureset, DatasetIndex,
    LabeledFeatureSet, SyntheticConfig,
};
pub use error::{Error, Result};
pub use eval::{
    evaluate, evaluate_embeddings, macc, make_holdout, make_split, EvalReport, EvalSplit,
};
pub use loss::{
    batch_hard_triplet, brute_force_triplet_oracle, LossConfig, LossOutput, SimilarityMatrix,
};
pub use matrix::Matrix;
pub use metric::{
    mask_diagonal, pairwise_distance, rerank, DistanceMatrix, EmbeddingMatrix, MetricKind,
    RerankConfig, RerankMode,
};
pub use model::{EmbeddingModel, ModelConfig, ModelKind};
pub use sampler::{
    build_class_graph, cluster_classes, cluster_epoch_plan, data_sized_num_batches, gs_epoch_plan,
    merge_small_clusters, pk_epoch_plan, select_exemplars, BatchPlan, ClassNeighborGraph,
    SamplerConfig, SamplerKind,
};
pub use trainer::{
    clip_gradient, effective_lr, loss_and_grad, sgd_step, train, train_with_hook, EpochRecord,
    Gradient, IterRecord, IterationEvent, MetricsLog, TrainConfig,
};
