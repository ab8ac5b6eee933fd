//! Retrieval evaluation: CMC Rank-1, mean average precision, and the pooled
//! mAcc aggregate, under a single-query protocol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_index, LabeledFeatureSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metric::{pairwise_distance, EmbeddingMatrix, MetricKind};
use crate::model::EmbeddingModel;

/// Disjoint query/gallery split sharing one class-id space.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub query: LabeledFeatureSet,
    pub gallery: LabeledFeatureSet,
}

/// Retrieval quality over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rank1: f64,
    pub map: f64,
    pub num_queries: usize,
    pub per_query_ap: Vec<f64>,
}

/// Carves `holdout_per_class` seeded random samples of every class out of
/// `set`, returning `(train_remainder, holdout_pool)`. The pool feeds
/// [`make_split`] so evaluation never sees training samples.
pub fn make_holdout(
    set: &LabeledFeatureSet,
    holdout_per_class: usize,
    seed: u64,
) -> Result<(LabeledFeatureSet, LabeledFeatureSet)> {
    set.validate()?;
    if holdout_per_class < 1 {
        return Err(Error::Config("holdout_per_class must be >= 1".into()));
    }
    let index = build_index(set)?;
    for (c, samples) in index.index_dict.iter().enumerate() {
        if samples.len() <= holdout_per_class {
            return Err(Error::Validation(format!(
                "class {c} has {} samples; needs more than {holdout_per_class}",
                samples.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut held_rows = Vec::new();
    let mut held_labels = Vec::new();
    for (c, samples) in index.index_dict.iter().enumerate() {
        let chosen: std::collections::BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, samples.len(), holdout_per_class)
                .iter()
                .collect();
        for (pos, &s) in samples.iter().enumerate() {
            if chosen.contains(&pos) {
                held_rows.push(set.features.row(s).to_vec());
                held_labels.push(c);
            } else {
                train_rows.push(set.features.row(s).to_vec());
                train_labels.push(c);
            }
        }
    }
    Ok((
        LabeledFeatureSet {
            features: Matrix::from_rows(&train_rows),
            labels: train_labels,
            original_ids: set.original_ids.clone(),
        },
        LabeledFeatureSet {
            features: Matrix::from_rows(&held_rows),
            labels: held_labels,
            original_ids: set.original_ids.clone(),
        },
    ))
}

/// Holds out `queries_per_class` seeded random samples of every class as
/// queries; the rest form the gallery.
pub fn make_split(
    set: &LabeledFeatureSet,
    queries_per_class: usize,
    seed: u64,
) -> Result<EvalSplit> {
    set.validate()?;
    if queries_per_class < 1 {
        return Err(Error::Config("queries_per_class must be >= 1".into()));
    }
    let index = build_index(set)?;
    for (c, samples) in index.index_dict.iter().enumerate() {
        if samples.len() <= queries_per_class {
            return Err(Error::Validation(format!(
                "class {c} has {} samples; needs more than {queries_per_class}",
                samples.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut query_rows = Vec::new();
    let mut query_labels = Vec::new();
    let mut gallery_rows = Vec::new();
    let mut gallery_labels = Vec::new();
    for (c, samples) in index.index_dict.iter().enumerate() {
        let chosen: std::collections::BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, samples.len(), queries_per_class)
                .iter()
                .collect();
        for (pos, &s) in samples.iter().enumerate() {
            if chosen.contains(&pos) {
                query_rows.push(set.features.row(s).to_vec());
                query_labels.push(c);
            } else {
                gallery_rows.push(set.features.row(s).to_vec());
                gallery_labels.push(c);
            }
        }
    }
    Ok(EvalSplit {
        query: LabeledFeatureSet {
            features: Matrix::from_rows(&query_rows),
            labels: query_labels,
            original_ids: set.original_ids.clone(),
        },
        gallery: LabeledFeatureSet {
            features: Matrix::from_rows(&gallery_rows),
            labels: gallery_labels,
            original_ids: set.original_ids.clone(),
        },
    })
}

/// Embeds both sides with the model and ranks the gallery per query.
pub fn evaluate(model: &EmbeddingModel, split: &EvalSplit, kind: MetricKind) -> Result<EvalReport> {
    let query_emb = model.forward(&split.query.features)?;
    let gallery_emb = model.forward(&split.gallery.features)?;
    evaluate_embeddings(
        &query_emb,
        &split.query.labels,
        &gallery_emb,
        &split.gallery.labels,
        kind,
    )
}

/// Core ranking routine. For each query the gallery is sorted ascending by
/// distance (ties broken by gallery index); Rank-1 counts a hit when the top
/// item shares the query class; AP averages precision at every relevant rank.
pub fn evaluate_embeddings(
    query: &EmbeddingMatrix,
    query_labels: &[usize],
    gallery: &EmbeddingMatrix,
    gallery_labels: &[usize],
    kind: MetricKind,
) -> Result<EvalReport> {
    if query.len() != query_labels.len() || gallery.len() != gallery_labels.len() {
        return Err(Error::Validation("labels do not match embeddings".into()));
    }
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Validation("empty query or gallery".into()));
    }
    let dist = pairwise_distance(query, gallery, kind)?;
    let g = gallery.len();
    let mut rank1_hits = 0usize;
    let mut per_query_ap = Vec::with_capacity(query.len());

    for (q, &q_class) in query_labels.iter().enumerate() {
        let relevant_total = gallery_labels.iter().filter(|&&c| c == q_class).count();
        if relevant_total == 0 {
            return Err(Error::Validation(format!(
                "query class {q_class} has no gallery match"
            )));
        }
        let row = dist.values.row(q);
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));

        if gallery_labels[order[0]] == q_class {
            rank1_hits += 1;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank0, &idx) in order.iter().enumerate() {
            if gallery_labels[idx] == q_class {
                hits += 1;
                precision_sum += hits as f64 / (rank0 + 1) as f64;
            }
        }
        per_query_ap.push(precision_sum / relevant_total as f64);
    }

    let num_queries = query.len();
    let map = per_query_ap.iter().sum::<f64>() / num_queries as f64;
    Ok(EvalReport {
        rank1: rank1_hits as f64 / num_queries as f64,
        map,
        num_queries,
        per_query_ap,
    })
}

/// Pooled mean of every Rank-1 and mAP value across the given reports.
pub fn macc(reports: &[EvalReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Validation("macc needs at least one report".into()));
    }
    let sum: f64 = reports.iter().map(|r| r.rank1 + r.map).sum();
    Ok(sum / (2 * reports.len()) as f64)
}
