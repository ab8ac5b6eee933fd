//! Batch-hard mined triplet loss over a mini-batch similarity matrix.
//!
//! For every anchor the hardest positive is the least-similar sample of its
//! own class and the hardest negative is the most-similar sample of any other
//! class; the hinge `max(0, margin - hardest_pos + hardest_neg)` is summed
//! over all anchors. Similarity is `-distance`, so it is unbounded above and
//! below and the margin may be any real.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metric::{pairwise_distance, EmbeddingMatrix, MetricKind};

/// B x B similarity values plus the class label of every batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub labels: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix, labels: Vec<usize>) -> Result<Self> {
        let sim = Self { values, labels };
        sim.validate()?;
        Ok(sim)
    }

    /// Builds the similarity matrix `s = -distance` over batch embeddings.
    pub fn from_embeddings(
        emb: &EmbeddingMatrix,
        labels: &[usize],
        kind: MetricKind,
    ) -> Result<Self> {
        let dist = pairwise_distance(emb, emb, kind)?;
        let mut values = dist.values;
        for v in values.data_mut() {
            *v = -*v;
        }
        Self::new(values, labels.to_vec())
    }

    fn validate(&self) -> Result<()> {
        let b = self.values.rows();
        if self.values.cols() != b {
            return Err(Error::Validation("similarity matrix must be square".into()));
        }
        if self.labels.len() != b {
            return Err(Error::Validation(format!(
                "{} labels for a {b}x{b} similarity matrix",
                self.labels.len()
            )));
        }
        if !self.values.is_finite() {
            return Err(Error::NonFinite("similarity matrix".into()));
        }
        // Every class needs K >= 2 instances (an anchor without a positive is
        // undefined) and at least two classes must be present.
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if counts.len() < 2 {
            return Err(Error::Validation(
                "batch must contain at least 2 classes".into(),
            ));
        }
        let k = *counts.values().next().unwrap();
        if counts.values().any(|&n| n != k) {
            return Err(Error::Validation(format!(
                "class counts must all equal K, got {:?}",
                counts.values().collect::<Vec<_>>()
            )));
        }
        if k < 2 {
            return Err(Error::Validation(
                "anchor has no positive: every class needs K >= 2 instances".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        // Inside the stable region of the margin sweep; not a published constant.
        Self { margin: 16.0 }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        Ok(())
    }
}

/// Loss value, its gradient with respect to the similarity entries, and the
/// count of anchors whose hinge is active.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_similarity: Matrix,
    pub active_count: usize,
    pub anchors_total: usize,
}

impl LossOutput {
    pub fn active_fraction(&self) -> f64 {
        if self.anchors_total == 0 {
            0.0
        } else {
            self.active_count as f64 / self.anchors_total as f64
        }
    }

    pub fn mean(&self) -> f64 {
        if self.anchors_total == 0 {
            0.0
        } else {
            self.value / self.anchors_total as f64
        }
    }
}

/// Batch-hard triplet loss.
///
/// Ties at the argmin/argmax resolve to the lowest index; a hinge that is
/// exactly zero counts as inactive and contributes no gradient.
pub fn batch_hard_triplet(sim: &SimilarityMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    sim.validate()?;
    cfg.validate()?;
    let b = sim.labels.len();
    let mut grad = Matrix::zeros(b, b);
    let mut value = 0.0;
    let mut active_count = 0;

    for a in 0..b {
        let row = sim.values.row(a);
        let class = sim.labels[a];
        let mut hard_pos: Option<(usize, f64)> = None;
        let mut hard_neg: Option<(usize, f64)> = None;
        for j in 0..b {
            if sim.labels[j] == class {
                if j != a && hard_pos.map_or(true, |(_, v)| row[j] < v) {
                    hard_pos = Some((j, row[j]));
                }
            } else if hard_neg.map_or(true, |(_, v)| row[j] > v) {
                hard_neg = Some((j, row[j]));
            }
        }
        let (p, hp) = hard_pos.expect("validated: every anchor has a positive");
        let (n, hn) = hard_neg.expect("validated: at least two classes");
        let term = cfg.margin - hp + hn;
        if term > 0.0 {
            value += term;
            active_count += 1;
            *grad.row_mut(a).get_mut(p).unwrap() -= 1.0;
            *grad.row_mut(a).get_mut(n).unwrap() += 1.0;
        }
    }

    Ok(LossOutput {
        value,
        grad_similarity: grad,
        active_count,
        anchors_total: b,
    })
}

/// Reference implementation that enumerates every (anchor, positive,
/// negative) triple and keeps the most violating pair per anchor. Kept free
/// of the argmin/argmax shortcuts so it can serve as an independent check of
/// [`batch_hard_triplet`].
pub fn brute_force_triplet_oracle(sim: &SimilarityMatrix, cfg: &LossConfig) -> Result<LossOutput> {
    sim.validate()?;
    cfg.validate()?;
    let b = sim.labels.len();
    let mut grad = Matrix::zeros(b, b);
    let mut value = 0.0;
    let mut active_count = 0;

    for a in 0..b {
        let row = sim.values.row(a);
        let class = sim.labels[a];
        let mut best: Option<(usize, usize, f64)> = None;
        for p in 0..b {
            if p == a || sim.labels[p] != class {
                continue;
            }
            for n in 0..b {
                if sim.labels[n] == class {
                    continue;
                }
                let violation = row[n] - row[p];
                if best.map_or(true, |(_, _, v)| violation > v) {
                    best = Some((p, n, violation));
                }
            }
        }
        let (p, n, _) = best.expect("validated batch structure");
        let term = cfg.margin - row[p] + row[n];
        if term > 0.0 {
            value += term;
            active_count += 1;
            *grad.row_mut(a).get_mut(p).unwrap() -= 1.0;
            *grad.row_mut(a).get_mut(n).unwrap() += 1.0;
        }
    }

    Ok(LossOutput {
        value,
        grad_similarity: grad,
        active_count,
        anchors_total: b,
    })
}
