//! Pairwise distances between embeddings, the re-ranking hook applied before
//! neighbor selection, and diagonal masking.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};

/// Distance kind used for both the class graph and the loss similarity
/// (similarity is `-distance`, so it ranges over all reals).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Euclidean,
    CosineDistance,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::CosineDistance => "cosine",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "cosine" => Ok(MetricKind::CosineDistance),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// M x d matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() < 1 {
            return Err(Error::Validation("embedding dimension must be >= 1".into()));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Pairwise distance matrix, tagged with the metric that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Matrix,
    pub kind: MetricKind,
}

impl DistanceMatrix {
    pub fn is_square(&self) -> bool {
        self.values.rows() == self.values.cols()
    }
}

/// Re-ranking mode for the distance matrix used in graph construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankMode {
    None,
    KReciprocal,
}

impl std::str::FromStr for RerankMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RerankMode::None),
            "kreciprocal" => Ok(RerankMode::KReciprocal),
            other => Err(Error::Config(format!("unknown rerank mode {other:?}"))),
        }
    }
}

/// Settings for k-reciprocal re-ranking. `lambda` weights the original
/// distance; `1 - lambda` weights the Jaccard term.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub mode: RerankMode,
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            mode: RerankMode::KReciprocal,
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankConfig {
    pub fn none() -> Self {
        Self {
            mode: RerankMode::None,
            ..Self::default()
        }
    }

    /// Caps `k1` at `m - 1` (and `k2` at the capped `k1`) so the defaults
    /// remain usable on small exemplar sets.
    pub fn capped_for(&self, m: usize) -> Self {
        let k1 = self.k1.min(m.saturating_sub(1)).max(1);
        Self {
            mode: self.mode,
            k1,
            k2: self.k2.min(k1).max(1),
            lambda: self.lambda,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.k1 >= m {
            return Err(Error::Validation(format!(
                "k1 {} must be below the matrix size {m}",
                self.k1
            )));
        }
        if self.k1 < 1 || self.k2 < 1 || self.k2 > self.k1 {
            return Err(Error::Validation(format!(
                "need 1 <= k2 <= k1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Computes the pairwise distance matrix between the rows of `a` and `b`.
///
/// Cosine distance treats a zero vector as being at distance 1 from
/// everything, so top-k selection never sees NaN.
pub fn pairwise_distance(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    kind: MetricKind,
) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "embedding dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (ma, mb) = (a.len(), b.len());
    let mut values = Matrix::zeros(ma, mb);
    // Rows are independent and each accumulates sequentially, so the result
    // does not depend on the parallel schedule.
    match kind {
        MetricKind::Euclidean => {
            values
                .data_mut()
                .par_chunks_mut(mb.max(1))
                .enumerate()
                .for_each(|(i, out)| {
                    let ra = a.values.row(i);
                    for j in 0..mb {
                        let rb = b.values.row(j);
                        let mut s = 0.0;
                        for k in 0..ra.len() {
                            let d = ra[k] - rb[k];
                            s += d * d;
                        }
                        out[j] = s.sqrt();
                    }
                });
        }
        MetricKind::CosineDistance => {
            let na: Vec<f64> = (0..ma).map(|i| norm2(a.values.row(i))).collect();
            let nb: Vec<f64> = (0..mb).map(|j| norm2(b.values.row(j))).collect();
            values
                .data_mut()
                .par_chunks_mut(mb.max(1))
                .enumerate()
                .for_each(|(i, out)| {
                    let ra = a.values.row(i);
                    for j in 0..mb {
                        out[j] = if na[i] == 0.0 || nb[j] == 0.0 {
                            1.0
                        } else {
                            let cos =
                                (dot(ra, b.values.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0);
                            1.0 - cos
                        };
                    }
                });
        }
    }
    Ok(DistanceMatrix { values, kind })
}

/// Applies the configured re-ranking to a square distance matrix.
///
/// `RerankMode::None` returns the input unchanged. `KReciprocal` mixes the
/// original distances with a Jaccard distance over k-reciprocal expanded
/// neighborhoods: `out = lambda * original + (1 - lambda) * jaccard`.
pub fn rerank(d: &DistanceMatrix, cfg: &RerankConfig) -> Result<DistanceMatrix> {
    if let RerankMode::None = cfg.mode {
        return Ok(d.clone());
    }
    if !d.is_square() {
        return Err(Error::Validation("rerank needs a square matrix".into()));
    }
    let m = d.values.rows();
    cfg.validate(m)?;
    if !d.values.is_finite() {
        return Err(Error::NonFinite("distance matrix".into()));
    }

    // Only the first k1+1 ranks are ever consulted (k2 <= k1 < k1+1).
    let ranked = rank_rows(&d.values, cfg.k1 + 1);
    let half = ((cfg.k1 as f64) / 2.0).round() as usize;

    // k-reciprocal neighborhoods on the raw ranking (self included at rank 0).
    let recip: Vec<Vec<usize>> = (0..m)
        .map(|i| k_reciprocal(&ranked, i, cfg.k1))
        .collect();
    let recip_half: Vec<Vec<usize>> = (0..m)
        .map(|i| k_reciprocal(&ranked, i, half.max(1)))
        .collect();

    // Expanded neighborhood and Gaussian-weighted membership vector per row.
    let mut v: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    for i in 0..m {
        // Overlap is measured against the original reciprocal set, while the
        // membership set grows with every accepted candidate.
        let mut in_base = vec![false; m];
        for &j in &recip[i] {
            in_base[j] = true;
        }
        let mut member = in_base.clone();
        for &q in &recip[i] {
            let cand = &recip_half[q];
            let overlap = cand.iter().filter(|&&x| in_base[x]).count();
            if 3 * overlap > 2 * cand.len() {
                for &x in cand {
                    member[x] = true;
                }
            }
        }
        let row = d.values.row(i);
        let scale = row.iter().copied().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let mut entries: Vec<(usize, f64)> = (0..m)
            .filter(|&j| member[j])
            .map(|j| (j, (-row[j] / scale).exp()))
            .collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        for e in &mut entries {
            e.1 /= total;
        }
        v.push(entries);
    }

    // Local query expansion over the k2 nearest rows (self included).
    if cfg.k2 > 1 {
        let mut expanded: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        let mut acc = vec![0.0f64; m];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..m {
            for &q in &ranked[i][..cfg.k2] {
                for &(j, w) in &v[q] {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += w;
                }
            }
            touched.sort_unstable();
            let inv = 1.0 / cfg.k2 as f64;
            expanded.push(touched.iter().map(|&j| (j, acc[j] * inv)).collect());
            for &j in &touched {
                acc[j] = 0.0;
            }
            touched.clear();
        }
        v = expanded;
    }

    // Jaccard distance via an inverted index over nonzero columns. Rows are
    // written independently, so the parallel schedule cannot change values.
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, row) in v.iter().enumerate() {
        for &(j, w) in row {
            columns[j].push((i, w));
        }
    }
    let mut out = Matrix::zeros(m, m);
    out.data_mut()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, row_out)| {
            let mut min_sum = vec![0.0f64; m];
            for &(col, wi) in &v[i] {
                for &(j, wj) in &columns[col] {
                    min_sum[j] += wi.min(wj);
                }
            }
            let orig = d.values.row(i);
            for j in 0..m {
                let jaccard = 1.0 - min_sum[j] / (2.0 - min_sum[j]);
                row_out[j] = cfg.lambda * orig[j] + (1.0 - cfg.lambda) * jaccard;
            }
        });

    Ok(DistanceMatrix {
        values: out,
        kind: d.kind,
    })
}

/// Per-row ranking by (value, column) ascending, truncated to the `prefix`
/// nearest entries; a partial selection keeps large matrices cheap.
fn rank_rows(values: &Matrix, prefix: usize) -> Vec<Vec<usize>> {
    let m = values.rows();
    let prefix = prefix.min(m);
    (0..m)
        .into_par_iter()
        .map(|i| {
            let row = values.row(i);
            let mut order: Vec<usize> = (0..m).collect();
            let cmp = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
            if prefix < m {
                order.select_nth_unstable_by(prefix - 1, cmp);
                order.truncate(prefix);
            }
            order.sort_unstable_by(cmp);
            order
        })
        .collect()
}

/// `R(i, k)`: the members of i's (k+1)-nearest list (self included) that also
/// list i among their own (k+1)-nearest.
fn k_reciprocal(ranked: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    let k = k.min(ranked.len() - 1);
    ranked[i][..=k]
        .iter()
        .copied()
        .filter(|&j| ranked[j][..=k].contains(&i))
        .collect()
}

/// Replaces every diagonal entry with `+inf` so a row's own class can never
/// be selected as a neighbor. Idempotent.
pub fn mask_diagonal(d: &DistanceMatrix) -> Result<DistanceMatrix> {
    if !d.is_square() {
        return Err(Error::Validation(
            "mask_diagonal needs a square matrix".into(),
        ));
    }
    let mut out = d.clone();
    for i in 0..out.values.rows() {
        out.values.set(i, i, f64::INFINITY);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn emb(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn euclidean_three_four_five() {
        let a = emb(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let d = pairwise_distance(&a, &a, MetricKind::Euclidean).unwrap();
        assert_eq!(d.values.row(0), &[0.0, 5.0]);
        assert_eq!(d.values.row(1), &[5.0, 0.0]);
    }

    #[test]
    fn cosine_parallel_and_antiparallel() {
        let a = emb(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![-3.0, 0.0]]);
        let d = pairwise_distance(&a, &a, MetricKind::CosineDistance).unwrap();
        assert!((d.values.get(0, 1)).abs() < 1e-12);
        assert!((d.values.get(0, 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_convention() {
        let a = emb(&[vec![0.0, 0.0], vec![1.0, 2.0]]);
        let d = pairwise_distance(&a, &a, MetricKind::CosineDistance).unwrap();
        assert_eq!(d.values.get(0, 1), 1.0);
        assert_eq!(d.values.get(1, 0), 1.0);
        assert_eq!(d.values.get(0, 0), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = emb(&[vec![0.0, 0.0]]);
        let b = emb(&[vec![0.0, 0.0, 0.0]]);
        assert!(pairwise_distance(&a, &b, MetricKind::Euclidean).is_err());
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows_a: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let rows_b: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let a = emb(&rows_a);
        let b = emb(&rows_b);
        for kind in [MetricKind::Euclidean, MetricKind::CosineDistance] {
            let d = pairwise_distance(&a, &b, kind).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let expect = match kind {
                        MetricKind::Euclidean => rows_a[i]
                            .iter()
                            .zip(&rows_b[j])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt(),
                        MetricKind::CosineDistance => {
                            let dot: f64 =
                                rows_a[i].iter().zip(&rows_b[j]).map(|(x, y)| x * y).sum();
                            let na = rows_a[i].iter().map(|x| x * x).sum::<f64>().sqrt();
                            let nb = rows_b[j].iter().map(|x| x * x).sum::<f64>().sqrt();
                            1.0 - dot / (na * nb)
                        }
                    };
                    assert!(
                        (d.values.get(i, j) - expect).abs() < 1e-10,
                        "{kind:?} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn rerank_none_is_identity() {
        let d = DistanceMatrix {
            values: Matrix::from_vec(2, 2, vec![0.0, 1.5, 1.5, 0.0]),
            kind: MetricKind::Euclidean,
        };
        let out = rerank(&d, &RerankConfig::none()).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn rerank_lambda_one_keeps_original() {
        let a = emb(&[
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![5.0, 5.0],
            vec![5.5, 4.9],
            vec![-4.0, 6.0],
        ]);
        let d = pairwise_distance(&a, &a, MetricKind::Euclidean).unwrap();
        let cfg = RerankConfig {
            mode: RerankMode::KReciprocal,
            k1: 3,
            k2: 2,
            lambda: 1.0,
        };
        let out = rerank(&d, &cfg).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((out.values.get(i, j) - d.values.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rerank_rejects_oversized_k1() {
        let d = DistanceMatrix {
            values: Matrix::zeros(3, 3),
            kind: MetricKind::Euclidean,
        };
        let cfg = RerankConfig {
            mode: RerankMode::KReciprocal,
            k1: 3,
            k2: 2,
            lambda: 0.3,
        };
        assert!(rerank(&d, &cfg).is_err());
    }

    #[test]
    fn mask_diagonal_sets_inf_and_is_idempotent() {
        let d = DistanceMatrix {
            values: Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]),
            kind: MetricKind::Euclidean,
        };
        let masked = mask_diagonal(&d).unwrap();
        assert_eq!(masked.values.get(0, 0), f64::INFINITY);
        assert_eq!(masked.values.get(0, 1), 1.0);
        let twice = mask_diagonal(&masked).unwrap();
        assert_eq!(twice, masked);
    }

    #[test]
    fn masked_argmin_is_off_diagonal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..10);
            let mut values = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        values.set(i, j, rng.random_range(0.0..10.0));
                    }
                }
            }
            let masked = mask_diagonal(&DistanceMatrix {
                values,
                kind: MetricKind::Euclidean,
            })
            .unwrap();
            for i in 0..n {
                let row = masked.values.row(i);
                let argmin = (0..n)
                    .min_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                assert_ne!(argmin, i);
            }
        }
    }
}
