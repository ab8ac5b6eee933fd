//! Checks the k-reciprocal re-ranking against a direct, set-based
//! implementation of the published procedure, written independently of the
//! inverted-index production path.

use gsbench_core::matrix::Matrix;
use gsbench_core::metric::{
    mask_diagonal, pairwise_distance, rerank, DistanceMatrix, EmbeddingMatrix, MetricKind,
    RerankConfig, RerankMode,
};
use std::collections::BTreeSet;

/// Straight transcription of the k-reciprocal encoding procedure: ranked
/// lists, reciprocal neighborhoods, 2/3-overlap expansion, Gaussian weights,
/// local query expansion, then Jaccard distance computed from dense rows.
fn rerank_oracle(d: &Matrix, k1: usize, k2: usize, lambda: f64) -> Matrix {
    let m = d.rows();
    let ranked: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let row = d.row(i);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            order
        })
        .collect();
    let knn = |i: usize, k: usize| -> BTreeSet<usize> {
        ranked[i][..=k.min(m - 1)].iter().copied().collect()
    };
    let reciprocal = |i: usize, k: usize| -> BTreeSet<usize> {
        knn(i, k)
            .into_iter()
            .filter(|&j| knn(j, k).contains(&i))
            .collect()
    };

    let half = ((k1 as f64) / 2.0).round().max(1.0) as usize;
    let mut v = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        let base = reciprocal(i, k1);
        let mut expanded = base.clone();
        for &q in &base {
            let cand = reciprocal(q, half);
            let overlap = cand.intersection(&base).count();
            if overlap as f64 > (2.0 / 3.0) * cand.len() as f64 {
                expanded.extend(cand);
            }
        }
        let scale = d
            .row(i)
            .iter()
            .copied()
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut total = 0.0;
        for &j in &expanded {
            v[i][j] = (-d.get(i, j) / scale).exp();
            total += v[i][j];
        }
        for w in &mut v[i] {
            *w /= total;
        }
    }

    if k2 > 1 {
        let mut expanded = vec![vec![0.0f64; m]; m];
        for i in 0..m {
            for &q in &ranked[i][..k2] {
                for j in 0..m {
                    expanded[i][j] += v[q][j] / k2 as f64;
                }
            }
        }
        v = expanded;
    }

    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut minsum = 0.0;
            let mut maxsum = 0.0;
            for c in 0..m {
                minsum += v[i][c].min(v[j][c]);
                maxsum += v[i][c].max(v[j][c]);
            }
            let jaccard = 1.0 - minsum / maxsum;
            out.set(i, j, lambda * d.get(i, j) + (1.0 - lambda) * jaccard);
        }
    }
    out
}

fn masked_argmin(values: &Matrix, i: usize) -> usize {
    let row = values.row(i);
    (0..values.rows())
        .filter(|&j| j != i)
        .min_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)))
        .unwrap()
}

#[test]
fn well_separated_points_keep_their_nearest_neighbor() {
    let rows = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.3],
        vec![10.0, 10.0],
        vec![11.0, 10.4],
        vec![-8.0, 14.0],
    ];
    let emb = EmbeddingMatrix::new(Matrix::from_rows(&rows)).unwrap();
    let d = pairwise_distance(&emb, &emb, MetricKind::Euclidean).unwrap();
    let cfg = RerankConfig {
        mode: RerankMode::KReciprocal,
        k1: 3,
        k2: 2,
        lambda: 0.3,
    };
    let reranked = rerank(&d, &cfg).unwrap();
    let oracle = rerank_oracle(&d.values, 3, 2, 0.3);

    for i in 0..5 {
        for j in 0..5 {
            assert!(
                (reranked.values.get(i, j) - oracle.get(i, j)).abs() < 1e-9,
                "({i},{j}): {} vs {}",
                reranked.values.get(i, j),
                oracle.get(i, j)
            );
        }
        assert_eq!(
            masked_argmin(&reranked.values, i),
            masked_argmin(&d.values, i),
            "re-ranking must not change the nearest neighbor of point {i}"
        );
    }
}

#[test]
fn oracle_agreement_on_random_matrices() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for round in 0..20 {
        let m = rng.random_range(5..24);
        let dim = rng.random_range(2..6);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let emb = EmbeddingMatrix::new(Matrix::from_rows(&rows)).unwrap();
        let d = pairwise_distance(&emb, &emb, MetricKind::Euclidean).unwrap();
        let k1 = rng.random_range(2..m.min(12));
        let k2 = rng.random_range(1..=k1.min(6));
        let lambda = rng.random_range(0.0..=1.0);
        let cfg = RerankConfig {
            mode: RerankMode::KReciprocal,
            k1,
            k2,
            lambda,
        };
        let reranked = rerank(&d, &cfg).unwrap();
        let oracle = rerank_oracle(&d.values, k1, k2, lambda);
        for i in 0..m {
            for j in 0..m {
                assert!(
                    (reranked.values.get(i, j) - oracle.get(i, j)).abs() < 1e-9,
                    "round {round} ({i},{j}) k1={k1} k2={k2}"
                );
            }
        }
        // The re-ranked matrix still supports graph building.
        let masked = mask_diagonal(&DistanceMatrix {
            values: reranked.values.clone(),
            kind: MetricKind::Euclidean,
        })
        .unwrap();
        for i in 0..m {
            let min = masked
                .values
                .row(i)
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(min.is_finite(), "row {i} lost all finite entries");
        }
    }
}
