//! Epoch batch-plan construction.
//!
//! Three samplers share the `BatchPlan` contract of P distinct classes times
//! K instances per batch:
//!
//! - graph sampling: one batch per class, pairing each center class with its
//!   top-(P-1) nearest neighboring classes from a per-epoch class graph;
//! - the PK baseline: P classes drawn uniformly at random per batch;
//! - the clustering baseline: PK restricted to one class cluster per batch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metric::{DistanceMatrix, EmbeddingMatrix};

/// Mini-batch shape: `batch_size = classes_per_batch * instances_per_class`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub instances_per_class: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            instances_per_class: 2,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn classes_per_batch(&self) -> usize {
        self.batch_size / self.instances_per_class
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.instances_per_class < 2 {
            return Err(Error::Config(format!(
                "instances_per_class must be >= 2, got {}",
                self.instances_per_class
            )));
        }
        if self.batch_size % self.instances_per_class != 0 {
            return Err(Error::Config(format!(
                "batch_size {} not divisible by instances_per_class {}",
                self.batch_size, self.instances_per_class
            )));
        }
        let p = self.classes_per_batch();
        if p < 2 {
            return Err(Error::Config(format!(
                "classes_per_batch must be >= 2, got {p}"
            )));
        }
        if p > num_classes {
            return Err(Error::Config(format!(
                "classes_per_batch {p} exceeds the {num_classes} available classes"
            )));
        }
        Ok(())
    }
}

/// Which sampler produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Gs,
    Pk,
    Cluster,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Gs => "gs",
            SamplerKind::Pk => "pk",
            SamplerKind::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(SamplerKind::Gs),
            "pk" => Ok(SamplerKind::Pk),
            "cluster" => Ok(SamplerKind::Cluster),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Per-class top-(P-1) nearest neighboring classes, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassNeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl ClassNeighborGraph {
    pub fn num_classes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn classes_per_batch(&self) -> usize {
        self.neighbors.first().map_or(1, |n| n.len() + 1)
    }
}

/// One element of a batch: (sample index, class id).
pub type BatchEntry = (usize, usize);

/// An epoch's ordered sequence of mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<BatchEntry>>,
    pub provenance: SamplerKind,
}

impl BatchPlan {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Checks the P-distinct-classes x K-instances contract against the index
    /// that produced the plan.
    pub fn validate(&self, index: &DatasetIndex, cfg: &SamplerConfig) -> Result<()> {
        let p = cfg.classes_per_batch();
        let k = cfg.instances_per_class;
        let n = index.num_samples();
        for (b, batch) in self.batches.iter().enumerate() {
            if batch.len() != cfg.batch_size {
                return Err(Error::Validation(format!(
                    "batch {b} has {} entries, expected {}",
                    batch.len(),
                    cfg.batch_size
                )));
            }
            let mut counts = std::collections::BTreeMap::new();
            for &(idx, class) in batch {
                if idx >= n {
                    return Err(Error::Validation(format!(
                        "batch {b} references sample {idx} outside 0..{n}"
                    )));
                }
                if !index.samples_of(class).contains(&idx) {
                    return Err(Error::Validation(format!(
                        "batch {b}: sample {idx} is not in class {class}"
                    )));
                }
                *counts.entry(class).or_insert(0usize) += 1;
            }
            if counts.len() != p || counts.values().any(|&c| c != k) {
                return Err(Error::Validation(format!(
                    "batch {b} violates the {p} classes x {k} instances contract"
                )));
            }
        }
        Ok(())
    }

    /// Debug dump: one `batch_id: (idx:class) ...` line per batch.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (b, batch) in self.batches.iter().enumerate() {
            out.push_str(&format!("{b}:"));
            for &(idx, class) in batch {
                out.push_str(&format!(" ({idx}:{class})"));
            }
            out.push('\n');
        }
        out
    }
}

/// Randomly selects one sample per class; position `c` holds a member of
/// `index_dict[pids[c]]`. Uniform per class and deterministic per seed.
pub fn select_exemplars(index: &DatasetIndex, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index
        .index_dict
        .iter()
        .map(|samples| samples[rng.random_range(0..samples.len())])
        .collect()
}

/// Selects the `p - 1` nearest neighboring classes per row of a
/// diagonal-masked distance matrix, ascending by distance, ties to the lower
/// class id.
pub fn build_class_graph(dist: &DistanceMatrix, p: usize) -> Result<ClassNeighborGraph> {
    if !dist.is_square() {
        return Err(Error::Validation("class graph needs a square matrix".into()));
    }
    let c = dist.values.rows();
    if p < 2 || p > c {
        return Err(Error::Validation(format!(
            "classes_per_batch must be in [2, {c}], got {p}"
        )));
    }
    for i in 0..c {
        if dist.values.get(i, i) != f64::INFINITY {
            return Err(Error::Validation(format!(
                "diagonal entry {i} is not masked; call mask_diagonal first"
            )));
        }
    }
    let take = p - 1;
    // Row-parallel selection; each row is self-contained, so the result is
    // independent of the schedule.
    let neighbors = (0..c)
        .into_par_iter()
        .map(|i| {
            let row = dist.values.row(i);
            let mut order: Vec<usize> = (0..c).collect();
            let cmp = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
            if take < c {
                order.select_nth_unstable_by(take, cmp);
                order.truncate(take);
            }
            order.sort_unstable_by(cmp);
            order.truncate(take);
            order
        })
        .collect();
    Ok(ClassNeighborGraph { neighbors })
}

/// Draws K instance indices from one class: without replacement when the
/// class has at least K samples, with replacement otherwise.
fn draw_instances(
    samples: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
    replacement_classes: &mut usize,
) -> Vec<usize> {
    if samples.len() >= k {
        rand::seq::index::sample(rng, samples.len(), k)
            .iter()
            .map(|i| samples[i])
            .collect()
    } else {
        *replacement_classes += 1;
        (0..k)
            .map(|_| samples[rng.random_range(0..samples.len())])
            .collect()
    }
}

/// Builds the graph-sampling epoch plan: exactly C batches, one per center
/// class, visiting centers in a seeded shuffle of `pids`. Each batch holds K
/// samples of the center followed by K samples of each neighbor in graph
/// order.
pub fn gs_epoch_plan(
    graph: &ClassNeighborGraph,
    index: &DatasetIndex,
    cfg: &SamplerConfig,
) -> Result<BatchPlan> {
    let c = index.num_classes();
    cfg.validate(c)?;
    if graph.num_classes() != c {
        return Err(Error::Validation(format!(
            "graph covers {} classes, index has {c}",
            graph.num_classes()
        )));
    }
    let p = cfg.classes_per_batch();
    if graph.classes_per_batch() != p {
        return Err(Error::Validation(format!(
            "graph rows hold {} neighbors, need {}",
            graph.classes_per_batch() - 1,
            p - 1
        )));
    }
    let k = cfg.instances_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = index.pids.clone();
    centers.shuffle(&mut rng);

    let mut replacement_classes = 0usize;
    let mut batches = Vec::with_capacity(c);
    for &center in &centers {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for idx in draw_instances(index.samples_of(center), k, &mut rng, &mut replacement_classes) {
            batch.push((idx, center));
        }
        for &neighbor in &graph.neighbors[center] {
            for idx in draw_instances(
                index.samples_of(neighbor),
                k,
                &mut rng,
                &mut replacement_classes,
            ) {
                batch.push((idx, neighbor));
            }
        }
        batches.push(batch);
    }
    if replacement_classes > 0 {
        log::debug!(
            "gs plan: {replacement_classes} class draws used replacement (class size < K)"
        );
    }
    Ok(BatchPlan {
        batches,
        provenance: SamplerKind::Gs,
    })
}

/// PK baseline: `num_batches` batches, each drawing P classes uniformly
/// without replacement, then K instances per class.
pub fn pk_epoch_plan(
    index: &DatasetIndex,
    cfg: &SamplerConfig,
    num_batches: usize,
) -> Result<BatchPlan> {
    let c = index.num_classes();
    cfg.validate(c)?;
    let p = cfg.classes_per_batch();
    let k = cfg.instances_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut replacement_classes = 0usize;
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let classes: Vec<usize> = rand::seq::index::sample(&mut rng, c, p)
            .iter()
            .map(|i| index.pids[i])
            .collect();
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for class in classes {
            for idx in draw_instances(index.samples_of(class), k, &mut rng, &mut replacement_classes)
            {
                batch.push((idx, class));
            }
        }
        batches.push(batch);
    }
    if replacement_classes > 0 {
        log::debug!(
            "pk plan: {replacement_classes} class draws used replacement (class size < K)"
        );
    }
    Ok(BatchPlan {
        batches,
        provenance: SamplerKind::Pk,
    })
}

/// Conventional PK epoch length: one pass over the data, `ceil(N / B)`.
pub fn data_sized_num_batches(index: &DatasetIndex, cfg: &SamplerConfig) -> usize {
    index.num_samples().div_ceil(cfg.batch_size).max(1)
}

/// Assigns every class to one of `m` clusters by k-means over exemplar
/// embeddings, with seeded k-means++ initialization. Empty clusters are
/// re-seeded from the point farthest from its assigned center.
pub fn cluster_classes(
    exemplar_embeddings: &EmbeddingMatrix,
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let c = exemplar_embeddings.len();
    if m < 1 || m > c {
        return Err(Error::Validation(format!(
            "cluster count must be in [1, {c}], got {m}"
        )));
    }
    let points = &exemplar_embeddings.values;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus_init(points, m, &mut rng);
    let mut assignment = vec![0usize; c];

    const MAX_ITERS: usize = 100;
    const TOL: f64 = 1e-6;
    for _ in 0..MAX_ITERS {
        for (i, slot) in assignment.iter_mut().enumerate() {
            *slot = nearest_center(points.row(i), &centers);
        }
        // Recompute centers; re-seed any empty cluster from the farthest point.
        let dim = points.cols();
        let mut sums = vec![vec![0.0f64; dim]; m];
        let mut counts = vec![0usize; m];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut movement = 0.0f64;
        for j in 0..m {
            let new_center: Vec<f64> = if counts[j] == 0 {
                let far = (0..c)
                    .max_by(|&x, &y| {
                        let dx = sq_dist(points.row(x), &centers[assignment[x]]);
                        let dy = sq_dist(points.row(y), &centers[assignment[y]]);
                        dx.total_cmp(&dy).then(x.cmp(&y))
                    })
                    .unwrap();
                points.row(far).to_vec()
            } else {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            };
            movement = movement.max(sq_dist(&new_center, &centers[j]).sqrt());
            centers[j] = new_center;
        }
        if movement <= TOL {
            break;
        }
    }
    for (i, slot) in assignment.iter_mut().enumerate() {
        *slot = nearest_center(points.row(i), &centers);
    }
    Ok(assignment)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centers[0]);
    for (j, center) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(point, center);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn kmeans_plus_plus_init(points: &Matrix, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let c = points.rows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(m);
    centers.push(points.row(rng.random_range(0..c)).to_vec());
    let mut d2: Vec<f64> = (0..c).map(|i| sq_dist(points.row(i), &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center; any choice works.
            rng.random_range(0..c)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = c - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(points.row(next).to_vec());
        for i in 0..c {
            d2[i] = d2[i].min(sq_dist(points.row(i), centers.last().unwrap()));
        }
    }
    centers
}

/// Merges every cluster with fewer than `p` member classes into its nearest
/// cluster by centroid distance over the exemplar embeddings, smallest
/// cluster first. Returns a compacted assignment (cluster ids `0..M'`).
pub fn merge_small_clusters(
    assignment: &[usize],
    exemplar_embeddings: &EmbeddingMatrix,
    p: usize,
) -> Result<Vec<usize>> {
    let c = assignment.len();
    if exemplar_embeddings.len() != c {
        return Err(Error::Validation(format!(
            "assignment covers {c} classes, embeddings hold {}",
            exemplar_embeddings.len()
        )));
    }
    let m = assignment.iter().copied().max().map_or(0, |x| x + 1);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (class, &a) in assignment.iter().enumerate() {
        clusters[a].push(class);
    }
    clusters.retain(|members| !members.is_empty());

    let dim = exemplar_embeddings.dim();
    let centroid = |members: &[usize]| -> Vec<f64> {
        let mut center = vec![0.0f64; dim];
        for &class in members {
            for (s, v) in center.iter_mut().zip(exemplar_embeddings.values.row(class)) {
                *s += v;
            }
        }
        for s in &mut center {
            *s /= members.len() as f64;
        }
        center
    };

    loop {
        let Some(small) = clusters
            .iter()
            .enumerate()
            .filter(|(_, members)| members.len() < p)
            .min_by_key(|(i, members)| (members.len(), *i))
            .map(|(i, _)| i)
        else {
            break;
        };
        if clusters.len() == 1 {
            return Err(Error::Validation(format!(
                "all clusters have fewer than {p} classes after merging"
            )));
        }
        let small_centroid = centroid(&clusters[small]);
        let nearest = clusters
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != small)
            .min_by(|(i, a), (j, b)| {
                let da = sq_dist(&centroid(a), &small_centroid);
                let db = sq_dist(&centroid(b), &small_centroid);
                da.total_cmp(&db).then(i.cmp(j))
            })
            .map(|(i, _)| i)
            .unwrap();
        let moved = clusters.remove(small);
        let nearest = if nearest > small { nearest - 1 } else { nearest };
        clusters[nearest].extend(moved);
        clusters[nearest].sort_unstable();
    }

    clusters.sort_by_key(|members| members[0]);
    let mut merged = vec![0usize; c];
    for (id, members) in clusters.iter().enumerate() {
        for &class in members {
            merged[class] = id;
        }
    }
    Ok(merged)
}

/// Clustering-based epoch plan: batches are PK batches whose P classes all
/// come from one cluster. Every cluster must already hold at least P classes
/// (see [`merge_small_clusters`]); batches are allotted to clusters
/// proportionally to cluster size and visited round-robin in seeded order.
pub fn cluster_epoch_plan(
    assignment: &[usize],
    index: &DatasetIndex,
    cfg: &SamplerConfig,
    num_batches: usize,
) -> Result<BatchPlan> {
    let c = index.num_classes();
    cfg.validate(c)?;
    if assignment.len() != c {
        return Err(Error::Validation(format!(
            "assignment covers {} classes, index has {c}",
            assignment.len()
        )));
    }
    let p = cfg.classes_per_batch();
    let k = cfg.instances_per_class;

    let m = assignment.iter().copied().max().map_or(0, |x| x + 1);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (class, &a) in assignment.iter().enumerate() {
        clusters[a].push(class);
    }
    clusters.retain(|members| !members.is_empty());
    if let Some(small) = clusters.iter().find(|members| members.len() < p) {
        return Err(Error::Validation(format!(
            "cluster with {} classes is smaller than P={p}; merge small clusters first",
            small.len()
        )));
    }
    clusters.sort_by_key(|members| members[0]);

    // Proportional allotment by largest remainder, then round-robin visits.
    let total: usize = clusters.iter().map(Vec::len).sum();
    let mut quotas: Vec<usize> = clusters
        .iter()
        .map(|members| num_batches * members.len() / total)
        .collect();
    let mut leftover = num_batches - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = num_batches * clusters[a].len() % total;
        let rb = num_batches * clusters[b].len() % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &j in &order {
        if leftover == 0 {
            break;
        }
        quotas[j] += 1;
        leftover -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visit: Vec<usize> = (0..clusters.len()).collect();
    visit.shuffle(&mut rng);

    let mut replacement_classes = 0usize;
    let mut batches = Vec::with_capacity(num_batches);
    let mut remaining = quotas;
    while batches.len() < num_batches {
        let mut progressed = false;
        for &j in &visit {
            if batches.len() == num_batches {
                break;
            }
            if remaining[j] == 0 {
                continue;
            }
            remaining[j] -= 1;
            progressed = true;
            let members = &clusters[j];
            let classes: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), p)
                .iter()
                .map(|i| members[i])
                .collect();
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for class in classes {
                for idx in
                    draw_instances(index.samples_of(class), k, &mut rng, &mut replacement_classes)
                {
                    batch.push((idx, class));
                }
            }
            batches.push(batch);
        }
        if !progressed {
            break;
        }
    }
    if replacement_classes > 0 {
        log::debug!(
            "cluster plan: {replacement_classes} class draws used replacement (class size < K)"
        );
    }
    Ok(BatchPlan {
        batches,
        provenance: SamplerKind::Cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::metric::{mask_diagonal, MetricKind};
    use rand::{Rng, SeedableRng};

    fn index_from_sizes(sizes: &[usize]) -> DatasetIndex {
        let mut index_dict = Vec::new();
        let mut next = 0;
        for &s in sizes {
            index_dict.push((next..next + s).collect());
            next += s;
        }
        DatasetIndex {
            pids: (0..sizes.len()).collect(),
            index_dict,
        }
    }

    fn masked(values: Matrix) -> DistanceMatrix {
        mask_diagonal(&DistanceMatrix {
            values,
            kind: MetricKind::Euclidean,
        })
        .unwrap()
    }

    #[test]
    fn exemplars_from_singleton_classes_are_forced() {
        let index = DatasetIndex {
            pids: vec![0, 1],
            index_dict: vec![vec![5], vec![7]],
        };
        for seed in 0..10 {
            assert_eq!(select_exemplars(&index, seed), vec![5, 7]);
        }
    }

    #[test]
    fn exemplars_stay_within_their_class() {
        let index = index_from_sizes(&[3, 1, 4, 2]);
        for seed in 0..1000 {
            let ex = select_exemplars(&index, seed);
            assert_eq!(ex.len(), 4);
            for (c, &e) in ex.iter().enumerate() {
                assert!(index.samples_of(c).contains(&e));
            }
        }
    }

    #[test]
    fn exemplar_draws_are_uniform() {
        let index = index_from_sizes(&[4, 2]);
        let mut counts = [0usize; 4];
        for seed in 0..10_000 {
            counts[select_exemplars(&index, seed)[0]] += 1;
        }
        for &n in &counts {
            let freq = n as f64 / 10_000.0;
            assert!((freq - 0.25).abs() <= 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn graph_from_tiny_matrix() {
        let d = masked(Matrix::from_vec(
            3,
            3,
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0],
        ));
        let g = build_class_graph(&d, 2).unwrap();
        assert_eq!(g.neighbors, vec![vec![1], vec![0], vec![0]]);
    }

    #[test]
    fn default_batch_shape_gives_31_neighbors() {
        let cfg = SamplerConfig::default();
        assert_eq!(cfg.classes_per_batch(), 32);
        let c = 40;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut values = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    values.set(i, j, rng.random_range(0.1..9.0));
                }
            }
        }
        let g = build_class_graph(&masked(values), cfg.classes_per_batch()).unwrap();
        for row in &g.neighbors {
            assert_eq!(row.len(), 31);
        }
    }

    #[test]
    fn graph_matches_full_sort_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let c = rng.random_range(2..21);
            let p = rng.random_range(2..=c);
            let mut values = Matrix::zeros(c, c);
            for i in 0..c {
                for j in 0..c {
                    if i != j {
                        // Coarse grid to exercise tie-breaking.
                        values.set(i, j, rng.random_range(0..8) as f64 * 0.5);
                    }
                }
            }
            let d = masked(values);
            let g = build_class_graph(&d, p).unwrap();
            for i in 0..c {
                let row = d.values.row(i);
                let mut order: Vec<usize> = (0..c).collect();
                order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                order.truncate(p - 1);
                assert_eq!(g.neighbors[i], order, "row {i}");
            }
        }
    }

    #[test]
    fn graph_rejects_unmasked_input() {
        let d = DistanceMatrix {
            values: Matrix::zeros(3, 3),
            kind: MetricKind::Euclidean,
        };
        assert!(build_class_graph(&d, 2).is_err());
        let d = masked(Matrix::zeros(3, 3));
        assert!(build_class_graph(&d, 4).is_err());
    }

    #[test]
    fn gs_plan_structure_is_forced_by_the_graph() {
        let graph = ClassNeighborGraph {
            neighbors: vec![vec![1], vec![0], vec![3], vec![2]],
        };
        let index = index_from_sizes(&[2, 2, 2, 2]);
        let cfg = SamplerConfig {
            batch_size: 4,
            instances_per_class: 2,
            seed: 3,
        };
        let plan = gs_epoch_plan(&graph, &index, &cfg).unwrap();
        assert_eq!(plan.num_batches(), 4);
        plan.validate(&index, &cfg).unwrap();
        for batch in &plan.batches {
            assert_eq!(batch.len(), 4);
            let center = batch[0].1;
            let classes: std::collections::BTreeSet<usize> =
                batch.iter().map(|&(_, c)| c).collect();
            let expected: std::collections::BTreeSet<usize> =
                [center, graph.neighbors[center][0]].into_iter().collect();
            assert_eq!(classes, expected);
            if center == 2 {
                assert_eq!(classes, [2, 3].into_iter().collect());
            }
        }
    }

    #[test]
    fn gs_plan_always_has_one_batch_per_class() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for &(b, k) in &[(4usize, 2usize), (8, 2), (12, 3), (16, 4)] {
            let c = rng.random_range((b / k).max(2)..20);
            let p = b / k;
            let mut values = Matrix::zeros(c, c);
            for i in 0..c {
                for j in 0..c {
                    if i != j {
                        values.set(i, j, rng.random_range(0.1..5.0));
                    }
                }
            }
            let graph = build_class_graph(&masked(values), p).unwrap();
            let sizes: Vec<usize> = (0..c).map(|_| rng.random_range(1..6)).collect();
            let index = index_from_sizes(&sizes);
            let cfg = SamplerConfig {
                batch_size: b,
                instances_per_class: k,
                seed: 5,
            };
            let plan = gs_epoch_plan(&graph, &index, &cfg).unwrap();
            assert_eq!(plan.num_batches(), c, "plan length is C for B={b} K={k}");
        }
    }

    #[test]
    fn gs_batches_match_center_and_neighbors_across_seeds() {
        let c = 9;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut values = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    values.set(i, j, rng.random_range(0.1..5.0));
                }
            }
        }
        let graph = build_class_graph(&masked(values), 3).unwrap();
        let index = index_from_sizes(&[3; 9]);
        for seed in 0..50 {
            let cfg = SamplerConfig {
                batch_size: 6,
                instances_per_class: 2,
                seed,
            };
            let plan = gs_epoch_plan(&graph, &index, &cfg).unwrap();
            plan.validate(&index, &cfg).unwrap();
            let mut centers: Vec<usize> = Vec::new();
            for batch in &plan.batches {
                let center = batch[0].1;
                centers.push(center);
                let mut expected = vec![center];
                expected.extend(&graph.neighbors[center]);
                // Batch classes appear in graph order, K entries each.
                let got: Vec<usize> = batch.chunks(2).map(|chunk| chunk[0].1).collect();
                assert_eq!(got, expected);
            }
            centers.sort_unstable();
            assert_eq!(centers, (0..c).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gs_plan_is_deterministic() {
        let graph = ClassNeighborGraph {
            neighbors: vec![vec![1], vec![2], vec![0]],
        };
        let index = index_from_sizes(&[3, 4, 2]);
        let cfg = SamplerConfig {
            batch_size: 4,
            instances_per_class: 2,
            seed: 11,
        };
        let a = gs_epoch_plan(&graph, &index, &cfg).unwrap();
        let b = gs_epoch_plan(&graph, &index, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pk_with_two_classes_is_forced() {
        let index = index_from_sizes(&[3, 3]);
        let cfg = SamplerConfig {
            batch_size: 4,
            instances_per_class: 2,
            seed: 0,
        };
        let plan = pk_epoch_plan(&index, &cfg, 10).unwrap();
        assert_eq!(plan.num_batches(), 10);
        for batch in &plan.batches {
            let classes: std::collections::BTreeSet<usize> =
                batch.iter().map(|&(_, c)| c).collect();
            assert_eq!(classes, [0, 1].into_iter().collect());
        }
    }

    #[test]
    fn pk_class_pairs_are_uniform() {
        let index = index_from_sizes(&[2; 10]);
        let cfg = SamplerConfig {
            batch_size: 4,
            instances_per_class: 2,
            seed: 12,
        };
        let num_batches = 45_000;
        let plan = pk_epoch_plan(&index, &cfg, num_batches).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for batch in &plan.batches {
            let mut pair: Vec<usize> = batch.iter().map(|&(_, c)| c).collect();
            pair.dedup();
            pair.sort_unstable();
            *counts.entry((pair[0], pair[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 45);
        let p = 1.0 / 45.0;
        let sigma = (num_batches as f64 * p * (1.0 - p)).sqrt();
        let expected = num_batches as f64 * p;
        for (&pair, &n) in &counts {
            assert!(
                (n as f64 - expected).abs() <= 3.0 * sigma,
                "pair {pair:?} count {n} vs expected {expected}"
            );
        }
    }

    #[test]
    fn data_sized_epoch_length() {
        let index = index_from_sizes(&[3; 10]);
        let cfg = SamplerConfig {
            batch_size: 8,
            instances_per_class: 2,
            seed: 0,
        };
        assert_eq!(data_sized_num_batches(&index, &cfg), 4);
    }

    fn emb_from_rows(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn single_cluster_takes_everything() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
        let assignment = cluster_classes(&emb_from_rows(&rows), 1, 0).unwrap();
        assert_eq!(assignment, vec![0; 6]);
    }

    #[test]
    fn m_equal_c_gives_singletons_for_distinct_points() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![3.0 * i as f64, 1.0]).collect();
        let assignment = cluster_classes(&emb_from_rows(&rows), 5, 7).unwrap();
        let distinct: std::collections::BTreeSet<usize> = assignment.iter().copied().collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn two_blobs_recover_the_optimal_partition() {
        // Exhaustive minimum within-cluster sum of squares over all 2-partitions.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut rows = Vec::new();
        for i in 0..10 {
            let base = if i < 5 { -20.0 } else { 20.0 };
            rows.push(vec![
                base + rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
        }
        let emb = emb_from_rows(&rows);
        let assignment = cluster_classes(&emb, 2, 3).unwrap();

        let wcss = |labels: &[usize]| -> f64 {
            let mut total = 0.0;
            for cluster in 0..2 {
                let members: Vec<usize> = (0..10).filter(|&i| labels[i] == cluster).collect();
                if members.is_empty() {
                    continue;
                }
                let mut center = vec![0.0; 2];
                for &m in &members {
                    for (c, v) in center.iter_mut().zip(&rows[m]) {
                        *c += v;
                    }
                }
                for c in &mut center {
                    *c /= members.len() as f64;
                }
                for &m in &members {
                    total += sq_dist(&rows[m], &center);
                }
            }
            total
        };

        let mut best = f64::INFINITY;
        let mut best_labels = vec![0usize; 10];
        for mask in 0..(1u32 << 10) {
            let labels: Vec<usize> = (0..10).map(|i| ((mask >> i) & 1) as usize).collect();
            let cost = wcss(&labels);
            if cost < best {
                best = cost;
                best_labels = labels;
            }
        }
        // Same partition up to cluster relabeling.
        let agree = (0..10).all(|i| assignment[i] == best_labels[i])
            || (0..10).all(|i| assignment[i] == 1 - best_labels[i]);
        assert!(agree, "kmeans {assignment:?} vs optimal {best_labels:?}");
        assert!((wcss(&assignment) - best).abs() < 1e-9);
    }

    #[test]
    fn merge_absorbs_small_clusters_into_nearest() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.5, 0.0],
            vec![1.0, 0.0],
            vec![0.6, 0.1],
            vec![50.0, 0.0],
            vec![50.5, 0.0],
            vec![51.0, 0.0],
            vec![49.9, 0.2],
            vec![40.0, 0.0],
        ];
        let emb = emb_from_rows(&rows);
        // Class 8 sits alone, nearer the right blob; it must merge there.
        let assignment = vec![0, 0, 0, 0, 1, 1, 1, 1, 2];
        let merged = merge_small_clusters(&assignment, &emb, 4).unwrap();
        let clusters: std::collections::BTreeSet<usize> = merged.iter().copied().collect();
        assert_eq!(clusters.len(), 2);
        assert_eq!(merged[8], merged[4], "singleton joins the nearer blob");
    }

    #[test]
    fn merge_fails_when_nothing_is_large_enough() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let emb = emb_from_rows(&rows);
        let err = merge_small_clusters(&[0, 1, 2], &emb, 5);
        assert!(err.is_err());
    }

    #[test]
    fn cluster_plan_keeps_batches_within_one_cluster() {
        let index = index_from_sizes(&[2; 16]);
        let assignment: Vec<usize> = (0..16).map(|c| if c < 8 { 0 } else { 1 }).collect();
        let cfg = SamplerConfig {
            batch_size: 8,
            instances_per_class: 2,
            seed: 21,
        };
        let plan = cluster_epoch_plan(&assignment, &index, &cfg, 16).unwrap();
        plan.validate(&index, &cfg).unwrap();
        let mut per_cluster = [0usize; 2];
        for batch in &plan.batches {
            let clusters: std::collections::BTreeSet<usize> =
                batch.iter().map(|&(_, c)| assignment[c]).collect();
            assert_eq!(clusters.len(), 1, "batch spans clusters");
            per_cluster[*clusters.iter().next().unwrap()] += 1;
        }
        // Sizes {8, 8}, 16 batches: proportional allotment gives 8 each.
        assert_eq!(per_cluster, [8, 8]);
    }

    #[test]
    fn single_cluster_plan_behaves_like_pk() {
        let index = index_from_sizes(&[3; 6]);
        let cfg = SamplerConfig {
            batch_size: 4,
            instances_per_class: 2,
            seed: 22,
        };
        let plan = cluster_epoch_plan(&[0; 6], &index, &cfg, 12).unwrap();
        plan.validate(&index, &cfg).unwrap();
        assert_eq!(plan.num_batches(), 12);
        let seen: std::collections::BTreeSet<usize> = plan
            .batches
            .iter()
            .flat_map(|b| b.iter().map(|&(_, c)| c))
            .collect();
        assert_eq!(seen.len(), 6, "all classes reachable from the one cluster");
    }

    #[test]
    fn cluster_plan_rejects_undersized_clusters() {
        let index = index_from_sizes(&[2; 4]);
        let cfg = SamplerConfig {
            batch_size: 6,
            instances_per_class: 2,
            seed: 0,
        };
        assert!(cluster_epoch_plan(&[0, 0, 0, 1], &index, &cfg, 4).is_err());
    }

    #[test]
    fn graph_is_permutation_equivariant() {
        let c = 7;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut values = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    values.set(i, j, rng.random_range(0.1..9.0));
                }
            }
        }
        // Symmetrize so the permuted matrix stays a valid distance matrix.
        for i in 0..c {
            for j in 0..i {
                let v = values.get(i, j);
                values.set(j, i, v);
            }
        }
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let mut permuted = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                permuted.set(perm[i], perm[j], values.get(i, j));
            }
        }
        let g = build_class_graph(&masked(values), 3).unwrap();
        let gp = build_class_graph(&masked(permuted), 3).unwrap();
        for i in 0..c {
            let mapped: Vec<usize> = g.neighbors[i].iter().map(|&j| perm[j]).collect();
            assert_eq!(gp.neighbors[perm[i]], mapped, "row {i}");
        }
    }

    #[test]
    fn plan_dump_format() {
        let plan = BatchPlan {
            batches: vec![vec![(0, 0), (1, 0), (4, 2), (5, 2)]],
            provenance: SamplerKind::Gs,
        };
        assert_eq!(plan.dump(), "0: (0:0) (1:0) (4:2) (5:2)\n");
    }
}
