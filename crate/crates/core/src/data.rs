//! Synthetic dataset generation, dataset indexing, and feature-file I/O.
//!
//! The synthetic generator draws a two-level Gaussian hierarchy: group centers,
//! class centers offset from their group center, and per-sample noise around
//! the class center. Classes inside one group are close to each other, so a
//! neighbor-aware sampler has real hard negatives to find.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Raw feature vectors with class labels; the training data source.
///
/// Labels are normalized to contiguous `[0, C-1]`. The original file labels
/// (possibly sparse) are kept in `original_ids` for reporting only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// `original_ids[c]` is the external id of normalized class `c`.
    pub original_ids: Vec<u64>,
}

impl LabeledFeatureSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let original_ids = (0..num_classes as u64).collect();
        let set = Self {
            features,
            labels,
            original_ids,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.original_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let c = self.num_classes();
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                n
            )));
        }
        if c < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        if n < c {
            return Err(Error::Validation(format!(
                "fewer samples ({n}) than classes ({c})"
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        let mut seen = vec![false; c];
        for &l in &self.labels {
            if l >= c {
                return Err(Error::Validation(format!(
                    "label {l} out of range [0, {c})"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "class ids not contiguous: {missing} never occurs"
            )));
        }
        Ok(())
    }
}

/// Class-id list and class -> sample-indices map over a [`LabeledFeatureSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    /// Sorted ascending; equal to `0..num_classes` after normalization.
    pub pids: Vec<usize>,
    /// `index_dict[c]` lists the sample positions of class `pids[c]`, ascending.
    pub index_dict: Vec<Vec<usize>>,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.pids.len()
    }

    pub fn num_samples(&self) -> usize {
        self.index_dict.iter().map(Vec::len).sum()
    }

    pub fn samples_of(&self, class: usize) -> &[usize] {
        &self.index_dict[class]
    }
}

/// Generator settings for the two-level Gaussian synthetic dataset.
///
/// The optional nuisance block appends `nuisance_dim` coordinates of pure
/// per-sample noise carrying no class signal. They give a trainable model
/// something transferable to learn (suppress those directions); zero keeps
/// the plain two-level structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    /// Number of super-clusters the classes are spread over.
    pub num_groups: usize,
    pub samples_per_class_min: usize,
    pub samples_per_class_max: usize,
    pub ambient_dim: usize,
    pub group_center_scale: f64,
    pub class_center_scale: f64,
    pub within_class_sigma: f64,
    pub nuisance_dim: usize,
    pub nuisance_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 64,
            num_groups: 8,
            samples_per_class_min: 6,
            samples_per_class_max: 6,
            ambient_dim: 32,
            group_center_scale: 10.0,
            class_center_scale: 1.0,
            within_class_sigma: 0.3,
            nuisance_dim: 0,
            nuisance_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.num_groups < 1 || self.num_groups > self.num_classes {
            return Err(Error::Config(format!(
                "num_groups must be in [1, num_classes], got {}",
                self.num_groups
            )));
        }
        if self.samples_per_class_min < 1 {
            return Err(Error::Config("samples_per_class_min must be >= 1".into()));
        }
        if self.samples_per_class_min > self.samples_per_class_max {
            return Err(Error::Config(format!(
                "samples_per_class_min {} > samples_per_class_max {}",
                self.samples_per_class_min, self.samples_per_class_max
            )));
        }
        if self.ambient_dim < 1 {
            return Err(Error::Config("ambient_dim must be >= 1".into()));
        }
        for (name, v) in [
            ("group_center_scale", self.group_center_scale),
            ("class_center_scale", self.class_center_scale),
            ("within_class_sigma", self.within_class_sigma),
            ("nuisance_sigma", self.nuisance_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Total feature width: signal block plus nuisance block.
    pub fn total_dim(&self) -> usize {
        self.ambient_dim + self.nuisance_dim
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Draws a synthetic labeled dataset. Pure function of `cfg`: the same seed
/// yields a bit-identical result.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<LabeledFeatureSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.ambient_dim;

    let group_centers: Vec<Vec<f64>> = (0..cfg.num_groups)
        .map(|_| gaussian_vec(&mut rng, d, cfg.group_center_scale))
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for class in 0..cfg.num_classes {
        let group = &group_centers[class % cfg.num_groups];
        let offset = gaussian_vec(&mut rng, d, cfg.class_center_scale);
        let center: Vec<f64> = group.iter().zip(&offset).map(|(g, o)| g + o).collect();
        let count = rng.random_range(cfg.samples_per_class_min..=cfg.samples_per_class_max);
        for _ in 0..count {
            let noise = gaussian_vec(&mut rng, d, cfg.within_class_sigma);
            let mut row: Vec<f64> =
                center.iter().zip(&noise).map(|(c, n)| c + n).collect();
            row.extend(gaussian_vec(&mut rng, cfg.nuisance_dim, cfg.nuisance_sigma));
            rows.push(row);
            labels.push(class);
        }
    }

    LabeledFeatureSet::new(Matrix::from_rows(&rows), labels)
}

/// Builds the class-id list and the class -> sample-indices map.
pub fn build_index(set: &LabeledFeatureSet) -> Result<DatasetIndex> {
    set.validate()?;
    let c = set.num_classes();
    let mut index_dict = vec![Vec::new(); c];
    for (i, &l) in set.labels.iter().enumerate() {
        index_dict[l].push(i);
    }
    Ok(DatasetIndex {
        pids: (0..c).collect(),
        index_dict,
    })
}

/// Writes the feature file format: optional header line, then one
/// `label,v_0,...,v_{d-1}` row per sample. Values carry 13 significant digits.
pub fn save_featureset<P: AsRef<Path>>(set: &LabeledFeatureSet, path: P) -> Result<()> {
    set.validate()?;
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "# d_in={} C={} N={}",
        set.dim(),
        set.num_classes(),
        set.num_samples()
    )?;
    for i in 0..set.num_samples() {
        write!(w, "{}", set.original_ids[set.labels[i]])?;
        for v in set.features.row(i) {
            write!(w, ",{v:.12e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature file back. Class ids are normalized to contiguous
/// `[0, C-1]` in ascending order of the original ids.
pub fn load_featureset<P: AsRef<Path>>(path: P) -> Result<LabeledFeatureSet> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);

    let mut dim: Option<usize> = None;
    let mut raw_labels: Vec<u64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let label_str = fields.next().unwrap_or("");
        let label: u64 = label_str.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label {label_str:?} is not a non-negative integer"),
        })?;
        let mut values = Vec::new();
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("value {f:?} is not a decimal number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("value {v} is not finite"),
                });
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "row has a label but no feature values".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("row has {} fields, expected {}", values.len(), d),
                });
            }
            _ => {}
        }
        raw_labels.push(label);
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(Error::Validation(
            "feature file contains no data rows".into(),
        ));
    }

    // Normalize possibly sparse original ids to contiguous [0, C-1].
    let mut id_map: BTreeMap<u64, usize> = BTreeMap::new();
    for &l in &raw_labels {
        id_map.entry(l).or_insert(0);
    }
    for (next, v) in id_map.values_mut().enumerate() {
        *v = next;
    }
    let labels: Vec<usize> = raw_labels.iter().map(|l| id_map[l]).collect();
    let original_ids: Vec<u64> = id_map.keys().copied().collect();

    let set = LabeledFeatureSet {
        features: Matrix::from_rows(&rows),
        labels,
        original_ids,
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            num_classes: 4,
            num_groups: 2,
            samples_per_class_min: 3,
            samples_per_class_max: 3,
            ambient_dim: 8,
            seed: 1,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn balanced_generation_counts() {
        let set = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(set.num_samples(), 12);
        assert_eq!(set.dim(), 8);
        for c in 0..4 {
            assert_eq!(set.labels.iter().filter(|&&l| l == c).count(), 3);
        }
    }

    #[test]
    fn zero_sigma_collapses_classes_to_points() {
        let cfg = SyntheticConfig {
            within_class_sigma: 0.0,
            ..small_cfg()
        };
        let set = generate_synthetic(&cfg).unwrap();
        let index = build_index(&set).unwrap();
        for samples in &index.index_dict {
            let first = set.features.row(samples[0]);
            for &s in &samples[1..] {
                assert_eq!(set.features.row(s), first);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig {
            seed: 2,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn group_structure_separates_centers() {
        // With sigma 0 and one sample per class, rows are the class centers.
        let cfg = SyntheticConfig {
            num_classes: 64,
            num_groups: 8,
            samples_per_class_min: 1,
            samples_per_class_max: 1,
            ambient_dim: 16,
            group_center_scale: 10.0,
            class_center_scale: 1.0,
            within_class_sigma: 0.0,
            nuisance_dim: 0,
            nuisance_sigma: 0.0,
            seed: 7,
        };
        let set = generate_synthetic(&cfg).unwrap();
        let mut intra = (0.0, 0usize);
        let mut inter = (0.0, 0usize);
        for a in 0..64 {
            for b in (a + 1)..64 {
                let d: f64 = set
                    .features
                    .row(a)
                    .iter()
                    .zip(set.features.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if a % 8 == b % 8 {
                    intra = (intra.0 + d, intra.1 + 1);
                } else {
                    inter = (inter.0 + d, inter.1 + 1);
                }
            }
        }
        let mean_intra = intra.0 / intra.1 as f64;
        let mean_inter = inter.0 / inter.1 as f64;
        assert!(
            mean_intra < mean_inter,
            "intra {mean_intra} should be below inter {mean_inter}"
        );
    }

    #[test]
    fn nuisance_block_is_classless_noise() {
        let cfg = SyntheticConfig {
            nuisance_dim: 3,
            nuisance_sigma: 2.0,
            within_class_sigma: 0.0,
            ..small_cfg()
        };
        assert_eq!(cfg.total_dim(), 11);
        let set = generate_synthetic(&cfg).unwrap();
        assert_eq!(set.dim(), 11);
        // Signal block is identical within a class (sigma 0); nuisance varies.
        let index = build_index(&set).unwrap();
        for samples in &index.index_dict {
            let first = set.features.row(samples[0]);
            for &s in &samples[1..] {
                let row = set.features.row(s);
                assert_eq!(&row[..8], &first[..8]);
                assert_ne!(&row[8..], &first[8..]);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.num_groups = 0;
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let mut cfg = small_cfg();
        cfg.num_groups = 5;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.within_class_sigma = f64::NAN;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.samples_per_class_min = 0;
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn build_index_lists_positions_per_class() {
        let set = LabeledFeatureSet::new(Matrix::zeros(4, 2), vec![0, 1, 0, 1]).unwrap();
        let index = build_index(&set).unwrap();
        assert_eq!(index.pids, vec![0, 1]);
        assert_eq!(index.index_dict, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn build_index_rejects_degenerate_inputs() {
        // Single class.
        let set = LabeledFeatureSet {
            features: Matrix::zeros(3, 2),
            labels: vec![0, 0, 0],
            original_ids: vec![0],
        };
        assert!(build_index(&set).is_err());
        // Non-contiguous labels.
        let set = LabeledFeatureSet {
            features: Matrix::zeros(3, 2),
            labels: vec![0, 2, 2],
            original_ids: vec![0, 1, 2],
        };
        assert!(build_index(&set).is_err());
        // Empty.
        let set = LabeledFeatureSet {
            features: Matrix::zeros(0, 2),
            labels: vec![],
            original_ids: vec![],
        };
        assert!(build_index(&set).is_err());
    }

    #[test]
    fn index_partitions_all_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..10)
            .flat_map(|c| std::iter::repeat(c).take(1))
            .chain((0..90).map(|_| rng.random_range(0..10)))
            .collect();
        let set = LabeledFeatureSet::new(Matrix::zeros(100, 2), labels).unwrap();
        let index = build_index(&set).unwrap();
        let mut seen = vec![0usize; 100];
        for (c, samples) in index.index_dict.iter().enumerate() {
            assert!(!samples.is_empty());
            assert!(samples.windows(2).all(|w| w[0] < w[1]));
            for &s in samples {
                assert_eq!(set.labels[s], c);
                seen[s] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1), "indices must partition 0..N");
    }

    #[test]
    fn relabeling_permutes_the_index_consistently() {
        let labels = vec![0, 1, 2, 1, 0, 2, 2];
        let set = LabeledFeatureSet::new(Matrix::zeros(7, 2), labels.clone()).unwrap();
        let index = build_index(&set).unwrap();
        let perm = [2usize, 0, 1]; // class c is renamed perm[c]
        let permuted = LabeledFeatureSet::new(
            Matrix::zeros(7, 2),
            labels.iter().map(|&l| perm[l]).collect(),
        )
        .unwrap();
        let permuted_index = build_index(&permuted).unwrap();
        for c in 0..3 {
            assert_eq!(permuted_index.index_dict[perm[c]], index.index_dict[c]);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let set = generate_synthetic(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        save_featureset(&set, &path).unwrap();
        let loaded = load_featureset(&path).unwrap();
        assert_eq!(loaded.labels, set.labels);
        assert_eq!(loaded.original_ids, set.original_ids);
        for i in 0..set.num_samples() {
            for (a, b) in set.features.row(i).iter().zip(loaded.features.row(i)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn load_normalizes_sparse_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sparse.csv");
        std::fs::write(&path, "17,1.0,2.0\n5,3.0,4.0\n17,5.0,6.0\n").unwrap();
        let set = load_featureset(&path).unwrap();
        assert_eq!(set.original_ids, vec![5, 17]);
        assert_eq!(set.labels, vec![1, 0, 1]);
    }

    #[test]
    fn ragged_row_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# header\n0,1.0,2.0\n1,3.0\n").unwrap();
        match load_featureset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "0,1.0\nx,2.0\n").unwrap();
        match load_featureset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "# only a comment\n").unwrap();
        assert!(matches!(
            load_featureset(&path),
            Err(Error::Validation(_))
        ));
    }
}
