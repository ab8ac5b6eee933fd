//! Learnable embedding map from raw features to embedding space.
//!
//! Two shapes are supported: a plain linear projection and a one-hidden-layer
//! net with a rectifier. Parameters live in row-major matrices so the flat
//! gradient layout is `w1 | b1 | w2 | b2` with absent pieces skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};
use crate::metric::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp1 => "mlp1",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "mlp1" => Ok(ModelKind::Mlp1),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Construction-time settings; the input width comes from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    /// Hidden width for `Mlp1`; ignored for `Linear`.
    pub hidden_dim: usize,
    pub bias: bool,
    pub l2_normalize_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Linear,
            embed_dim: 128,
            hidden_dim: 128,
            bias: false,
            l2_normalize_output: false,
        }
    }
}

/// The embedding map `f_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: ModelKind,
    d_in: usize,
    d_out: usize,
    hidden: usize,
    /// Linear: `d_out x d_in`. Mlp1: `hidden x d_in`.
    w1: Matrix,
    b1: Option<Vec<f64>>,
    /// Mlp1 only: `d_out x hidden`.
    w2: Option<Matrix>,
    b2: Option<Vec<f64>>,
    l2_normalize_output: bool,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// Pre-rectifier hidden activations (mlp1 only).
    pub h_pre: Option<Matrix>,
    /// Post-rectifier hidden activations (mlp1 only).
    pub h: Option<Matrix>,
    /// Embeddings before the optional row normalization.
    pub y_pre: Matrix,
    /// Final embeddings.
    pub e: Matrix,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = z * std;
    }
    m
}

impl EmbeddingModel {
    /// Seeded random initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(cfg: &ModelConfig, d_in: usize, seed: u64) -> Result<Self> {
        if d_in < 1 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        if cfg.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim must be >= 2, got {}",
                cfg.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = match cfg.kind {
            ModelKind::Linear => Self {
                kind: ModelKind::Linear,
                d_in,
                d_out: cfg.embed_dim,
                hidden: 0,
                w1: gaussian_matrix(&mut rng, cfg.embed_dim, d_in, (1.0 / d_in as f64).sqrt()),
                b1: cfg.bias.then(|| vec![0.0; cfg.embed_dim]),
                w2: None,
                b2: None,
                l2_normalize_output: cfg.l2_normalize_output,
            },
            ModelKind::Mlp1 => {
                if cfg.hidden_dim < 1 {
                    return Err(Error::Config("hidden_dim must be >= 1".into()));
                }
                Self {
                    kind: ModelKind::Mlp1,
                    d_in,
                    d_out: cfg.embed_dim,
                    hidden: cfg.hidden_dim,
                    w1: gaussian_matrix(
                        &mut rng,
                        cfg.hidden_dim,
                        d_in,
                        (1.0 / d_in as f64).sqrt(),
                    ),
                    b1: cfg.bias.then(|| vec![0.0; cfg.hidden_dim]),
                    w2: Some(gaussian_matrix(
                        &mut rng,
                        cfg.embed_dim,
                        cfg.hidden_dim,
                        (1.0 / cfg.hidden_dim as f64).sqrt(),
                    )),
                    b2: cfg.bias.then(|| vec![0.0; cfg.embed_dim]),
                    l2_normalize_output: cfg.l2_normalize_output,
                }
            }
        };
        Ok(model)
    }

    /// Builds a linear model from explicit weights.
    pub fn linear_from_weights(
        w: Matrix,
        bias: Option<Vec<f64>>,
        l2_normalize_output: bool,
    ) -> Result<Self> {
        if w.rows() < 2 {
            return Err(Error::Config("output dimension must be >= 2".into()));
        }
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(Error::Dimension(format!(
                    "bias length {} vs output dim {}",
                    b.len(),
                    w.rows()
                )));
            }
        }
        Ok(Self {
            kind: ModelKind::Linear,
            d_in: w.cols(),
            d_out: w.rows(),
            hidden: 0,
            w1: w,
            b1: bias,
            w2: None,
            b2: None,
            l2_normalize_output,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn l2_normalize_output(&self) -> bool {
        self.l2_normalize_output
    }

    pub fn num_params(&self) -> usize {
        let mut n = self.w1.data().len();
        n += self.b1.as_ref().map_or(0, Vec::len);
        n += self.w2.as_ref().map_or(0, |w| w.data().len());
        n += self.b2.as_ref().map_or(0, Vec::len);
        n
    }

    /// Flattens all parameters into `w1 | b1 | w2 | b2` order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w1.data());
        if let Some(b) = &self.b1 {
            out.extend_from_slice(b);
        }
        if let Some(w) = &self.w2 {
            out.extend_from_slice(w.data());
        }
        if let Some(b) = &self.b2 {
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrites all parameters from a flat buffer (same layout as
    /// [`Self::params_flat`]).
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat buffer has {} values, model has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        let w1 = self.w1.data_mut();
        w1.copy_from_slice(&flat[..w1.len()]);
        offset += w1.len();
        if let Some(b) = &mut self.b1 {
            let n = b.len();
            b.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        if let Some(w) = &mut self.w2 {
            let data = w.data_mut();
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        }
        if let Some(b) = &mut self.b2 {
            let n = b.len();
            b.copy_from_slice(&flat[offset..offset + n]);
        }
        Ok(())
    }

    /// `theta += scale * delta` over the flat layout.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "delta has {} values, model has {} parameters",
                delta.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for v in self.w1.data_mut() {
            *v += scale * delta[offset];
            offset += 1;
        }
        if let Some(b) = &mut self.b1 {
            for v in b {
                *v += scale * delta[offset];
                offset += 1;
            }
        }
        if let Some(w) = &mut self.w2 {
            for v in w.data_mut() {
                *v += scale * delta[offset];
                offset += 1;
            }
        }
        if let Some(b) = &mut self.b2 {
            for v in b {
                *v += scale * delta[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Maps a batch of raw feature rows to embeddings.
    pub fn forward(&self, features: &Matrix) -> Result<EmbeddingMatrix> {
        Ok(EmbeddingMatrix {
            values: self.forward_cached(features)?.e,
        })
    }

    pub(crate) fn forward_cached(&self, features: &Matrix) -> Result<ForwardCache> {
        if features.cols() != self.d_in {
            return Err(Error::Dimension(format!(
                "input width {} vs model d_in {}",
                features.cols(),
                self.d_in
            )));
        }
        let (h_pre, h, y_pre) = match self.kind {
            ModelKind::Linear => {
                let y = affine(features, &self.w1, self.b1.as_deref());
                (None, None, y)
            }
            ModelKind::Mlp1 => {
                let h_pre = affine(features, &self.w1, self.b1.as_deref());
                let mut h = h_pre.clone();
                for v in h.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let y = affine(&h, self.w2.as_ref().unwrap(), self.b2.as_deref());
                (Some(h_pre), Some(h), y)
            }
        };
        if !y_pre.is_finite() {
            return Err(Error::NonFinite("forward pass output".into()));
        }
        let e = if self.l2_normalize_output {
            let mut e = y_pre.clone();
            for i in 0..e.rows() {
                let n = norm2(e.row(i));
                if n > 0.0 {
                    for v in e.row_mut(i) {
                        *v /= n;
                    }
                }
            }
            e
        } else {
            y_pre.clone()
        };
        Ok(ForwardCache { h_pre, h, y_pre, e })
    }

    /// Backpropagates `d_loss/d_embedding` to a flat parameter gradient.
    pub(crate) fn backward(
        &self,
        features: &Matrix,
        cache: &ForwardCache,
        grad_e: &Matrix,
    ) -> Vec<f64> {
        // Through the optional row normalization: for e = y/|y|,
        // dL/dy = (dL/de - (dL/de . e) e) / |y|; zero rows pass zero.
        let grad_y = if self.l2_normalize_output {
            let mut g = Matrix::zeros(grad_e.rows(), grad_e.cols());
            for i in 0..grad_e.rows() {
                let n = norm2(cache.y_pre.row(i));
                if n == 0.0 {
                    continue;
                }
                let e_row = cache.e.row(i);
                let ge = grad_e.row(i);
                let proj: f64 = ge.iter().zip(e_row).map(|(a, b)| a * b).sum();
                for (j, out) in g.row_mut(i).iter_mut().enumerate() {
                    *out = (ge[j] - proj * e_row[j]) / n;
                }
            }
            g
        } else {
            grad_e.clone()
        };

        let mut flat = Vec::with_capacity(self.num_params());
        match self.kind {
            ModelKind::Linear => {
                let (gw, gb) = affine_backward(features, &grad_y, self.b1.is_some());
                flat.extend_from_slice(gw.data());
                if let Some(gb) = gb {
                    flat.extend_from_slice(&gb);
                }
            }
            ModelKind::Mlp1 => {
                let h = cache.h.as_ref().unwrap();
                let h_pre = cache.h_pre.as_ref().unwrap();
                let (gw2, gb2) = affine_backward(h, &grad_y, self.b2.is_some());
                // dL/dh, then gate by the rectifier.
                let w2 = self.w2.as_ref().unwrap();
                let mut grad_h = Matrix::zeros(h.rows(), h.cols());
                for i in 0..h.rows() {
                    let gy = grad_y.row(i);
                    let out = grad_h.row_mut(i);
                    for (o, gyo) in gy.iter().enumerate() {
                        if *gyo == 0.0 {
                            continue;
                        }
                        let wrow = w2.row(o);
                        for (j, val) in out.iter_mut().enumerate() {
                            *val += gyo * wrow[j];
                        }
                    }
                }
                for (g, &pre) in grad_h.data_mut().iter_mut().zip(h_pre.data()) {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                }
                let (gw1, gb1) = affine_backward(features, &grad_h, self.b1.is_some());
                flat.extend_from_slice(gw1.data());
                if let Some(gb) = gb1 {
                    flat.extend_from_slice(&gb);
                }
                flat.extend_from_slice(gw2.data());
                if let Some(gb) = gb2 {
                    flat.extend_from_slice(&gb);
                }
            }
        }
        flat
    }

    /// Writes a text checkpoint. Values use the shortest decimal form that
    /// parses back to the identical bits, so round-trips are exact.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        writeln!(w, "kind {}", self.kind.name())?;
        writeln!(w, "d_in {}", self.d_in)?;
        writeln!(w, "d_out {}", self.d_out)?;
        writeln!(w, "hidden {}", self.hidden)?;
        writeln!(w, "bias {}", if self.b1.is_some() { 1 } else { 0 })?;
        writeln!(w, "l2norm {}", if self.l2_normalize_output { 1 } else { 0 })?;
        let write_matrix = |w: &mut BufWriter<File>, name: &str, m: &Matrix| -> Result<()> {
            writeln!(w, "[{name}]")?;
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        write_matrix(&mut w, "w1", &self.w1)?;
        if let Some(b) = &self.b1 {
            writeln!(w, "[b1]")?;
            let row: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        if let Some(m) = &self.w2 {
            write_matrix(&mut w, "w2", m)?;
        }
        if let Some(b) = &self.b2 {
            writeln!(w, "[b2]")?;
            let row: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line?);
        }
        let mut pos = 0;
        let mut header = std::collections::BTreeMap::new();
        while pos < lines.len() && !lines[pos].starts_with('[') {
            let line = lines[pos].trim();
            pos += 1;
            if line.is_empty() {
                continue;
            }
            let mut it = line.splitn(2, ' ');
            let key = it.next().unwrap_or("").to_string();
            let value = it.next().unwrap_or("").to_string();
            header.insert(key, value);
        }
        let get = |key: &str| -> Result<&String> {
            header.get(key).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("checkpoint missing header field {key:?}"),
            })
        };
        let kind: ModelKind = get("kind")?.parse()?;
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("field {key:?} is not an integer"),
            })
        };
        let d_in = parse_usize("d_in")?;
        let d_out = parse_usize("d_out")?;
        let hidden = parse_usize("hidden")?;
        let bias = parse_usize("bias")? != 0;
        let l2norm = parse_usize("l2norm")? != 0;

        let mut sections: std::collections::BTreeMap<String, Vec<Vec<f64>>> =
            std::collections::BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in lines.iter().enumerate().skip(pos) {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = Some(name.to_string());
                sections.entry(name.to_string()).or_default();
                continue;
            }
            let Some(name) = &current else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "values outside any section".into(),
                });
            };
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("value {t:?} is not a number"),
                    })
                })
                .collect::<Result<_>>()?;
            sections.get_mut(name).unwrap().push(row);
        }

        let take_matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
            let rows_data = sections.get(name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("checkpoint missing section [{name}]"),
            })?;
            if rows_data.len() != rows || rows_data.iter().any(|r| r.len() != cols) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("section [{name}] is not {rows}x{cols}"),
                });
            }
            Ok(Matrix::from_rows(rows_data))
        };

        let model = match kind {
            ModelKind::Linear => Self {
                kind,
                d_in,
                d_out,
                hidden: 0,
                w1: take_matrix("w1", d_out, d_in)?,
                b1: if bias {
                    Some(take_matrix("b1", 1, d_out)?.data().to_vec())
                } else {
                    None
                },
                w2: None,
                b2: None,
                l2_normalize_output: l2norm,
            },
            ModelKind::Mlp1 => Self {
                kind,
                d_in,
                d_out,
                hidden,
                w1: take_matrix("w1", hidden, d_in)?,
                b1: if bias {
                    Some(take_matrix("b1", 1, hidden)?.data().to_vec())
                } else {
                    None
                },
                w2: Some(take_matrix("w2", d_out, hidden)?),
                b2: if bias {
                    Some(take_matrix("b2", 1, d_out)?.data().to_vec())
                } else {
                    None
                },
                l2_normalize_output: l2norm,
            },
        };
        Ok(model)
    }
}

/// `y = x w^T (+ bias)` with `w` shaped `out x in`. Row-parallel with
/// per-row sequential accumulation, so results are schedule-independent.
fn affine(x: &Matrix, w: &Matrix, bias: Option<&[f64]>) -> Matrix {
    use rayon::prelude::*;
    let out_dim = w.rows();
    let mut y = Matrix::zeros(x.rows(), out_dim);
    y.data_mut()
        .par_chunks_mut(out_dim.max(1))
        .enumerate()
        .for_each(|(i, out)| {
            let xi = x.row(i);
            for (o, slot) in out.iter_mut().enumerate() {
                let wrow = w.row(o);
                let mut s = 0.0;
                for k in 0..xi.len() {
                    s += xi[k] * wrow[k];
                }
                *slot = s + bias.map_or(0.0, |b| b[o]);
            }
        });
    y
}

/// Gradients of an affine layer: `gw[o][k] = sum_i gy[i][o] x[i][k]`,
/// `gb[o] = sum_i gy[i][o]`.
fn affine_backward(x: &Matrix, grad_y: &Matrix, with_bias: bool) -> (Matrix, Option<Vec<f64>>) {
    let mut gw = Matrix::zeros(grad_y.cols(), x.cols());
    let mut gb = with_bias.then(|| vec![0.0f64; grad_y.cols()]);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let gy = grad_y.row(i);
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wrow = gw.row_mut(o);
            for k in 0..xi.len() {
                wrow[k] += g * xi[k];
            }
            if let Some(b) = &mut gb {
                b[o] += g;
            }
        }
    }
    (gw, gb)
}
