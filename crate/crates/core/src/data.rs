//! Datasets: a seeded union-of-subspaces generator, IDX image/label files,
//! and membership construction.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coding_rate::MembershipMatrix;
use crate::error::{Error, Result};
use crate::numerics::orthonormalize_columns;
use crate::rng::{gaussian_matrix, substream, Stream};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Inputs as columns of a D×m matrix with integer labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Array2<T>,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Checks label range, class coverage and `m ≥ k`.
    pub fn new(x: Array2<T>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if x.ncols() != labels.len() {
            return Err(Error::CountMismatch {
                images: x.ncols(),
                labels: labels.len(),
            });
        }
        if k == 0 || labels.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot cover {k} classes",
                labels.len()
            )));
        }
        let counts = class_counts(&labels, k)?;
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(j));
        }
        Ok(Self { x, labels, k })
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.k).expect("labels validated")
    }

    pub fn membership(&self) -> MembershipMatrix<T> {
        MembershipMatrix::one_hot(&self.labels, self.k).expect("labels validated")
    }

    /// The samples at `indices`, in that order. Class coverage is not
    /// re-checked.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(1), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    /// Rescales every input column to unit norm (zero columns stay zero).
    pub fn normalize_columns(&mut self) {
        for mut c in self.x.columns_mut() {
            let n = c.dot(&c).sqrt();
            if n > T::zero() {
                c.mapv_inplace(|v| v / n);
            }
        }
    }

    /// Per-class deterministic split: `round(test_fraction · n_j)` samples of
    /// each class go to the test side, keeping at least one per class on the
    /// train side. Both sides keep the original sample order.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = substream(seed, Stream::Split);
        let mut is_test = vec![false; self.samples()];
        for j in 0..self.k {
            let mut members: Vec<usize> = (0..self.samples()).filter(|&i| self.labels[i] == j).collect();
            members.shuffle(&mut rng);
            let n_test = ((members.len() as f64 * test_fraction).round() as usize).min(members.len() - 1);
            for &i in &members[..n_test] {
                is_test[i] = true;
            }
        }
        let train: Vec<usize> = (0..self.samples()).filter(|&i| !is_test[i]).collect();
        let test: Vec<usize> = (0..self.samples()).filter(|&i| is_test[i]).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

fn class_counts(labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; k];
    for &l in labels {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
        counts[l] += 1;
    }
    Ok(counts)
}

/// Binary Π from integer labels.
pub fn one_hot_membership<T: Scalar>(labels: &[usize], k: usize) -> Result<MembershipMatrix<T>> {
    MembershipMatrix::one_hot(labels, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub ambient_dim: usize,
    pub classes: usize,
    pub subspace_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    /// Filled from the run seed.
    #[serde(skip)]
    pub seed: u64,
    /// Mutually orthogonal class subspaces (needs `k·r ≤ D`).
    pub orthogonal: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            ambient_dim: 32,
            classes: 4,
            subspace_dim: 4,
            samples_per_class: 256,
            noise_sigma: 0.05,
            seed: 0,
            orthogonal: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.ambient_dim == 0 || self.classes == 0 || self.subspace_dim == 0 || self.samples_per_class == 0 {
            return bad("synthetic dimensions and counts must be positive".into());
        }
        if self.subspace_dim > self.ambient_dim {
            return bad(format!(
                "subspace dimension {} exceeds ambient dimension {}",
                self.subspace_dim, self.ambient_dim
            ));
        }
        if self.orthogonal && self.classes * self.subspace_dim > self.ambient_dim {
            return bad(format!(
                "{} orthogonal subspaces of dimension {} do not fit in dimension {}",
                self.classes, self.subspace_dim, self.ambient_dim
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma must be nonnegative, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

/// Samples of each class drawn from its own `r`-dimensional subspace, with
/// isotropic noise, normalized to unit length. Samples are grouped by class.
/// Returns the dataset and the D×r orthonormal basis of each class.
pub fn synth_subspaces<T: Scalar>(cfg: &SynthConfig) -> Result<(Dataset<T>, Vec<Array2<T>>)> {
    cfg.validate()?;
    let (dim, k, r, n) = (cfg.ambient_dim, cfg.classes, cfg.subspace_dim, cfg.samples_per_class);
    let mut rng = substream(cfg.seed, Stream::Data);
    let bases: Vec<Array2<T>> = if cfg.orthogonal {
        let frame = orthonormalize_columns(gaussian_matrix::<T, _>(&mut rng, dim, k * r).view())?;
        (0..k)
            .map(|j| frame.slice(ndarray::s![.., j * r..(j + 1) * r]).to_owned())
            .collect()
    } else {
        (0..k)
            .map(|_| orthonormalize_columns(gaussian_matrix::<T, _>(&mut rng, dim, r).view()))
            .collect::<Result<_>>()?
    };
    let sigma = T::lit(cfg.noise_sigma);
    let mut x = Array2::zeros((dim, k * n));
    let mut labels = Vec::with_capacity(k * n);
    for (j, basis) in bases.iter().enumerate() {
        let coeffs = gaussian_matrix::<T, _>(&mut rng, r, n);
        let mut block = basis.dot(&coeffs);
        if cfg.noise_sigma > 0.0 {
            block.scaled_add(sigma, &gaussian_matrix::<T, _>(&mut rng, dim, n));
        }
        for (i, mut col) in block.columns_mut().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !(norm > T::zero()) {
                return Err(Error::Numerical(format!("class {j} sample {i} has zero norm")));
            }
            col.mapv_inplace(|v| v / norm);
        }
        x.slice_mut(ndarray::s![.., j * n..(j + 1) * n]).assign(&block);
        labels.extend(std::iter::repeat_n(j, n));
    }
    Ok((Dataset::new(x, labels, k)?, bases))
}

struct IdxHeader {
    dims: Vec<usize>,
    payload_start: usize,
}

fn parse_idx_header(bytes: &[u8], magic: u32, what: &str) -> Result<IdxHeader> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::TruncatedPayload(format!("{what} header is incomplete")))
    };
    let found = word(0)?;
    if found != magic {
        return Err(Error::WrongMagic { expected: magic, found });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (1..=ndim).map(|i| word(i).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    Ok(IdxHeader {
        dims,
        payload_start: 4 * (ndim + 1),
    })
}

fn idx_payload<'a>(bytes: &'a [u8], header: &IdxHeader, what: &str) -> Result<&'a [u8]> {
    let len: usize = header.dims.iter().product();
    let end = header.payload_start + len;
    if bytes.len() < end {
        return Err(Error::TruncatedPayload(format!(
            "{what} declares {len} bytes of data, file holds {}",
            bytes.len() - header.payload_start
        )));
    }
    if bytes.len() > end {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} trailing bytes",
            bytes.len() - end
        )));
    }
    Ok(&bytes[header.payload_start..end])
}

/// Parses in-memory IDX image and label files. Each image becomes one
/// column (row-major pixel order), scaled to `[0, 1]`; `k` is the largest
/// label plus one.
pub fn parse_idx<T: Scalar>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let ih = parse_idx_header(images, IDX_IMAGES_MAGIC, "image file")?;
    let pixels = idx_payload(images, &ih, "image file")?;
    let lh = parse_idx_header(labels, IDX_LABELS_MAGIC, "label file")?;
    let label_bytes = idx_payload(labels, &lh, "label file")?;
    let count = ih.dims[0];
    if count != lh.dims[0] {
        return Err(Error::CountMismatch {
            images: count,
            labels: lh.dims[0],
        });
    }
    let per_image = ih.dims[1] * ih.dims[2];
    let scale = T::lit(255.0);
    let x = Array2::from_shape_fn((per_image, count), |(p, i)| {
        T::from_u8(pixels[i * per_image + p]).expect("byte") / scale
    });
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(x, labels, k)
}

pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    parse_idx(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Encodes a dataset as IDX image/label byte streams with `rows × cols`
/// images. Pixels are rounded to the nearest multiple of 1/255.
pub fn encode_idx<T: Scalar>(data: &Dataset<T>, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != data.input_dim() {
        return Err(Error::Shape(format!(
            "{rows}×{cols} images do not match input dimension {}",
            data.input_dim()
        )));
    }
    if data.k > 256 {
        return Err(Error::InvalidArgument("IDX labels hold at most 256 classes".into()));
    }
    let count = data.samples() as u32;
    let mut images = Vec::with_capacity(16 + data.x.len());
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows as u32, cols as u32] {
        images.extend(v.to_be_bytes());
    }
    for col in data.x.columns() {
        for &v in col {
            let b = (v.to_f64_lossy() * 255.0).round();
            if !(0.0..=255.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
            }
            images.push(b as u8);
        }
    }
    let mut labels = Vec::with_capacity(8 + data.samples());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend(count.to_be_bytes());
    labels.extend(data.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx<T: Scalar>(
    data: &Dataset<T>,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let (images, labels) = encode_idx(data, rows, cols)?;
    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}
