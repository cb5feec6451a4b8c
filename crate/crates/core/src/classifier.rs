//! Nearest-subspace classification: each class is summarized by the top
//! `⌊d/k⌋` principal directions of its (uncentered) feature Gram, and a
//! feature is assigned to the class with the smallest projection residual.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::coding_rate::{FeatureMatrix, MembershipMatrix};
use crate::error::{Error, Result};
use crate::numerics::top_svd_of_weighted_gram;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel<T> {
    /// d×s orthonormal basis per class.
    pub bases: Vec<Array2<T>>,
}

impl<T: Scalar> SubspaceModel<T> {
    pub fn classes(&self) -> usize {
        self.bases.len()
    }

    pub fn dim(&self) -> usize {
        self.bases.first().map_or(0, |b| b.nrows())
    }

    pub fn subspace_dim(&self) -> usize {
        self.bases.first().map_or(0, |b| b.ncols())
    }

    /// `‖(I − VⱼVⱼᵀ)z‖²` for every class, through `1 − ‖Vⱼᵀz‖²`.
    pub fn residuals(&self, z: ArrayView1<T>) -> Vec<T> {
        let norm_sq = z.dot(&z);
        self.bases
            .iter()
            .map(|v| {
                let p = v.t().dot(&z);
                norm_sq - p.dot(&p)
            })
            .collect()
    }
}

pub fn fit<T: Scalar>(z: &FeatureMatrix<T>, pi: &MembershipMatrix<T>) -> Result<SubspaceModel<T>> {
    let (d, k) = (z.dim(), pi.classes());
    if pi.samples() != z.samples() {
        return Err(Error::Shape(format!(
            "{} features but {} membership rows",
            z.samples(),
            pi.samples()
        )));
    }
    if d < k {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {d} is smaller than the class count {k}"
        )));
    }
    let s = d / k;
    let bases = (0..k)
        .map(|j| top_svd_of_weighted_gram(z.view(), &pi.class_weights(j), s).map(|(u, _)| u))
        .collect::<Result<_>>()?;
    Ok(SubspaceModel { bases })
}

/// Class with the smallest residual; ties go to the lowest index.
pub fn predict<T: Scalar>(model: &SubspaceModel<T>, z: ArrayView1<T>) -> usize {
    let residuals = model.residuals(z);
    let mut best = 0;
    for (j, &r) in residuals.iter().enumerate() {
        if r < residuals[best] {
            best = j;
        }
    }
    best
}

pub fn predict_all<T: Scalar>(model: &SubspaceModel<T>, z: ArrayView2<T>) -> Vec<usize> {
    z.columns().into_iter().map(|c| predict(model, c)).collect()
}

/// Fraction of columns whose prediction equals the label.
pub fn evaluate<T: Scalar>(model: &SubspaceModel<T>, z: &FeatureMatrix<T>, labels: &[usize]) -> Result<f64> {
    if labels.len() != z.samples() {
        return Err(Error::Shape(format!(
            "{} features but {} labels",
            z.samples(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let correct = predict_all(model, z.view())
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
