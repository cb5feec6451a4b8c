//! Dense symmetric linear algebra: log-determinants of `I + cM`, symmetric
//! eigendecompositions, spectral factors of weighted Grams, and the
//! variational gap of a factorization `UUᵀ = M`.
//!
//! Everything here is a pure function of its inputs.

mod cholesky;
mod eigen;

use ndarray::{Array2, ArrayView2, Axis};

pub use cholesky::Cholesky;
pub use eigen::EigenDecomposition;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column-major semantics: columns of a feature matrix are samples.
pub type DenseMatrix<T> = Array2<T>;

/// Matrices up to this dimension take the eigenvalue path in
/// [`logdet_i_plus`]; larger ones are factored with Cholesky.
pub const EIGEN_PATH_MAX_DIM: usize = 64;

pub fn frobenius_norm<T: Scalar>(m: ArrayView2<T>) -> T {
    m.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

pub fn ensure_finite<T: Scalar>(m: ArrayView2<T>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Validates symmetry (relative to `‖M‖_F`) and returns `(M + Mᵀ)/2`.
pub fn symmetrized<T: Scalar>(m: ArrayView2<T>) -> Result<Array2<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    ensure_finite(m, "symmetric matrix")?;
    let norm = frobenius_norm(m);
    let asym = frobenius_norm((&m - &m.t()).view());
    if asym > T::symmetry_tol() * norm {
        let rel = if norm > T::zero() { asym / norm } else { asym };
        return Err(Error::NotSymmetric(rel.to_f64_lossy()));
    }
    let half = T::lit(0.5);
    Ok((&m + &m.t()).mapv(|x| x * half))
}

/// Symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig<T: Scalar>(m: ArrayView2<T>) -> Result<EigenDecomposition<T>> {
    let sym = symmetrized(m)?;
    eigen::symmetric_eigen(&sym)
}

/// [`sym_eig`] for a matrix declared positive semidefinite: eigenvalues are
/// clamped at zero.
pub fn sym_eig_psd<T: Scalar>(m: ArrayView2<T>) -> Result<EigenDecomposition<T>> {
    Ok(sym_eig(m)?.clamp_nonnegative())
}

fn check_logdet_args<T: Scalar>(c: T, m: ArrayView2<T>) -> Result<Array2<T>> {
    if !c.is_finite() {
        return Err(Error::NonFinite("log-det scale"));
    }
    if c < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "log-det scale must be nonnegative, got {c}"
        )));
    }
    symmetrized(m)
}

/// `log det(I + cM) = Σ log(1 + c λᵢ)` for symmetric PSD `M` and `c ≥ 0`.
///
/// Small matrices go through the eigenvalue sum (negative round-off
/// eigenvalues clamped to zero), large ones through Cholesky of `I + cM`.
pub fn logdet_i_plus<T: Scalar>(c: T, m: ArrayView2<T>) -> Result<T> {
    let sym = check_logdet_args(c, m)?;
    logdet_i_plus_symmetric(c, &sym)
}

/// Eigenvalue route of [`logdet_i_plus`], regardless of dimension.
pub fn logdet_i_plus_eigen<T: Scalar>(c: T, m: ArrayView2<T>) -> Result<T> {
    let sym = check_logdet_args(c, m)?;
    eigen_logdet(c, &sym)
}

/// Cholesky route of [`logdet_i_plus`], regardless of dimension.
pub fn logdet_i_plus_cholesky<T: Scalar>(c: T, m: ArrayView2<T>) -> Result<T> {
    let sym = check_logdet_args(c, m)?;
    Ok(Cholesky::new(i_plus_scaled(c, sym.view()).view())?.logdet())
}

/// Path-selecting log-det for a matrix that is symmetric by construction.
pub(crate) fn logdet_i_plus_symmetric<T: Scalar>(c: T, sym: &Array2<T>) -> Result<T> {
    if c == T::zero() || sym.nrows() == 0 {
        return Ok(T::zero());
    }
    if sym.nrows() <= EIGEN_PATH_MAX_DIM {
        eigen_logdet(c, sym)
    } else {
        Ok(Cholesky::new(i_plus_scaled(c, sym.view()).view())?.logdet())
    }
}

fn eigen_logdet<T: Scalar>(c: T, sym: &Array2<T>) -> Result<T> {
    let eig = eigen::symmetric_eigen(sym)?.clamp_nonnegative();
    Ok(eig.eigenvalues.iter().map(|&l| (c * l).ln_1p()).sum())
}

/// `I + cM`.
pub(crate) fn i_plus_scaled<T: Scalar>(c: T, m: ArrayView2<T>) -> Array2<T> {
    let mut out = m.mapv(|x| x * c);
    for i in 0..out.nrows() {
        out[[i, i]] += T::one();
    }
    out
}

/// Makes a computed Gram exactly symmetric by averaging with its transpose.
pub(crate) fn symmetrize_inplace<T: Scalar>(m: &mut Array2<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in 0..i {
            let v = (m[[i, j]] + m[[j, i]]) * half;
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Indices of strictly positive weights.
pub(crate) fn active_indices<T: Scalar>(w: &[T]) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, &x)| x > T::zero())
        .map(|(i, _)| i)
        .collect()
}

/// `Z Diag(w) Zᵀ` (d×d), touching only columns with positive weight.
pub fn weighted_gram<T: Scalar>(z: ArrayView2<T>, w: &[T]) -> Array2<T> {
    let active = active_indices(w);
    let za = z.select(Axis(1), &active);
    let mut scaled = za.clone();
    for (mut col, &i) in scaled.columns_mut().into_iter().zip(&active) {
        let wi = w[i];
        col.mapv_inplace(|x| x * wi);
    }
    let mut g = scaled.dot(&za.t());
    symmetrize_inplace(&mut g);
    g
}

/// `Diag(w)^{1/2} Zᵀ Z Diag(w)^{1/2}` over the full sample index (m×m);
/// shares its nonzero spectrum with [`weighted_gram`].
pub fn weighted_sample_gram<T: Scalar>(z: ArrayView2<T>, w: &[T]) -> Array2<T> {
    let mut scaled = z.to_owned();
    for (mut col, &wi) in scaled.columns_mut().into_iter().zip(w) {
        let r = wi.max(T::zero()).sqrt();
        col.mapv_inplace(|x| x * r);
    }
    let mut g = scaled.t().dot(&scaled);
    symmetrize_inplace(&mut g);
    g
}

/// Top-`s` eigenpairs of `Z Diag(w) Zᵀ`.
///
/// Returns `U` (d×s, orthonormal columns) and `σ` descending and
/// nonnegative. When every weight is zero the Gram vanishes: `σ = 0` and `U`
/// is the leading block of the identity.
pub fn top_svd_of_weighted_gram<T: Scalar>(
    z: ArrayView2<T>,
    w: &[T],
    s: usize,
) -> Result<(Array2<T>, Vec<T>)> {
    let d = z.nrows();
    if s > d {
        return Err(Error::InvalidArgument(format!(
            "requested {s} spectral pairs from a {d}x{d} Gram"
        )));
    }
    if w.len() != z.ncols() {
        return Err(Error::Shape(format!(
            "{} weights for {} samples",
            w.len(),
            z.ncols()
        )));
    }
    if let Some(i) = w.iter().position(|x| !(*x >= T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "weight {i} is negative or NaN"
        )));
    }
    ensure_finite(z, "feature matrix")?;
    let gram = weighted_gram(z, w);
    let eig = eigen::symmetric_eigen(&gram)?.clamp_nonnegative();
    let u = eig.eigenvectors.slice(ndarray::s![.., ..s]).to_owned();
    let sigma = eig.eigenvalues[..s].to_vec();
    Ok((u, sigma))
}

/// `Σᵢ log(1 + c‖Uᵢ‖²) − log det(I + cM)` for a factorization `UUᵀ = M`.
///
/// Nonnegative for every valid factorization; zero at `U = Ū S^{1/2}` where
/// `Ū S Ūᵀ` is the eigendecomposition of `M`.
pub fn variational_gap<T: Scalar>(m: ArrayView2<T>, c: T, u: ArrayView2<T>) -> Result<T> {
    if u.nrows() != m.nrows() {
        return Err(Error::Shape(format!(
            "factor has {} rows, matrix is {}x{}",
            u.nrows(),
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(u, "factor")?;
    let sym = check_logdet_args(c, m)?;
    let mismatch = frobenius_norm((&u.dot(&u.t()) - &sym).view());
    if mismatch > T::lit(1e-8) * (T::one() + frobenius_norm(sym.view())) {
        return Err(Error::FactorizationMismatch(mismatch.to_f64_lossy()));
    }
    let columns: T = u
        .columns()
        .into_iter()
        .map(|col| (c * col.dot(&col)).ln_1p())
        .sum();
    Ok(columns - logdet_i_plus_symmetric(c, &sym)?)
}

/// `Ū S^{1/2}` from the eigendecomposition of a PSD matrix.
pub fn spectral_factor<T: Scalar>(m: ArrayView2<T>) -> Result<Array2<T>> {
    let eig = sym_eig_psd(m)?;
    let mut u = eig.eigenvectors;
    for (mut col, l) in u.columns_mut().into_iter().zip(eig.eigenvalues) {
        let r = l.sqrt();
        col.mapv_inplace(|x| x * r);
    }
    Ok(u)
}

/// Thin QR orthonormalization of the columns of `a` (Gram–Schmidt with one
/// reorthogonalization pass). Fails on rank deficiency.
pub fn orthonormalize_columns<T: Scalar>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let (rows, cols) = a.dim();
    if cols > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot orthonormalize {cols} columns in dimension {rows}"
        )));
    }
    let mut q = a.to_owned();
    for j in 0..cols {
        let original = frobenius_norm(q.column(j).insert_axis(Axis(1)));
        for _pass in 0..2 {
            for p in 0..j {
                let proj = q.column(p).dot(&q.column(j));
                let qp = q.column(p).to_owned();
                q.column_mut(j).scaled_add(-proj, &qp);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if !(norm > T::epsilon().sqrt() * original) {
            return Err(Error::Numerical(format!(
                "column {j} is linearly dependent on its predecessors"
            )));
        }
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    Ok(q)
}
