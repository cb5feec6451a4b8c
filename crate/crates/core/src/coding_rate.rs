//! The coding rate reduction objective
//!
//! ```text
//! ΔR(Z) = R(Z) − R_c(Z, Π)
//! R(Z)      = ½ log det(I + α ZZᵀ)
//! R_c(Z, Π) = Σⱼ (γⱼ/2) log det(I + αⱼ Z Diag(Πⱼ) Zᵀ)
//! ```
//!
//! with `α = d/(mε²)`, `αⱼ = d/(⟨1,Πⱼ⟩ε²)`, `γⱼ = ⟨1,Πⱼ⟩/m`, and its analytic
//! gradient with respect to `Z`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numerics::{
    self, active_indices, ensure_finite, logdet_i_plus_symmetric, weighted_gram,
    weighted_sample_gram, Cholesky,
};
use crate::scalar::Scalar;

/// Tolerance on `‖Zᵢ‖₂ = 1` for feature columns.
pub const UNIT_NORM_TOL: f64 = 1e-8;
/// Tolerance on the row sums of a membership matrix.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// A d×m feature matrix whose columns lie on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T>(Array2<T>);

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(z: Array2<T>) -> Result<Self> {
        ensure_finite(z.view(), "feature matrix")?;
        let tol = T::lit(UNIT_NORM_TOL);
        for (i, col) in z.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "feature column {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self(z))
    }

    /// Wraps a matrix without the unit-norm check (test fixtures such as
    /// `Z = 0`, finite-difference probes).
    pub fn new_unchecked(z: Array2<T>) -> Self {
        Self(z)
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn as_matrix(&self) -> &Array2<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }
}

/// m×k class membership: row `i` holds the class probabilities of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix<T> {
    pi: Array2<T>,
}

impl<T: Scalar> MembershipMatrix<T> {
    pub fn new(pi: Array2<T>) -> Result<Self> {
        if pi.ncols() == 0 {
            return Err(Error::InvalidArgument("membership needs k >= 1".into()));
        }
        ensure_finite(pi.view(), "membership matrix")?;
        let tol = T::lit(ROW_SUM_TOL).max(T::epsilon() * T::lit(64.0));
        for (i, row) in pi.rows().into_iter().enumerate() {
            if row.iter().any(|&x| x < T::zero() || x > T::one()) {
                return Err(Error::InvalidArgument(format!(
                    "membership row {i} has entries outside [0, 1]"
                )));
            }
            let s: T = row.sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "membership row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self { pi })
    }

    /// Binary membership from integer labels.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("membership needs k >= 1".into()));
        }
        let mut pi = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: k,
                });
            }
            pi[[i, l]] = T::one();
        }
        Ok(Self { pi })
    }

    pub fn samples(&self) -> usize {
        self.pi.nrows()
    }

    pub fn classes(&self) -> usize {
        self.pi.ncols()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.pi
    }

    /// Column `Πⱼ` as a contiguous vector.
    pub fn class_weights(&self, j: usize) -> Vec<T> {
        self.pi.column(j).to_vec()
    }

    pub fn class_column(&self, j: usize) -> ArrayView1<'_, T> {
        self.pi.column(j)
    }

    /// `⟨1, Πⱼ⟩`.
    pub fn class_mass(&self, j: usize) -> T {
        self.pi.column(j).sum()
    }

    /// The membership rows of a batch of samples.
    pub fn select(&self, samples: &[usize]) -> Self {
        Self {
            pi: self.pi.select(Axis(0), samples),
        }
    }

    /// Highest-probability class of each sample (lowest index on ties).
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.pi
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Constants of the objective for one (batch of) samples.
///
/// Classes with zero mass in the batch carry `αⱼ = γⱼ = 0` and are skipped by
/// every class-wise sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingRateParams<T> {
    pub epsilon_sq: T,
    pub alpha: T,
    pub alpha_per_class: Vec<T>,
    pub gamma_per_class: Vec<T>,
}

impl<T: Scalar> CodingRateParams<T> {
    pub fn classes(&self) -> usize {
        self.gamma_per_class.len()
    }

    pub fn is_present(&self, j: usize) -> bool {
        self.gamma_per_class[j] > T::zero()
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes()).filter(|&j| self.is_present(j))
    }
}

fn build_params<T: Scalar>(
    pi: &MembershipMatrix<T>,
    d: usize,
    epsilon_sq: T,
    allow_empty: bool,
) -> Result<CodingRateParams<T>> {
    if !(epsilon_sq > T::zero()) || !epsilon_sq.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon^2 must be positive, got {epsilon_sq}"
        )));
    }
    let m = T::from_usize(pi.samples()).expect("sample count");
    let d = T::from_usize(d).expect("feature dimension");
    let k = pi.classes();
    let mut alpha_per_class = Vec::with_capacity(k);
    let mut gamma_per_class = Vec::with_capacity(k);
    for j in 0..k {
        let mass = pi.class_mass(j);
        if mass > T::zero() {
            alpha_per_class.push(d / (mass * epsilon_sq));
            gamma_per_class.push(mass / m);
        } else if allow_empty {
            alpha_per_class.push(T::zero());
            gamma_per_class.push(T::zero());
        } else {
            return Err(Error::EmptyClass(j));
        }
    }
    Ok(CodingRateParams {
        epsilon_sq,
        alpha: d / (m * epsilon_sq),
        alpha_per_class,
        gamma_per_class,
    })
}

/// Derives `α, αⱼ, γⱼ` from the membership; every class must have mass.
pub fn params_from<T: Scalar>(
    pi: &MembershipMatrix<T>,
    d: usize,
    epsilon_sq: T,
) -> Result<CodingRateParams<T>> {
    build_params(pi, d, epsilon_sq, false)
}

/// Like [`params_from`], but classes absent from the batch are marked
/// absent instead of rejected.
pub fn params_for_batch<T: Scalar>(
    pi: &MembershipMatrix<T>,
    d: usize,
    epsilon_sq: T,
) -> Result<CodingRateParams<T>> {
    build_params(pi, d, epsilon_sq, true)
}

/// Which Gram a log-determinant is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `Z Diag(w) Zᵀ`, d×d.
    Feature,
    /// `Diag(w)^{1/2} Zᵀ Z Diag(w)^{1/2}`, m×m.
    Sample,
}

impl GramSide {
    /// The smaller side: d×d when `d ≤ m`.
    pub fn smaller(d: usize, m: usize) -> Self {
        if d <= m {
            GramSide::Feature
        } else {
            GramSide::Sample
        }
    }
}

/// `log det(I + c Z Diag(w) Zᵀ)` on the requested side.
fn weighted_logdet<T: Scalar>(z: ArrayView2<T>, w: &[T], c: T, side: GramSide) -> Result<T> {
    let gram = match side {
        GramSide::Feature => weighted_gram(z, w),
        GramSide::Sample => weighted_sample_gram(z, w),
    };
    logdet_i_plus_symmetric(c, &gram)
}

/// `log det(I + c Z Diag(w) Zᵀ)`, adding `scale · c (I + c Z Diag(w) Zᵀ)⁻¹
/// Z Diag(w)` into `grad` (d×m). The value and the solve share one Gram.
fn logdet_and_grad<T: Scalar>(
    z: ArrayView2<T>,
    w: &[T],
    c: T,
    side: GramSide,
    scale: T,
    grad: &mut Array2<T>,
) -> Result<T> {
    if c == T::zero() {
        return Ok(T::zero());
    }
    match side {
        GramSide::Feature => {
            let active = active_indices(w);
            let gram = weighted_gram(z, w);
            let value = logdet_i_plus_symmetric(c, &gram)?;
            let chol = Cholesky::new(numerics::i_plus_scaled(c, gram.view()).view())
                .map_err(|_| Error::Numerical("I + cZDZ^T is not positive definite".into()))?;
            let mut rhs = z.select(Axis(1), &active);
            for (mut col, &i) in rhs.columns_mut().into_iter().zip(&active) {
                let s = c * w[i];
                col.mapv_inplace(|x| x * s);
            }
            chol.solve_inplace(&mut rhs)?;
            for (col, &i) in rhs.columns().into_iter().zip(&active) {
                grad.column_mut(i).scaled_add(scale, &col);
            }
            Ok(value)
        }
        GramSide::Sample => {
            // (I + cWWᵀ)⁻¹ W = W (I + cWᵀW)⁻¹ with W = Z Diag(w)^{1/2}
            let m = z.ncols();
            let roots: Vec<T> = w.iter().map(|x| x.max(T::zero()).sqrt()).collect();
            let gram = weighted_sample_gram(z, w);
            let value = logdet_i_plus_symmetric(c, &gram)?;
            let chol = Cholesky::new(numerics::i_plus_scaled(c, gram.view()).view())
                .map_err(|_| Error::Numerical("I + cW^TW is not positive definite".into()))?;
            let mut rhs = Array2::zeros((m, m));
            for i in 0..m {
                rhs[[i, i]] = c * roots[i];
            }
            chol.solve_inplace(&mut rhs)?;
            let mut wmat = z.to_owned();
            for (mut col, &r) in wmat.columns_mut().into_iter().zip(&roots) {
                col.mapv_inplace(|x| x * r);
            }
            grad.scaled_add(scale, &wmat.dot(&rhs));
            Ok(value)
        }
    }
}

fn check_shapes<T: Scalar>(z: ArrayView2<T>, pi: &MembershipMatrix<T>, p: &CodingRateParams<T>) -> Result<()> {
    if z.ncols() != pi.samples() {
        return Err(Error::Shape(format!(
            "Z has {} samples, membership has {}",
            z.ncols(),
            pi.samples()
        )));
    }
    if p.classes() != pi.classes() {
        return Err(Error::Shape(format!(
            "parameters cover {} classes, membership has {}",
            p.classes(),
            pi.classes()
        )));
    }
    ensure_finite(z, "feature matrix")
}

/// `R(Z) = ½ log det(I + αZZᵀ)`, evaluated on the smaller Gram.
pub fn rate<T: Scalar>(z: ArrayView2<T>, alpha: T) -> Result<T> {
    rate_on(z, alpha, GramSide::smaller(z.nrows(), z.ncols()))
}

/// [`rate`] on an explicit Gram side.
pub fn rate_on<T: Scalar>(z: ArrayView2<T>, alpha: T, side: GramSide) -> Result<T> {
    if !(alpha >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    ensure_finite(z, "feature matrix")?;
    let ones = vec![T::one(); z.ncols()];
    Ok(T::lit(0.5) * weighted_logdet(z, &ones, alpha, side)?)
}

/// `R_c(Z, Π) = Σⱼ (γⱼ/2) log det(I + αⱼ Z Diag(Πⱼ) Zᵀ)`.
pub fn rate_c<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    p: &CodingRateParams<T>,
) -> Result<T> {
    check_shapes(z, pi, p)?;
    let side = GramSide::smaller(z.nrows(), z.ncols());
    let half = T::lit(0.5);
    let mut total = T::zero();
    for j in p.present_classes() {
        let w = pi.class_weights(j);
        total += p.gamma_per_class[j] * half * weighted_logdet(z, &w, p.alpha_per_class[j], side)?;
    }
    Ok(total)
}

/// `ΔR = R − R_c`.
pub fn delta_r<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    p: &CodingRateParams<T>,
) -> Result<T> {
    Ok(rate(z, p.alpha)? - rate_c(z, pi, p)?)
}

/// `∇_Z ΔR = α(I + αZZᵀ)⁻¹Z − Σⱼ γⱼαⱼ(I + αⱼZ Diag(Πⱼ)Zᵀ)⁻¹ Z Diag(Πⱼ)`.
pub fn grad_delta_r_z<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    p: &CodingRateParams<T>,
) -> Result<Array2<T>> {
    Ok(delta_r_with_grad(z, pi, p)?.grad)
}

/// Value and gradient of the objective in one pass.
#[derive(Debug, Clone)]
pub struct RateReduction<T> {
    pub rate: T,
    pub rate_c: T,
    pub delta_r: T,
    pub grad: Array2<T>,
}

/// [`delta_r`] together with [`grad_delta_r_z`].
pub fn delta_r_with_grad<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    p: &CodingRateParams<T>,
) -> Result<RateReduction<T>> {
    check_shapes(z, pi, p)?;
    let side = GramSide::smaller(z.nrows(), z.ncols());
    let half = T::lit(0.5);
    let ones = vec![T::one(); z.ncols()];
    let mut grad = Array2::zeros(z.dim());
    let rate = half * logdet_and_grad(z, &ones, p.alpha, side, T::one(), &mut grad)?;
    let mut rate_c = T::zero();
    for j in p.present_classes() {
        let w = pi.class_weights(j);
        let (a, g) = (p.alpha_per_class[j], p.gamma_per_class[j]);
        rate_c += g * half * logdet_and_grad(z, &w, a, side, -g, &mut grad)?;
    }
    Ok(RateReduction {
        rate,
        rate_c,
        delta_r: rate - rate_c,
        grad,
    })
}
