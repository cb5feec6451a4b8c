//! The variational objective
//!
//! ```text
//! R^v(Γ, A) − R^v_c(A) − (μ/2m) M(Z, Γ, A)
//! R^v(Γ, A)  = ½ log det(I + α Γ Diag(A·1) Γᵀ)
//! R^v_c(A)   = Σⱼ (γⱼ/2) Σₗ log(1 + αⱼ A_{l,j})
//! M(Z, Γ, A) = Σⱼ (1/γⱼ) ‖Z Diag(Πⱼ) Zᵀ − Γ Diag(Aⱼ) Γᵀ‖²_F
//! ```
//!
//! over a unit-column dictionary `Γ` (d×q) and a nonnegative spectral code
//! `A` (q×k). The per-class log-determinants of the original objective turn
//! into the O(qk) sum `R^v_c`; the class covariances only enter through the
//! penalty.
//!
//! Cost notes: class covariances touch only samples with positive weight,
//! and `Γ Diag(Aⱼ) Γᵀ` only atoms with positive code, so a block-sparse `A`
//! (the shape latching produces) keeps every class term proportional to its
//! own block.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coding_rate::{CodingRateParams, MembershipMatrix};
use crate::error::{Error, Result};
use crate::numerics::{
    self, active_indices, ensure_finite, frobenius_norm, logdet_i_plus_symmetric,
    top_svd_of_weighted_gram, weighted_gram, Cholesky,
};
use crate::rng::unit_vector;
use crate::scalar::Scalar;

/// Eigenvalues below this are written to the code as exact zeros.
pub const LATCH_EIGEN_FLOOR: f64 = 1e-12;

/// Dictionary `Γ` and spectral code `A`; class `j`'s factor is
/// `Γ Diag(Aⱼ)^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState<T> {
    pub gamma: Array2<T>,
    pub a: Array2<T>,
}

impl<T: Scalar> VariationalState<T> {
    /// Validates unit dictionary columns and a nonnegative code.
    pub fn new(gamma: Array2<T>, a: Array2<T>) -> Result<Self> {
        if gamma.ncols() == 0 || gamma.ncols() != a.nrows() {
            return Err(Error::Shape(format!(
                "dictionary has {} atoms, code has {} rows",
                gamma.ncols(),
                a.nrows()
            )));
        }
        ensure_finite(gamma.view(), "dictionary")?;
        ensure_finite(a.view(), "spectral code")?;
        let tol = T::lit(1e-8);
        for (l, col) in gamma.columns().into_iter().enumerate() {
            let n = col.dot(&col).sqrt();
            if (n - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "dictionary atom {l} has norm {n}"
                )));
            }
        }
        check_code(&a)?;
        Ok(Self { gamma, a })
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn classes(&self) -> usize {
        self.a.ncols()
    }

    /// `U⁽ʲ⁾ = Γ Diag(Aⱼ)^{1/2}`.
    pub fn class_factor(&self, j: usize) -> Array2<T> {
        let mut u = self.gamma.clone();
        for (mut col, &x) in u.columns_mut().into_iter().zip(self.a.column(j)) {
            let r = x.max(T::zero()).sqrt();
            col.mapv_inplace(|v| v * r);
        }
        u
    }
}

fn check_code<T: Scalar>(a: &Array2<T>) -> Result<()> {
    for ((row, col), &x) in a.indexed_iter() {
        if x < T::zero() {
            return Err(Error::NegativeCode { row, col });
        }
    }
    Ok(())
}

/// Optimization knobs for the variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationalConfig {
    /// Dictionary atoms per class; `q = q_per_class · k`.
    pub q_per_class: usize,
    pub mu: f64,
    pub nu_gamma: f64,
    pub nu_a: f64,
    /// Re-latch every this many epochs; 0 keeps only the initial latch.
    pub latch_freq: usize,
    pub lipschitz_floor: f64,
    /// Latch on the full training set (true) or on the first batch of the
    /// epoch (false).
    pub latch_on_full_data: bool,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self {
            q_per_class: 20,
            mu: 1.0,
            nu_gamma: 5.0,
            nu_a: 5.0,
            latch_freq: 50,
            lipschitz_floor: 1e-8,
            latch_on_full_data: true,
        }
    }
}

impl VariationalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("variational.{name} must be positive, got {v}")))
            }
        };
        if self.q_per_class == 0 {
            return Err(Error::Config("variational.q_per_class must be >= 1".into()));
        }
        positive("mu", self.mu)?;
        positive("nu_gamma", self.nu_gamma)?;
        positive("nu_a", self.nu_a)?;
        positive("lipschitz_floor", self.lipschitz_floor)
    }
}

/// Lipschitz bounds used to scale the dictionary and code steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes<T> {
    pub l_gamma: T,
    pub l_a: T,
}

/// `R^v(Γ, A) = ½ log det(I + α Γ Diag(A·1) Γᵀ)`.
pub fn r_v<T: Scalar>(state: &VariationalState<T>, alpha: T) -> Result<T> {
    let totals = code_totals(&state.a);
    let g = weighted_gram(state.gamma.view(), &totals);
    Ok(T::lit(0.5) * logdet_i_plus_symmetric(alpha, &g)?)
}

/// Code totals `A·1` and `Γ Diag(A·1) Γᵀ`.
fn rv_gram<T: Scalar>(state: &VariationalState<T>) -> (Vec<T>, Array2<T>) {
    let totals = code_totals(&state.a);
    let g = weighted_gram(state.gamma.view(), &totals);
    (totals, g)
}

fn code_totals<T: Scalar>(a: &Array2<T>) -> Vec<T> {
    a.sum_axis(Axis(1)).to_vec()
}

/// `R^v_c(A) = Σⱼ (γⱼ/2) Σₗ log(1 + αⱼ A_{l,j})`.
pub fn r_v_c<T: Scalar>(a: &Array2<T>, p: &CodingRateParams<T>) -> Result<T> {
    check_code(a)?;
    if a.ncols() != p.classes() {
        return Err(Error::Shape(format!(
            "code has {} classes, parameters {}",
            a.ncols(),
            p.classes()
        )));
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for j in p.present_classes() {
        let alpha_j = p.alpha_per_class[j];
        let s: T = a.column(j).iter().map(|&x| (alpha_j * x).ln_1p()).sum();
        total += p.gamma_per_class[j] * half * s;
    }
    Ok(total)
}

/// Per-class covariance residuals `Rⱼ = Z Diag(Πⱼ) Zᵀ − Γ Diag(Aⱼ) Γᵀ`.
struct Residuals<T> {
    classes: Vec<ClassResidual<T>>,
}

struct ClassResidual<T> {
    class: usize,
    samples: Vec<usize>,
    atoms: Vec<usize>,
    residual: Array2<T>,
}

fn residuals<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
) -> Residuals<T> {
    let classes = p
        .present_classes()
        .map(|j| {
            let w = pi.class_weights(j);
            let cov = weighted_gram(z, &w);
            let code: Vec<T> = state.a.column(j).to_vec();
            let atoms = active_indices(&code);
            let model = weighted_gram(state.gamma.view(), &code);
            ClassResidual {
                class: j,
                samples: active_indices(&w),
                atoms,
                residual: cov - model,
            }
        })
        .collect();
    Residuals { classes }
}

fn check_inputs<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
) -> Result<()> {
    if z.ncols() != pi.samples() {
        return Err(Error::Shape(format!(
            "Z has {} samples, membership has {}",
            z.ncols(),
            pi.samples()
        )));
    }
    if z.nrows() != state.dim() {
        return Err(Error::Shape(format!(
            "Z has dimension {}, dictionary {}",
            z.nrows(),
            state.dim()
        )));
    }
    if state.classes() != pi.classes() || p.classes() != pi.classes() {
        return Err(Error::Shape(format!(
            "class counts disagree: code {}, membership {}, parameters {}",
            state.classes(),
            pi.classes(),
            p.classes()
        )));
    }
    ensure_finite(z, "feature matrix")
}

fn samples_of<T: Scalar>(z: ArrayView2<T>) -> T {
    T::from_usize(z.ncols()).expect("sample count")
}

/// `M(Z, Γ, A) = Σⱼ (1/γⱼ) ‖Z Diag(Πⱼ) Zᵀ − Γ Diag(Aⱼ) Γᵀ‖²_F`.
pub fn m_penalty<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
) -> Result<T> {
    check_inputs(z, pi, state, p)?;
    Ok(penalty_from(&residuals(z, pi, state, p), p))
}

fn penalty_from<T: Scalar>(res: &Residuals<T>, p: &CodingRateParams<T>) -> T {
    res.classes
        .iter()
        .map(|c| {
            let f = frobenius_norm(c.residual.view());
            f * f / p.gamma_per_class[c.class]
        })
        .sum()
}

/// Value of the variational objective and its three parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms<T> {
    pub r_v: T,
    pub r_v_c: T,
    pub m_penalty: T,
    pub objective: T,
}

pub fn objective_terms<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<ObjectiveTerms<T>> {
    check_inputs(z, pi, state, p)?;
    let rv = r_v(state, p.alpha)?;
    let rvc = r_v_c(&state.a, p)?;
    let m = m_penalty(z, pi, state, p)?;
    Ok(ObjectiveTerms {
        r_v: rv,
        r_v_c: rvc,
        m_penalty: m,
        objective: rv - rvc - mu / (T::lit(2.0) * samples_of(z)) * m,
    })
}

/// `R^v − R^v_c − (μ/2m) M`.
pub fn objective<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<T> {
    Ok(objective_terms(z, pi, state, p, mu)?.objective)
}

/// Shared pieces of the r_v gradients: `K⁻¹Γ` with `K = I + αΓ Diag(A·1)Γᵀ`.
fn solve_rv_system<T: Scalar>(state: &VariationalState<T>, alpha: T) -> Result<(Vec<T>, Array2<T>)> {
    let (totals, g) = rv_gram(state);
    solve_rv_gram(state, alpha, totals, &g)
}

fn solve_rv_gram<T: Scalar>(state: &VariationalState<T>, alpha: T, totals: Vec<T>, g: &Array2<T>) -> Result<(Vec<T>, Array2<T>)> {
    let k = numerics::i_plus_scaled(alpha, g.view());
    let chol = Cholesky::new(k.view())
        .map_err(|_| Error::Numerical("I + alpha G Diag(a) G^T is not positive definite".into()))?;
    let kinv_gamma = chol.solve(&state.gamma)?;
    Ok((totals, kinv_gamma))
}

fn grad_gamma_from<T: Scalar>(
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    res: &Residuals<T>,
    totals: &[T],
    kinv_gamma: &Array2<T>,
    penalty_scale: T,
) -> Array2<T> {
    // r_v: α K⁻¹ Γ Diag(a)
    let mut grad = kinv_gamma.clone();
    for (mut col, &t) in grad.columns_mut().into_iter().zip(totals) {
        let s = p.alpha * t;
        col.mapv_inplace(|x| x * s);
    }
    // −(μ/2m) M: (2μ/m) Σⱼ (1/γⱼ) Rⱼ Γ Diag(Aⱼ)
    let two = T::lit(2.0);
    for c in &res.classes {
        if c.atoms.is_empty() {
            continue;
        }
        let mut scaled = state.gamma.select(Axis(1), &c.atoms);
        let weight = two * penalty_scale / p.gamma_per_class[c.class];
        for (mut col, &l) in scaled.columns_mut().into_iter().zip(&c.atoms) {
            let s = weight * state.a[[l, c.class]];
            col.mapv_inplace(|x| x * s);
        }
        let contrib = c.residual.dot(&scaled);
        for (col, &l) in contrib.columns().into_iter().zip(&c.atoms) {
            grad.column_mut(l).zip_mut_with(&col, |g, &v| *g += v);
        }
    }
    grad
}

fn grad_a_from<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    kinv_gamma: &Array2<T>,
    penalty_scale: T,
) -> Array2<T> {
    let (q, k) = state.a.dim();
    let half = T::lit(0.5);
    let mut grad = Array2::zeros((q, k));
    // r_v: (α/2) Γₗᵀ K⁻¹ Γₗ, shared by every class column
    let rv: Vec<T> = (0..q)
        .map(|l| half * p.alpha * state.gamma.column(l).dot(&kinv_gamma.column(l)))
        .collect();
    for j in 0..k {
        for l in 0..q {
            grad[[l, j]] = rv[l];
        }
    }
    // penalty: (μ/(mγⱼ)) Γₗᵀ Rⱼ Γₗ with
    // Γₗᵀ Rⱼ Γₗ = Σᵢ Πᵢⱼ (Γₗᵀzᵢ)² − Σₗ' A_{l'j} (Γₗᵀ Γₗ')²
    let projections = state.gamma.t().dot(&z).mapv(|x| x * x);
    let mut fit = Array2::<T>::zeros((q, k));
    for (i, row) in pi.matrix().rows().into_iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > T::zero() {
                fit.column_mut(j).scaled_add(w, &projections.column(i));
            }
        }
    }
    // (ΓᵀΓ)^{⊙2} restricted to the atoms each class uses
    let class_atoms: Vec<Vec<usize>> = (0..k).map(|j| active_indices(&state.a.column(j).to_vec())).collect();
    let used: Vec<usize> = p.present_classes().flat_map(|j| class_atoms[j].iter().copied()).collect();
    let cross = state.gamma.t().dot(&state.gamma.select(Axis(1), &used)).mapv(|x| x * x);
    let mut offset = 0;
    for j in p.present_classes() {
        let (alpha_j, gamma_j) = (p.alpha_per_class[j], p.gamma_per_class[j]);
        let atoms = &class_atoms[j];
        let active_code: Array1<T> = atoms.iter().map(|&l| state.a[[l, j]]).collect();
        let model = cross.slice(s![.., offset..offset + atoms.len()]).dot(&active_code);
        offset += atoms.len();
        let weight = penalty_scale / gamma_j;
        for l in 0..q {
            grad[[l, j]] += weight * (fit[[l, j]] - model[l])
                - half * gamma_j * alpha_j / (T::one() + alpha_j * state.a[[l, j]]);
        }
    }
    grad
}

/// Ascent gradients of the objective with respect to `Γ` and `A`.
pub fn grad_gamma_a<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<(Array2<T>, Array2<T>)> {
    check_inputs(z, pi, state, p)?;
    let scale = mu / samples_of(z);
    let (totals, kinv_gamma) = solve_rv_system(state, p.alpha)?;
    let res = residuals(z, pi, state, p);
    let g = grad_gamma_from(state, p, &res, &totals, &kinv_gamma, scale);
    let a = grad_a_from(z, pi, state, p, &kinv_gamma, scale);
    Ok((g, a))
}

/// Ascent gradient with respect to `Γ` only.
pub fn grad_gamma<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<Array2<T>> {
    check_inputs(z, pi, state, p)?;
    let (totals, kinv_gamma) = solve_rv_system(state, p.alpha)?;
    let res = residuals(z, pi, state, p);
    Ok(grad_gamma_from(state, p, &res, &totals, &kinv_gamma, mu / samples_of(z)))
}

/// Ascent gradient with respect to `A` only.
pub fn grad_a<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<Array2<T>> {
    check_inputs(z, pi, state, p)?;
    let (_, kinv_gamma) = solve_rv_system(state, p.alpha)?;
    Ok(grad_a_from(z, pi, state, p, &kinv_gamma, mu / samples_of(z)))
}

fn grad_z_from<T: Scalar>(z: ArrayView2<T>, pi: &MembershipMatrix<T>, p: &CodingRateParams<T>, res: &Residuals<T>, mu: T) -> Array2<T> {
    let mut grad = Array2::zeros(z.dim());
    let weight = T::lit(2.0) * mu / samples_of(z);
    for c in &res.classes {
        let mut scaled = z.select(Axis(1), &c.samples);
        let s_class = weight / p.gamma_per_class[c.class];
        for (mut col, &i) in scaled.columns_mut().into_iter().zip(&c.samples) {
            let s = s_class * pi.matrix()[[i, c.class]];
            col.mapv_inplace(|x| x * s);
        }
        let contrib = c.residual.dot(&scaled);
        for (col, &i) in contrib.columns().into_iter().zip(&c.samples) {
            grad.column_mut(i).zip_mut_with(&col, |g, &v| *g += v);
        }
    }
    grad
}

/// `∂[(μ/2m) M]/∂Z = (2μ/m) Σⱼ (1/γⱼ) Rⱼ Z Diag(Πⱼ)`.
pub fn grad_z_penalty<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<Array2<T>> {
    check_inputs(z, pi, state, p)?;
    let res = residuals(z, pi, state, p);
    Ok(grad_z_from(z, pi, p, &res, mu))
}

/// Objective value with the gradients for `Γ`, `A` and `Z` from one set of
/// residuals.
#[derive(Debug, Clone)]
pub struct VariationalEvaluation<T> {
    pub terms: ObjectiveTerms<T>,
    pub grad_gamma: Array2<T>,
    pub grad_a: Array2<T>,
    pub grad_z: Array2<T>,
}

pub fn evaluate_with_grads<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<VariationalEvaluation<T>> {
    check_inputs(z, pi, state, p)?;
    let m = samples_of(z);
    let scale = mu / m;
    let rvc = r_v_c(&state.a, p)?;
    let (totals, g) = rv_gram(state);
    let rv = T::lit(0.5) * logdet_i_plus_symmetric(p.alpha, &g)?;
    let (totals, kinv_gamma) = solve_rv_gram(state, p.alpha, totals, &g)?;
    let res = residuals(z, pi, state, p);
    let pen = penalty_from(&res, p);
    Ok(VariationalEvaluation {
        terms: ObjectiveTerms {
            r_v: rv,
            r_v_c: rvc,
            m_penalty: pen,
            objective: rv - rvc - mu / (T::lit(2.0) * m) * pen,
        },
        grad_gamma: grad_gamma_from(state, p, &res, &totals, &kinv_gamma, scale),
        grad_a: grad_a_from(z, pi, state, p, &kinv_gamma, scale),
        grad_z: grad_z_from(z, pi, p, &res, mu),
    })
}

fn max_abs<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    it.fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Raw Lipschitz bounds, before flooring.
///
/// `L_Γ = Σⱼ (2μ/(mγⱼ)) (‖Z Diag(Πⱼ) Zᵀ‖_F ‖Aⱼ‖_∞ + ‖Aⱼ‖²_∞)` and
/// `L_A = maxⱼ (μ/(mγⱼ)) ‖(ΓᵀΓ)^{⊙2}‖_F`; with balanced classes
/// `1/(mγⱼ) = k/m`.
pub fn lipschitz_bounds<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
) -> Result<StepSizes<T>> {
    check_inputs(z, pi, state, p)?;
    let m = samples_of(z);
    let two = T::lit(2.0);
    let mut l_gamma = T::zero();
    let mut class_scale = T::zero();
    for j in p.present_classes() {
        let per = mu / (m * p.gamma_per_class[j]);
        class_scale = class_scale.max(per);
        let a_inf = max_abs(state.a.column(j).iter().copied());
        if a_inf == T::zero() {
            continue;
        }
        let cov = weighted_gram(z, &pi.class_weights(j));
        l_gamma += two * per * (frobenius_norm(cov.view()) * a_inf + a_inf * a_inf);
    }
    let atom_gram = state.gamma.t().dot(&state.gamma).mapv(|x| x * x);
    let l_a = class_scale * frobenius_norm(atom_gram.view());
    Ok(StepSizes { l_gamma, l_a })
}

/// [`lipschitz_bounds`] floored at `floor`.
pub fn step_sizes<T: Scalar>(
    z: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    state: &VariationalState<T>,
    p: &CodingRateParams<T>,
    mu: T,
    floor: T,
) -> Result<StepSizes<T>> {
    let raw = lipschitz_bounds(z, pi, state, p, mu)?;
    Ok(StepSizes {
        l_gamma: raw.l_gamma.max(floor),
        l_a: raw.l_a.max(floor),
    })
}

/// Projects onto the feasible set: `A ← max(A, 0)`, `Γₗ ← Γₗ/‖Γₗ‖`. A zero
/// atom is replaced by a random unit vector drawn from `rng`.
pub fn project<T: Scalar, R: Rng + ?Sized>(mut state: VariationalState<T>, rng: &mut R) -> VariationalState<T> {
    state.a.mapv_inplace(|x| if x < T::zero() { T::zero() } else { x });
    let d = state.dim();
    let unit_slack = T::epsilon() * T::lit(4.0);
    for mut col in state.gamma.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > T::zero() && norm.is_finite() {
            if (norm - T::one()).abs() > unit_slack {
                col.mapv_inplace(|x| x / norm);
            }
        } else {
            for (dst, v) in col.iter_mut().zip(unit_vector::<T, R>(rng, d)) {
                *dst = v;
            }
        }
    }
    state
}

/// Closed-form reset of `(Γ, A)`: block `j` of the dictionary holds the top
/// `q/k` eigenvectors of `Z Diag(Πⱼ) Zᵀ`, and column `j` of the code the
/// matching eigenvalues in the same rows, zero elsewhere.
pub fn latch<T: Scalar>(z: ArrayView2<T>, pi: &MembershipMatrix<T>, q: usize) -> Result<VariationalState<T>> {
    let (d, m) = z.dim();
    let k = pi.classes();
    if m != pi.samples() {
        return Err(Error::Shape(format!(
            "Z has {m} samples, membership has {}",
            pi.samples()
        )));
    }
    if q == 0 || !q.is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "dictionary size {q} is not a positive multiple of {k} classes"
        )));
    }
    let s = q / k;
    if s > d {
        return Err(Error::InvalidArgument(format!(
            "{s} atoms per class exceed the feature dimension {d}"
        )));
    }
    let floor = T::lit(LATCH_EIGEN_FLOOR);
    let mut gamma = Array2::zeros((d, q));
    let mut a = Array2::zeros((q, k));
    for j in 0..k {
        let (u, sigma) = top_svd_of_weighted_gram(z, &pi.class_weights(j), s)?;
        gamma.slice_mut(ndarray::s![.., j * s..(j + 1) * s]).assign(&u);
        for (i, sv) in sigma.into_iter().enumerate() {
            a[[j * s + i, j]] = if sv < floor { T::zero() } else { sv };
        }
    }
    Ok(VariationalState { gamma, a })
}

#[cfg(test)]
mod tests;
