//! Training loops: alternating proximal ascent on the variational objective
//! (V-MCR²), direct gradient ascent on ΔR (MCR²), and a softmax
//! cross-entropy baseline.
//!
//! Every loop draws minibatches from a per-epoch shuffle, recomputes the
//! objective constants from each batch's membership slice, and reports
//! metrics on the full training set at the end of each epoch.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coding_rate::{delta_r_with_grad, params_for_batch, params_from, CodingRateParams, MembershipMatrix};
use crate::error::{Error, Result};
use crate::featurizer::{self, MlpParams};
use crate::rng::{gaussian_matrix, substream, RunRng, Stream};
use crate::scalar::Scalar;
use crate::variational::{self, VariationalConfig, VariationalState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Vmcr2,
    Mcr2,
    Ce,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Vmcr2 => "vmcr2",
            Objective::Mcr2 => "mcr2",
            Objective::Ce => "ce",
        }
    }

    pub fn default_nu_theta(self) -> f64 {
        match self {
            Objective::Ce => 1e-2,
            _ => 1e-3,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmcr2" => Ok(Objective::Vmcr2),
            "mcr2" => Ok(Objective::Mcr2),
            "ce" => Ok(Objective::Ce),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    /// Featurizer learning rate; the objective's default when absent.
    pub nu_theta: Option<f64>,
    pub epsilon_sq: f64,
    pub variational: VariationalConfig,
    /// Hidden layer widths of the featurizer.
    pub hidden: Vec<usize>,
    /// Output feature dimension `d`.
    pub feature_dim: usize,
    /// Filled from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Vmcr2,
            epochs: 100,
            batch_size: 128,
            nu_theta: None,
            epsilon_sq: 0.5,
            variational: VariationalConfig::default(),
            hidden: vec![64],
            feature_dim: 32,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn nu_theta(&self) -> f64 {
        self.nu_theta.unwrap_or_else(|| self.objective.default_nu_theta())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.feature_dim);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.epsilon_sq > 0.0) || !self.epsilon_sq.is_finite() {
            return bad("epsilon_sq must be positive");
        }
        let nu = self.nu_theta();
        if !(nu >= 0.0) || !nu.is_finite() {
            return bad("nu_theta must be nonnegative");
        }
        if self.objective == Objective::Vmcr2 && self.variational.q_per_class > self.feature_dim {
            return Err(Error::Config(format!(
                "variational.q_per_class {} exceeds feature_dim {}",
                self.variational.q_per_class, self.feature_dim
            )));
        }
        self.variational.validate()
    }
}

/// One row per epoch. Fields that do not apply to the objective are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Zero-based.
    pub epoch: usize,
    pub objective: Objective,
    pub delta_r: f64,
    pub rate: f64,
    pub rate_c: f64,
    pub var_objective: Option<f64>,
    pub m_penalty: Option<f64>,
    pub ce_loss: Option<f64>,
    /// Time spent on the epoch's optimization steps.
    pub wall_ms: f64,
    /// The variational state was reset by latching at the start of the epoch.
    pub latched: bool,
}

impl EpochMetrics {
    /// Equality ignoring timing.
    pub fn same_values(&self, other: &Self) -> bool {
        Self { wall_ms: 0.0, ..self.clone() } == Self { wall_ms: 0.0, ..other.clone() }
    }
}

/// Linear classification head `W z + b` over the features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T> {
    /// k × d
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = substream(seed, Stream::Head);
        let scale = T::one() / T::from_usize(dim).expect("dim").sqrt();
        Self {
            weight: gaussian_matrix::<T, _>(&mut rng, classes, dim).mapv(|x| x * scale),
            bias: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, z: ArrayView2<T>) -> Array2<T> {
        let mut out = self.weight.dot(&z);
        out += &self.bias.view().insert_axis(Axis(1));
        out
    }
}

/// Mean softmax cross-entropy with gradients for the head and the features.
#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub grad_head: LinearHead<T>,
    pub grad_z: Array2<T>,
}

pub fn cross_entropy<T: Scalar>(head: &LinearHead<T>, z: ArrayView2<T>, labels: &[usize]) -> Result<CrossEntropy<T>> {
    let k = head.weight.nrows();
    if head.weight.ncols() != z.nrows() || labels.len() != z.ncols() {
        return Err(Error::Shape(format!(
            "head {:?}, features {:?}, {} labels",
            head.weight.dim(),
            z.dim(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let m = T::from_usize(labels.len()).expect("batch size");
    let mut probs = head.logits(z);
    let mut loss = T::zero();
    for (mut col, &y) in probs.columns_mut().into_iter().zip(labels) {
        let max = col.fold(T::neg_infinity(), |a, &b| a.max(b));
        let log_norm = col.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += log_norm - col[y];
        col.mapv_inplace(|v| (v - log_norm).exp());
        col[y] -= T::one();
        col.mapv_inplace(|v| v / m);
    }
    let dlogits = probs;
    Ok(CrossEntropy {
        loss: loss / m,
        grad_head: LinearHead {
            weight: dlogits.dot(&z.t()),
            bias: dlogits.sum_axis(Axis(1)),
        },
        grad_z: head.weight.t().dot(&dlogits),
    })
}

#[derive(Debug, Clone)]
pub struct VariationalRun<T> {
    pub params: MlpParams<T>,
    pub state: VariationalState<T>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct RateReductionRun<T> {
    pub params: MlpParams<T>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct CrossEntropyRun<T> {
    pub params: MlpParams<T>,
    pub head: LinearHead<T>,
    pub metrics: Vec<EpochMetrics>,
}

/// Result of [`train`], whichever objective ran.
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub params: MlpParams<T>,
    pub state: Option<VariationalState<T>>,
    pub head: Option<LinearHead<T>>,
    pub metrics: Vec<EpochMetrics>,
}

fn check_training_inputs<T: Scalar>(x: ArrayView2<T>, pi: &MembershipMatrix<T>, cfg: &TrainerConfig) -> Result<()> {
    cfg.validate()?;
    if x.ncols() != pi.samples() {
        return Err(Error::Shape(format!(
            "{} inputs but {} membership rows",
            x.ncols(),
            pi.samples()
        )));
    }
    if cfg.batch_size > x.ncols() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            x.ncols()
        )));
    }
    Ok(())
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Per-epoch metrics shared by all objectives: ΔR and its parts on the full
/// training set.
fn rate_metrics<T: Scalar>(z: ArrayView2<T>, pi: &MembershipMatrix<T>, p: &CodingRateParams<T>) -> Result<(f64, f64, f64)> {
    let r = crate::coding_rate::rate(z, p.alpha)?;
    let rc = crate::coding_rate::rate_c(z, pi, p)?;
    Ok((r.to_f64_lossy() - rc.to_f64_lossy(), r.to_f64_lossy(), rc.to_f64_lossy()))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn ensure_finite_params<T: Scalar>(params: &MlpParams<T>, epoch: usize) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("featurizer parameters diverged in epoch {epoch}")))
    }
}

/// One pass of the alternating updates on a batch: a proximal ascent step on
/// `Γ` and then on `A` (using the updated `Γ`), projection onto the feasible
/// set, and a descent step of the featurizer on the penalty `(μ/2m) M`.
pub fn vmcr2_step<T: Scalar>(
    params: &MlpParams<T>,
    state: VariationalState<T>,
    x: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    cfg: &TrainerConfig,
    rng: &mut RunRng,
) -> Result<(MlpParams<T>, VariationalState<T>)> {
    let v = &cfg.variational;
    let mu = T::lit(v.mu);
    let (z, cache) = featurizer::forward(params, x)?;
    let p = params_for_batch(pi, z.dim(), T::lit(cfg.epsilon_sq))?;
    let steps = variational::step_sizes(z.view(), pi, &state, &p, mu, T::lit(v.lipschitz_floor))?;

    let mut state = state;
    let g = variational::grad_gamma(z.view(), pi, &state, &p, mu)?;
    state.gamma.scaled_add(T::lit(v.nu_gamma) / steps.l_gamma, &g);
    let g = variational::grad_a(z.view(), pi, &state, &p, mu)?;
    state.a.scaled_add(T::lit(v.nu_a) / steps.l_a, &g);
    let state = variational::project(state, rng);

    // θ only enters the negated objective through (μ/2m) M
    let dz = variational::grad_z_penalty(z.view(), pi, &state, &p, mu)?;
    let grads = featurizer::backward(params, &cache, dz.view())?;
    let params = featurizer::sgd_step(params, &grads, T::lit(cfg.nu_theta()))?;
    Ok((params, state))
}

fn scale_code<T: Scalar>(mut state: VariationalState<T>, factor: T) -> VariationalState<T> {
    state.a.mapv_inplace(|v| v * factor);
    state
}

/// The variational trainer. The dictionary code is kept at the scale of a
/// batch of `batch_size` samples; a latch on the full set is rescaled
/// accordingly.
pub fn train_vmcr2<T: Scalar>(
    x: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    cfg: &TrainerConfig,
) -> Result<VariationalRun<T>> {
    check_training_inputs(x, pi, cfg)?;
    let k = pi.classes();
    let v = &cfg.variational;
    let q = v.q_per_class * k;
    let n = x.ncols();
    let batch_scale = T::from_usize(cfg.batch_size).expect("batch") / T::from_usize(n).expect("samples");
    let full_params = params_from(pi, cfg.feature_dim, T::lit(cfg.epsilon_sq))?;

    let mut params = featurizer::init::<T>(&cfg.layer_sizes(x.nrows()), cfg.seed)?;
    let mut shuffle_rng = substream(cfg.seed, Stream::Shuffle);
    let mut project_rng = substream(cfg.seed, Stream::Project);
    let mut order: Vec<usize> = (0..n).collect();

    let latch_full = |params: &MlpParams<T>| -> Result<VariationalState<T>> {
        let z = featurizer::features(params, x)?;
        Ok(scale_code(variational::latch(z.view(), pi, q)?, batch_scale))
    };
    let mut state = latch_full(&params)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let latched = epoch == 0 || (v.latch_freq > 0 && epoch % v.latch_freq == 0);
        if latched && epoch > 0 && v.latch_on_full_data {
            state = latch_full(&params)?;
        }
        for (b, idx) in batches(&order, cfg.batch_size).enumerate() {
            let xb = x.select(Axis(1), idx);
            let pib = pi.select(idx);
            if latched && b == 0 && !v.latch_on_full_data {
                let z = featurizer::features(&params, xb.view())?;
                state = variational::latch(z.view(), &pib, q)?;
            }
            let (p, s) = vmcr2_step(&params, state, xb.view(), &pib, cfg, &mut project_rng)?;
            params = p;
            state = s;
        }
        let wall_ms = elapsed_ms(start);
        ensure_finite_params(&params, epoch)?;

        let z = featurizer::features(&params, x)?;
        let (delta_r, rate, rate_c) = rate_metrics(z.view(), pi, &full_params)?;
        let full_state = scale_code(state.clone(), T::one() / batch_scale);
        let terms = variational::objective_terms(z.view(), pi, &full_state, &full_params, T::lit(v.mu))?;
        metrics.push(EpochMetrics {
            epoch,
            objective: Objective::Vmcr2,
            delta_r,
            rate,
            rate_c,
            var_objective: Some(terms.objective.to_f64_lossy()),
            m_penalty: Some(terms.m_penalty.to_f64_lossy()),
            ce_loss: None,
            wall_ms,
            latched,
        });
    }
    Ok(VariationalRun { params, state, metrics })
}

/// Plain stochastic gradient ascent on ΔR.
pub fn train_mcr2<T: Scalar>(
    x: ArrayView2<T>,
    pi: &MembershipMatrix<T>,
    cfg: &TrainerConfig,
) -> Result<RateReductionRun<T>> {
    check_training_inputs(x, pi, cfg)?;
    let n = x.ncols();
    let full_params = params_from(pi, cfg.feature_dim, T::lit(cfg.epsilon_sq))?;
    let nu = T::lit(cfg.nu_theta());
    let mut params = featurizer::init::<T>(&cfg.layer_sizes(x.nrows()), cfg.seed)?;
    let mut shuffle_rng = substream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        for idx in batches(&order, cfg.batch_size) {
            let xb = x.select(Axis(1), idx);
            let pib = pi.select(idx);
            let (z, cache) = featurizer::forward(&params, xb.view())?;
            let p = params_for_batch(&pib, z.dim(), T::lit(cfg.epsilon_sq))?;
            let rr = delta_r_with_grad(z.view(), &pib, &p)?;
            let grads = featurizer::backward(&params, &cache, (-rr.grad).view())?;
            params = featurizer::sgd_step(&params, &grads, nu)?;
        }
        let wall_ms = elapsed_ms(start);
        ensure_finite_params(&params, epoch)?;

        let z = featurizer::features(&params, x)?;
        let (delta_r, rate, rate_c) = rate_metrics(z.view(), pi, &full_params)?;
        metrics.push(EpochMetrics {
            epoch,
            objective: Objective::Mcr2,
            delta_r,
            rate,
            rate_c,
            var_objective: None,
            m_penalty: None,
            ce_loss: None,
            wall_ms,
            latched: false,
        });
    }
    Ok(RateReductionRun { params, metrics })
}

/// Featurizer plus linear head trained with softmax cross-entropy.
pub fn train_ce<T: Scalar>(x: ArrayView2<T>, labels: &[usize], k: usize, cfg: &TrainerConfig) -> Result<CrossEntropyRun<T>> {
    let pi = MembershipMatrix::one_hot(labels, k)?;
    check_training_inputs(x, &pi, cfg)?;
    let n = x.ncols();
    let full_params = params_from(&pi, cfg.feature_dim, T::lit(cfg.epsilon_sq))?;
    let nu = T::lit(cfg.nu_theta());
    let mut params = featurizer::init::<T>(&cfg.layer_sizes(x.nrows()), cfg.seed)?;
    let mut head = LinearHead::init(k, cfg.feature_dim, cfg.seed);
    let mut shuffle_rng = substream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        for idx in batches(&order, cfg.batch_size) {
            let xb = x.select(Axis(1), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (z, cache) = featurizer::forward(&params, xb.view())?;
            let ce = cross_entropy(&head, z.view(), &yb)?;
            let grads = featurizer::backward(&params, &cache, ce.grad_z.view())?;
            params = featurizer::sgd_step(&params, &grads, nu)?;
            head.weight.scaled_add(-nu, &ce.grad_head.weight);
            head.bias.scaled_add(-nu, &ce.grad_head.bias);
        }
        let wall_ms = elapsed_ms(start);
        ensure_finite_params(&params, epoch)?;

        let z = featurizer::features(&params, x)?;
        let (delta_r, rate, rate_c) = rate_metrics(z.view(), &pi, &full_params)?;
        let loss = cross_entropy(&head, z.view(), labels)?.loss;
        metrics.push(EpochMetrics {
            epoch,
            objective: Objective::Ce,
            delta_r,
            rate,
            rate_c,
            var_objective: None,
            m_penalty: None,
            ce_loss: Some(loss.to_f64_lossy()),
            wall_ms,
            latched: false,
        });
    }
    Ok(CrossEntropyRun { params, head, metrics })
}

/// Runs the trainer selected by `cfg.objective` with one-hot labels.
pub fn train<T: Scalar>(x: ArrayView2<T>, labels: &[usize], k: usize, cfg: &TrainerConfig) -> Result<TrainedModel<T>> {
    match cfg.objective {
        Objective::Vmcr2 => {
            let run = train_vmcr2(x, &MembershipMatrix::one_hot(labels, k)?, cfg)?;
            Ok(TrainedModel { params: run.params, state: Some(run.state), head: None, metrics: run.metrics })
        }
        Objective::Mcr2 => {
            let run = train_mcr2(x, &MembershipMatrix::one_hot(labels, k)?, cfg)?;
            Ok(TrainedModel { params: run.params, state: None, head: None, metrics: run.metrics })
        }
        Objective::Ce => {
            let run = train_ce(x, labels, k, cfg)?;
            Ok(TrainedModel { params: run.params, state: None, head: Some(run.head), metrics: run.metrics })
        }
    }
}
