//! Run orchestration behind the `vmcr2` command: JSON configuration with
//! dot-path overrides, dataset provisioning, and the `train`, `bench`,
//! `eval` and `export-gram` commands with their output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier;
use crate::coding_rate::{delta_r, params_from};
use crate::data::{load_idx, synth_subspaces, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::featurizer::{self, MlpParams};
use crate::rng::{substream, Stream};
use crate::trainer::{self, EpochMetrics, LinearHead, Objective, TrainerConfig};
use crate::Real;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,objective,delta_r,rate,rate_c,var_objective,m_penalty,ce_loss,wall_ms,latched";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_HEADER: &str = "k,objective,mean_epoch_ms,std_epoch_ms";
pub const CHECKPOINT_FILE: &str = "model.mcrk";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.json";
pub const HEAD_FILE: &str = "head.json";
pub const EVAL_FILE: &str = "eval.json";
pub const GRAM_FILE: &str = "gram.csv";
pub const GRAM_META_FILE: &str = "gram_meta.json";

/// Exit status for a failed command: 2 for configuration and input errors,
/// 3 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotSymmetric(_)
        | Error::NonFinite(_)
        | Error::NotPositiveDefinite
        | Error::FactorizationMismatch(_)
        | Error::NegativeCode { .. }
        | Error::Numerical(_) => 3,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Rescale every image to unit norm after the `[0, 1]` pixel scaling.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic(SynthConfig),
    Idx(IdxSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Write gram.csv and gram_meta.json after training.
    pub gram: bool,
    /// Restrict the Gram export to this many classes, drawn from the seed.
    pub gram_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Class counts to sweep; the synthetic dataset is regenerated per entry.
    pub ks: Vec<usize>,
    pub objectives: Vec<Objective>,
    pub warmup_epochs: usize,
    pub timed_epochs: usize,
    /// Keep the total sample count fixed across the sweep (overrides
    /// `samples_per_class`).
    pub samples_total: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![8, 16],
            objectives: vec![Objective::Vmcr2, Objective::Mcr2],
            warmup_epochs: 1,
            timed_epochs: 3,
            samples_total: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSpec,
    /// Held-out share of every class; 0 trains and evaluates on everything.
    pub test_fraction: f64,
    pub trainer: TrainerConfig,
    pub output: PathBuf,
    pub export: ExportConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSpec::Synthetic(SynthConfig::default()),
            test_fraction: 0.25,
            trainer: TrainerConfig::default(),
            output: PathBuf::from("out"),
            export: ExportConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Propagates the run seed into the dataset and trainer and checks every
    /// section.
    pub fn resolve(mut self) -> Result<Self> {
        self.trainer.seed = self.seed;
        if let DataSpec::Synthetic(s) = &mut self.data {
            s.seed = self.seed;
            s.validate().map_err(config_error)?;
        }
        self.trainer.nu_theta = Some(self.trainer.nu_theta());
        self.trainer.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.bench.timed_epochs == 0 {
            return Err(Error::Config("bench.timed_epochs must be positive".into()));
        }
        Ok(self)
    }
}

fn config_error(err: Error) -> Error {
    match err {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    }
}

/// Command-line adjustments applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `KEY=VALUE` pairs; keys are dot paths, values JSON (bare strings are
    /// accepted).
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub objective: Option<Objective>,
    pub epochs: Option<usize>,
    pub latch_freq: Option<usize>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed key {path:?}")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path:?} does not address an object")))?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("{path:?} does not address an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Applies one `KEY=VALUE` override to a JSON document.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key.trim(), value)
}

/// Reads the configuration (defaults when `path` is `None`), applies the
/// overrides, and validates the result.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for s in &overrides.set {
        apply_override(&mut doc, s)?;
    }
    let mut typed = Vec::new();
    if let Some(seed) = overrides.seed {
        typed.push(("seed", Value::from(seed)));
    }
    if let Some(out) = &overrides.out {
        typed.push(("output", Value::from(out.to_string_lossy().into_owned())));
    }
    if let Some(o) = overrides.objective {
        typed.push(("trainer.objective", Value::from(o.name())));
    }
    if let Some(e) = overrides.epochs {
        typed.push(("trainer.epochs", Value::from(e)));
    }
    if let Some(f) = overrides.latch_freq {
        typed.push(("trainer.variational.latch_freq", Value::from(f)));
    }
    for (key, value) in typed {
        set_path(&mut doc, key, value)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
    cfg.resolve()
}

/// Builds the dataset and splits it into train and test parts. The test part
/// is `None` when `test_fraction` is 0.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset<Real>, Option<Dataset<Real>>)> {
    let data = match &cfg.data {
        DataSpec::Synthetic(s) => synth_subspaces::<Real>(s)?.0,
        DataSpec::Idx(spec) => {
            let mut d = load_idx::<Real>(&spec.images, &spec.labels).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read IDX data: {io}")),
                other => other,
            })?;
            if spec.normalize {
                d.normalize_columns();
            }
            d
        }
    };
    if cfg.test_fraction > 0.0 {
        let (train, test) = data.stratified_split(cfg.test_fraction, cfg.seed)?;
        Ok((train, Some(test)))
    } else {
        Ok((data, None))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.epoch,
            m.objective.name(),
            m.delta_r,
            m.rate,
            m.rate_c,
            opt(m.var_objective),
            opt(m.m_penalty),
            opt(m.ce_loss),
            m.wall_ms,
            m.latched
        );
    }
    out
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn head_json(head: &LinearHead<Real>) -> Value {
    serde_json::json!({
        "weight": head.weight.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "bias": head.bias.to_vec(),
    })
}

/// What `train` produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub params: MlpParams<Real>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let (train, _) = load_dataset(cfg)?;
    let out = &cfg.output;
    std::fs::create_dir_all(out)?;
    write_json(&out.join(RESOLVED_CONFIG_FILE), cfg)?;
    let model = trainer::train(train.x.view(), &train.labels, train.k, &cfg.trainer)?;
    std::fs::write(out.join(METRICS_FILE), metrics_csv(&model.metrics))?;
    featurizer::save_checkpoint(&model.params, &out.join(CHECKPOINT_FILE))?;
    if let Some(head) = &model.head {
        write_json(&out.join(HEAD_FILE), &head_json(head))?;
    }
    if cfg.export.gram {
        export_gram(&model.params, &train, cfg.export.gram_classes, cfg.seed, out)?;
    }
    Ok(TrainSummary {
        out_dir: out.clone(),
        metrics: model.metrics,
        params: model.params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub objective: Objective,
    pub mean_epoch_ms: f64,
    pub std_epoch_ms: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.k, r.objective.name(), r.mean_epoch_ms, r.std_epoch_ms);
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Per-epoch training time over a sweep of class counts. Each entry trains
/// for `warmup_epochs + timed_epochs` epochs and reports the timed ones.
/// Class counts whose subspaces cannot be mutually orthogonal in the ambient
/// dimension fall back to independent random subspaces.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let DataSpec::Synthetic(base) = &cfg.data else {
        return Err(Error::Config("bench needs a synthetic dataset".into()));
    };
    if cfg.bench.ks.is_empty() || cfg.bench.objectives.is_empty() {
        return Err(Error::Config("bench needs at least one k and one objective".into()));
    }
    let mut rows = Vec::new();
    for &k in &cfg.bench.ks {
        let mut synth = base.clone();
        synth.classes = k;
        synth.orthogonal &= k * synth.subspace_dim <= synth.ambient_dim;
        if let Some(total) = cfg.bench.samples_total {
            synth.samples_per_class = total / k.max(1);
        }
        synth.validate().map_err(config_error)?;
        let data = synth_subspaces::<Real>(&synth)?.0;
        for &objective in &cfg.bench.objectives {
            let mut tc = cfg.trainer.clone();
            tc.objective = objective;
            tc.nu_theta = None;
            tc.epochs = cfg.bench.warmup_epochs + cfg.bench.timed_epochs;
            let model = trainer::train(data.x.view(), &data.labels, k, &tc)?;
            let times: Vec<f64> = model.metrics[cfg.bench.warmup_epochs..]
                .iter()
                .map(|m| m.wall_ms)
                .collect();
            let (mean_epoch_ms, std_epoch_ms) = mean_std(&times);
            rows.push(BenchRow {
                k,
                objective,
                mean_epoch_ms,
                std_epoch_ms,
            });
        }
    }
    std::fs::create_dir_all(&cfg.output)?;
    write_json(&cfg.output.join(RESOLVED_CONFIG_FILE), cfg)?;
    std::fs::write(cfg.output.join(BENCH_FILE), bench_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// ΔR of the training features.
    pub delta_r: f64,
    /// Nearest-subspace accuracy on the test part (training part when there
    /// is no split).
    pub accuracy: f64,
}

fn load_checkpoint_for(path: &Path, input_dim: usize) -> Result<MlpParams<Real>> {
    let params = featurizer::load_checkpoint::<Real>(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })?;
    if params.input_dim() != input_dim {
        return Err(Error::Config(format!(
            "checkpoint expects inputs of dimension {}, dataset has {input_dim}",
            params.input_dim()
        )));
    }
    Ok(params)
}

pub fn evaluate(params: &MlpParams<Real>, train: &Dataset<Real>, test: Option<&Dataset<Real>>, epsilon_sq: f64) -> Result<EvalReport> {
    let z = featurizer::features(params, train.x.view())?;
    let pi = train.membership();
    let p = params_from(&pi, z.dim(), epsilon_sq)?;
    let dr = delta_r(z.view(), &pi, &p)?;
    let model = classifier::fit(&z, &pi)?;
    let accuracy = match test {
        Some(t) => classifier::evaluate(&model, &featurizer::features(params, t.x.view())?, &t.labels)?,
        None => classifier::evaluate(&model, &z, &train.labels)?,
    };
    Ok(EvalReport { delta_r: dr, accuracy })
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let (train, test) = load_dataset(cfg)?;
    let params = load_checkpoint_for(checkpoint, train.input_dim())?;
    let report = evaluate(&params, &train, test.as_ref(), cfg.trainer.epsilon_sq)?;
    std::fs::create_dir_all(&cfg.output)?;
    write_json(&cfg.output.join(EVAL_FILE), &report)?;
    Ok(report)
}

/// Layout of an exported Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    /// Class ids in export order.
    pub classes: Vec<usize>,
    /// `boundaries[i]..boundaries[i + 1]` are the rows of `classes[i]`.
    pub boundaries: Vec<usize>,
    pub samples: usize,
}

/// `|ZᵀZ|` with samples grouped by class (stable within a class), restricted
/// to `classes` drawn from the seed when given.
pub fn gram_matrix(params: &MlpParams<Real>, data: &Dataset<Real>, classes: Option<usize>, seed: u64) -> Result<(ndarray::Array2<Real>, GramMeta)> {
    let chosen: Vec<usize> = match classes {
        Some(n) if n == 0 || n > data.k => {
            return Err(Error::Config(format!(
                "cannot choose {n} of {} classes for the Gram export",
                data.k
            )))
        }
        Some(n) => {
            let mut rng = substream(seed, Stream::Export);
            let mut c = sample(&mut rng, data.k, n).into_vec();
            c.sort_unstable();
            c
        }
        None => (0..data.k).collect(),
    };
    let mut order = Vec::new();
    let mut boundaries = vec![0];
    for &c in &chosen {
        order.extend((0..data.samples()).filter(|&i| data.labels[i] == c));
        boundaries.push(order.len());
    }
    let sub = data.subset(&order);
    let z = featurizer::features(params, sub.x.view())?;
    let gram = z.view().t().dot(&z.view()).mapv(f64::abs);
    Ok((
        gram,
        GramMeta {
            classes: chosen,
            boundaries,
            samples: order.len(),
        },
    ))
}

fn export_gram(params: &MlpParams<Real>, data: &Dataset<Real>, classes: Option<usize>, seed: u64, out: &Path) -> Result<GramMeta> {
    let (gram, meta) = gram_matrix(params, data, classes, seed)?;
    let mut text = String::with_capacity(gram.len() * 20);
    for row in gram.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(GRAM_FILE), text)?;
    write_json(&out.join(GRAM_META_FILE), &meta)?;
    Ok(meta)
}

/// Writes the Gram export of the training features.
pub fn cmd_export_gram(cfg: &RunConfig, checkpoint: &Path, classes: Option<usize>) -> Result<GramMeta> {
    let (train, _) = load_dataset(cfg)?;
    let params = load_checkpoint_for(checkpoint, train.input_dim())?;
    export_gram(&params, &train, classes.or(cfg.export.gram_classes), cfg.seed, &cfg.output)
}
