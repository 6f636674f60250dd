//! Losses, optimizers, the seeded training loop and a finite-difference
//! gradient checker.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{config, shape, Error, Result};
use crate::model::{Accum, Fabricated, Model};
use crate::rng::Rng;

/// Samples per parallel work item. Partial gradients are reduced in chunk
/// order, so results do not depend on the thread count.
pub const DEFAULT_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    #[default]
    Mse,
    /// Softmax over the outputs; the target row holds the class index.
    CrossEntropy,
}

impl LossSpec {
    /// Name of the evaluation metric paired with this loss.
    pub fn metric_name(self) -> &'static str {
        match self {
            LossSpec::Mse => "mse",
            LossSpec::CrossEntropy => "accuracy",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, LossSpec::CrossEntropy)
    }
}

/// Per-sample loss and its gradient with respect to `pred`.
pub fn loss(pred: &[f64], target: &[f64], kind: LossSpec) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossSpec::Mse => {
            if pred.len() != target.len() {
                return shape(format!(
                    "prediction has {} values, target has {}",
                    pred.len(),
                    target.len()
                ));
            }
            let n = pred.len() as f64;
            let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
            let l = diff.iter().map(|d| d * d).sum::<f64>() / n;
            Ok((l, diff.iter().map(|d| 2.0 * d / n).collect()))
        }
        LossSpec::CrossEntropy => {
            let c = class_index(target, pred.len())?;
            let mx = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = pred.iter().map(|p| (p - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let l = z.ln() + mx - pred[c];
            let mut g: Vec<f64> = exps.iter().map(|e| e / z).collect();
            g[c] -= 1.0;
            Ok((l, g))
        }
    }
}

fn class_index(target: &[f64], classes: usize) -> Result<usize> {
    let t = target.first().copied().unwrap_or(f64::NAN);
    if t < 0.0 || t.fract() != 0.0 || t as usize >= classes {
        return config(format!("target {t} is not a class index below {classes}"));
    }
    Ok(t as usize)
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-sample metric contribution: squared-error mean or a 0/1 hit.
fn sample_metric(pred: &[f64], target: &[f64], kind: LossSpec, l: f64) -> f64 {
    match kind {
        LossSpec::Mse => l,
        LossSpec::CrossEntropy => (argmax(pred) == target[0] as usize) as u8 as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::adam(default_lr())
    }
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return config(format!("learning rate must be positive, got {lr}"));
        }
        if let OptimizerSpec::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return config("adam betas must lie in [0, 1)");
            }
            if !(eps > 0.0) {
                return config("adam eps must be positive");
            }
        }
        Ok(())
    }
}

/// Optimizer state over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, len: usize) -> Result<Self> {
        spec.validate()?;
        let state = if matches!(spec, OptimizerSpec::Adam { .. }) {
            len
        } else {
            0
        };
        Ok(Self {
            spec,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub loss: LossSpec,
    pub epochs: usize,
    /// `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Set per run by the caller, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_chunk() -> usize {
    DEFAULT_CHUNK
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerSpec::default(),
            loss: LossSpec::Mse,
            epochs,
            batch_size: None,
            seed,
            chunk: DEFAULT_CHUNK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.chunk == 0 {
            return config("chunk must be positive");
        }
        if self.batch_size == Some(0) {
            return config("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, before each update.
    pub train_loss: f64,
    pub train_metric: f64,
    pub test_loss: f64,
    pub test_metric: f64,
}

/// Per-epoch history plus the best test epoch. The best epoch is picked
/// after the fact over all epochs (lowest MSE, or highest accuracy with
/// the earliest epoch winning ties), not by early stopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub param_count: usize,
    pub metric: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_test_metric: f64,
}

impl TrainReport {
    /// One line per epoch, then a summary line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&format!(
                "epoch={} train_loss={:e} train_{m}={:e} test_loss={:e} test_{m}={:e}\n",
                r.epoch,
                r.train_loss,
                r.train_metric,
                r.test_loss,
                r.test_metric,
                m = self.metric
            ));
        }
        out.push_str(&format!(
            "best epoch={} test_{}={:e} (best over all epochs) params={} seed={}\n",
            self.best_epoch, self.metric, self.best_test_metric, self.param_count, self.seed
        ));
        out
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: Vec<f64>,
    pub best_params: Vec<f64>,
    /// Kept out of the report so repeated runs compare bit-for-bit.
    pub wall_seconds: f64,
}

fn chunks(idx: &[usize], chunk: usize) -> Vec<&[usize]> {
    idx.chunks(chunk.max(1)).collect()
}

/// Mean loss over `idx` and its gradient with respect to `params`.
pub fn batch_gradient(
    model: &Model,
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
    kind: LossSpec,
    chunk: usize,
) -> Result<(f64, f64, Vec<f64>)> {
    let fab = model.fabricate(params)?;
    let (l, metric, acc) = accumulate(model, &fab, data, idx, kind, chunk)?;
    let inv = 1.0 / idx.len().max(1) as f64;
    let mut g = model.collect_grads(params, &acc)?;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok((l * inv, metric * inv, g))
}

/// Summed loss, summed metric and accumulated matrix gradients.
fn accumulate(
    model: &Model,
    fab: &Fabricated,
    data: &Dataset,
    idx: &[usize],
    kind: LossSpec,
    chunk: usize,
) -> Result<(f64, f64, Accum)> {
    let parts: Vec<(f64, f64, Accum)> = chunks(idx, chunk)
        .into_par_iter()
        .map(|c| {
            let mut acc = model.new_accum();
            let (mut ls, mut ms) = (0.0, 0.0);
            for &i in c {
                let (pred, trace) = model.forward_trace(fab, &data.x[i])?;
                let (l, g) = loss(&pred, &data.y[i], kind)?;
                ls += l;
                ms += sample_metric(&pred, &data.y[i], kind, l);
                model.backward(fab, &trace, &g, &mut acc, false)?;
            }
            Ok((ls, ms, acc))
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut ls, mut ms, mut acc) = it.next().unwrap_or((0.0, 0.0, model.new_accum()));
    for (l, m, a) in it {
        ls += l;
        ms += m;
        acc.add(&a);
    }
    Ok((ls, ms, acc))
}

/// `(mean loss, metric)` over a dataset.
pub fn evaluate(model: &Model, params: &[f64], data: &Dataset, kind: LossSpec) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let fab = model.fabricate(params)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<(f64, f64)> = chunks(&idx, DEFAULT_CHUNK)
        .into_par_iter()
        .map(|c| {
            let (mut ls, mut ms) = (0.0, 0.0);
            for &i in c {
                let pred = model.forward_fab(&fab, &data.x[i])?;
                let (l, _) = loss(&pred, &data.y[i], kind)?;
                ls += l;
                ms += sample_metric(&pred, &data.y[i], kind, l);
            }
            Ok((ls, ms))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let (ls, ms) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((ls / n, ms / n))
}

/// A NaN or infinity reaching a domain check mid-training means the run
/// has diverged.
fn overflowed(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Domain { value, .. } if !value.is_finite() => Error::NonFinite { epoch, batch },
        e => e,
    }
}

/// Trains from a fresh seeded initialization.
pub fn fit(model: &Model, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let rng = Rng::new(cfg.seed);
    let params = model.init_params(&mut rng.fork(1));
    fit_from(model, split, cfg, params)
}

/// Trains starting from `params`.
pub fn fit_from(model: &Model, split: &Split, cfg: &TrainConfig, mut params: Vec<f64>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let train = &split.train;
    if train.is_empty() {
        return config("training split is empty");
    }
    if train.in_dim() != model.in_dim() {
        return shape(format!(
            "data has {} features, model expects {}",
            train.in_dim(),
            model.in_dim()
        ));
    }
    let kind = cfg.loss;
    let mut shuffle_rng = Rng::new(cfg.seed).fork(2);
    let mut opt = Optimizer::new(cfg.optimizer, params.len())?;
    let batch = cfg.batch_size.unwrap_or(train.len()).min(train.len());
    let better = |a: f64, b: f64| if kind.higher_is_better() { a > b } else { a < b };

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_params = params.clone();
    for epoch in 0..cfg.epochs {
        let order = if batch < train.len() {
            shuffle_rng.permutation(train.len())
        } else {
            (0..train.len()).collect()
        };
        let (mut ls, mut ms) = (0.0, 0.0);
        for (b, idx) in order.chunks(batch).enumerate() {
            let (l, m, g) =
                batch_gradient(model, &params, train, idx, kind, cfg.chunk).map_err(|e| overflowed(e, epoch, b))?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            ls += l * idx.len() as f64;
            ms += m * idx.len() as f64;
            opt.step(&mut params, &g);
            // caught here, before a NaN input trips a domain check downstream
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
        }
        let (test_loss, test_metric) =
            evaluate(model, &params, &split.test, kind).map_err(|e| overflowed(e, epoch, 0))?;
        let n = train.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_loss: ls / n,
            train_metric: ms / n,
            test_loss,
            test_metric,
        });
        if best.is_none_or(|(_, v)| better(test_metric, v)) {
            best = Some((epoch, test_metric));
            best_params.clone_from(&params);
        }
    }
    let (best_epoch, best_test_metric) = best.unwrap_or((0, f64::NAN));
    Ok(TrainOutcome {
        report: TrainReport {
            param_count: model.param_count(),
            metric: kind.metric_name().to_string(),
            seed: cfg.seed,
            epochs: records,
            best_epoch,
            best_test_metric,
        },
        params,
        best_params,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Largest errors first, at most ten.
    pub worst: Vec<GradMismatch>,
}

/// Denominator floor for the relative error, so entries whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `params`.
pub fn grad_check_with(
    params: &[f64],
    analytic: &[f64],
    f: impl Fn(&[f64]) -> Result<f64> + Sync,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != params.len() {
        return shape("analytic gradient length differs from parameter count");
    }
    let numeric: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut p = params.to_vec();
            p[i] = params[i] + h;
            let fp = f(&p)?;
            p[i] = params[i] - h;
            let fm = f(&p)?;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<GradMismatch> = analytic
        .iter()
        .zip(&numeric)
        .enumerate()
        .map(|(index, (&a, &n))| GradMismatch {
            index,
            analytic: a,
            numeric: n,
            rel_err: rel_err(a, n),
        })
        .collect();
    all.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = all.first().map_or(0.0, |m| m.rel_err);
    all.truncate(10);
    Ok(GradCheckReport {
        checked: params.len(),
        max_rel_err,
        tol,
        passed: max_rel_err < tol && max_rel_err.is_finite(),
        worst: all,
    })
}

/// Checks the model's batch-mean loss gradient on `data`.
pub fn grad_check(
    model: &Model,
    params: &[f64],
    data: &Dataset,
    kind: LossSpec,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, _, analytic) = batch_gradient(model, params, data, &idx, kind, DEFAULT_CHUNK)?;
    grad_check_with(
        params,
        &analytic,
        |p| {
            let fab = model.fabricate(p)?;
            let mut total = 0.0;
            for (x, y) in data.x.iter().zip(&data.y) {
                total += loss(&model.forward_fab(&fab, x)?, y, kind)?.0;
            }
            Ok(total / data.len() as f64)
        },
        h,
        tol,
    )
}
