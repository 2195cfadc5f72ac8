//! Momentum SGD and its sharpness-regularized variant (SGDS).
//!
//! An SGDS step searches for the sharpest direction `v*` at the current
//! parameters (on the center batch), then descends along
//! `grad L(theta) + h1(theta, v*) + weight_decay * theta`, where `h1` uses
//! two further batches for its perturbed gradients.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, measurement_batch, Dataset};
use crate::error::{Error, Result};
use crate::manifold::Direction;
use crate::net::bn_mlp::StatsMode;
use crate::net::{Batch, BnNetwork, LossOracle, RunningStats};
use crate::params::ParamVector;
use crate::regularizer::{clip_by_norm, h1_raw_with_center_grad, BatchTriple, RegularizerConfig};
use crate::sharpness::{
    bn_sharpness, init_direction_from_grad, search_direction_with_grad, SharpnessConfig,
};

/// Below this gradient norm a run counts as having reached a critical point.
pub const GRAD_NORM_STOP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[default]
    Sgd,
    Sgds,
}

/// Which batches feed the two perturbed gradients of `h1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyBatches {
    /// The next two batches of the epoch stream.
    #[default]
    Distinct,
    /// The center batch for both.
    Shared,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sgd => "sgd",
            Algo::Sgds => "sgds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algo: Algo,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub lambda0: f64,
    /// Multiplies lambda once per epoch.
    pub lambda_growth: f64,
    pub penalty_batches: PenaltyBatches,
    pub seed: u64,
    /// Momentum of the BN running statistics used for accuracy reporting.
    pub bn_momentum: f64,
    /// Write measured wall time into the metrics; off by default so reruns
    /// produce identical files.
    pub record_wall_time: bool,
    /// Filled from the `[sharpness]` section.
    #[serde(skip)]
    pub sharpness: SharpnessConfig,
    /// Filled from the `[regularizer]` section; its `lambda` is replaced by
    /// the schedule during training.
    #[serde(skip)]
    pub reg: RegularizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Sgd,
            lr: 0.2,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            epochs: 10,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.1,
            lambda0: 1e-4,
            lambda_growth: 1.02,
            penalty_batches: PenaltyBatches::Distinct,
            seed: 0,
            bn_momentum: 0.1,
            record_wall_time: false,
            sharpness: SharpnessConfig::default(),
            reg: RegularizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be >= 2 (BN statistics), got {}",
                self.batch_size
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        if !(self.lambda0 >= 0.0) {
            return bad(format!("lambda0 must be >= 0, got {}", self.lambda0));
        }
        if !(self.lambda_growth >= 1.0) {
            return bad(format!("lambda_growth must be >= 1, got {}", self.lambda_growth));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        self.sharpness.validate()?;
        self.reg.validate()
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    /// Penalty weight in effect during `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        self.lambda0 * self.lambda_growth.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: ParamVector,
    pub velocity: ParamVector,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub lambda: f64,
}

impl TrainState {
    pub fn new(theta: ParamVector, cfg: &TrainConfig) -> Self {
        Self {
            velocity: theta.zeros_like(),
            theta,
            epoch: 0,
            step: 0,
            lr: cfg.lr_at(0),
            lambda: cfg.lambda_at(0),
        }
    }

    /// Move to `epoch`, recomputing lr and lambda from the schedule.
    pub fn enter_epoch(&mut self, epoch: usize, cfg: &TrainConfig) {
        self.epoch = epoch;
        self.lr = cfg.lr_at(epoch);
        self.lambda = cfg.lambda_at(epoch);
    }
}

/// `velocity <- momentum * velocity + g; theta <- theta - lr * velocity`.
fn momentum_update(state: &TrainState, g: &ParamVector, cfg: &TrainConfig) -> Result<TrainState> {
    let mut velocity = state.velocity.scaled(cfg.momentum);
    velocity.axpy(1.0, g);
    let theta = state.theta.add_scaled(-state.lr, &velocity);
    if !theta.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters became non-finite at step {}",
            state.step
        )));
    }
    Ok(TrainState {
        theta,
        velocity,
        epoch: state.epoch,
        step: state.step + 1,
        lr: state.lr,
        lambda: state.lambda,
    })
}

/// Gradient plus weight decay; the decay term is skipped when zero so that
/// an exact zero gradient stays exactly zero.
fn with_decay(grad: &ParamVector, theta: &ParamVector, wd: f64) -> ParamVector {
    let mut g = grad.clone();
    if wd != 0.0 {
        g.axpy(wd, theta);
    }
    g
}

pub fn sgd_step(
    oracle: &dyn LossOracle,
    state: &TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let grad = oracle.grad(&state.theta, batch)?;
    sgd_step_with_grad(state, &grad, cfg)
}

pub fn sgd_step_with_grad(
    state: &TrainState,
    grad: &ParamVector,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    state.theta.check_layout(grad)?;
    momentum_update(state, &with_decay(grad, &state.theta, cfg.weight_decay), cfg)
}

/// What an SGDS step used, for logging and replay.
#[derive(Debug, Clone)]
pub struct PenaltyRecord {
    pub direction: Direction,
    /// Clipped `h1`.
    pub h1: ParamVector,
}

pub fn sgds_step(
    oracle: &dyn LossOracle,
    state: &TrainState,
    batches: BatchTriple<'_>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let grad = oracle.grad(&state.theta, batches.center)?;
    sgds_step_with_grad(oracle, state, batches, &grad, cfg).map(|(s, _)| s)
}

/// SGDS step with `grad L(theta)` on the center batch supplied. With
/// `lambda = 0` the penalty is skipped entirely and the update is the SGD
/// update.
pub fn sgds_step_with_grad(
    oracle: &dyn LossOracle,
    state: &TrainState,
    batches: BatchTriple<'_>,
    grad: &ParamVector,
    cfg: &TrainConfig,
) -> Result<(TrainState, Option<PenaltyRecord>)> {
    state.theta.check_layout(grad)?;
    if state.lambda == 0.0 {
        return sgd_step_with_grad(state, grad, cfg).map(|s| (s, None));
    }
    let sc = &cfg.sharpness;
    let seed = cfg.seed ^ state.step.rotate_left(32);
    let direction = if sc.k1 == 0 {
        // No ascent: the search would return the start unchanged.
        init_direction_from_grad(&state.theta, grad, seed)?
    } else {
        search_direction_with_grad(oracle, &state.theta, grad, sc, batches.center, seed)?.direction
    };
    let raw = h1_raw_with_center_grad(
        oracle,
        &state.theta,
        &direction,
        sc.delta,
        sc.p,
        state.lambda,
        cfg.reg.h1_form,
        batches,
        grad,
    )?;
    let h1 = clip_by_norm(&raw, cfg.reg.clip_norm);
    let mut g = grad.add_scaled(1.0, &h1);
    if cfg.weight_decay != 0.0 {
        g.axpy(cfg.weight_decay, &state.theta);
    }
    let next = momentum_update(state, &g, cfg)?;
    Ok((next, Some(PenaltyRecord { direction, h1 })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Total optimizer steps taken by the end of the epoch.
    pub step: u64,
    /// Mean pre-step mini-batch loss over the epoch.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub bn_sharpness: f64,
    pub lambda: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "step",
    "train_loss",
    "train_acc",
    "test_acc",
    "bn_sharpness",
    "lambda",
    "lr",
    "wall_ms",
];

/// Scientific notation with 17 significant digits, enough to round-trip
/// any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.train_acc),
            fmt_f64(r.test_acc),
            fmt_f64(r.bn_sharpness),
            fmt_f64(r.lambda),
            fmt_f64(r.lr),
            fmt_f64(r.wall_ms),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.into(),
            line: 0,
            message: format!("{kind:?}"),
        },
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub running_stats: RunningStats,
    pub metrics: Vec<EpochMetrics>,
    /// The gradient norm fell below [`GRAD_NORM_STOP`] before the epoch
    /// budget ran out.
    pub converged: bool,
}

/// A run that aborted; carries everything up to the last good step.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: TrainState,
    pub running_stats: RunningStats,
    pub metrics: Vec<EpochMetrics>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training aborted at epoch {}, step {}: {}",
            self.last_good.epoch, self.last_good.step, self.error
        )
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Run<'a> {
    net: &'a BnNetwork,
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    state: TrainState,
    stats: RunningStats,
    metrics: Vec<EpochMetrics>,
}

impl Run<'_> {
    /// One pass over the epoch's batches. Returns the mean loss and whether
    /// a critical point was reached.
    fn epoch(&mut self, stream: &[Batch]) -> Result<(f64, bool)> {
        let cfg = self.cfg;
        let nb = stream.len();
        let mut loss_sum = 0.0;
        let mut taken = 0usize;
        for k in 0..nb {
            let center = &stream[k];
            let (loss, grad, batch_stats) = self.net.loss_grad_stats(&self.state.theta, center)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at step {}", self.state.step)));
            }
            if grad.norm() < GRAD_NORM_STOP {
                return Ok((mean_or_loss(loss_sum, taken, loss), true));
            }
            let next = match cfg.algo {
                Algo::Sgd => sgd_step_with_grad(&self.state, &grad, cfg)?,
                Algo::Sgds => {
                    let triple = match cfg.penalty_batches {
                        PenaltyBatches::Distinct => BatchTriple {
                            center,
                            plus: &stream[(k + 1) % nb],
                            minus: &stream[(k + 2) % nb],
                        },
                        PenaltyBatches::Shared => BatchTriple::same(center),
                    };
                    sgds_step_with_grad(self.net, &self.state, triple, &grad, cfg)?.0
                }
            };
            self.stats.update(&batch_stats);
            self.state = next;
            loss_sum += loss;
            taken += 1;
        }
        Ok((loss_sum / taken.max(1) as f64, false))
    }
}

fn mean_or_loss(sum: f64, n: usize, loss: f64) -> f64 {
    if n == 0 {
        loss
    } else {
        sum / n as f64
    }
}

/// Train `net` from its seeded initialization. Every epoch reshuffles the
/// training split, applies the lr and lambda schedules, and records
/// metrics; sharpness is measured on a frozen measurement batch (the first
/// batch of epoch 0).
pub fn train(
    net: &BnNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let theta = net.init(cfg.seed);
    let state = TrainState::new(theta, cfg);
    let stats = net.fresh_running_stats(cfg.bn_momentum);
    let mut run = Run {
        net,
        data,
        cfg,
        state,
        stats,
        metrics: Vec::new(),
    };
    match train_inner(&mut run) {
        Ok(converged) => Ok(TrainOutcome {
            state: run.state,
            running_stats: run.stats,
            metrics: run.metrics,
            converged,
        }),
        Err(error) => Err(Box::new(TrainFailure {
            error,
            last_good: run.state,
            running_stats: run.stats,
            metrics: run.metrics,
        })),
    }
}

fn train_inner(run: &mut Run<'_>) -> Result<bool> {
    let cfg = run.cfg;
    cfg.validate()?;
    if run.net.spec().n_inputs() != run.data.n_features {
        return Err(Error::Structural(format!(
            "network expects {} inputs, dataset has {} features",
            run.net.spec().n_inputs(),
            run.data.n_features
        )));
    }
    if run.data.train.len() < 2 {
        return Err(Error::Domain("training split needs at least 2 rows".into()));
    }
    if cfg.epochs == 0 {
        return Ok(false);
    }
    let measure = measurement_batch(run.data, cfg.batch_size, cfg.seed)?;
    let train_all = run.data.train_batch()?;
    let test_all = if run.data.test.len() >= 2 {
        Some(run.data.test_batch()?)
    } else {
        None
    };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        run.state.enter_epoch(epoch, cfg);
        let stream = batches(run.data, cfg.batch_size, cfg.seed, epoch as u64)?;
        let (train_loss, converged) = run.epoch(&stream)?;
        let mode = StatsMode::Running(&run.stats);
        let train_acc = run
            .net
            .accuracy(&run.state.theta, train_all.inputs(), train_all.labels(), mode)?;
        let test_acc = match &test_all {
            Some(b) => run.net.accuracy(&run.state.theta, b.inputs(), b.labels(), mode)?,
            None => f64::NAN,
        };
        let sharp = bn_sharpness(run.net, &run.state.theta, &cfg.sharpness, &measure, cfg.seed)?;
        let wall_ms = if cfg.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        run.metrics.push(EpochMetrics {
            epoch,
            step: run.state.step,
            train_loss,
            train_acc,
            test_acc,
            bn_sharpness: sharp,
            lambda: run.state.lambda,
            lr: run.state.lr,
            wall_ms,
        });
        if converged {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Final numbers of one run in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub algo: Algo,
    pub seed: u64,
    pub final_test_acc: f64,
    pub final_bn_sharpness: f64,
}

/// Run SGD and SGDS for seeds `cfg.seed .. cfg.seed + n_seeds` in
/// parallel. Rows come back ordered by seed, SGD before SGDS.
pub fn compare(
    net: &BnNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
    n_seeds: usize,
) -> Result<Vec<CompareRow>> {
    let jobs: Vec<(u64, Algo)> = (0..n_seeds as u64)
        .flat_map(|i| [(cfg.seed + i, Algo::Sgd), (cfg.seed + i, Algo::Sgds)])
        .collect();
    jobs.par_iter()
        .map(|&(seed, algo)| {
            let run_cfg = TrainConfig {
                algo,
                seed,
                ..cfg.clone()
            };
            let out = train(net, data, &run_cfg).map_err(|f| f.error)?;
            let last = out
                .metrics
                .last()
                .ok_or_else(|| Error::Config("compare needs epochs >= 1".into()))?;
            Ok(CompareRow {
                algo,
                seed,
                final_test_acc: last.test_acc,
                final_bn_sharpness: last.bn_sharpness,
            })
        })
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Summary CSV: one row per run, then `mean` and `std` rows per algorithm
/// in the `seed` column.
pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["algo", "seed", "final_test_acc", "final_bn_sharpness"])
        .map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.algo.name().to_string(),
            r.seed.to_string(),
            fmt_f64(r.final_test_acc),
            fmt_f64(r.final_bn_sharpness),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    for algo in [Algo::Sgd, Algo::Sgds] {
        let sel: Vec<&CompareRow> = rows.iter().filter(|r| r.algo == algo).collect();
        if sel.is_empty() {
            continue;
        }
        let acc: Vec<f64> = sel.iter().map(|r| r.final_test_acc).collect();
        let sharp: Vec<f64> = sel.iter().map(|r| r.final_bn_sharpness).collect();
        let (am, asd) = mean_std(&acc);
        let (sm, ssd) = mean_std(&sharp);
        for (label, a, s) in [("mean", am, sm), ("std", asd, ssd)] {
            w.write_record([algo.name().to_string(), label.to_string(), fmt_f64(a), fmt_f64(s)])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
