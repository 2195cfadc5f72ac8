//! Sharpness measures.
//!
//! The main one is the scale-invariant directional measure: for a direction
//! `v` tied to the block norms of `theta`,
//!
//! ```text
//! inner(v) = (1/delta) * integral_{-delta}^{delta} |(L(theta + t v) - L(theta)) / delta|^p dt
//! norm(v)  = inner(v)^(1/p)
//! ```
//!
//! and the sharpness is the supremum of `norm(v)` over the constraint set,
//! approximated by Riemannian ascent from a gradient-aligned start. The
//! Euclidean-ball measure ([`lp_ball_sharpness_mc`]) and the Hessian trace
//! ([`trace_sharpness`]) are provided for comparison.

mod ball;
mod trace;

pub use ball::{lp_ball_sharpness_mc, lp_ball_sharpness_mc_with, BallConfig, LpOrder};
pub use trace::{trace_sharpness, trace_sharpness_scoped, TraceEstimate, TraceScope};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    fill_sphere, normalized_direction_step, set_tail, tail_dim, tail_of, zero_block, Direction,
};
use crate::net::{Batch, LossOracle};
use crate::params::{norm, ParamVector};
use crate::quadrature::Simpson;
use crate::regularizer;

/// Gradients at or below this norm count as zero when aligning the initial
/// direction.
const ZERO_GRAD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionGradMode {
    /// Two-gradient closed-form approximation.
    #[default]
    Approx,
    /// Simpson quadrature of the exact integral gradient.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessConfig {
    pub delta: f64,
    pub p: u32,
    pub quad_points: usize,
    pub k1: usize,
    pub search_step: f64,
    pub direction_grad_mode: DirectionGradMode,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            delta: 0.001,
            p: 2,
            quad_points: 33,
            k1: 5,
            search_step: 0.1,
            direction_grad_mode: DirectionGradMode::Approx,
        }
    }
}

impl SharpnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be > 0, got {}", self.delta)));
        }
        check_even_p(self.p).map_err(|e| Error::Config(e.to_string()))?;
        if self.quad_points < 3 || self.quad_points % 2 == 0 {
            return Err(Error::Config(format!(
                "quad_points must be odd and >= 3, got {}",
                self.quad_points
            )));
        }
        if !(self.search_step > 0.0) {
            return Err(Error::Config(format!(
                "search_step must be > 0, got {}",
                self.search_step
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_even_p(p: u32) -> Result<()> {
    if p == 0 || p % 2 == 1 {
        return Err(Error::Domain(format!("p must be an even positive integer, got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalIntegral {
    pub inner: f64,
    pub norm: f64,
}

/// Loss differences `L(theta + t v) - L(theta)` at the Simpson nodes.
pub(crate) fn loss_profile(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &ParamVector,
    rule: &Simpson,
    batch: &Batch,
) -> Result<Vec<f64>> {
    theta.check_layout(v)?;
    let base = oracle.loss(theta, batch)?;
    rule.nodes
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if t == 0.0 {
                return Ok(0.0);
            }
            oracle
                .loss(&theta.add_scaled(t, v), batch)
                .map(|l| l - base)
                .map_err(|e| Error::QuadratureNode {
                    node: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

fn inner_from_profile(diffs: &[f64], rule: &Simpson, delta: f64, p: u32) -> f64 {
    let vals: Vec<f64> = diffs
        .iter()
        .map(|d| (d / delta).abs().powi(p as i32))
        .collect();
    rule.integrate(&vals) / delta
}

/// `inner` and `norm = inner^(1/p)` for one direction. `p` may be any
/// positive integer here; the search and the gradients require it even.
pub fn directional_integral_p(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &ParamVector,
    delta: f64,
    p: u32,
    quad_points: usize,
    batch: &Batch,
) -> Result<DirectionalIntegral> {
    if p == 0 {
        return Err(Error::Domain("p must be positive".into()));
    }
    let rule = Simpson::new(quad_points, delta)?;
    let diffs = loss_profile(oracle, theta, v, &rule, batch)?;
    let inner = inner_from_profile(&diffs, &rule, delta, p).max(0.0);
    Ok(DirectionalIntegral {
        inner,
        norm: inner.powf(1.0 / p as f64),
    })
}

pub fn directional_integral(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    cfg: &SharpnessConfig,
    batch: &Batch,
) -> Result<DirectionalIntegral> {
    cfg.validate()?;
    directional_integral_p(
        oracle,
        theta,
        v.params(),
        cfg.delta,
        cfg.p,
        cfg.quad_points,
        batch,
    )
}

/// Gradient-aligned starting direction: each BN block of the gradient is
/// rescaled to `|theta_i|`, the tail gradient to unit norm. Blocks whose
/// gradient vanishes get a random direction drawn from `seed`.
pub fn init_direction(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
    seed: u64,
) -> Result<Direction> {
    let grad = oracle.grad(theta, batch)?;
    init_direction_from_grad(theta, &grad, seed)
}

pub fn init_direction_from_grad(
    theta: &ParamVector,
    grad: &ParamVector,
    seed: u64,
) -> Result<Direction> {
    theta.check_layout(grad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = grad.clone();
    for i in 0..theta.n1() {
        let r = theta.block_norm(i);
        if r == 0.0 {
            return Err(zero_block(i));
        }
        let gn = grad.block_norm(i);
        let block = v.block_mut(i);
        if gn < ZERO_GRAD {
            fill_sphere(block, r, &mut rng);
        } else {
            for x in block.iter_mut() {
                *x *= r / gn;
            }
        }
    }
    if theta.has_tail() {
        let mut tail = tail_of(grad);
        let tn = norm(&tail);
        if tn < ZERO_GRAD {
            tail = vec![0.0; tail_dim(theta)];
            fill_sphere(&mut tail, 1.0, &mut rng);
        } else {
            for x in &mut tail {
                *x /= tn;
            }
        }
        set_tail(&mut v, &tail);
    }
    Ok(Direction::from_params_unchecked(v))
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub direction: Direction,
    pub inner: f64,
    pub norm: f64,
    /// Best-so-far `inner` after the start and after each ascent step.
    pub history: Vec<f64>,
}

/// Ascent gradient of `inner` with respect to the direction.
pub fn direction_gradient(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    cfg: &SharpnessConfig,
    batch: &Batch,
) -> Result<ParamVector> {
    let grad = oracle.grad(theta, batch)?;
    direction_gradient_with_grad(oracle, theta, v, cfg, batch, &grad)
}

fn direction_gradient_with_grad(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    cfg: &SharpnessConfig,
    batch: &Batch,
    grad: &ParamVector,
) -> Result<ParamVector> {
    match cfg.direction_grad_mode {
        DirectionGradMode::Approx => {
            regularizer::h2_with_grad(oracle, theta, v, cfg.delta, cfg.p, batch, grad)
        }
        DirectionGradMode::Quadrature => regularizer::quadrature_grad_v(
            oracle,
            theta,
            v.params(),
            cfg.delta,
            cfg.p,
            cfg.quad_points,
            batch,
        ),
    }
}

/// `k1` normalized ascent steps from [`init_direction`], keeping the best
/// direction seen. The returned value is a lower bound on the supremum.
pub fn search_direction(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    cfg: &SharpnessConfig,
    batch: &Batch,
    seed: u64,
) -> Result<SearchResult> {
    let grad = oracle.grad(theta, batch)?;
    search_direction_with_grad(oracle, theta, &grad, cfg, batch, seed)
}

/// [`search_direction`] with `grad L(theta)` on `batch` supplied by the
/// caller.
pub fn search_direction_with_grad(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    grad: &ParamVector,
    cfg: &SharpnessConfig,
    batch: &Batch,
    seed: u64,
) -> Result<SearchResult> {
    cfg.validate()?;
    let start = init_direction_from_grad(theta, grad, seed)?;
    search_loop(oracle, theta, grad, start, cfg, batch)
}

/// Ascent from an arbitrary starting direction.
pub fn search_from(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    start: Direction,
    cfg: &SharpnessConfig,
    batch: &Batch,
) -> Result<SearchResult> {
    cfg.validate()?;
    let grad = oracle.grad(theta, batch)?;
    search_loop(oracle, theta, &grad, start, cfg, batch)
}

fn search_loop(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    grad: &ParamVector,
    start: Direction,
    cfg: &SharpnessConfig,
    batch: &Batch,
) -> Result<SearchResult> {
    let mut best_inner = directional_integral(oracle, theta, &start, cfg, batch)?.inner;
    let mut best = start.clone();
    let mut history = vec![best_inner];
    let mut current = start;
    for _ in 0..cfg.k1 {
        let g = direction_gradient_with_grad(oracle, theta, &current, cfg, batch, grad)?;
        current = normalized_direction_step(&current, &g, theta, cfg.search_step)?;
        let inner = directional_integral(oracle, theta, &current, cfg, batch)?.inner;
        if inner > best_inner {
            best_inner = inner;
            best = current.clone();
        }
        history.push(best_inner);
    }
    Ok(SearchResult {
        direction: best,
        inner: best_inner,
        norm: best_inner.powf(1.0 / cfg.p as f64),
        history,
    })
}

pub fn bn_sharpness(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    cfg: &SharpnessConfig,
    batch: &Batch,
    seed: u64,
) -> Result<f64> {
    search_direction(oracle, theta, cfg, batch, seed).map(|r| r.norm)
}

/// `(2 / (p + 1))^(1/p) * |v . grad L(theta)|`, the limit of `norm(v)` as
/// `delta -> 0`.
pub fn small_delta_limit(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    p: u32,
    batch: &Batch,
) -> Result<f64> {
    if p == 0 {
        return Err(Error::Domain("p must be positive".into()));
    }
    let grad = oracle.grad(theta, batch)?;
    theta.check_layout(v.params())?;
    let pf = p as f64;
    Ok((2.0 / (pf + 1.0)).powf(1.0 / pf) * v.params().dot(&grad).abs())
}

/// Structured measurement report, one per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub delta: f64,
    pub p: u32,
    pub k1: usize,
    pub bn_sharpness: f64,
    pub inner: f64,
    pub lp_mc: LpMcReport,
    pub trace: TraceReport,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpMcReport {
    pub p: LpOrder,
    pub value: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub estimate: f64,
    pub n_probes: usize,
}
