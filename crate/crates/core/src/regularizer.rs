//! Gradients of the sharpness penalty `lambda * inner(theta, v)`.
//!
//! [`h1`] approximates the gradient with respect to `theta` and [`h2`] the
//! gradient with respect to the direction `v`, each from two extra gradient
//! evaluations. The quadrature versions differentiate the integral exactly
//! (up to Simpson error) and serve as reference values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Direction;
use crate::net::{Batch, LossOracle};
use crate::params::ParamVector;
use crate::quadrature::Simpson;
use crate::sharpness::{check_even_p, loss_profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Form {
    /// `grad L(theta + c delta v) - grad L(theta - c delta v)`.
    #[default]
    Difference,
    /// `grad L(theta + c delta v) + grad L(theta - c delta v) - 2 grad L(theta)`.
    /// Vanishes identically on quadratic losses; kept for comparison only.
    SecondDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub clip_norm: f64,
    pub h1_form: H1Form,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            clip_norm: 0.1,
            h1_form: H1Form::Difference,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// The three mini-batches feeding one penalty gradient. In full-batch mode
/// all three are the same batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchTriple<'a> {
    pub center: &'a Batch,
    pub plus: &'a Batch,
    pub minus: &'a Batch,
}

impl<'a> BatchTriple<'a> {
    pub fn same(batch: &'a Batch) -> Self {
        Self {
            center: batch,
            plus: batch,
            minus: batch,
        }
    }
}

/// Rescale `x` onto the ball of radius `max_norm` if it lies outside;
/// otherwise return it unchanged.
pub fn clip_by_norm(x: &ParamVector, max_norm: f64) -> ParamVector {
    let n = x.norm();
    if n > max_norm {
        x.scaled(max_norm / n)
    } else {
        x.clone()
    }
}

/// Unclipped `h1` given the center gradient `grad L(theta)` on
/// `batches.center`.
#[allow(clippy::too_many_arguments)]
pub fn h1_raw_with_center_grad(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    delta: f64,
    p: u32,
    lambda: f64,
    form: H1Form,
    batches: BatchTriple<'_>,
    center_grad: &ParamVector,
) -> Result<ParamVector> {
    check_even_p(p)?;
    theta.check_layout(v.params())?;
    theta.check_layout(center_grad)?;
    let a = center_grad.dot(v.params());
    let pre = lambda / delta * a.powi(p as i32 - 1);
    if pre == 0.0 {
        return Ok(theta.zeros_like());
    }
    let c = p as f64 / (p as f64 + 1.0) * delta;
    let plus = oracle.grad(&theta.add_scaled(c, v.params()), batches.plus)?;
    let minus = oracle.grad(&theta.add_scaled(-c, v.params()), batches.minus)?;
    let mut out = match form {
        H1Form::Difference => plus.sub(&minus),
        H1Form::SecondDifference => {
            let mut s = plus.add_scaled(1.0, &minus);
            s.axpy(-2.0, center_grad);
            s
        }
    };
    out.scale(pre);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn h1_raw(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    delta: f64,
    p: u32,
    lambda: f64,
    form: H1Form,
    batches: BatchTriple<'_>,
) -> Result<ParamVector> {
    let g = oracle.grad(theta, batches.center)?;
    h1_raw_with_center_grad(oracle, theta, v, delta, p, lambda, form, batches, &g)
}

/// Penalty gradient with respect to `theta`, norm-clipped to
/// `cfg.clip_norm`.
pub fn h1(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    delta: f64,
    p: u32,
    cfg: &RegularizerConfig,
    batches: BatchTriple<'_>,
) -> Result<ParamVector> {
    cfg.validate()?;
    let raw = h1_raw(oracle, theta, v, delta, p, cfg.lambda, cfg.h1_form, batches)?;
    Ok(clip_by_norm(&raw, cfg.clip_norm))
}

/// Approximate gradient of `inner` with respect to `v`:
/// `p/(p+1) (grad L . v)^(p-1) [grad L(theta + c delta v) + grad L(theta - c delta v)]`
/// with `c = (p+1)/(p+2)`. Not projected; the caller steps on the manifold.
pub fn h2(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    delta: f64,
    p: u32,
    batch: &Batch,
) -> Result<ParamVector> {
    let g = oracle.grad(theta, batch)?;
    h2_with_grad(oracle, theta, v, delta, p, batch, &g)
}

/// [`h2`] with `grad L(theta)` supplied by the caller.
pub fn h2_with_grad(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &Direction,
    delta: f64,
    p: u32,
    batch: &Batch,
    grad: &ParamVector,
) -> Result<ParamVector> {
    check_even_p(p)?;
    theta.check_layout(v.params())?;
    theta.check_layout(grad)?;
    let pf = p as f64;
    let pre = pf / (pf + 1.0) * grad.dot(v.params()).powi(p as i32 - 1);
    if pre == 0.0 {
        return Ok(theta.zeros_like());
    }
    let c = (pf + 1.0) / (pf + 2.0) * delta;
    let plus = oracle.grad(&theta.add_scaled(c, v.params()), batch)?;
    let minus = oracle.grad(&theta.add_scaled(-c, v.params()), batch)?;
    let mut out = plus.add_scaled(1.0, &minus);
    out.scale(pre);
    Ok(out)
}

/// Simpson evaluation of `(p / delta^(p+1)) * integral f(t)^(p-1) w(t) G(t) dt`
/// where `f(t) = L(theta + t v) - L(theta)` and `G(t)` is the gradient at
/// `theta + t v` (minus `g0` if given).
#[allow(clippy::too_many_arguments)]
fn quadrature_grad(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &ParamVector,
    delta: f64,
    p: u32,
    quad_points: usize,
    batch: &Batch,
    with_t: bool,
) -> Result<ParamVector> {
    check_even_p(p)?;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    let rule = Simpson::new(quad_points, delta)?;
    let diffs = loss_profile(oracle, theta, v, &rule, batch)?;
    let g0 = if with_t { None } else { Some(oracle.grad(theta, batch)?) };
    let scale = p as f64 / delta.powi(p as i32 + 1);
    let mut acc = theta.zeros_like();
    for (k, (&t, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let mut coef = w * diffs[k].powi(p as i32 - 1);
        if with_t {
            coef *= t;
        }
        if coef == 0.0 {
            continue;
        }
        let mut g = oracle
            .grad(&theta.add_scaled(t, v), batch)
            .map_err(|e| Error::QuadratureNode {
                node: k,
                source: Box::new(e),
            })?;
        if let Some(g0) = &g0 {
            g.axpy(-1.0, g0);
        }
        acc.axpy(coef, &g);
    }
    acc.scale(scale);
    Ok(acc)
}

/// Gradient of `inner(theta, v)` with respect to `theta`, by quadrature.
pub fn quadrature_grad_theta(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &ParamVector,
    delta: f64,
    p: u32,
    quad_points: usize,
    batch: &Batch,
) -> Result<ParamVector> {
    quadrature_grad(oracle, theta, v, delta, p, quad_points, batch, false)
}

/// Gradient of `inner(theta, v)` with respect to `v`, by quadrature.
pub fn quadrature_grad_v(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    v: &ParamVector,
    delta: f64,
    p: u32,
    quad_points: usize,
    batch: &Batch,
) -> Result<ParamVector> {
    quadrature_grad(oracle, theta, v, delta, p, quad_points, batch, true)
}

/// `|a - b| / max(|b|, tiny)`, with `0/0` reported as 0.
pub fn relative_error(approx: &ParamVector, reference: &ParamVector) -> f64 {
    let num = approx.sub(reference).norm();
    if num == 0.0 {
        return 0.0;
    }
    num / reference.norm().max(1e-300)
}
