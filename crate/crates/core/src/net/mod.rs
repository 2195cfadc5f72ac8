//! Differentiable loss oracles.
//!
//! Everything that measures or trains goes through [`LossOracle`]: a scalar
//! loss over a [`ParamVector`] together with its reverse-mode gradient. The
//! batch-normalized MLP in [`bn_mlp`] is the real model; the analytic oracles
//! here have closed-form values and derivatives and serve as test fixtures.

mod analytic;
pub mod bn_mlp;
pub mod checkpoint;

pub use analytic::{AnalyticLinear, AnalyticQuadratic, ConstantLoss};
pub use bn_mlp::{Activation, BnNetwork, NetworkSpec, RunningStats};
pub use checkpoint::Checkpoint;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// A mini-batch of labelled samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, n_features: usize) -> Result<Self> {
        if n_features == 0 || inputs.len() != labels.len() * n_features {
            return Err(Error::Structural(format!(
                "batch of {} labels with {} features needs {} inputs, got {}",
                labels.len(),
                n_features,
                labels.len() * n_features,
                inputs.len()
            )));
        }
        if labels.len() < 2 {
            return Err(Error::Domain(format!(
                "a batch needs at least 2 samples, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            n_features,
        })
    }

    /// Empty batch for oracles that do not look at data.
    pub fn none() -> Self {
        Self {
            inputs: Vec::new(),
            labels: Vec::new(),
            n_features: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }
}

pub trait LossOracle: Sync {
    fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64>;

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)>;

    fn grad(&self, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        self.loss_and_grad(theta, batch).map(|(_, g)| g)
    }
}

impl<T: LossOracle + ?Sized> LossOracle for &T {
    fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        (**self).loss(theta, batch)
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        (**self).loss_and_grad(theta, batch)
    }
}

impl<T: LossOracle + ?Sized> LossOracle for Box<T> {
    fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        (**self).loss(theta, batch)
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        (**self).loss_and_grad(theta, batch)
    }
}

pub fn forward_loss(oracle: &dyn LossOracle, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    oracle.loss(theta, batch)
}

pub fn grad_loss(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    oracle.grad(theta, batch)
}

/// Default finite-difference step for [`hvp`]: `1e-4 * (1 + |theta|)`.
pub fn default_hvp_step(theta: &ParamVector) -> f64 {
    1e-4 * (1.0 + theta.norm())
}

/// Hessian-vector product by central differences of the gradient:
/// `(grad(theta + h w) - grad(theta - h w)) / 2h`.
pub fn hvp(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
    w: &ParamVector,
    step: f64,
) -> Result<ParamVector> {
    theta.check_layout(w)?;
    if !(step > 0.0) {
        return Err(Error::Domain(format!("hvp step must be positive, got {step}")));
    }
    let plus = oracle.grad(&theta.add_scaled(step, w), batch)?;
    let minus = oracle.grad(&theta.add_scaled(-step, w), batch)?;
    let mut out = plus.sub(&minus);
    out.scale(0.5 / step);
    Ok(out)
}

/// Dense Hessian by central differences of the gradient along each
/// coordinate, symmetrized. Quadratic in the parameter count; meant for
/// small models.
pub fn fd_hessian(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = theta.dim();
    let mut h = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = hvp(oracle, theta, batch, &theta.with_flat(&e)?, step)?.flat();
        for i in 0..n {
            h[i][j] = col[i];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    Ok(h)
}
