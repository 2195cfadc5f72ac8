use crate::error::{Error, Result};
use crate::net::{Batch, LossOracle};
use crate::params::ParamVector;

/// `L(theta) = flat(theta) . flat(g)`; gradient `g` everywhere, zero Hessian.
#[derive(Debug, Clone)]
pub struct AnalyticLinear {
    g: ParamVector,
}

impl AnalyticLinear {
    pub fn new(g: ParamVector) -> Self {
        Self { g }
    }

    pub fn coefficients(&self) -> &ParamVector {
        &self.g
    }
}

impl LossOracle for AnalyticLinear {
    fn loss(&self, theta: &ParamVector, _batch: &Batch) -> Result<f64> {
        self.g.check_layout(theta)?;
        Ok(theta.dot(&self.g))
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        Ok((self.loss(theta, batch)?, self.g.clone()))
    }
}

/// `L(theta) = x^T A x / 2` over the block-major flattening `x = flat(theta)`.
#[derive(Debug, Clone)]
pub struct AnalyticQuadratic {
    a: Vec<f64>,
    n: usize,
    layout: ParamVector,
}

impl AnalyticQuadratic {
    /// `a` is a symmetric `n x n` matrix in row-major order; `layout` fixes
    /// the block structure of accepted parameter vectors.
    pub fn new(a: Vec<Vec<f64>>, layout: &ParamVector) -> Result<Self> {
        let n = layout.dim();
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(Error::Structural(format!(
                "quadratic form must be {n} x {n} to match the layout"
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (x, y) = (a[i][j], a[j][i]);
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::Domain(format!(
                        "quadratic form is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            a: a.into_iter().flatten().collect(),
            n,
            layout: layout.zeros_like(),
        })
    }

    pub fn identity(layout: &ParamVector) -> Self {
        Self::diagonal(&vec![1.0; layout.dim()], layout).expect("identity matches layout")
    }

    pub fn diagonal(diag: &[f64], layout: &ParamVector) -> Result<Self> {
        let n = layout.dim();
        if diag.len() != n {
            return Err(Error::Structural(format!(
                "diagonal has length {}, layout has dimension {n}",
                diag.len()
            )));
        }
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self::new(a, layout)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i * self.n + i]).sum()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// `A x` for a flat vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl LossOracle for AnalyticQuadratic {
    fn loss(&self, theta: &ParamVector, _batch: &Batch) -> Result<f64> {
        self.layout.check_layout(theta)?;
        let x = theta.flat();
        let ax = self.apply(&x);
        Ok(0.5 * x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>())
    }

    fn loss_and_grad(&self, theta: &ParamVector, _batch: &Batch) -> Result<(f64, ParamVector)> {
        self.layout.check_layout(theta)?;
        let x = theta.flat();
        let ax = self.apply(&x);
        let loss = 0.5 * x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>();
        Ok((loss, theta.with_flat(&ax)?))
    }
}

/// Loss that ignores its arguments.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss {
    pub value: f64,
}

impl LossOracle for ConstantLoss {
    fn loss(&self, _theta: &ParamVector, _batch: &Batch) -> Result<f64> {
        Ok(self.value)
    }

    fn loss_and_grad(&self, theta: &ParamVector, _batch: &Batch) -> Result<(f64, ParamVector)> {
        Ok((self.value, theta.zeros_like()))
    }
}
