//! Block-partitioned parameter vectors.
//!
//! A [`ParamVector`] holds the parameters of a model as an ordered list of
//! blocks. The first `n1` blocks are the scale-invariant ones (each feeds a
//! batch-normalized unit); every later block belongs to the un-normalized
//! tail. Flattening is block-major: block 0 first, then block 1, and so on,
//! each block in its own stored order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    blocks: Vec<Vec<f64>>,
    n1: usize,
}

impl ParamVector {
    pub fn new(blocks: Vec<Vec<f64>>, n1: usize) -> Result<Self> {
        if n1 > blocks.len() {
            return Err(Error::Structural(format!(
                "n1 = {n1} exceeds block count {}",
                blocks.len()
            )));
        }
        if let Some(i) = blocks.iter().position(Vec::is_empty) {
            return Err(Error::Structural(format!("block {i} is empty")));
        }
        Ok(Self { blocks, n1 })
    }

    /// Zero vector with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            n1: self.n1,
        }
    }

    /// Rebuild a vector with this layout from block-major flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.dim() {
            return Err(Error::Structural(format!(
                "flat length {} does not match dimension {}",
                flat.len(),
                self.dim()
            )));
        }
        let mut out = self.zeros_like();
        let mut offset = 0;
        for block in &mut out.blocks {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.blocks[i]
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn has_tail(&self) -> bool {
        self.blocks.len() > self.n1
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Total number of scalar parameters.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flatten()
    }

    pub fn block_norm(&self, i: usize) -> f64 {
        norm(&self.blocks[i])
    }

    /// Euclidean norm of all tail blocks taken together.
    pub fn tail_norm(&self) -> f64 {
        self.blocks[self.n1..]
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Norm shared by every direction in the constraint set of `self`:
    /// `sqrt(sum_{i < n1} |theta_i|^2 + 1)`. The `+ 1` is the unit tail and is
    /// dropped when there are no tail blocks.
    pub fn phi_norm(&self) -> f64 {
        let bn: f64 = (0..self.n1).map(|i| self.block_norm(i).powi(2)).sum();
        let tail = if self.has_tail() { 1.0 } else { 0.0 };
        (bn + tail).sqrt()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.n1 == other.n1
            && self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "layout mismatch: blocks {:?} (n1 = {}) vs {:?} (n1 = {})",
                self.block_dims(),
                self.n1,
                other.block_dims(),
                other.n1
            )))
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_layout(other));
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert!(self.same_layout(x));
        for (a, b) in self.blocks.iter_mut().zip(&x.blocks) {
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += alpha * bi;
            }
        }
    }

    /// `self + alpha * x` as a new vector.
    pub fn add_scaled(&self, alpha: f64, x: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(alpha, x);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.blocks.iter_mut().flatten() {
            *x *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-block positive rescaling `T_a`: block `i < n1` is multiplied by `a[i]`,
/// tail blocks are left untouched.
pub fn scale_transform(theta: &ParamVector, a: &[f64]) -> Result<ParamVector> {
    if a.len() != theta.n1() {
        return Err(Error::Structural(format!(
            "scale vector has length {}, expected n1 = {}",
            a.len(),
            theta.n1()
        )));
    }
    if let Some((i, &ai)) = a.iter().enumerate().find(|(_, &ai)| !(ai > 0.0)) {
        return Err(Error::Domain(format!("scale a[{i}] = {ai} is not positive")));
    }
    let mut out = theta.clone();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 1.0 {
            for x in out.block_mut(i) {
                *x *= ai;
            }
        }
    }
    Ok(out)
}
