//! Composite Simpson rule on a symmetric interval.

use crate::error::{Error, Result};

/// Nodes and weights of the composite Simpson rule with `n` equally spaced
/// nodes (odd, at least 3) over `[-half_width, half_width]`.
#[derive(Debug, Clone)]
pub struct Simpson {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Simpson {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 3 || n % 2 == 0 {
            return Err(Error::Domain(format!(
                "Simpson rule needs an odd node count >= 3, got {n}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::Domain(format!(
                "integration half-width must be positive, got {half_width}"
            )));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let nodes = (0..n)
            .map(|k| {
                // Mirror the upper half so the node set is exactly symmetric.
                if 2 * k + 1 < n {
                    -half_width + k as f64 * h
                } else if 2 * k + 1 == n {
                    0.0
                } else {
                    half_width - (n - 1 - k) as f64 * h
                }
            })
            .collect();
        let weights = (0..n)
            .map(|k| {
                let c = if k == 0 || k == n - 1 {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        Ok(Self { nodes, weights })
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}
