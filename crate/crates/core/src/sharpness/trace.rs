//! Hutchinson estimate of the Hessian trace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{default_hvp_step, hvp, Batch, LossOracle};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub estimate: f64,
    /// Standard error of the mean over probes; zero for a single probe.
    pub std_error: f64,
}

/// Which coordinates the probes cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceScope {
    All,
    /// Only the listed blocks; the estimate is the trace of that principal
    /// sub-block of the Hessian.
    Blocks(Vec<usize>),
}

impl TraceScope {
    /// All BN blocks of `theta`.
    pub fn bn_blocks(theta: &ParamVector) -> Self {
        TraceScope::Blocks((0..theta.n1()).collect())
    }
}

/// Mean of `r^T H r` over Rademacher probes `r`, with `H r` by central
/// differences at the default step.
pub fn trace_sharpness(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
    n_probes: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    trace_sharpness_scoped(oracle, theta, batch, n_probes, seed, &TraceScope::All)
}

pub fn trace_sharpness_scoped(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    batch: &Batch,
    n_probes: usize,
    seed: u64,
    scope: &TraceScope,
) -> Result<TraceEstimate> {
    if n_probes == 0 {
        return Err(Error::Domain("n_probes must be at least 1".into()));
    }
    let mut active = vec![matches!(scope, TraceScope::All); theta.num_blocks()];
    if let TraceScope::Blocks(ids) = scope {
        for &i in ids {
            if i >= active.len() {
                return Err(Error::Structural(format!(
                    "trace scope names block {i}, parameter vector has {}",
                    active.len()
                )));
            }
            active[i] = true;
        }
    }
    let step = default_hvp_step(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let mut r = theta.zeros_like();
        for (i, block) in r.blocks_mut().iter_mut().enumerate() {
            if active[i] {
                for x in block.iter_mut() {
                    *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
        }
        let hr = hvp(oracle, theta, batch, &r, step)?;
        samples.push(r.dot(&hr));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std_error = if samples.len() > 1 {
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(TraceEstimate {
        estimate: mean,
        std_error,
    })
}
