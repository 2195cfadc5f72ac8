//! Monte Carlo estimate of the Euclidean-ball L^p sharpness.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::net::{Batch, LossOracle};
use crate::params::ParamVector;

/// Order of the L^p norm: a positive integer or infinity. Serialized as an
/// integer or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpOrder {
    Finite(u32),
    Infinity,
}

impl fmt::Display for LpOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpOrder::Finite(p) => write!(f, "{p}"),
            LpOrder::Infinity => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for LpOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" => Ok(LpOrder::Infinity),
            t => match t.parse::<u32>() {
                Ok(p) if p > 0 => Ok(LpOrder::Finite(p)),
                _ => Err(Error::Domain(format!(
                    "p must be a positive integer or \"inf\", got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for LpOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LpOrder::Finite(p) => s.serialize_u32(*p),
            LpOrder::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for LpOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("p must be positive")),
            Raw::Int(p) => Ok(LpOrder::Finite(p)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Options for [`lp_ball_sharpness_mc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallConfig {
    pub delta: f64,
    pub p: LpOrder,
    pub n_samples: usize,
    /// Divide by `1 + L(theta)`.
    pub relative: bool,
}

/// Uniform sample from the ball of radius `delta` in `dim` dimensions:
/// Gaussian direction, radius `delta * U^(1/dim)`.
fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, delta: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::params::norm(&x);
    let u: f64 = rng.random();
    let radius = delta * u.powf(1.0 / dim as f64);
    let s = if n > 0.0 { radius / n } else { 0.0 };
    for v in &mut x {
        *v *= s;
    }
    x
}

/// `|L(theta + e_k) - L(theta)|` for the first `n` samples. Sample `k` is
/// drawn from its own ChaCha stream, so a prefix of a longer run is exactly
/// the shorter run and evaluation order does not matter.
fn sample_diffs(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    delta: f64,
    n: usize,
    batch: &Batch,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let base = oracle.loss(theta, batch)?;
    let flat = theta.flat();
    let dim = flat.len();
    let diffs = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let e = ball_sample(&mut rng, dim, delta);
            let x: Vec<f64> = flat.iter().zip(&e).map(|(a, b)| a + b).collect();
            let l = oracle.loss(&theta.with_flat(&x)?, batch)?;
            Ok((l - base).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((base, diffs))
}

/// Monte Carlo estimate of the L^p norm, under the uniform probability
/// measure on the ball `B(theta, delta)`, of `L(theta') - L(theta)`. For
/// `p = inf` this is the sample maximum, nondecreasing in `n_samples`.
pub fn lp_ball_sharpness_mc(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    delta: f64,
    p: LpOrder,
    n_samples: usize,
    batch: &Batch,
    seed: u64,
) -> Result<f64> {
    lp_ball_sharpness_mc_with(
        oracle,
        theta,
        &BallConfig {
            delta,
            p,
            n_samples,
            relative: false,
        },
        batch,
        seed,
    )
}

pub fn lp_ball_sharpness_mc_with(
    oracle: &dyn LossOracle,
    theta: &ParamVector,
    cfg: &BallConfig,
    batch: &Batch,
    seed: u64,
) -> Result<f64> {
    if cfg.n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::Domain(format!("delta must be > 0, got {}", cfg.delta)));
    }
    let (base, diffs) = sample_diffs(oracle, theta, cfg.delta, cfg.n_samples, batch, seed)?;
    let value = match cfg.p {
        LpOrder::Infinity => diffs.iter().copied().fold(0.0, f64::max),
        LpOrder::Finite(0) => return Err(Error::Domain("p must be positive".into())),
        LpOrder::Finite(p) => {
            let mean = diffs.iter().map(|d| d.powi(p as i32)).sum::<f64>() / diffs.len() as f64;
            mean.powf(1.0 / p as f64)
        }
    };
    Ok(if cfg.relative { value / (1.0 + base) } else { value })
}
