//! TOML run configuration.
//!
//! Sections: `[network]`, `[sharpness]`, `[regularizer]`, `[train]`,
//! `[data]` and `[measure]`. Every key has a default, unknown keys are
//! rejected, and [`RunConfig::to_toml`] writes the fully resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, gen_spirals, load_csv, Dataset};
use crate::error::{Error, Result};
use crate::net::{
    Activation, AnalyticLinear, AnalyticQuadratic, BnNetwork, ConstantLoss, LossOracle,
    NetworkSpec,
};
use crate::optimizer::TrainConfig;
use crate::params::ParamVector;
use crate::regularizer::RegularizerConfig;
use crate::sharpness::{LpOrder, SharpnessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    BnMlp,
    Linear,
    Quadratic,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub oracle: OracleKind,
    // BN-MLP
    pub layers: Vec<usize>,
    pub bn: Vec<bool>,
    pub activation: Activation,
    pub eps: f64,
    /// Seed of the He initialization when no checkpoint is given.
    pub init_seed: u64,
    // Analytic oracles. The parameter point is `theta` (block-major flat
    // values) split by `block_dims`, with the first `n1` blocks BN blocks.
    pub block_dims: Vec<usize>,
    pub n1: usize,
    pub theta: Vec<f64>,
    /// Linear: the coefficient vector (flat).
    pub coefficients: Vec<f64>,
    /// Quadratic: full symmetric matrix; if empty, `diagonal` is used, and
    /// if that is empty too, the identity.
    pub matrix: Vec<Vec<f64>>,
    pub diagonal: Vec<f64>,
    /// Constant: the loss value.
    pub value: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            oracle: OracleKind::BnMlp,
            layers: vec![2, 64, 64, 2],
            bn: vec![true, true],
            activation: Activation::Relu,
            eps: 1e-5,
            init_seed: 0,
            block_dims: Vec::new(),
            n1: 0,
            theta: Vec::new(),
            coefficients: Vec::new(),
            matrix: Vec::new(),
            diagonal: Vec::new(),
            value: 0.0,
        }
    }
}

impl NetworkSection {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers.clone(),
            bn: self.bn.clone(),
            activation: self.activation,
            eps: self.eps,
        }
    }

    /// The configured analytic parameter point.
    pub fn analytic_theta(&self) -> Result<ParamVector> {
        if self.block_dims.is_empty() {
            return Err(Error::Config(
                "[network] analytic oracles need block_dims (or a checkpoint)".into(),
            ));
        }
        let layout = ParamVector::new(self.block_dims.iter().map(|&d| vec![0.0; d]).collect(), self.n1)
            .map_err(|e| Error::Config(format!("[network] {e}")))?;
        if self.theta.is_empty() {
            return Ok(layout);
        }
        layout
            .with_flat(&self.theta)
            .map_err(|e| Error::Config(format!("[network] theta: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    #[default]
    Spirals,
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub seed: u64,
    pub n_per_class: usize,
    /// Spirals only.
    pub turns: f64,
    pub noise_sigma: f64,
    /// Blobs only.
    pub n_classes: usize,
    /// CSV only; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
    /// CSV only: share of rows in the training split.
    pub train_fraction: f64,
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Spirals,
            seed: 0,
            n_per_class: 2500,
            turns: 1.5,
            noise_sigma: 0.2,
            n_classes: 2,
            path: None,
            train_fraction: 0.8,
            standardize: false,
        }
    }
}

/// Settings of the `measure`, `invariance` and `approx-check` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    pub seed: u64,
    /// Radius of the Euclidean ball for the Monte Carlo measure.
    pub mc_delta: f64,
    pub mc_p: LpOrder,
    pub mc_samples: usize,
    /// Divide the Monte Carlo measure by `1 + L(theta)`.
    pub mc_relative: bool,
    pub trace_probes: usize,
    /// `delta` grid of the approximation check.
    pub approx_deltas: Vec<f64>,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self {
            seed: 0,
            mc_delta: 0.05,
            mc_p: LpOrder::Infinity,
            mc_samples: 10_000,
            mc_relative: false,
            trace_probes: 64,
            approx_deltas: vec![0.1, 0.05, 0.025, 0.0125],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub sharpness: SharpnessConfig,
    pub regularizer: RegularizerConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub measure: MeasureSection,
    /// Directory of the file this was read from, for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.oracle == OracleKind::BnMlp {
            self.network.spec().validate()?;
        }
        self.train_config().validate()?;
        let m = &self.measure;
        if m.mc_samples == 0 || m.trace_probes == 0 {
            return Err(Error::Config("mc_samples and trace_probes must be >= 1".into()));
        }
        if !(m.mc_delta > 0.0) {
            return Err(Error::Config(format!("mc_delta must be > 0, got {}", m.mc_delta)));
        }
        if let Some(d) = m.approx_deltas.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Config(format!("approx_deltas must be > 0, got {d}")));
        }
        Ok(())
    }

    /// The `[train]` section with `[sharpness]` and `[regularizer]` merged in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sharpness: self.sharpness.clone(),
            reg: self.regularizer.clone(),
            ..self.train.clone()
        }
    }

    /// Fully resolved config, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        let mut data = match d.kind {
            DataKind::Spirals => gen_spirals(d.seed, d.n_per_class, d.turns, d.noise_sigma)?,
            DataKind::Blobs => gen_blobs(d.seed, d.n_per_class, d.n_classes, d.noise_sigma)?,
            DataKind::Csv => {
                let rel = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("[data] kind = \"csv\" needs a path".into()))?;
                load_csv(&self.base_dir.join(rel))?.split(d.seed, d.train_fraction)?
            }
        };
        if d.standardize {
            data.standardize();
        }
        Ok(data)
    }

    pub fn network(&self) -> Result<BnNetwork> {
        BnNetwork::new(self.network.spec())
    }

    /// The configured loss oracle; analytic oracles take their layout from
    /// `layout`.
    pub fn oracle(&self, layout: &ParamVector) -> Result<Box<dyn LossOracle>> {
        let n = &self.network;
        Ok(match n.oracle {
            OracleKind::BnMlp => Box::new(self.network()?),
            OracleKind::Linear => {
                let g = layout
                    .with_flat(&n.coefficients)
                    .map_err(|e| Error::Config(format!("[network] coefficients: {e}")))?;
                Box::new(AnalyticLinear::new(g))
            }
            OracleKind::Quadratic => {
                let q = if !n.matrix.is_empty() {
                    AnalyticQuadratic::new(n.matrix.clone(), layout)
                } else if !n.diagonal.is_empty() {
                    AnalyticQuadratic::diagonal(&n.diagonal, layout)
                } else {
                    Ok(AnalyticQuadratic::identity(layout))
                };
                Box::new(q.map_err(|e| Error::Config(format!("[network] {e}")))?)
            }
            OracleKind::Constant => Box::new(ConstantLoss { value: n.value }),
        })
    }
}
