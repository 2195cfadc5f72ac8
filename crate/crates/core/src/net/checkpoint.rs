//! Versioned JSON checkpoints.
//!
//! `serde_json` writes the shortest decimal that parses back to the same
//! `f64`, so a save/load cycle is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetworkSpec, RunningStats};
use crate::params::ParamVector;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// `None` for the analytic fixtures, which carry no network.
    pub network: Option<NetworkSpec>,
    pub n1: usize,
    pub blocks: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_stats: Option<RunningStats>,
}

impl Checkpoint {
    pub fn new(
        network: Option<NetworkSpec>,
        theta: &ParamVector,
        running_stats: Option<RunningStats>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            network,
            n1: theta.n1(),
            blocks: theta.blocks().to_vec(),
            running_stats,
        }
    }

    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::new(self.blocks.clone(), self.n1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: Option<u32>,
        }
        let version: Version = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        match version.format_version {
            Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => {
                return Err(Error::Checkpoint(
                    "missing format_version (expected 1)".into(),
                ))
            }
        }
        serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint (format_version 1): {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, BnNetwork};

    #[test]
    fn round_trip_is_exact() {
        let spec = NetworkSpec {
            layers: vec![2, 4, 2],
            bn: vec![true],
            activation: Activation::Relu,
            eps: 1e-5,
        };
        let net = BnNetwork::new(spec.clone()).unwrap();
        let theta = net.init(7).scaled(1.0 / 3.0);
        let ck = Checkpoint::new(Some(spec), &theta, Some(net.fresh_running_stats(0.1)));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ParamVector| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params().unwrap()), bits(&theta));
    }

    #[test]
    fn version_and_corruption_diagnostics() {
        let err = Checkpoint::from_json(r#"{"format_version": 2, "n1": 0, "blocks": []}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("format_version 2"), "{err}");
        let err = Checkpoint::from_json("{not json").unwrap_err().to_string();
        assert!(err.contains("corrupt"), "{err}");
        let err = Checkpoint::from_json(r#"{"n1": 0}"#).unwrap_err().to_string();
        assert!(err.contains("format_version"), "{err}");
    }
}
