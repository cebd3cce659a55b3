use serde::{Deserialize, Serialize};

use super::KktSystem;
use crate::{Error, Result};

/// A point of an unperturbed system: primal part plus the full iterate in
/// that system's layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Serialize)]
struct NamedSegment<'a> {
    name: &'a str,
    values: &'a [f64],
}

impl Candidate {
    /// Drops slack variables from a (possibly perturbed) iterate.
    pub fn from_iterate(sys: &KktSystem, y: &[f64]) -> Candidate {
        let base = &y[..sys.base_dim()];
        Candidate { z: sys.primal(y).to_vec(), y: base.to_vec() }
    }

    pub fn check(&self, sys: &KktSystem) -> Result<()> {
        if self.y.len() != sys.base_dim() || self.z.len() != sys.primal_dim() {
            return Err(Error::Argument(format!(
                "candidate has {} entries ({} primal), system expects {} ({} primal)",
                self.y.len(),
                self.z.len(),
                sys.base_dim(),
                sys.primal_dim()
            )));
        }
        if self.y[..self.z.len()] != self.z[..] {
            return Err(Error::Argument("candidate z disagrees with the primal part of y".into()));
        }
        Ok(())
    }

    /// JSON with the raw vectors and a per-segment breakdown.
    pub fn to_json(&self, sys: &KktSystem) -> serde_json::Value {
        let segs: Vec<NamedSegment> = sys
            .layout
            .segments
            .iter()
            .filter(|s| s.offset + s.length <= self.y.len())
            .map(|s| NamedSegment { name: &s.name, values: &self.y[s.range()] })
            .collect();
        serde_json::json!({ "z": self.z, "y": self.y, "segments": segs })
    }
}
