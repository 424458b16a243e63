//! Textual artifact of a realized Hamiltonian.
//!
//! The artifact is a JSON object:
//!
//! | key | content |
//! |-----|---------|
//! | `format` | always `"tubechaos-realized-hamiltonian"` |
//! | `version` | schema version, currently 1 |
//! | `config_hash` | SHA-256 of the producing config, or `null` |
//! | `hamiltonian` | system, `p_star`, leaf family (template, transition, period), envelope, glue settings |
//! | `samples` | potential `W` on a grid of `(Q_1, b)` at full envelope, for cross-checking |
//!
//! Loading rebuilds `H̃` from the parameters and rejects the file if the
//! stored samples disagree with the rebuilt potential.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::hamiltonian::RealizedHamiltonian;

pub const ARTIFACT_FORMAT: &str = "tubechaos-realized-hamiltonian";
pub const ARTIFACT_VERSION: u32 = 1;

const SAMPLE_GRID: usize = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSamples {
    pub q1: Vec<f64>,
    pub b: Vec<f64>,
    /// `w[i][j] = W(q1[i]; b[j])` at `β = 1`.
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationArtifact {
    pub format: String,
    pub version: u32,
    pub config_hash: Option<String>,
    pub hamiltonian: RealizedHamiltonian,
    pub samples: PotentialSamples,
}

fn sample_potential(ham: &RealizedHamiltonian) -> Result<PotentialSamples> {
    let r = ham.family.potential.support_radius();
    let axis: Vec<f64> = (0..SAMPLE_GRID)
        .map(|i| -r + 2.0 * r * i as f64 / (SAMPLE_GRID - 1) as f64)
        .collect();
    let mut w = Vec::with_capacity(SAMPLE_GRID);
    for &q in &axis {
        let row: Result<Vec<f64>> = axis.iter().map(|&b| ham.family.potential.value(q, b, 1.0)).collect();
        w.push(row?);
    }
    Ok(PotentialSamples {
        q1: axis.clone(),
        b: axis,
        w,
    })
}

impl RealizationArtifact {
    pub fn new(ham: &RealizedHamiltonian, config_hash: Option<String>) -> Result<Self> {
        Ok(RealizationArtifact {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            config_hash,
            hamiltonian: ham.clone(),
            samples: sample_potential(ham)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("serializing realization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: RealizationArtifact =
            serde_json::from_str(text).map_err(|e| Error::config(format!("reading realization artifact: {e}")))?;
        art.check()?;
        Ok(art)
    }

    fn check(&self) -> Result<()> {
        if self.format != ARTIFACT_FORMAT {
            return Err(Error::config(format!("not a realization artifact (format `{}`)", self.format)));
        }
        if self.version != ARTIFACT_VERSION {
            return Err(Error::config(format!(
                "realization artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                self.version
            )));
        }
        let ham = &self.hamiltonian;
        ham.system.validate()?;
        ham.family.potential.template.validate()?;
        if ham.p_star.len() != crate::integrable::IntegrableHamiltonian::dim(&ham.system) {
            return Err(Error::config("artifact p_star does not match the system dimension"));
        }
        let fresh = sample_potential(ham)?;
        if fresh.q1 != self.samples.q1 || fresh.b != self.samples.b {
            return Err(Error::config("artifact potential grid does not match its support radius"));
        }
        for (row_a, row_b) in fresh.w.iter().zip(&self.samples.w) {
            for (a, b) in row_a.iter().zip(row_b) {
                if (a - b).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "artifact potential samples disagree with the rebuilt potential ({a} vs {b})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn save_realization(path: &Path, ham: &RealizedHamiltonian, config_hash: Option<String>) -> Result<()> {
    let art = RealizationArtifact::new(ham, config_hash)?;
    write_atomic(path, art.to_json()?.as_bytes())
}

pub fn load_realization(path: &Path) -> Result<RealizedHamiltonian> {
    let text = std::fs::read_to_string(path)?;
    Ok(RealizationArtifact::from_json(&text)?.hamiltonian)
}
