//! Plot-ready CSV derived from run and sweep artifacts.
//!
//! | kind | source | columns |
//! |------|--------|---------|
//! | `section-scatter` | run with an entropy stage | `sample, iterate, q1, p1, h` |
//! | `lyapunov-history` | run with a Lyapunov stage | `iteration, index, exponent` |
//! | `sweep-curve` | sweep table | `value, status`, then one column per metric |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::diagnostics::entropy::{disk_sample, region_point};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_csv};

use super::run::RunArtifact;
use super::sweep::{SweepTable, SWEEP_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    SectionScatter,
    LyapunovHistory,
    SweepCurve,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "section-scatter" => Ok(PlotKind::SectionScatter),
            "lyapunov-history" => Ok(PlotKind::LyapunovHistory),
            "sweep-curve" => Ok(PlotKind::SweepCurve),
            other => Err(Error::config(format!(
                "unknown plot kind `{other}` (expected section-scatter, lyapunov-history or sweep-curve)"
            ))),
        }
    }
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::SectionScatter => "plot_section_scatter.csv",
            PlotKind::LyapunovHistory => "plot_lyapunov_history.csv",
            PlotKind::SweepCurve => "plot_sweep_curve.csv",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ScatterRow {
    pub sample: usize,
    pub iterate: usize,
    pub q1: f64,
    pub p1: f64,
    pub h: f64,
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    iteration: usize,
    index: usize,
    exponent: f64,
}

/// Orbits of `R̃` from the first initial conditions of the entropy stage.
pub fn section_scatter(art: &RunArtifact) -> Result<Vec<ScatterRow>> {
    if art.entropy.is_none() {
        return Err(Error::MissingStage("entropy".into()));
    }
    let cfg = &art.config;
    let e = &cfg.diagnostics.entropy;
    let psi = cfg.diagnostic_perturbation()?;
    let sys = &cfg.system;
    let h0 = cfg.perturbation.h0;
    let mut rows = Vec::with_capacity(e.scatter_samples * e.scatter_iterates);
    for sample in 0..e.scatter_samples {
        let (z, _) = disk_sample(cfg.seeds.entropy, sample, cfg.diagnostics.support_radius);
        let mut x = region_point(sys, &psi.p_star, h0, z)?;
        for iterate in 0..e.scatter_iterates {
            if iterate > 0 {
                psi.perturbed_return_slice(sys, &mut x, None)?;
            }
            rows.push(ScatterRow {
                sample,
                iterate,
                q1: x.q_bar[0],
                p1: x.p_bar[0],
                h: x.h,
            });
        }
    }
    Ok(rows)
}

fn sweep_curve(t: &SweepTable) -> Result<Vec<u8>> {
    let metrics: Vec<&String> = {
        let mut all: Vec<&String> = t.points.iter().flat_map(|p| p.metrics.keys()).collect();
        all.sort();
        all.dedup();
        all
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["value".to_string(), "status".to_string()];
    header.extend(metrics.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(std::io::Error::other)?;
    for p in &t.points {
        let mut rec = vec![p.value.to_string(), p.status.clone()];
        rec.extend(metrics.iter().map(|m| p.metrics.get(*m).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec).map_err(std::io::Error::other)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}

/// Writes the plot data of `kind` next to `artifact` and returns its path.
pub fn emit_plot_data(artifact: &Path, kind: PlotKind) -> Result<PathBuf> {
    let text = std::fs::read_to_string(artifact)
        .map_err(|e| Error::config(format!("cannot read artifact {}: {e}", artifact.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("artifact is not JSON: {e}")))?;
    let is_sweep = value.get("format").and_then(|f| f.as_str()) == Some(SWEEP_FORMAT);
    let out = artifact.with_file_name(kind.file_name());
    match kind {
        PlotKind::SweepCurve => {
            if !is_sweep {
                return Err(Error::MissingStage("sweep".into()));
            }
            write_atomic(&out, &sweep_curve(&SweepTable::load(artifact)?)?)?;
        }
        PlotKind::SectionScatter | PlotKind::LyapunovHistory => {
            if is_sweep {
                return Err(Error::config("this plot kind needs a run summary, not a sweep table"));
            }
            let art = RunArtifact::from_json(&text)?;
            if kind == PlotKind::SectionScatter {
                write_csv(&out, &section_scatter(&art)?)?;
            } else {
                let rep = art.lyapunov.as_ref().ok_or_else(|| Error::MissingStage("lyapunov".into()))?;
                let rows: Vec<HistoryRow> = rep
                    .history
                    .iter()
                    .flat_map(|h| {
                        h.exponents.iter().enumerate().map(|(index, &exponent)| HistoryRow {
                            iteration: h.iteration,
                            index,
                            exponent,
                        })
                    })
                    .collect();
                write_csv(&out, &rows)?;
            }
        }
    }
    Ok(out)
}
