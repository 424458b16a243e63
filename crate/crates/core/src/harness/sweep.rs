//! One-parameter sweeps over experiment configs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_csv};

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunArtifact};

pub const SWEEP_FORMAT: &str = "tubechaos-sweep";
pub const SWEEP_FILE: &str = "sweep.json";

/// Short names accepted for `--axis` besides dotted config paths.
pub const AXIS_ALIASES: [(&str, &str); 3] = [
    ("K", "perturbation.amplitude"),
    ("kick", "diagnostics.kick"),
    ("delta_h", "perturbation.delta_h"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// `passed`, `failed` (an assertion) or `error` (the run aborted).
    pub status: String,
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub format: String,
    pub axis: String,
    pub path: String,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
    /// Metrics that do not decrease along the sweep, over the points that ran.
    pub nondecreasing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metric: String,
    pub number: f64,
}

impl SweepTable {
    /// Long-format rows, one per `(value, metric)`.
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .flat_map(|p| {
                p.metrics.iter().map(move |(m, &v)| SweepRow {
                    value: p.value,
                    metric: m.clone(),
                    number: v,
                })
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: SweepTable = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::config(format!("reading sweep table: {e}")))?;
        if t.format != SWEEP_FORMAT {
            return Err(Error::config(format!("not a sweep table (format `{}`)", t.format)));
        }
        Ok(t)
    }
}

pub fn resolve_axis(axis: &str) -> &str {
    AXIS_ALIASES.iter().find(|(a, _)| *a == axis).map_or(axis, |(_, p)| p)
}

/// Copy of `cfg` with the numeric field at dotted `path` set to `value`.
pub fn with_field(cfg: &ExperimentConfig, path: &str, value: f64) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(&cfg.to_toml()?).map_err(|e| Error::config(e.to_string()))?;
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(|| Error::config("empty sweep axis"))?;
    let mut node = &mut table;
    for k in parents {
        node = node
            .get_mut(*k)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::config(format!("sweep axis `{path}`: no section `{k}`")))?;
    }
    let slot = node
        .get_mut(*last)
        .ok_or_else(|| Error::config(format!("sweep axis `{path}` is not a config field")))?;
    *slot = match slot {
        toml::Value::Integer(_) if value.fract() == 0.0 && value >= 0.0 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(Error::config(format!("sweep axis `{path}` takes whole numbers, got {value}")));
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(Error::config(format!("sweep axis `{path}` is not numeric"))),
    };
    ExperimentConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::config(e.to_string()))?)
}

/// Scalar metrics of a run, keyed `stage.metric`.
pub fn run_metrics(art: &RunArtifact) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    if let Some(f) = &art.fidelity {
        m.insert("fidelity.sup_error".into(), f.report.sup_error);
        m.insert("fidelity.monodromy_defect".into(), f.report.monodromy_defect);
        m.insert("fidelity.deviation_c0".into(), f.deviation_c0);
        m.insert("fidelity.deviation_c1".into(), f.deviation_c1);
    }
    if let Some(l) = &art.lyapunov {
        m.insert("lyapunov.lambda1".into(), l.max_exponent());
    }
    if let Some(e) = &art.entropy {
        m.insert("entropy.chaotic_fraction".into(), e.chaotic_fraction);
        m.insert("entropy.map_proxy".into(), e.map_proxy);
        m.insert("entropy.flow_proxy".into(), e.flow_proxy);
        m.insert("entropy.mean_return_time".into(), e.mean_return_time);
    }
    if let Some(f) = &art.frequency {
        m.insert("frequency.converged".into(), f.converged as f64);
    }
    if let Some(t) = &art.tube {
        m.insert("tube.escapes".into(), t.escapes as f64);
        m.insert("tube.max_deviation".into(), t.max_deviation);
    }
    m.insert("assertions.failed".into(), art.assertions.iter().filter(|a| !a.passed).count() as f64);
    m
}

fn point_label(i: usize, value: f64) -> String {
    format!("{i:03}_{value}")
}

/// Runs `cfg` once per value of `axis` and writes `sweep.json` and `sweep.csv`
/// to the output directory. Each point writes its own run into a subdirectory.
///
/// A point that fails is recorded and the sweep moves on.
pub fn parameter_sweep(cfg: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let path = resolve_axis(axis).to_string();
    let base = cfg.output.dir.clone();
    // reject a bad axis before running anything
    with_field(cfg, &path, values[0])?;
    let mut points = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let point = with_field(cfg, &path, value).and_then(|mut c| {
            c.output.dir = base.join(point_label(i, value));
            run_experiment(&c)
        });
        points.push(match point {
            Ok(art) => SweepPoint {
                value,
                status: if art.passed() { "passed" } else { "failed" }.into(),
                error: None,
                metrics: run_metrics(&art),
            },
            Err(e) => SweepPoint {
                value,
                status: "error".into(),
                error: Some(e.to_string()),
                metrics: BTreeMap::new(),
            },
        });
    }
    let ran: Vec<&SweepPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let nondecreasing = ran
        .first()
        .map(|p| {
            p.metrics
                .keys()
                .filter(|k| ran.windows(2).all(|w| match (w[0].metrics.get(*k), w[1].metrics.get(*k)) {
                    (Some(a), Some(b)) => b >= a,
                    _ => false,
                }))
                .cloned()
                .collect()
        })
        .unwrap_or_default();
    let table = SweepTable {
        format: SWEEP_FORMAT.into(),
        axis: axis.into(),
        path,
        config_hash: cfg.hash()?,
        points,
        nondecreasing,
    };
    write_csv(&base.join("sweep.csv"), &table.rows())?;
    let json = serde_json::to_string_pretty(&table).map_err(std::io::Error::other)?;
    write_atomic(&base.join(SWEEP_FILE), json.as_bytes())?;
    Ok(table)
}
