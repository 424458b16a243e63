//! Declarative experiments: config parsing, the staged pipeline, sweeps and
//! plot data.
//!
//! A run writes into its output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | canonical echo of the config |
//! | `summary.json` | [`RunArtifact`]: stage reports and assertions, reproducible byte for byte |
//! | `metadata.json` | version, start time and wall-clock per stage |
//! | `realized_hamiltonian.json` | the realized Hamiltonian |
//! | `lyapunov.csv` | `iteration, index, exponent` |
//! | `entropy.csv` | one row per sample: `slice, index, level, q1, p1, lambda1, positive_sum, return_time, iterations, truncated` |
//! | `entropy_thresholds.csv` | `threshold, chaotic_fraction, map_proxy, flow_proxy` |
//! | `frequency.csv` | `scan, index, angle, p_1, p_n, energy, rotation, window_gap, converged` |
//! | `tube.csv` | `index, level, q1, p1, max_deviation, escaped_at, failure` |

pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use plot::{emit_plot_data, PlotKind};
pub use run::{run_experiment, Assertion, RunArtifact};
pub use sweep::{parameter_sweep, SweepTable};
