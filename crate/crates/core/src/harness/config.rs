//! Experiment configuration, read from a single TOML file.
//!
//! ```toml
//! name = "demo"
//!
//! [system]
//! kind = "quadratic"
//! n = 2
//!
//! [torus]
//! p_star = [0.0, 1.0]
//!
//! [perturbation]
//! support_radius = 0.1
//! amplitude = 0.1
//! h0 = 0.5
//! delta_h = 0.05
//! ```
//!
//! Every other section is optional and falls back to its defaults. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{IntegratorSettings, Scheme};
use crate::integrable::{IntegrableHamiltonian, LiouvilleTorus, System};
use crate::io::sha256_hex;
use crate::perturbation::{DiskTemplate, RadialTwist, SectionPerturbation, Untwist};
use crate::profiles::BumpProfile;
use crate::realization::RealizationSettings;

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "TUBECHAOS_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub system: System,
    pub torus: TorusConfig,
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub realization: RealizationConfig,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_integrator() -> IntegratorSettings {
    IntegratorSettings {
        scheme: Scheme::Midpoint4,
        step: 5e-3,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusConfig {
    pub p_star: Vec<f64>,
}

/// One radial twist of a custom template. Its amplitude is multiplied by `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistConfig {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// The perturbation that is realized by a Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub support_radius: f64,
    /// Twist amplitude `K`.
    pub amplitude: f64,
    pub h0: f64,
    pub delta_h: f64,
    /// Custom twists; the default is the linked pair filling the support disk.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub twists: Vec<TwistConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealizationConfig {
    pub enabled: bool,
    pub transition_half_width: f64,
    /// Levels on which the potential is cross-checked.
    pub levels: usize,
    pub nodes: usize,
}

impl Default for RealizationConfig {
    fn default() -> Self {
        let s = RealizationSettings::default();
        RealizationConfig {
            enabled: true,
            transition_half_width: s.transition_half_width,
            levels: s.levels,
            nodes: s.nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub enabled: bool,
    pub samples: usize,
    pub monodromy_samples: usize,
    /// Pass threshold on the return-map and monodromy errors.
    pub tolerance: f64,
    /// Transition-zone points for the `|H̃ − H|` and gradient deviations.
    pub deviation_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            enabled: true,
            samples: 1000,
            monodromy_samples: 3,
            tolerance: 1e-6,
            deviation_samples: 1000,
        }
    }
}

/// Diagnostics run on a separately parameterized perturbation: a small
/// template with a strong kick, followed by the untwist that cancels the
/// return shift near the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Twist amplitude; the effective kick on level `h` is `kick · β(h)`.
    pub kick: f64,
    pub support_radius: f64,
    pub untwist: bool,
    pub lyapunov: LyapunovConfig,
    pub entropy: EntropyConfig,
    pub frequency: FrequencyConfig,
    pub tube: TubeConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            kick: 4.0,
            support_radius: 0.02,
            untwist: true,
            lyapunov: LyapunovConfig::default(),
            entropy: EntropyConfig::default(),
            frequency: FrequencyConfig::default(),
            tube: TubeConfig::default(),
        }
    }
}

/// A single long orbit whose running estimates are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub enabled: bool,
    /// Local coordinates `(q_1, p_1 − p*_1)` on the level `h₀`.
    pub initial: [f64; 2],
    pub iterations: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            enabled: true,
            initial: [0.004, 0.003],
            iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub enabled: bool,
    /// Samples per level slice.
    pub samples: usize,
    pub iterations: usize,
    pub threshold: f64,
    pub thresholds: Vec<f64>,
    pub bootstrap: usize,
    pub slices: usize,
    /// Half-width of the sampled level window; 0 samples `h₀` only.
    pub level_half_width: f64,
    /// When set, the run fails unless the chaotic fraction reaches this value
    /// and the bootstrap interval excludes zero.
    pub min_chaotic_fraction: Option<f64>,
    /// Orbits and iterates kept for the section-scatter plot data.
    pub scatter_samples: usize,
    pub scatter_iterates: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            enabled: true,
            samples: 1000,
            iterations: 10_000,
            threshold: 0.05,
            thresholds: vec![0.01, 0.05, 0.1],
            bootstrap: 1000,
            slices: 1,
            level_half_width: 0.0,
            min_chaotic_fraction: None,
            scatter_samples: 20,
            scatter_iterates: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    pub enabled: bool,
    /// Initial actions run from `from` to `to` at angles `q_bar`.
    pub q_bar: Vec<f64>,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub points: usize,
    pub iterations: usize,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig {
            enabled: true,
            q_bar: vec![0.0],
            from: vec![0.05, 1.2],
            to: vec![0.35, 1.2],
            points: 16,
            iterations: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeConfig {
    pub enabled: bool,
    pub samples: usize,
    pub epsilon: f64,
    pub horizon: usize,
    /// Initial conditions are drawn within this radius of the torus in the template plane.
    pub radius: f64,
    pub level_half_width: f64,
}

impl Default for TubeConfig {
    fn default() -> Self {
        TubeConfig {
            enabled: true,
            samples: 100,
            epsilon: 0.04,
            horizon: 100_000,
            radius: 0.02,
            level_half_width: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub verify: u64,
    pub entropy: u64,
    pub tube: u64,
    pub lyapunov: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            verify: 1,
            entropy: 2,
            tube: 3,
            lyapunov: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a config file. `TUBECHAOS_OUTPUT_DIR`, when set, replaces `output.dir`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(format!("config {}", path.display())))?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output.dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let n = self.system.dim();
        if self.torus.p_star.len() != n {
            return Err(Error::config(format!(
                "torus p_star has {} components, the system has n = {n}",
                self.torus.p_star.len()
            )));
        }
        let p = &self.perturbation;
        positive("perturbation.support_radius", p.support_radius)?;
        positive("perturbation.delta_h", p.delta_h)?;
        if !p.amplitude.is_finite() {
            return Err(Error::config("perturbation.amplitude must be finite"));
        }
        let h_star = self.system.energy(&self.torus.p_star);
        if (p.h0 - h_star).abs() > 1e-9 * h_star.abs().max(1.0) {
            return Err(Error::config(format!(
                "perturbation.h0 = {} is not the torus energy {h_star}",
                p.h0
            )));
        }
        if p.delta_h >= h_star.abs().max(1e-300) {
            return Err(Error::config("perturbation.delta_h must be smaller than the torus energy"));
        }
        let r = &self.realization;
        positive("realization.transition_half_width", r.transition_half_width)?;
        if self.verify.enabled && !r.enabled {
            return Err(Error::config("the verify stage needs the realization stage"));
        }
        self.integrator.validate()?;
        positive("verify.tolerance", self.verify.tolerance)?;
        let d = &self.diagnostics;
        positive("diagnostics.support_radius", d.support_radius)?;
        if !d.kick.is_finite() {
            return Err(Error::config("diagnostics.kick must be finite"));
        }
        let e = &d.entropy;
        if e.enabled && (e.samples == 0 || e.iterations == 0 || e.slices == 0) {
            return Err(Error::config("entropy stage needs samples, iterations and slices"));
        }
        if !(e.threshold >= 0.0) || !(e.level_half_width >= 0.0) || e.level_half_width > p.delta_h {
            return Err(Error::config(
                "entropy threshold must be non-negative and the level window inside the envelope",
            ));
        }
        if let Some(f) = e.min_chaotic_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config("entropy.min_chaotic_fraction must lie in [0, 1]"));
            }
        }
        let f = &d.frequency;
        if f.enabled && (f.q_bar.len() + 1 != n || f.from.len() != n || f.to.len() != n || f.points == 0) {
            return Err(Error::config("frequency scan line does not match the system dimension"));
        }
        if f.enabled && f.iterations < 4 {
            return Err(Error::config("frequency.iterations must be at least 4"));
        }
        let t = &d.tube;
        if t.enabled {
            positive("tube.epsilon", t.epsilon)?;
            positive("tube.radius", t.radius)?;
            if t.samples == 0 || !(t.level_half_width >= 0.0) {
                return Err(Error::config("tube stage needs samples and a non-negative level window"));
            }
        }
        self.realization_settings().validate()?;
        self.realized_perturbation()?;
        self.diagnostic_perturbation()?;
        Ok(())
    }

    pub fn torus(&self) -> Result<LiouvilleTorus> {
        LiouvilleTorus::new(&self.system, self.torus.p_star.clone(), 1e-12)
    }

    pub fn realization_settings(&self) -> RealizationSettings {
        RealizationSettings {
            transition_half_width: self.realization.transition_half_width,
            levels: self.realization.levels,
            nodes: self.realization.nodes,
            ..Default::default()
        }
    }

    fn template(&self, radius: f64, amplitude: f64) -> Result<DiskTemplate> {
        let twists = &self.perturbation.twists;
        if twists.is_empty() {
            return DiskTemplate::linked_pair(radius, amplitude);
        }
        // custom twists are given for the realized radius and scaled to `radius`
        let s = radius / self.perturbation.support_radius;
        let list = twists
            .iter()
            .map(|t| RadialTwist::new([t.center[0] * s, t.center[1] * s], t.radius * s, t.weight * amplitude))
            .collect::<Result<Vec<_>>>()?;
        DiskTemplate::new(radius, list)
    }

    fn envelope(&self) -> BumpProfile {
        BumpProfile::new(self.perturbation.h0, self.perturbation.delta_h)
    }

    /// `Ψ` for the realization and verification stages.
    pub fn realized_perturbation(&self) -> Result<SectionPerturbation> {
        let p = &self.perturbation;
        SectionPerturbation::new(
            self.template(p.support_radius, p.amplitude)?,
            self.envelope(),
            self.torus.p_star.clone(),
        )
    }

    /// `Ψ` for the Lyapunov, entropy, frequency and tube stages.
    pub fn diagnostic_perturbation(&self) -> Result<SectionPerturbation> {
        let d = &self.diagnostics;
        let psi = SectionPerturbation::new(
            self.template(d.support_radius, d.kick)?,
            self.envelope(),
            self.torus.p_star.clone(),
        )?;
        Ok(if d.untwist {
            psi.with_untwist(Untwist::around(d.support_radius, self.perturbation.delta_h)?)
        } else {
            psi
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
kind = "quadratic"
n = 2

[torus]
p_star = [0.0, 1.0]

[perturbation]
support_radius = 0.1
amplitude = 0.1
h0 = 0.5
delta_h = 0.05
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let bad = [
            MINIMAL.replace("delta_h = 0.05", "delta_h = -0.05"),
            MINIMAL.replace("h0 = 0.5", "h0 = 0.7"),
            MINIMAL.replace("p_star = [0.0, 1.0]", "p_star = [0.0, 1.0, 2.0]"),
            MINIMAL.replace("support_radius = 0.1", "support_radius = 0.7"),
            format!("{MINIMAL}\n[verify]\nbogus = 1\n"),
            MINIMAL.replace("kind = \"quadratic\"", "kind = \"cubic\""),
        ];
        for text in bad {
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }

    #[test]
    fn custom_twists_are_scaled_to_each_radius() {
        let text = format!(
            "{MINIMAL}\n[[perturbation.twists]]\ncenter = [0.0, 0.0]\nradius = 0.1\nweight = 2.0\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let psi = cfg.diagnostic_perturbation().unwrap();
        assert_eq!(psi.template.twists[0].radius, 0.02);
        assert_eq!(psi.template.twists[0].amplitude, 8.0);
        assert!(psi.untwist.is_some());
    }
}
