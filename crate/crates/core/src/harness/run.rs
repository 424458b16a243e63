//! The experiment pipeline: build `Ψ`, realize `H̃`, verify, diagnose.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::diagnostics::entropy::region_point;
use crate::diagnostics::frequency::FrequencyRow;
use crate::diagnostics::{
    entropy_estimate, frequency_scan, lyapunov_spectrum, tube_confinement, EntropyEstimate, EntropyRegion,
    EntropySettings, FrequencyScan, LyapunovReport, ScanLine, SliceReturn, TubeRegion, TubeReport, TubeSettings,
};
use crate::error::{Error, Result};
use crate::integrable::{wrap_unit, IntegrableHamiltonian};
use crate::io::{write_atomic, write_csv};
use crate::linalg::{symplectic_form, symplecticity_defect};
use crate::perturbation::SectionPerturbation;
use crate::realization::verify::{active_section_samples, deviation_from_base, transition_zone_samples};
use crate::realization::{realize, save_realization, verify_realization, FidelityReport, RealizedHamiltonian};
use crate::slice::{LevelJacobian, SlicePoint};

use super::config::ExperimentConfig;

pub const RUN_FORMAT: &str = "tubechaos-run";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SUMMARY_FILE: &str = "summary.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const REALIZATION_FILE: &str = "realized_hamiltonian.json";

/// A checked property of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub stage: String,
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

fn at_most(stage: &str, name: &str, value: f64, limit: f64) -> Assertion {
    Assertion {
        stage: stage.into(),
        name: name.into(),
        value,
        limit,
        passed: value <= limit,
    }
}

fn below(stage: &str, name: &str, value: f64, limit: f64) -> Assertion {
    Assertion {
        passed: value < limit,
        ..at_most(stage, name, value, limit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityStage {
    pub report: FidelityReport,
    /// Largest `|H(Ψ(x)) − H(x)|` over the samples.
    pub level_defect: f64,
    /// Largest symplecticity defect of the slice Jacobian of `Ψ`.
    pub symplecticity_defect: f64,
    /// Sup of `|H̃ − H|` in the transition zone.
    pub deviation_c0: f64,
    /// Sup of the gradient deviation in the transition zone.
    pub deviation_c1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStage {
    pub perturbed: FrequencyScan,
    pub unperturbed: FrequencyScan,
    /// Rows whose level lies outside the level support of `Ψ`.
    pub off_support: usize,
    /// Off-support rows whose perturbed and unperturbed scans differ in any bit.
    pub mismatches: usize,
    /// Largest distance between an off-support rotation number and `ω_i/ω_n`.
    pub closed_form_error: f64,
    pub converged: usize,
}

/// Everything a run produced, except wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// False when a stage aborted; `error` then names it.
    pub complete: bool,
    pub error: Option<String>,
    pub realization: Option<String>,
    pub fidelity: Option<FidelityStage>,
    pub lyapunov: Option<LyapunovReport>,
    pub entropy: Option<EntropyEstimate>,
    pub frequency: Option<FrequencyStage>,
    pub tube: Option<TubeReport>,
    pub assertions: Vec<Assertion>,
}

impl RunArtifact {
    pub fn passed(&self) -> bool {
        self.complete && self.assertions.iter().all(|a| a.passed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: RunArtifact =
            serde_json::from_str(text).map_err(|e| Error::config(format!("reading run artifact: {e}")))?;
        if art.format != RUN_FORMAT {
            return Err(Error::config(format!("not a run artifact (format `{}`)", art.format)));
        }
        Ok(art)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock data, kept apart so the summary stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config_hash: String,
    pub started_unix: u64,
    pub workers: usize,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Serialize)]
struct HistoryCsv {
    iteration: usize,
    index: usize,
    exponent: f64,
}

#[derive(Debug, Serialize)]
struct FrequencyCsv {
    scan: &'static str,
    index: usize,
    angle: usize,
    p_1: f64,
    p_n: f64,
    energy: f64,
    rotation: f64,
    window_gap: f64,
    converged: bool,
}

struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    art: RunArtifact,
    timings: Vec<StageTiming>,
}

impl Pipeline<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut RunArtifact, &Path) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(&mut self.art, &self.dir).map_err(|e| e.context(format!("stage `{name}`")));
        self.timings.push(StageTiming {
            stage: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        if let Err(e) = &out {
            self.art.complete = false;
            self.art.error = Some(e.to_string());
        }
        out
    }

    fn write(&self, started: u64, workers: usize) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.art).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(SUMMARY_FILE), json.as_bytes())?;
        let meta = RunMetadata {
            version: VERSION.into(),
            config_hash: self.art.config_hash.clone(),
            started_unix: started,
            workers,
            timings: self.timings.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(METADATA_FILE), json.as_bytes())
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))
}

/// Runs every enabled stage of `cfg` and writes its artifacts to `cfg.output.dir`.
///
/// A failing stage aborts the run; the summary is still written, marked
/// incomplete, before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifact> {
    cfg.validate()?;
    let pool = thread_pool(cfg.output.workers)?;
    let workers = pool.current_num_threads();
    pool.install(|| run_in_pool(cfg, workers))
}

fn run_in_pool(cfg: &ExperimentConfig, workers: usize) -> Result<RunArtifact> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let hash = cfg.hash()?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let mut p = Pipeline {
        cfg,
        dir,
        art: RunArtifact {
            format: RUN_FORMAT.into(),
            version: VERSION.into(),
            config_hash: hash,
            config: cfg.clone(),
            complete: true,
            error: None,
            realization: None,
            fidelity: None,
            lyapunov: None,
            entropy: None,
            frequency: None,
            tube: None,
            assertions: Vec::new(),
        },
        timings: Vec::new(),
    };
    let result = run_stages(&mut p);
    p.write(started, workers)?;
    result.map(|()| p.art)
}

fn run_stages(p: &mut Pipeline) -> Result<()> {
    let cfg = p.cfg;
    let sys = &cfg.system;
    let (psi, diag) = p.stage("build", |_, _| Ok((cfg.realized_perturbation()?, cfg.diagnostic_perturbation()?)))?;

    if cfg.realization.enabled {
        let ham = p.stage("realize", |art, dir| {
            let ham = realize(sys, &cfg.torus()?, &psi, &cfg.realization_settings())?;
            save_realization(&dir.join(REALIZATION_FILE), &ham, Some(art.config_hash.clone()))?;
            art.realization = Some(REALIZATION_FILE.into());
            Ok(ham)
        })?;
        if cfg.verify.enabled {
            p.stage("verify", |art, _| {
                let stage = verify_stage(cfg, &ham, &psi)?;
                let s = "verify";
                let tol = cfg.verify.tolerance;
                art.assertions.extend([
                    below(s, "return map error", stage.report.sup_error, tol),
                    below(s, "monodromy defect", stage.report.monodromy_defect, tol),
                    at_most(s, "deviation outside U", stage.report.outside_max_deviation, 0.0),
                    below(s, "level defect", stage.level_defect, 1e-12),
                    below(s, "symplecticity defect", stage.symplecticity_defect, 1e-10),
                ]);
                art.fidelity = Some(stage);
                Ok(())
            })?;
        }
    }

    let d = &cfg.diagnostics;
    let h0 = cfg.perturbation.h0;
    if d.lyapunov.enabled {
        p.stage("lyapunov", |art, dir| {
            let x0 = region_point(sys, &diag.p_star, h0, d.lyapunov.initial)?;
            let map = SliceReturn { sys, psi: Some(&diag) };
            let rep = lyapunov_spectrum(&map, &x0, d.lyapunov.iterations, cfg.seeds.lyapunov);
            let rows: Vec<HistoryCsv> = rep
                .history
                .iter()
                .flat_map(|h| {
                    h.exponents.iter().enumerate().map(|(index, &exponent)| HistoryCsv {
                        iteration: h.iteration,
                        index,
                        exponent,
                    })
                })
                .collect();
            write_csv(&dir.join("lyapunov.csv"), &rows)?;
            art.assertions.push(below(
                "lyapunov",
                "exponent sum",
                rep.exponents.iter().sum::<f64>().abs(),
                1e-6,
            ));
            art.assertions.push(at_most("lyapunov", "truncated", rep.truncated as u8 as f64, 0.0));
            art.lyapunov = Some(rep);
            Ok(())
        })?;
    }

    if d.entropy.enabled {
        p.stage("entropy", |art, dir| {
            let e = &d.entropy;
            let region = EntropyRegion {
                radius: d.support_radius,
                level_center: h0,
                level_half_width: e.level_half_width,
                slices: e.slices,
            };
            let settings = EntropySettings {
                samples: e.samples,
                iterations: e.iterations,
                threshold: e.threshold,
                thresholds: e.thresholds.clone(),
                bootstrap: e.bootstrap,
                seed: cfg.seeds.entropy,
            };
            let est = entropy_estimate(sys, &diag, &region, &settings)?;
            write_csv(&dir.join("entropy.csv"), &est.rows)?;
            write_csv(&dir.join("entropy_thresholds.csv"), &est.thresholds)?;
            let identity = (est.flow_proxy * est.mean_return_time - est.map_proxy).abs();
            art.assertions
                .push(at_most("entropy", "accounting identity", identity, 1e-12 * est.map_proxy.abs()));
            if let Some(min) = e.min_chaotic_fraction {
                art.assertions.push(Assertion {
                    passed: est.chaotic_fraction >= min,
                    ..at_most("entropy", "chaotic fraction", est.chaotic_fraction, min)
                });
                art.assertions.push(Assertion {
                    passed: est.fraction_interval[0] > 0.0,
                    ..at_most("entropy", "fraction interval lower end", est.fraction_interval[0], 0.0)
                });
            }
            art.entropy = Some(est);
            Ok(())
        })?;
    }

    if d.frequency.enabled {
        p.stage("frequency", |art, dir| {
            let stage = frequency_stage(cfg, &diag)?;
            let mut rows = Vec::new();
            for (name, scan) in [("perturbed", &stage.perturbed), ("unperturbed", &stage.unperturbed)] {
                for r in &scan.rows {
                    for (angle, &rotation) in r.rotation.iter().enumerate() {
                        rows.push(FrequencyCsv {
                            scan: name,
                            index: r.index,
                            angle,
                            p_1: r.p[0],
                            p_n: r.p[r.p.len() - 1],
                            energy: sys.energy(&r.p),
                            rotation,
                            window_gap: r.window_gap,
                            converged: r.converged,
                        });
                    }
                }
            }
            write_csv(&dir.join("frequency.csv"), &rows)?;
            art.assertions
                .push(at_most("frequency", "off-support mismatches", stage.mismatches as f64, 0.0));
            if stage.off_support > 0 {
                art.assertions
                    .push(below("frequency", "closed-form rotation error", stage.closed_form_error, 1e-9));
            }
            art.frequency = Some(stage);
            Ok(())
        })?;
    }

    if d.tube.enabled {
        p.stage("tube", |art, dir| {
            let t = &d.tube;
            let rep = tube_confinement(
                sys,
                &diag,
                &TubeRegion {
                    radius: t.radius,
                    level_center: h0,
                    level_half_width: t.level_half_width,
                },
                &TubeSettings {
                    samples: t.samples,
                    epsilon: t.epsilon,
                    horizon: t.horizon,
                    seed: cfg.seeds.tube,
                },
            )?;
            write_csv(&dir.join("tube.csv"), &rep.rows)?;
            art.assertions.push(at_most("tube", "escapes", rep.escapes as f64, 0.0));
            art.tube = Some(rep);
            Ok(())
        })?;
    }
    Ok(())
}

fn verify_stage(cfg: &ExperimentConfig, ham: &RealizedHamiltonian, psi: &SectionPerturbation) -> Result<FidelityStage> {
    let sys = &cfg.system;
    let v = &cfg.verify;
    let samples = active_section_samples(sys, psi, v.samples, cfg.seeds.verify)?;
    let report = verify_realization(sys, ham, psi, &samples, &cfg.integrator, v.monodromy_samples)?;
    let n = sys.dim();
    let j = symplectic_form(2 * (n - 1));
    let (mut level_defect, mut symp): (f64, f64) = (0.0, 0.0);
    for sp in &samples {
        let mut x = SlicePoint::from_section(sys, sp);
        let mut jac = LevelJacobian::identity(n - 1);
        psi.apply_slice(sys, &mut x, Some(&mut jac))?;
        level_defect = level_defect.max((sys.energy(&x.action()) - sys.energy(&sp.p)).abs());
        symp = symp.max(symplecticity_defect(&jac.slice, &j)?);
    }
    let zone = transition_zone_samples(sys, ham, psi, v.deviation_samples, cfg.seeds.verify)?;
    let (deviation_c0, deviation_c1) = deviation_from_base(ham, &zone)?;
    Ok(FidelityStage {
        report,
        level_defect,
        symplecticity_defect: symp,
        deviation_c0,
        deviation_c1,
    })
}

fn frequency_stage(cfg: &ExperimentConfig, psi: &SectionPerturbation) -> Result<FrequencyStage> {
    let sys = &cfg.system;
    let f = &cfg.diagnostics.frequency;
    let line = ScanLine {
        q_bar: f.q_bar.clone(),
        from: f.from.clone(),
        to: f.to.clone(),
        points: f.points,
    };
    let perturbed = frequency_scan(sys, Some(psi), &line, f.iterations)?;
    let unperturbed = frequency_scan(sys, None, &line, f.iterations)?;
    let reach = psi.level_support_radius();
    let off = |r: &FrequencyRow| (sys.energy(&r.p) - psi.h0()).abs() >= reach;
    let mut off_support = 0;
    let mut mismatches = 0;
    let mut closed_form_error: f64 = 0.0;
    for (a, b) in perturbed.rows.iter().zip(&unperturbed.rows) {
        if !off(a) {
            continue;
        }
        off_support += 1;
        let same = a.failure.is_none()
            && a.rotation.len() == b.rotation.len()
            && a.rotation.iter().zip(&b.rotation).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.window_gap.to_bits() == b.window_gap.to_bits();
        if !same {
            mismatches += 1;
        }
        let w = sys.frequency(&a.p);
        let rate = w[w.len() - 1];
        for (i, rot) in a.rotation.iter().enumerate() {
            let want = wrap_unit(w[i] / rate);
            closed_form_error = closed_form_error.max(crate::integrable::wrap_centered(rot - want).abs());
        }
        if a.rotation.is_empty() {
            closed_form_error = f64::INFINITY;
        }
    }
    let converged = perturbed.rows.iter().filter(|r| r.converged).count();
    Ok(FrequencyStage {
        perturbed,
        unperturbed,
        off_support,
        mismatches,
        closed_form_error,
        converged,
    })
}
