use std::path::Path;

use tubechaos::harness::config::ExperimentConfig;
use tubechaos::harness::plot::{emit_plot_data, PlotKind};
use tubechaos::harness::run::{run_experiment, RunArtifact, SUMMARY_FILE};
use tubechaos::harness::sweep::{parameter_sweep, SWEEP_FILE};
use tubechaos::Error;

fn small(dir: &Path, amplitude: f64, kick: f64) -> ExperimentConfig {
    let text = format!(
        r#"
name = "small"

[system]
kind = "quadratic"
n = 2

[torus]
p_star = [0.0, 1.0]

[perturbation]
support_radius = 0.1
amplitude = {amplitude:?}
h0 = 0.5
delta_h = 0.05

[realization]
levels = 4

[verify]
samples = 20
monodromy_samples = 1
deviation_samples = 200

[diagnostics]
kick = {kick:?}

[diagnostics.lyapunov]
iterations = 1000

[diagnostics.entropy]
samples = 30
iterations = 500
bootstrap = 100
scatter_samples = 3
scatter_iterates = 40

[diagnostics.frequency]
points = 4
iterations = 500

[diagnostics.tube]
samples = 8
horizon = 2000

[output]
dir = {dir:?}
workers = 1
"#,
        dir = dir.display().to_string()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn zero_amplitude_run_passes_with_zero_proxies() {
    let tmp = tempfile::tempdir().unwrap();
    let art = run_experiment(&small(tmp.path(), 0.0, 0.0)).unwrap();
    assert!(art.passed(), "{:?}", art.assertions);
    let f = art.fidelity.as_ref().unwrap();
    assert!(f.report.sup_error <= 1e-8);
    assert_eq!(f.deviation_c0, 0.0);
    let e = art.entropy.as_ref().unwrap();
    assert_eq!((e.chaotic_fraction, e.map_proxy, e.flow_proxy), (0.0, 0.0, 0.0));
    assert_eq!(art.tube.as_ref().unwrap().escapes, 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), 0.1, 4.0);
    run_experiment(&cfg).unwrap();
    let files = ["summary.json", "entropy.csv", "frequency.csv", "tube.csv", "lyapunov.csv", "config.toml"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(tmp.path(), f)).collect();
    let art = run_experiment(&cfg).unwrap();
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&read(tmp.path(), f), bytes, "{f} changed between runs");
    }
    assert!(art.passed(), "{:?}", art.assertions);
    assert!(art.entropy.unwrap().chaotic_fraction > 0.0);
    let back = RunArtifact::load(&tmp.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.config_hash, cfg.hash().unwrap());
}

#[test]
fn failing_stage_leaves_an_incomplete_summary() {
    let tmp = tempfile::tempdir().unwrap();
    // a twist this strong folds the image manifold
    let err = run_experiment(&small(tmp.path(), 40.0, 4.0)).unwrap_err();
    assert!(matches!(err.root(), Error::AmplitudeTooLarge { .. }), "{err}");
    let art = RunArtifact::load(&tmp.path().join(SUMMARY_FILE)).unwrap();
    assert!(!art.complete);
    assert!(art.error.unwrap().contains("realize"));
}

#[test]
fn amplitude_sweep_scales_linearly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), 0.1, 4.0);
    cfg.verify.samples = 5;
    cfg.diagnostics.entropy.enabled = false;
    cfg.diagnostics.lyapunov.enabled = false;
    cfg.diagnostics.tube.enabled = false;
    cfg.diagnostics.frequency.enabled = false;
    let table = parameter_sweep(&cfg, "K", &[1e-3, 1e-2, 1e-1]).unwrap();
    let c0: Vec<f64> = table.points.iter().map(|p| p.metrics["fidelity.deviation_c0"]).collect();
    for w in c0.windows(2) {
        let ratio = w[1] / w[0];
        assert!(ratio > 5.0 && ratio < 20.0, "{c0:?}");
    }
    assert!(table.nondecreasing.contains(&"fidelity.deviation_c0".to_string()));
    let csv = String::from_utf8(read(tmp.path(), "sweep.csv")).unwrap();
    assert!(csv.starts_with("value,metric,number\n"));

    let curve = emit_plot_data(&tmp.path().join(SWEEP_FILE), PlotKind::SweepCurve).unwrap();
    let text = std::fs::read_to_string(curve).unwrap();
    assert_eq!(text.lines().count(), 4);

    let zero = parameter_sweep(&cfg, "K", &[0.0]).unwrap();
    assert_eq!(zero.points.len(), 1);
    assert_eq!(zero.points[0].metrics["fidelity.deviation_c0"], 0.0);
}

#[test]
fn sweep_rejects_unknown_axes_and_records_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), 0.1, 4.0);
    cfg.verify.enabled = false;
    cfg.realization.enabled = false;
    cfg.diagnostics.entropy.enabled = false;
    cfg.diagnostics.tube.enabled = false;
    cfg.diagnostics.frequency.enabled = false;
    assert!(parameter_sweep(&cfg, "perturbation.nonexistent", &[1.0]).unwrap_err().is_config());
    assert!(parameter_sweep(&cfg, "name", &[1.0]).unwrap_err().is_config());
    // a negative radius is a config error at that point only
    let table = parameter_sweep(&cfg, "diagnostics.support_radius", &[0.02, -1.0]).unwrap();
    assert_eq!(table.points[0].status, "passed");
    assert_eq!(table.points[1].status, "error");
}

#[test]
fn plot_data_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), 0.0, 0.0);
    cfg.diagnostics.untwist = false;
    cfg.verify.enabled = false;
    cfg.realization.enabled = false;
    run_experiment(&cfg).unwrap();
    let summary = tmp.path().join(SUMMARY_FILE);

    // the unperturbed twist keeps every orbit on its line p_1 = const
    let path = emit_plot_data(&summary, PlotKind::SectionScatter).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["sample", "iterate", "q1", "p1", "h"]);
    let rows: Vec<(usize, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3 * 40);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            assert_eq!(w[0].1, w[1].1);
        }
    }

    let path = emit_plot_data(&summary, PlotKind::LyapunovHistory).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let its: Vec<usize> = rdr.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(its.len(), 2 * 10);
    assert!(its.windows(2).all(|w| w[0] <= w[1]));

    assert!(matches!(
        emit_plot_data(&summary, PlotKind::SweepCurve).unwrap_err(),
        Error::MissingStage(_)
    ));
    cfg.diagnostics.lyapunov.enabled = false;
    cfg.diagnostics.entropy.enabled = false;
    run_experiment(&cfg).unwrap();
    assert!(matches!(
        emit_plot_data(&summary, PlotKind::LyapunovHistory).unwrap_err(),
        Error::MissingStage(_)
    ));
    assert!(matches!(
        emit_plot_data(&summary, PlotKind::SectionScatter).unwrap_err(),
        Error::MissingStage(_)
    ));
}

#[test]
fn kick_four_scatter_has_one_row_per_iterate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), 0.1, 4.0);
    cfg.verify.enabled = false;
    cfg.realization.enabled = false;
    cfg.diagnostics.tube.enabled = false;
    run_experiment(&cfg).unwrap();
    let path = emit_plot_data(&tmp.path().join(SUMMARY_FILE), PlotKind::SectionScatter).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 40);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 5));
}
