use std::path::Path;
use std::process::Command;

fn config(dir: &Path, amplitude: f64, tolerance: f64) -> String {
    format!(
        r#"
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
samples = 10
monodromy_samples = 1
deviation_samples = 50
tolerance = {tolerance:?}

[diagnostics.lyapunov]
iterations = 200

[diagnostics.entropy]
samples = 10
iterations = 200
bootstrap = 50

[diagnostics.frequency]
points = 2
iterations = 200

[diagnostics.tube]
samples = 4
horizon = 500

[output]
dir = {dir:?}
workers = 1
"#,
        dir = dir.display().to_string()
    )
}

fn tubechaos(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tubechaos"))
        .args(args)
        .env_remove("TUBECHAOS_OUTPUT_DIR")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let ok = write_config(tmp.path(), "ok.toml", &config(&out, 0.1, 1e-6));
    let (code, text) = tubechaos(&["run", &ok]);
    assert_eq!(code, 0, "{text}");
    assert!(out.join("summary.json").exists() && out.join("metadata.json").exists());

    let strict = write_config(tmp.path(), "strict.toml", &config(&out, 0.1, 1e-300));
    let (code, text) = tubechaos(&["run", &strict]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("FAIL verify"));

    let bad = write_config(tmp.path(), "bad.toml", &config(&out, 0.1, -1.0));
    assert_eq!(tubechaos(&["run", &bad]).0, 2);
    assert_eq!(tubechaos(&["run", "/nonexistent/config.toml"]).0, 2);

    let folded = write_config(tmp.path(), "folded.toml", &config(&out, 40.0, 1e-6));
    let (code, text) = tubechaos(&["run", &folded]);
    assert_eq!(code, 3, "{text}");
}

#[test]
fn sweep_and_plotdata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.toml", &config(&out, 0.1, 1e-6));
    let (code, text) = tubechaos(&["sweep", &cfg, "--axis", "kick", "--values", "2,4"]);
    assert_eq!(code, 0, "{text}");
    let sweep = out.join("sweep.json").display().to_string();
    let (code, text) = tubechaos(&["plotdata", &sweep, "--kind", "sweep-curve"]);
    assert_eq!(code, 0, "{text}");
    assert!(out.join("plot_sweep_curve.csv").exists());

    let run = out.join("001_4").join("summary.json").display().to_string();
    assert_eq!(tubechaos(&["plotdata", &run, "--kind", "lyapunov-history"]).0, 0);
    assert_eq!(tubechaos(&["plotdata", &run, "--kind", "sweep-curve"]).0, 2);
    assert_eq!(tubechaos(&["plotdata", &run, "--kind", "bogus"]).0, 2);
    assert_eq!(tubechaos(&["sweep", &cfg, "--axis", "nope", "--values", "1"]).0, 2);
}
