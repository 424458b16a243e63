//! Acceptance suite.
//!
//! Every criterion prints one line `criterion N  PASS|FAIL  ...` with the
//! measured value next to its limit, followed by a results table. The test
//! fails at the end if any criterion failed, so a red criterion does not hide
//! the others.
//!
//! Run with
//!
//! ```text
//! cargo test -p tubechaos --test acceptance -- --nocapture
//! ```
//!
//! The lines are written straight to stderr, so they also show up without
//! `--nocapture`. The full suite takes several minutes on one core; the
//! entropy and tube criteria dominate.

use std::io::Write;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubechaos::diagnostics::{
    entropy_estimate, frequency_scan, tube_confinement, EntropyRegion, EntropySettings, ScanLine, TubeRegion,
    TubeSettings,
};
use tubechaos::flow::{IntegratorSettings, Scheme};
use tubechaos::integrable::{wrap_centered, wrap_unit, IntegrableHamiltonian, LiouvilleTorus, System};
use tubechaos::perturbation::{DiskTemplate, SectionPerturbation, Untwist};
use tubechaos::profiles::BumpProfile;
use tubechaos::realization::potential::reconstruct_from_partition;
use tubechaos::realization::verify::{active_section_samples, deviation_from_base, transition_zone_samples};
use tubechaos::realization::{
    isotopy_family, realize, verify_realization, LeafPotential, PotentialGrid, RealizationSettings,
    RealizedHamiltonian,
};
use tubechaos::slice::{LevelJacobian, SlicePoint};

const P_STAR: [f64; 2] = [0.0, 1.0];
const H0: f64 = 0.5;
const DELTA_H: f64 = 0.05;
const R_REALIZED: f64 = 0.1;
const R_DIAG: f64 = 0.02;
const KICK: f64 = 4.0;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn report(out: &mut Vec<Outcome>, id: u32, name: &'static str, start: Instant, passed: bool, detail: String) {
    let seconds = start.elapsed().as_secs_f64();
    let mark = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2}  {mark}  {name}: {detail} ({seconds:.1} s)");
    out.push(Outcome {
        id,
        name,
        passed,
        detail,
        seconds,
    });
}

fn system() -> System {
    System::quadratic(2)
}

fn realized_psi(k: f64) -> SectionPerturbation {
    SectionPerturbation::new(
        DiskTemplate::linked_pair(R_REALIZED, k).unwrap(),
        BumpProfile::new(H0, DELTA_H),
        P_STAR.to_vec(),
    )
    .unwrap()
}

fn realized(k: f64) -> (SectionPerturbation, RealizedHamiltonian) {
    let sys = system();
    let torus = LiouvilleTorus::new(&sys, P_STAR.to_vec(), 1e-12).unwrap();
    let psi = realized_psi(k);
    let ham = realize(&sys, &torus, &psi, &RealizationSettings::default()).unwrap();
    (psi, ham)
}

fn diagnostic_psi(kick: f64, r_supp: f64) -> SectionPerturbation {
    SectionPerturbation::new(
        DiskTemplate::linked_pair(r_supp, kick).unwrap(),
        BumpProfile::new(H0, DELTA_H),
        P_STAR.to_vec(),
    )
    .unwrap()
    .with_untwist(Untwist::around(r_supp, DELTA_H).unwrap())
}

fn energy(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|x| x * x).sum::<f64>()
}

/// Phase point outside the neighbourhood `U` of the realization, decided from
/// the chart geometry: off the envelope, outside the transition window, or
/// outside the local disk.
fn outside_u(q: &[f64], p: &[f64], half_width: f64) -> bool {
    if (energy(p) - H0).abs() >= DELTA_H {
        return true;
    }
    // quadratic system: ω = p, base period 1/ω_n(p*) = 1
    let qn = wrap_unit(q[1]);
    let s = 2.0 * qn / p[1] - 1.0;
    if s.abs() >= half_width {
        return true;
    }
    let q1 = wrap_centered(q[0] - qn * p[0] / p[1]);
    q1.hypot(p[0] - P_STAR[0]) >= R_REALIZED
}

fn fidelity_and_structure(out: &mut Vec<Outcome>) {
    let sys = system();
    let start = Instant::now();
    let (psi, ham) = realized(0.1);
    let samples = active_section_samples(&sys, &psi, 1000, 1).unwrap();
    let integrator = IntegratorSettings {
        scheme: Scheme::Midpoint4,
        step: 5e-3,
        ..Default::default()
    };
    let rep = verify_realization(&sys, &ham, &psi, &samples, &integrator, 5).unwrap();
    report(
        out,
        1,
        "return-map fidelity",
        start,
        rep.samples >= 1000 && rep.sup_error < 1e-6,
        format!("sup error {:.3e} < 1e-6 over {} samples", rep.sup_error, rep.samples),
    );

    // exact localization
    let start = Instant::now();
    let half_width = ham.family.transition.half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut inside_envelope, mut off_envelope, mut nonzero) = (0usize, 0usize, 0usize);
    while inside_envelope < 10_000 || off_envelope < 10_000 {
        let q = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let p = [rng.random_range(-0.15..0.15), rng.random_range(0.85..1.15)];
        if !outside_u(&q, &p, half_width) {
            continue;
        }
        let off = (energy(&p) - H0).abs() >= DELTA_H;
        let count = if off { &mut off_envelope } else { &mut inside_envelope };
        if *count >= 10_000 {
            continue;
        }
        *count += 1;
        let v = ham.value(&q, &p).unwrap();
        if v.to_bits() != sys.energy(&p).to_bits() {
            nonzero += 1;
        }
    }
    report(
        out,
        2,
        "exact localization",
        start,
        nonzero == 0,
        format!(
            "{nonzero} of {} points outside U with H̃ ≠ H bitwise ({inside_envelope} on envelope levels, {off_envelope} off them)",
            inside_envelope + off_envelope
        ),
    );

    // smallness
    let start = Instant::now();
    let amps = [1e-3, 1e-2, 1e-1];
    let mut scaled = Vec::new();
    for k in amps {
        let (psi_k, ham_k) = realized(k);
        let pts = transition_zone_samples(&sys, &ham_k, &psi_k, 1000, 3).unwrap();
        let (c0, c1) = deviation_from_base(&ham_k, &pts).unwrap();
        scaled.push((c0 / k, c1 / k));
    }
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = scaled.iter().map(f).collect();
        v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let (s0, s1) = (spread(|x| x.0), spread(|x| x.1));
    report(
        out,
        3,
        "linear smallness in K",
        start,
        s0 <= 2.0 && s1 <= 2.0 && s0.is_finite() && s1.is_finite(),
        format!("sup/K spread C0 {s0:.3}, C1 {s1:.3} (limit 2) over K = 1e-3, 1e-2, 1e-1"),
    );

    // level preservation and symplecticity, on the realized and the diagnostic map
    let start = Instant::now();
    let diag = diagnostic_psi(KICK, R_DIAG);
    let diag_samples = active_section_samples(&sys, &diag, 1000, 4).unwrap();
    let (mut level, mut det): (f64, f64) = (0.0, 0.0);
    for (map, set) in [(&psi, &samples), (&diag, &diag_samples)] {
        for sp in set.iter() {
            let mut x = SlicePoint::from_section(&sys, sp);
            let mut jac = LevelJacobian::identity(1);
            map.apply_slice(&sys, &mut x, Some(&mut jac)).unwrap();
            level = level.max((energy(&x.action()) - energy(&sp.p)).abs());
            let m = &jac.slice;
            det = det.max((m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] - 1.0).abs());
        }
    }
    report(
        out,
        4,
        "level, symplecticity, monodromy",
        start,
        level < 1e-12 && det < 1e-10 && rep.monodromy_defect < 1e-6,
        format!(
            "level {level:.2e} < 1e-12, slice symplecticity {det:.2e} < 1e-10, monodromy {:.2e} < 1e-6 ({} samples)",
            rep.monodromy_defect, rep.monodromy_samples
        ),
    );
}

fn entropy_and_accounting(out: &mut Vec<Outcome>) {
    let sys = system();
    let psi = diagnostic_psi(KICK, R_DIAG);

    let start = Instant::now();
    let settings = EntropySettings {
        samples: 10_000,
        iterations: 10_000,
        bootstrap: 1000,
        seed: 5,
        ..Default::default()
    };
    let single = |half_width: f64, slices: usize| EntropyRegion {
        radius: R_DIAG,
        level_center: H0,
        level_half_width: half_width,
        slices,
    };
    let est = entropy_estimate(&sys, &psi, &single(0.0, 1), &settings).unwrap();
    report(
        out,
        5,
        "positive entropy proxy",
        start,
        est.chaotic_fraction >= 0.2 && est.fraction_interval[0] > 0.0,
        format!(
            "chaotic fraction {:.4} >= 0.2, interval [{:.4}, {:.4}], map proxy {:.4}, {} truncated",
            est.chaotic_fraction, est.fraction_interval[0], est.fraction_interval[1], est.map_proxy, est.truncated
        ),
    );

    let start = Instant::now();
    let identity = (est.flow_proxy * est.mean_return_time - est.map_proxy).abs() / est.map_proxy.abs();
    let narrow = EntropySettings {
        samples: 400,
        iterations: 5000,
        seed: 6,
        ..settings.clone()
    };
    let point = entropy_estimate(&sys, &psi, &single(0.0, 1), &narrow).unwrap();
    let window = entropy_estimate(&sys, &psi, &single(1e-3 * DELTA_H, 4), &narrow).unwrap();
    let rel = (window.map_proxy - point.map_proxy).abs() / point.map_proxy.abs();
    let rel_flow = (window.flow_proxy - point.flow_proxy).abs() / point.flow_proxy.abs();
    report(
        out,
        8,
        "flow/map accounting",
        start,
        identity <= 1e-12 && rel < 0.01 && rel_flow < 0.01,
        format!(
            "identity {identity:.1e} <= 1e-12, window vs slice map {rel:.2e}, flow {rel_flow:.2e} < 1e-2"
        ),
    );
}

fn frequencies(out: &mut Vec<Outcome>) {
    let sys = system();
    let psi = diagnostic_psi(KICK, R_DIAG);
    let start = Instant::now();
    let reach = psi.level_support_radius();
    let boundary_p2 = (2.0 * (H0 + reach + 1e-3)).sqrt();
    let lines = [
        ScanLine {
            q_bar: vec![0.0],
            from: vec![0.05, 1.2],
            to: vec![0.35, 1.2],
            points: 32,
        },
        // just above the level support, through the template disk
        ScanLine {
            q_bar: vec![0.0],
            from: vec![-0.02, boundary_p2],
            to: vec![0.02, boundary_p2],
            points: 17,
        },
    ];
    let (mut compared, mut mismatches, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    for line in &lines {
        let a = frequency_scan(&sys, Some(&psi), line, 10_000).unwrap();
        let b = frequency_scan(&sys, None, line, 10_000).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((energy(&x.p) - H0).abs() >= reach);
            compared += 1;
            let same = x.failure.is_none()
                && x.rotation.len() == y.rotation.len()
                && x.rotation.iter().zip(&y.rotation).all(|(u, v)| u.to_bits() == v.to_bits());
            if !same {
                mismatches += 1;
            }
            let want = x.p[0] / x.p[1];
            let err = x.rotation.first().map_or(f64::INFINITY, |r| wrap_centered(r - want).abs());
            worst = worst.max(err);
        }
    }
    report(
        out,
        6,
        "invariant tori off the support",
        start,
        mismatches == 0 && worst < 1e-9,
        format!("{mismatches} of {compared} scans differ bitwise, rotation error {worst:.2e} < 1e-9"),
    );
}

fn tube(out: &mut Vec<Outcome>) {
    let sys = system();
    let epsilon = 0.04;
    let psi = diagnostic_psi(KICK, epsilon / 2.0);
    let start = Instant::now();
    let rep = tube_confinement(
        &sys,
        &psi,
        &TubeRegion {
            radius: epsilon / 2.0,
            level_center: H0,
            level_half_width: 0.005,
        },
        &TubeSettings {
            samples: 1000,
            epsilon,
            horizon: 100_000,
            seed: 7,
        },
    )
    .unwrap();
    let failures = rep.rows.iter().filter(|r| r.failure.is_some()).count();
    report(
        out,
        7,
        "tube confinement",
        start,
        rep.escapes == 0 && failures == 0 && rep.samples >= 1000,
        format!(
            "{} escapes of {} orbits over {} iterates, max deviation {:.4} < ε = {epsilon}",
            rep.escapes, rep.samples, rep.horizon, rep.max_deviation
        ),
    );
}

fn partition_and_isotopy(out: &mut Vec<Outcome>) {
    let psi = realized_psi(0.1);
    let start = Instant::now();
    let grid = PotentialGrid {
        half_width: R_REALIZED,
        nodes: 2048,
    };
    let err = reconstruct_from_partition(&psi.template, 1.0, 64, &grid, 2.5e-5).unwrap();
    report(
        out,
        9,
        "map determined by its partition",
        start,
        err < 1e-8,
        format!("reconstruction error {err:.2e} < 1e-8 on a 64×64 grid"),
    );

    let start = Instant::now();
    let iso = isotopy_family(LeafPotential::new(psi.template.clone()), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut det, mut fd, mut endpoint_errors): (f64, f64, usize) = (0.0, 0.0, 0);
    let r = R_REALIZED;
    for _ in 0..1000 {
        let t = rng.random_range(0.0..1.0);
        let z = [rng.random_range(-r..r), rng.random_range(-r..r)];
        let (img, jac) = iso.apply(t, z).unwrap();
        det = det.max((jac.determinant() - 1.0).abs());
        let e = 1e-6;
        for k in 0..2 {
            let (mut a, mut b) = (z, z);
            a[k] += e;
            b[k] -= e;
            let (fa, fb) = (iso.map(t, a).unwrap(), iso.map(t, b).unwrap());
            for i in 0..2 {
                fd = fd.max(((fa[i] - fb[i]) / (2.0 * e) - jac[(i, k)]).abs());
            }
        }
        let start_map = iso.map(0.0, z).unwrap();
        if iso.map(rng.random_range(0.0..1.0 / 3.0), z).unwrap() != start_map
            || iso.map(rng.random_range(2.0 / 3.0..=1.0), z).unwrap() != z
            || (t >= 2.0 / 3.0 && img != z)
        {
            endpoint_errors += 1;
        }
        let want = psi.template.apply(z, 1.0);
        if (start_map[0] - want[0]).abs() > 1e-13 || (start_map[1] - want[1]).abs() > 1e-13 {
            endpoint_errors += 1;
        }
    }
    report(
        out,
        10,
        "isotopy to the identity",
        start,
        endpoint_errors == 0 && det < 1e-10 && fd < 1e-6,
        format!("{endpoint_errors} endpoint errors, det defect {det:.2e} < 1e-10, Jacobian vs differences {fd:.1e}"),
    );
}

#[test]
fn acceptance_criteria() {
    let mut out = Vec::new();
    fidelity_and_structure(&mut out);
    frequencies(&mut out);
    partition_and_isotopy(&mut out);
    entropy_and_accounting(&mut out);
    tube(&mut out);
    out.sort_by_key(|o| o.id);

    let mut table = String::from("\n| # | criterion | result | seconds | measured |\n|---|---|---|---|---|\n");
    for o in &out {
        let mark = if o.passed { "pass" } else { "FAIL" };
        table.push_str(&format!("| {} | {} | {mark} | {:.1} | {} |\n", o.id, o.name, o.seconds, o.detail));
    }
    let _ = writeln!(std::io::stderr(), "{table}");

    let failed: Vec<u32> = out.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert_eq!(out.len(), 10);
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
