//! Checking a realized Hamiltonian against the map it was built for.

use nalgebra::DMatrix;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{crossing_to_section, integrate_to_section, section_monodromy, IntegratorSettings, PhaseState};
use crate::integrable::{wrap_unit, IntegrableHamiltonian, System};
use crate::perturbation::SectionPerturbation;
use crate::rng::stream;
use crate::section::{lift_action, section_distance, SectionPoint, LIFT_TRUST};

use super::hamiltonian::RealizedHamiltonian;

/// Outcome of [`verify_realization`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub samples: usize,
    /// Largest section distance between the integrated return and `R̃`.
    pub sup_error: f64,
    pub mean_error: f64,
    pub worst_sample: usize,
    pub mean_return_time: f64,
    /// Phase points checked outside `U` and the largest `|H̃ − H|` among them.
    pub outside_samples: usize,
    pub outside_max_deviation: f64,
    /// Largest `‖DR̃_integrated − DR̃‖` over the first few samples.
    pub monodromy_samples: usize,
    pub monodromy_defect: f64,
}

/// Angle phases `q_n` at which the outside-`U` check is made for each sample.
const OUTSIDE_PHASES: [f64; 6] = [0.0, 0.05, 0.15, 0.25, 0.75, 0.9];

/// Integrates `H̃` from each sample on `q_n = 0` to `q_n = 1` and compares with `R̃ = R ∘ Ψ`.
pub fn verify_realization(
    sys: &System,
    ham: &RealizedHamiltonian,
    psi: &SectionPerturbation,
    samples: &[SectionPoint],
    settings: &IntegratorSettings,
    monodromy_samples: usize,
) -> Result<FidelityReport> {
    settings.validate()?;
    let runs: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|sp| {
            let ev = integrate_to_section(ham, &PhaseState::on_section(sp), settings)?;
            let got = crossing_to_section(&ev)?;
            let want = psi.perturbed_return(sys, sp)?;
            Ok((section_distance(&got, &want), ev.time))
        })
        .collect();
    let mut sup_error: f64 = 0.0;
    let mut worst_sample = 0;
    let mut sum_err = 0.0;
    let mut sum_time = 0.0;
    for (i, r) in runs.into_iter().enumerate() {
        let (err, time) = r.map_err(|e| e.context(format!("verification sample {i}")))?;
        if err > sup_error {
            sup_error = err;
            worst_sample = i;
        }
        sum_err += err;
        sum_time += time;
    }
    let count = samples.len().max(1) as f64;

    let mut outside_samples = 0;
    let mut outside_max_deviation: f64 = 0.0;
    for sp in samples {
        for &phase in &OUTSIDE_PHASES {
            let mut q = sp.q_bar.clone();
            q.push(phase);
            if !ham.is_exact(&q, &sp.p) {
                continue;
            }
            outside_samples += 1;
            let dev = (ham.value(&q, &sp.p)? - sys.energy(&sp.p)).abs();
            outside_max_deviation = outside_max_deviation.max(dev);
        }
    }

    let take = monodromy_samples.min(samples.len());
    let defects: Vec<Result<f64>> = samples[..take]
        .par_iter()
        .map(|sp| {
            let (_, m) = section_monodromy(ham, sp, settings)?;
            let want: DMatrix<f64> = psi.tangent_return_map(sys, sp)?;
            Ok((m - want).amax())
        })
        .collect();
    let mut monodromy_defect: f64 = 0.0;
    for d in defects {
        monodromy_defect = monodromy_defect.max(d?);
    }

    Ok(FidelityReport {
        samples: samples.len(),
        sup_error,
        mean_error: sum_err / count,
        worst_sample,
        mean_return_time: sum_time / count,
        outside_samples,
        outside_max_deviation,
        monodromy_samples: take,
        monodromy_defect,
    })
}

/// Section points spread over the active region: local angle and momentum
/// offset in the support box, level in the envelope support.
pub fn active_section_samples(
    sys: &System,
    psi: &SectionPerturbation,
    count: usize,
    seed: u64,
) -> Result<Vec<SectionPoint>> {
    let n = psi.dim();
    let r = psi.template.support_radius;
    let env = &psi.envelope;
    let mut rng = stream(seed, 0x7665_7269);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut q_bar: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..1.0)).collect();
        q_bar[0] = wrap_unit(rng.random_range(-r..r));
        let mut p_bar = psi.p_star[..n - 1].to_vec();
        p_bar[0] += rng.random_range(-r..r);
        let h = rng.random_range(env.center - env.radius..env.center + env.radius);
        let pn = lift_action(sys, h, &p_bar, psi.p_star[n - 1], LIFT_TRUST)?;
        p_bar.push(pn);
        out.push(SectionPoint::new(q_bar, p_bar)?);
    }
    Ok(out)
}

/// Sup of `|H̃ − H|` and of `‖∇H̃ − ∇H‖_∞` over phase points.
pub fn deviation_from_base(ham: &RealizedHamiltonian, points: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64)> {
    let n = ham.dim();
    let results: Vec<Result<(f64, f64)>> = points
        .par_iter()
        .map(|(q, p)| {
            let mut dq = vec![0.0; n];
            let mut dp = vec![0.0; n];
            let v = ham.value_and_gradient(q, p, &mut dq, &mut dp)?;
            let omega = ham.system.frequency(p);
            let c0 = (v - ham.system.energy(p)).abs();
            let c1 = dq
                .iter()
                .map(|x| x.abs())
                .chain(dp.iter().zip(&omega).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            Ok((c0, c1))
        })
        .collect();
    let mut sup = (0.0f64, 0.0f64);
    for r in results {
        let (a, b) = r?;
        sup = (sup.0.max(a), sup.1.max(b));
    }
    Ok(sup)
}

/// Phase points inside the neighbourhood `U`: active section samples moved
/// into the transition zone along the unperturbed flow.
pub fn transition_zone_samples(
    sys: &System,
    ham: &RealizedHamiltonian,
    psi: &SectionPerturbation,
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let base = active_section_samples(sys, psi, count, seed)?;
    let mut rng = stream(seed, 0x7a6f_6e65);
    let eps = ham.family.transition.half_width;
    Ok(base
        .into_iter()
        .map(|sp| {
            let s: f64 = rng.random_range(-eps..eps);
            let omega = sys.frequency(&sp.p);
            let rate = omega[omega.len() - 1];
            // q_n at which Q_n = (s + 1) T₀ / 2, carried along the unperturbed flow
            let qn = 0.5 * (s + 1.0) * ham.family.period * rate;
            let mut q: Vec<f64> = sp.q_bar.iter().zip(&omega).map(|(q, w)| wrap_unit(q + qn * w / rate)).collect();
            q.push(qn);
            (q, sp.p)
        })
        .collect())
}
