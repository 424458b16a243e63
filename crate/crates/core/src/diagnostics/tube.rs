//! Finite-horizon confinement of orbits near the base periodic orbit.
//!
//! The base orbit hits the section at `q̄ = 0, p = p*`. Distance to it is the
//! larger of the Euclidean norm of the centred angles and the Euclidean norm
//! of `p − p*`.

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{wrap_centered, IntegrableHamiltonian};
use crate::perturbation::SectionPerturbation;
use crate::rng::stream;
use crate::slice::SlicePoint;

use super::entropy::region_point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRegion {
    /// Local coordinates are uniform in the disk of this radius.
    pub radius: f64,
    pub level_center: f64,
    /// Levels are uniform in `center ± half_width`.
    pub level_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSettings {
    pub samples: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRow {
    pub index: usize,
    pub level: f64,
    pub q1: f64,
    pub p1: f64,
    pub max_deviation: f64,
    /// First iterate beyond `ε`; the orbit is not followed further.
    pub escaped_at: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub epsilon: f64,
    pub horizon: usize,
    pub samples: usize,
    pub escapes: usize,
    pub max_deviation: f64,
    pub seed: u64,
    #[serde(skip)]
    pub rows: Vec<TubeRow>,
}

/// Section distance from `x` to the base point `(0, p*)`.
pub fn base_distance(x: &SlicePoint, p_star: &[f64]) -> f64 {
    let m = x.m();
    let angle = x.q_bar.iter().map(|q| wrap_centered(*q).powi(2)).sum::<f64>().sqrt();
    let action = x
        .p_bar
        .iter()
        .chain(std::iter::once(&x.p_n))
        .zip(p_star)
        .map(|(p, s)| (p - s).powi(2))
        .sum::<f64>()
        .sqrt();
    debug_assert_eq!(p_star.len(), m + 1);
    angle.max(action)
}

/// Largest base distance along `horizon` iterates of `R̃` from `x0`, and the
/// first iterate beyond `epsilon` if any.
pub fn orbit_deviation<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    psi: &SectionPerturbation,
    x0: &SlicePoint,
    epsilon: f64,
    horizon: usize,
) -> Result<(f64, Option<usize>)> {
    let mut x = x0.clone();
    let mut worst = base_distance(&x, &psi.p_star);
    if worst > epsilon {
        return Ok((worst, Some(0)));
    }
    for k in 1..=horizon {
        psi.perturbed_return_slice(sys, &mut x, None)?;
        let d = base_distance(&x, &psi.p_star);
        worst = worst.max(d);
        if d > epsilon {
            return Ok((worst, Some(k)));
        }
    }
    Ok((worst, None))
}

/// Iterates sampled orbits of `R̃` and counts those that leave the `ε`-tube.
///
/// Orbits that fail numerically count as escapes.
pub fn tube_confinement<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    psi: &SectionPerturbation,
    region: &TubeRegion,
    settings: &TubeSettings,
) -> Result<TubeReport> {
    if !(region.radius > 0.0) || !(region.level_half_width >= 0.0) {
        return Err(Error::config("tube region needs radius > 0 and level half-width >= 0"));
    }
    if !(settings.epsilon > 0.0) || settings.samples == 0 {
        return Err(Error::config("tube check needs epsilon > 0 and at least one sample"));
    }
    let rows: Vec<TubeRow> = (0..settings.samples)
        .into_par_iter()
        .map(|index| {
            let mut rng = stream(settings.seed, index as u64);
            let r = region.radius;
            let z = loop {
                let z = [rng.random_range(-r..r), rng.random_range(-r..r)];
                if z[0] * z[0] + z[1] * z[1] < r * r {
                    break z;
                }
            };
            let level = if region.level_half_width > 0.0 {
                region.level_center + rng.random_range(-region.level_half_width..region.level_half_width)
            } else {
                region.level_center
            };
            let run = region_point(sys, &psi.p_star, level, z)
                .and_then(|x0| orbit_deviation(sys, psi, &x0, settings.epsilon, settings.horizon));
            let (max_deviation, escaped_at, failure) = match run {
                Ok((d, e)) => (d, e, None),
                Err(e) => (f64::INFINITY, Some(0), Some(e.to_string())),
            };
            TubeRow {
                index,
                level,
                q1: z[0],
                p1: z[1],
                max_deviation,
                escaped_at,
                failure,
            }
        })
        .collect();
    Ok(TubeReport {
        epsilon: settings.epsilon,
        horizon: settings.horizon,
        samples: rows.len(),
        escapes: rows.iter().filter(|r| r.escaped_at.is_some()).count(),
        max_deviation: rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max),
        seed: settings.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrable::System;
    use crate::section::SectionPoint;
    use crate::slice::slice_return;

    #[test]
    fn base_point_is_fixed_without_perturbation() {
        let sys = System::quadratic(2);
        let psi = SectionPerturbation::identity(vec![0.0, 1.0], 0.5);
        let x0 = SlicePoint::from_section(&sys, &SectionPoint::new(vec![0.0], vec![0.0, 1.0]).unwrap());
        for horizon in [1, 10, 1000] {
            assert_eq!(orbit_deviation(&sys, &psi, &x0, 0.01, horizon).unwrap(), (0.0, None));
        }
    }

    #[test]
    fn inactive_orbits_follow_the_twist() {
        let sys = System::quadratic(2);
        let psi = SectionPerturbation::identity(vec![0.0, 1.0], 0.5);
        let x0 = SlicePoint::from_section(&sys, &SectionPoint::new(vec![0.0], vec![1e-3, 1.0]).unwrap());
        let (d, escaped) = orbit_deviation(&sys, &psi, &x0, 1.0, 50).unwrap();
        let mut x = x0.clone();
        let mut want: f64 = base_distance(&x, &psi.p_star);
        for _ in 0..50 {
            slice_return(&sys, &mut x, None).unwrap();
            want = want.max(base_distance(&x, &psi.p_star));
        }
        assert_eq!(d, want);
        assert!(escaped.is_none());
        assert!(orbit_deviation(&sys, &psi, &x0, 0.02, 50).unwrap().1.is_some());
    }
}
