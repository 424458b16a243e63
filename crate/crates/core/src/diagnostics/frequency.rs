//! Rotation numbers by weighted Birkhoff averaging.
//!
//! Angle increments are averaged with the bump weight `exp(−1/(t(1−t)))`,
//! which converges faster than any power of `N` on quasi-periodic orbits. The
//! same average over the first and the second half of the orbit must agree
//! for the estimate to count as converged; chaotic orbits fail that test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{wrap_centered, wrap_unit, IntegrableHamiltonian};
use crate::perturbation::SectionPerturbation;
use crate::section::SectionPoint;
use crate::slice::{slice_return, SlicePoint};

/// Half-window estimates must agree to this for an orbit to count as regular.
pub const WINDOW_TOLERANCE: f64 = 1e-9;

/// Initial conditions `p = from + t (to − from)` at fixed angles, `t` evenly spaced in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanLine {
    pub q_bar: Vec<f64>,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub points: usize,
}

impl ScanLine {
    pub fn initial_conditions(&self) -> Result<Vec<SectionPoint>> {
        if self.from.len() != self.to.len() || self.q_bar.len() + 1 != self.from.len() {
            return Err(Error::config("scan line endpoints and angles have inconsistent dimensions"));
        }
        if self.points == 0 {
            return Err(Error::config("scan line needs at least one point"));
        }
        (0..self.points)
            .map(|i| {
                let t = if self.points == 1 { 0.0 } else { i as f64 / (self.points - 1) as f64 };
                let p = self.from.iter().zip(&self.to).map(|(a, b)| a + t * (b - a)).collect();
                SectionPoint::new(self.q_bar.clone(), p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub index: usize,
    pub q_bar: Vec<f64>,
    pub p: Vec<f64>,
    /// Rotation number of each slice angle, in `[0, 1)`.
    pub rotation: Vec<f64>,
    /// Largest disagreement between the two half-window estimates.
    pub window_gap: f64,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScan {
    pub iterations: usize,
    pub perturbed: bool,
    pub rows: Vec<FrequencyRow>,
}

fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

/// Weighted Birkhoff average of `values`.
pub fn weighted_birkhoff(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, v) in values.iter().enumerate() {
        let w = bump((k as f64 + 0.5) / n);
        num += w * v;
        den += w;
    }
    num / den
}

/// Distance on the circle of unit length.
fn circle_gap(a: f64, b: f64) -> f64 {
    wrap_centered(a - b).abs()
}

fn scan_one<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    psi: Option<&SectionPerturbation>,
    sp: &SectionPoint,
    iterations: usize,
) -> Result<(Vec<f64>, f64)> {
    let m = sp.dim() - 1;
    let mut x = SlicePoint::from_section(sys, sp);
    let mut increments = vec![Vec::with_capacity(iterations); m];
    let mut reference: Option<Vec<f64>> = None;
    for _ in 0..iterations {
        let before = x.q_bar.clone();
        match psi {
            Some(psi) => psi.perturbed_return_slice(sys, &mut x, None)?,
            None => slice_return(sys, &mut x, None)?,
        }
        let raw: Vec<f64> = x.q_bar.iter().zip(&before).map(|(a, b)| a - b).collect();
        // lift every increment to the branch nearest the first one
        let base = reference.get_or_insert_with(|| raw.iter().map(|&d| wrap_unit(d)).collect());
        for i in 0..m {
            increments[i].push(base[i] + wrap_centered(raw[i] - base[i]));
        }
    }
    let half = iterations / 2;
    let mut rotation = Vec::with_capacity(m);
    let mut gap: f64 = 0.0;
    for inc in &increments {
        rotation.push(wrap_unit(weighted_birkhoff(inc)));
        gap = gap.max(circle_gap(weighted_birkhoff(&inc[..half]), weighted_birkhoff(&inc[half..])));
    }
    Ok((rotation, gap))
}

/// Rotation numbers along `line` under `R̃`, or `R` when `psi` is `None`.
pub fn frequency_scan<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    psi: Option<&SectionPerturbation>,
    line: &ScanLine,
    iterations: usize,
) -> Result<FrequencyScan> {
    if iterations < 4 {
        return Err(Error::config("frequency scan needs at least 4 iterations"));
    }
    let ics = line.initial_conditions()?;
    let rows = ics
        .par_iter()
        .enumerate()
        .map(|(index, sp)| {
            let (rotation, window_gap, failure) = match scan_one(sys, psi, sp, iterations) {
                Ok((r, g)) => (r, g, None),
                Err(e) => (Vec::new(), f64::INFINITY, Some(e.to_string())),
            };
            FrequencyRow {
                index,
                q_bar: sp.q_bar.clone(),
                p: sp.p.clone(),
                rotation,
                window_gap,
                converged: window_gap < WINDOW_TOLERANCE,
                failure,
            }
        })
        .collect();
    Ok(FrequencyScan {
        iterations,
        perturbed: psi.is_some(),
        rows,
    })
}
