//! The section `Σ = {q_n = 0 mod 1}` and its return map.
//!
//! Points of `Σ` are written `(q̄, p)` with `q̄ = (q_1, …, q_{n−1})`. Since
//! `H = H(p)`, a full turn of `q_n` takes time `1/ω_n(p)` and shifts the
//! other angles by `ω_i/ω_n`; the return map is that shift with `p` frozen.
//! Only crossings with `ω_n > 0` are counted.

use nalgebra::DMatrix;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{wrap_centered, wrap_unit, IntegrableHamiltonian};
use crate::rng;

/// Below this crossing rate the section is treated as tangent to the flow.
pub const DEFAULT_TRANSVERSALITY: f64 = 1e-8;

/// A point of `Σ`; `q_n = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub q_bar: Vec<f64>,
    pub p: Vec<f64>,
}

impl SectionPoint {
    pub fn new(q_bar: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q_bar.len() + 1 != p.len() {
            return Err(Error::Dimension(format!(
                "section point with {} angles and {} actions",
                q_bar.len(),
                p.len()
            )));
        }
        Ok(SectionPoint {
            q_bar: q_bar.into_iter().map(wrap_unit).collect(),
            p,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Coordinates `(q̄, p)` as one vector of length `2n − 1`.
    pub fn to_coords(&self) -> Vec<f64> {
        self.q_bar.iter().chain(&self.p).copied().collect()
    }

    pub fn from_coords(n: usize, x: &[f64]) -> Result<Self> {
        if x.len() != 2 * n - 1 {
            return Err(Error::Dimension(format!("expected {} coordinates, got {}", 2 * n - 1, x.len())));
        }
        SectionPoint::new(x[..n - 1].to_vec(), x[n - 1..].to_vec())
    }

    /// Slice coordinates `(q̄, p̄)`.
    pub fn slice_coords(&self) -> Vec<f64> {
        let n = self.dim();
        self.q_bar.iter().chain(&self.p[..n - 1]).copied().collect()
    }
}

/// Distance used on the section: largest of the wrapped angle gaps and action gaps.
pub fn section_distance(a: &SectionPoint, b: &SectionPoint) -> f64 {
    let dq = a
        .q_bar
        .iter()
        .zip(&b.q_bar)
        .map(|(x, y)| wrap_centered(x - y).abs())
        .fold(0.0, f64::max);
    let dp = a.p.iter().zip(&b.p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    dq.max(dp)
}

fn transversal_rate<H: IntegrableHamiltonian + ?Sized>(sys: &H, w: &[f64], p: &[f64]) -> Result<f64> {
    let rate = w[sys.dim() - 1];
    if rate > DEFAULT_TRANSVERSALITY {
        Ok(rate)
    } else {
        Err(Error::Transversality { rate, p: p.to_vec() })
    }
}

/// Angle shifts `ω_i/ω_n` accumulated over one return, unreduced.
pub fn return_shift<H: IntegrableHamiltonian + ?Sized>(sys: &H, p: &[f64]) -> Result<Vec<f64>> {
    let w = sys.frequency(p);
    let rate = transversal_rate(sys, &w, p)?;
    Ok(w[..w.len() - 1].iter().map(|x| x / rate).collect())
}

/// One return to `Σ` under the unperturbed flow.
pub fn return_map<H: IntegrableHamiltonian + ?Sized>(sys: &H, sp: &SectionPoint) -> Result<SectionPoint> {
    let shift = return_shift(sys, &sp.p)?;
    Ok(SectionPoint {
        q_bar: sp.q_bar.iter().zip(&shift).map(|(q, s)| wrap_unit(q + s)).collect(),
        p: sp.p.clone(),
    })
}

/// Inverse of [`return_map`].
pub fn inverse_return_map<H: IntegrableHamiltonian + ?Sized>(sys: &H, sp: &SectionPoint) -> Result<SectionPoint> {
    let shift = return_shift(sys, &sp.p)?;
    Ok(SectionPoint {
        q_bar: sp.q_bar.iter().zip(&shift).map(|(q, s)| wrap_unit(q - s)).collect(),
        p: sp.p.clone(),
    })
}

/// Jacobian of [`return_map`] in `(q̄, p)` coordinates.
pub fn return_map_derivative<H: IntegrableHamiltonian + ?Sized>(sys: &H, sp: &SectionPoint) -> Result<DMatrix<f64>> {
    let n = sp.dim();
    let w = sys.frequency(&sp.p);
    let rate = transversal_rate(sys, &w, &sp.p)?;
    let hess = sys.hessian(&sp.p);
    let m = 2 * n - 1;
    let mut d = DMatrix::identity(m, m);
    for i in 0..n - 1 {
        for j in 0..n {
            d[(i, n - 1 + j)] = (hess[(i, j)] * rate - w[i] * hess[(n - 1, j)]) / (rate * rate);
        }
    }
    Ok(d)
}

/// Time for `q_n` to advance one full turn.
pub fn return_time<H: IntegrableHamiltonian + ?Sized>(sys: &H, sp: &SectionPoint) -> Result<f64> {
    let rate = sys.crossing_rate(&sp.p);
    if rate > DEFAULT_TRANSVERSALITY {
        Ok(1.0 / rate)
    } else {
        Err(Error::Transversality { rate, p: sp.p.clone() })
    }
}

/// Solves `H(p̄, p_n) = h` for `p_n` by Newton's method started at `guess`.
///
/// The root must lie within `trust` of the guess and be transversal.
pub fn lift_action<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    h: f64,
    p_bar: &[f64],
    guess: f64,
    trust: f64,
) -> Result<f64> {
    let n = sys.dim();
    let mut p: Vec<f64> = p_bar.iter().copied().chain(std::iter::once(guess)).collect();
    let fail = |reason: String| Error::LiftFailure { level: h, reason };
    let tol = 1e-14 * h.abs().max(1.0);
    for _ in 0..60 {
        let r = sys.energy(&p) - h;
        if r.abs() <= tol {
            break;
        }
        let rate = sys.crossing_rate(&p);
        if !(rate > DEFAULT_TRANSVERSALITY) {
            return Err(fail(format!("crossing rate {rate:e} at p_n = {}", p[n - 1])));
        }
        p[n - 1] -= r / rate;
        if (p[n - 1] - guess).abs() > trust || !p[n - 1].is_finite() {
            return Err(fail(format!("no root within {trust} of guess {guess}")));
        }
    }
    let residual = (sys.energy(&p) - h).abs();
    if residual >= 1e-12 {
        return Err(fail(format!("residual {residual:e} after Newton")));
    }
    let rate = sys.crossing_rate(&p);
    if !(rate > DEFAULT_TRANSVERSALITY) {
        return Err(fail(format!("root is not transversal (rate {rate:e})")));
    }
    Ok(p[n - 1])
}

/// Default trust radius for level lifts.
pub const LIFT_TRUST: f64 = 1.0;

/// Lifts slice coordinates `(q̄, p̄)` of the level `h` to a section point.
pub fn slice_lift<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    h: f64,
    q_bar: &[f64],
    p_bar: &[f64],
    p_n_guess: f64,
) -> Result<SectionPoint> {
    let pn = lift_action(sys, h, p_bar, p_n_guess, LIFT_TRUST)?;
    SectionPoint::new(q_bar.to_vec(), p_bar.iter().copied().chain(std::iter::once(pn)).collect())
}

/// Coordinates on the level slice `Σ^h` near a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceCoordinates {
    pub h: f64,
    pub base: SectionPoint,
    /// `(q̄, p̄)`
    pub coords: Vec<f64>,
}

impl SliceCoordinates {
    pub fn project(sp: &SectionPoint, h: f64) -> Self {
        SliceCoordinates {
            h,
            base: sp.clone(),
            coords: sp.slice_coords(),
        }
    }

    pub fn lift<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H) -> Result<SectionPoint> {
        let m = self.base.dim() - 1;
        slice_lift(sys, self.h, &self.coords[..m], &self.coords[m..], self.base.p[m])
    }
}

/// Restricts a level-preserving Jacobian in `(q̄, p)` coordinates to `(q̄, p̄)`.
///
/// `omega_in` is the frequency at the input point; it fixes how `p_n` moves
/// along the input slice.
pub fn restrict_to_slice(full: &DMatrix<f64>, omega_in: &[f64]) -> DMatrix<f64> {
    let n = omega_in.len();
    let m = 2 * n - 2;
    let rate = omega_in[n - 1];
    let mut lift = DMatrix::zeros(2 * n - 1, m);
    for i in 0..m {
        lift[(i, i)] = 1.0;
    }
    for j in 0..n - 1 {
        lift[(2 * n - 2, n - 1 + j)] = -omega_in[j] / rate;
    }
    let mapped = full * lift;
    mapped.rows(0, m).into_owned()
}

/// Axis-aligned box of section coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionBox {
    pub q_bar: Vec<[f64; 2]>,
    pub p: Vec<[f64; 2]>,
}

impl SectionBox {
    pub fn new(q_bar: Vec<[f64; 2]>, p: Vec<[f64; 2]>) -> Result<Self> {
        if q_bar.len() + 1 != p.len() {
            return Err(Error::Dimension("box needs n − 1 angle and n action intervals".into()));
        }
        for iv in q_bar.iter().chain(&p) {
            if !(iv[0] <= iv[1]) {
                return Err(Error::config(format!("empty interval {iv:?}")));
            }
        }
        for iv in &q_bar {
            if iv[0] < 0.0 || iv[1] > 1.0 {
                return Err(Error::config(format!("angle interval {iv:?} outside [0, 1]")));
            }
        }
        Ok(SectionBox { q_bar, p })
    }

    pub fn volume(&self) -> f64 {
        self.q_bar.iter().chain(&self.p).map(|iv| iv[1] - iv[0]).product()
    }

    fn intervals(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.q_bar.iter().chain(&self.p)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

const MC_CHUNK: usize = 4096;

/// Flow-induced measure of a region of `Σ`, sampled inside `bounds`.
///
/// The density is the crossing rate `|∂H/∂p_n|`: a section patch sweeps out
/// that much phase volume per unit time. `member` selects the region.
pub fn induced_measure_of<H, F>(
    sys: &H,
    bounds: &SectionBox,
    member: F,
    samples: usize,
    seed: u64,
) -> Result<Estimate>
where
    H: IntegrableHamiltonian + ?Sized,
    F: Fn(&SectionPoint) -> Result<bool> + Sync,
{
    let vol = bounds.volume();
    if vol == 0.0 || samples == 0 {
        return Ok(Estimate { value: 0.0, std_error: 0.0 });
    }
    let n = sys.dim();
    let chunks = samples.div_ceil(MC_CHUNK);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for c in 0..chunks {
        let mut rng = rng::stream(seed, c as u64);
        let count = MC_CHUNK.min(samples - c * MC_CHUNK);
        for _ in 0..count {
            let x: Vec<f64> = bounds
                .intervals()
                .map(|iv| iv[0] + (iv[1] - iv[0]) * rng.random::<f64>())
                .collect();
            let sp = SectionPoint {
                q_bar: x[..n - 1].to_vec(),
                p: x[n - 1..].to_vec(),
            };
            let f = if member(&sp)? { sys.crossing_rate(&sp.p).abs() } else { 0.0 };
            sum += f;
            sum_sq += f * f;
        }
    }
    let nf = samples as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Ok(Estimate {
        value: vol * mean,
        std_error: vol * (var / nf).sqrt(),
    })
}

/// Flow-induced measure of a box.
pub fn induced_measure<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    a: &SectionBox,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    induced_measure_of(sys, a, |_| Ok(true), samples, seed)
}
