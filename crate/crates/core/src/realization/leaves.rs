//! Lagrangian leaf families in the canonical chart.
//!
//! In chart coordinates `(Q, P)` with `P_n = H` the flow is `Q̇_n = 1`. A leaf
//! with label `p̂` is the graph of the differential of
//!
//! ```text
//! F(Q) = ⟨Q, p̂⟩ + σ(Q_n)·W(Q_1; p̂_1 − p*_1, β)
//! ```
//!
//! so `P_1 = p̂_1 + σ ∂W/∂Q_1` and `P_n = p̂_n + σ' W`. Before the transition
//! (`σ = 0`) leaves are the flat sets `{P = p̂}`; after it (`σ = 1`) they are
//! the images of the flat sets under the template.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{Jet, TransitionProfile};

use super::potential::{LeafPotential, PotentialJet};

/// Iteration cap of the label solve.
pub const LABEL_MAX_ITER: usize = 50;

/// A leaf family: potential, transition profile and the chart time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafFamily {
    pub potential: LeafPotential,
    pub transition: TransitionProfile,
    /// Time `T₀` between section hits on the base torus. The transition
    /// coordinate is `s = 2 Q_n / T₀ − 1`, so `Σ₀` is `s = −1` and `Σ₁` is `s = 1`.
    pub period: f64,
}

/// A point of the `(Q_1, P_1)` plane together with `Q_n` and `P_n`.
///
/// `q1` is the centred angle, `p1` the offset `P_1 − p*_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPoint {
    pub q1: f64,
    pub qn: f64,
    pub p1: f64,
    pub pn: f64,
}

/// Label `(p̂_1 − p*_1, p̂_n)` of a leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafLabel {
    pub b: f64,
    pub level: f64,
}

pub fn build_leaf_family(potential: LeafPotential, transition: TransitionProfile, period: f64) -> LeafFamily {
    LeafFamily {
        potential,
        transition,
        period,
    }
}

impl LeafFamily {
    pub fn s(&self, qn: f64) -> f64 {
        2.0 * qn / self.period - 1.0
    }

    /// `σ`, `∂σ/∂Q_n` and `∂²σ/∂Q_n²`.
    pub fn sigma(&self, qn: f64) -> Jet {
        self.transition.eval(self.s(qn)).rescaled(2.0 / self.period)
    }

    /// True where leaves do not bend: `σ` is 0 or 1 with vanishing slope.
    pub fn is_flat(&self, qn: f64) -> bool {
        self.transition.is_flat(self.s(qn))
    }

    /// Momentum `(P_1 − p*_1, P_n)` of the leaf `label` above `(q1, qn)`.
    pub fn leaf_eval(&self, q1: f64, qn: f64, label: LeafLabel, beta: f64) -> Result<[f64; 2]> {
        let sig = self.sigma(qn);
        let w = self.potential.jet(q1, label.b, beta)?;
        Ok([label.b + sig.value * w.w_q, label.level + sig.d1 * w.w])
    }

    /// Solves `b + σ ∂W/∂Q_1(q1, b) = p1` for the label offset `b`.
    ///
    /// The left side is increasing in `b` with slope `(1 − σ) + σ/X_q`, and
    /// the root lies within `2 r` of `p1`.
    pub(crate) fn solve_label(&self, q1: f64, sigma: f64, p1: f64, beta: f64) -> Result<(f64, PotentialJet)> {
        let pot = &self.potential;
        if sigma == 0.0 || pot.is_flat(q1, p1, beta) {
            // the point is on the flat leaf through it, or outside every bent leaf
            return Ok((p1, pot.jet(q1, p1, beta)?));
        }
        let r = pot.support_radius();
        let (mut lo, mut hi) = (p1 - 2.0 * r, p1 + 2.0 * r);
        let tol = 8.0 * f64::EPSILON * (r + p1.abs());
        let mut b = p1;
        let mut res = f64::INFINITY;
        for _ in 0..LABEL_MAX_ITER {
            let w = pot.jet(q1, b, beta)?;
            res = b + sigma * w.w_q - p1;
            if res.abs() <= tol {
                return Ok((b, w));
            }
            if res < 0.0 {
                lo = lo.max(b);
            } else {
                hi = hi.min(b);
            }
            let slope = 1.0 + sigma * w.w_qb;
            let next = b - res / slope;
            let next = if slope > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if (next - b).abs() <= f64::EPSILON * r {
                return Ok((next, pot.jet(q1, next, beta)?));
            }
            b = next;
        }
        if res.abs() < 1e-12 {
            return Ok((b, pot.jet(q1, b, beta)?));
        }
        Err(Error::FoliationOverlap {
            iterations: LABEL_MAX_ITER,
            residual: res.abs(),
        })
    }

    /// The label of the leaf through a point, for a family frozen at envelope value `beta`.
    pub fn leaf_through_point(&self, x: &LeafPoint, beta: f64) -> Result<LeafLabel> {
        let sig = self.sigma(x.qn);
        let (b, w) = self.solve_label(x.q1, sig.value, x.p1, beta)?;
        Ok(LeafLabel {
            b,
            level: x.pn - sig.d1 * w.w,
        })
    }

    /// `H̃^h`: the level component of the leaf label in the family at level `h`.
    pub fn hamiltonian_one_level(&self, beta_at_h: f64, x: &LeafPoint) -> Result<f64> {
        Ok(self.leaf_through_point(x, beta_at_h)?.level)
    }
}
