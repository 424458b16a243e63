//! The glued Hamiltonian `H̃` and its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Hamiltonian;
use crate::integrable::{wrap_centered, wrap_unit, IntegrableHamiltonian, System};
use crate::profiles::BumpProfile;

use super::leaves::{LeafFamily, LeafPoint};
use super::potential::PotentialJet;

/// Settings of the level-gluing root solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlueSettings {
    /// Absolute tolerance on the glued level.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlueSettings {
    fn default() -> Self {
        GlueSettings { tol: 1e-15, max_iter: 60 }
    }
}

/// `H̃`: equal to `H` outside the transition zone, constant on the leaves inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedHamiltonian {
    pub system: System,
    pub p_star: Vec<f64>,
    pub family: LeafFamily,
    pub envelope: BumpProfile,
    pub glue: GlueSettings,
}

/// Chart data of a phase-space point.
struct ChartState {
    point: LeafPoint,
    /// `q_n` reduced to `[0, 1)`.
    qn_wrapped: f64,
    omega: Vec<f64>,
}

/// Solved labels with everything the gradient needs.
struct Glued {
    h: f64,
    w: PotentialJet,
    sigma: f64,
    sigma_q: f64,
    sigma_qq: f64,
    d_beta: f64,
}

impl RealizedHamiltonian {
    pub fn dim(&self) -> usize {
        self.p_star.len()
    }

    fn chart(&self, q: &[f64], p: &[f64]) -> ChartState {
        let n = self.dim();
        let omega = self.system.frequency(p);
        let qn_wrapped = wrap_unit(q[n - 1]);
        let rate = omega[n - 1];
        let point = LeafPoint {
            q1: wrap_centered(q[0] - qn_wrapped * omega[0] / rate),
            qn: qn_wrapped / rate,
            p1: p[0] - self.p_star[0],
            pn: IntegrableHamiltonian::energy(&self.system, p),
        };
        ChartState { point, qn_wrapped, omega }
    }

    /// True when `H̃ = H` at `(q, p)` by the fast path, without any solve.
    pub fn is_exact(&self, q: &[f64], p: &[f64]) -> bool {
        let pn = IntegrableHamiltonian::energy(&self.system, p);
        if self.envelope.value(pn) == 0.0 {
            return true;
        }
        let c = self.chart(q, p);
        self.fast_path(&c)
    }

    fn fast_path(&self, c: &ChartState) -> bool {
        let pot = &self.family.potential;
        pot.template.twists.is_empty()
            || self.envelope.value(c.point.pn) == 0.0
            || self.family.is_flat(c.point.qn)
            || !pot.template.in_support([c.point.q1, c.point.p1])
    }

    fn check_chart(&self, c: &ChartState) -> Result<()> {
        let rate = c.omega[self.dim() - 1];
        if !(rate > 0.0) {
            return Err(Error::Transversality {
                rate,
                p: Vec::new(),
            });
        }
        // the transition must be complete before the orbit returns to the section
        if self.family.s(1.0 / rate) < self.family.transition.half_width {
            return Err(Error::Unsupported(format!(
                "return time {:.6} too short for the transition zone of the realization chart",
                1.0 / rate
            )));
        }
        Ok(())
    }

    /// Solves `h = P_n − σ' W(Q_1; b(h), β(h))` with `b(h)` the label offset at level `h`.
    fn glue_solve(&self, x: &LeafPoint) -> Result<Glued> {
        let fam = &self.family;
        let sig = fam.sigma(x.qn);
        let delta = self.envelope.radius;
        let (mut lo, mut hi) = (x.pn - delta, x.pn + delta);
        let mut h = x.pn;
        let mut last = f64::INFINITY;
        for _ in 0..self.glue.max_iter {
            let beta = self.envelope.eval(h);
            let (_, w) = fam.solve_label(x.q1, sig.value, x.p1, beta.value)?;
            let g = h - x.pn + sig.d1 * w.w;
            let done = Glued {
                h,
                w,
                sigma: sig.value,
                sigma_q: sig.d1,
                sigma_qq: sig.d2,
                d_beta: beta.d1,
            };
            if g.abs() <= self.glue.tol {
                return Ok(done);
            }
            last = g;
            if g < 0.0 {
                lo = lo.max(h);
            } else {
                hi = hi.min(h);
            }
            // total derivative along the label curve b(h)
            let e_b = 1.0 + sig.value * w.w_qb;
            let e_h = sig.value * w.w_qbeta * beta.d1;
            let f_b = sig.d1 * w.w_b;
            let f_h = 1.0 + sig.d1 * w.w_beta * beta.d1;
            let slope = f_h - f_b * e_h / e_b;
            let next = h - g / slope;
            let next = if slope > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= 2.0 * f64::EPSILON * x.pn.abs().max(1.0) || (next - h).abs() <= 0.25 * f64::EPSILON * h.abs() {
                return Ok(done);
            }
            h = next;
        }
        if last.abs() < 1e-12 {
            let beta = self.envelope.eval(h);
            let (_, w) = fam.solve_label(x.q1, sig.value, x.p1, beta.value)?;
            return Ok(Glued {
                h,
                w,
                sigma: sig.value,
                sigma_q: sig.d1,
                sigma_qq: sig.d2,
                d_beta: beta.d1,
            });
        }
        Err(Error::Gluing(format!(
            "no root of h ↦ H̃^h − h within {} iterations (residual {last:e}) in [{lo}, {hi}]",
            self.glue.max_iter
        )))
    }

    /// `H̃(q, p)`.
    pub fn value(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        let pn = IntegrableHamiltonian::energy(&self.system, p);
        if self.envelope.value(pn) == 0.0 {
            return Ok(pn);
        }
        let c = self.chart(q, p);
        if self.fast_path(&c) {
            return Ok(pn);
        }
        self.check_chart(&c)?;
        Ok(self.glue_solve(&c.point)?.h)
    }

    /// `H̃` with `∂H̃/∂q` and `∂H̃/∂p` by implicit differentiation of the leaf and glue solves.
    pub fn value_and_gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<f64> {
        let n = self.dim();
        let c = self.chart(q, p);
        dq.iter_mut().for_each(|v| *v = 0.0);
        if self.fast_path(&c) {
            dp.copy_from_slice(&c.omega);
            return Ok(c.point.pn);
        }
        self.check_chart(&c)?;
        let g = self.glue_solve(&c.point)?;
        let w = &g.w;
        let e_b = 1.0 + g.sigma * w.w_qb;
        let e_h = g.sigma * w.w_qbeta * g.d_beta;
        let f_b = g.sigma_q * w.w_b;
        let f_h = 1.0 + g.sigma_q * w.w_beta * g.d_beta;
        let det = e_b * f_h - e_h * f_b;
        // ∂h/∂(Q_1, Q_n, P_1, P_n) by Cramer's rule on the (b, h) system
        let h_q1 = -(e_b * g.sigma_q * w.w_q - f_b * g.sigma * w.w_qq) / det;
        let h_qn = -(e_b * g.sigma_qq * w.w - f_b * g.sigma_q * w.w_q) / det;
        let h_p1 = -f_b / det;
        let h_pn = e_b / det;

        let omega = &c.omega;
        let rate = omega[n - 1];
        let hess = IntegrableHamiltonian::hessian(&self.system, p);
        let qn = c.qn_wrapped;
        dq[0] = h_q1;
        dq[n - 1] = -h_q1 * omega[0] / rate + h_qn / rate;
        for j in 0..n {
            let d_r1 = (hess[(0, j)] * rate - omega[0] * hess[(n - 1, j)]) / (rate * rate);
            let d_qn = -qn * hess[(n - 1, j)] / (rate * rate);
            dp[j] = -h_q1 * qn * d_r1 + h_qn * d_qn + h_pn * omega[j];
        }
        dp[0] += h_p1;
        Ok(g.h)
    }
}

impl Hamiltonian for RealizedHamiltonian {
    fn dim(&self) -> usize {
        self.p_star.len()
    }

    fn energy(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        self.value(q, p)
    }

    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        self.value_and_gradient(q, p, dq, dp).map(|_| ())
    }
}

/// `H̃(x)` as the unique root of `h ↦ H̃^h(x) − h`, located by bisection alone.
///
/// Slow; kept as an independent reference for the Newton glue.
pub fn glue_levels(ham: &RealizedHamiltonian, q: &[f64], p: &[f64]) -> Result<f64> {
    let c = ham.chart(q, p);
    if ham.fast_path(&c) {
        return Ok(c.point.pn);
    }
    let fam = &ham.family;
    let gap = |h: f64| -> Result<f64> {
        let beta = ham.envelope.value(h);
        Ok(fam.hamiltonian_one_level(beta, &c.point)? - h)
    };
    let (mut lo, mut hi) = (c.point.pn - ham.envelope.radius, c.point.pn + ham.envelope.radius);
    let (g_lo, g_hi) = (gap(lo)?, gap(hi)?);
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(Error::Gluing(format!("bracket [{lo}, {hi}] does not enclose a root")));
    }
    while hi - lo > 1e-14 * c.point.pn.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrable::LiouvilleTorus;
    use crate::perturbation::{DiskTemplate, SectionPerturbation};
    use crate::realization::leaves::LeafLabel;
    use crate::realization::{realize, RealizationSettings};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn realized(k: f64) -> RealizedHamiltonian {
        let sys = System::quadratic(2);
        let torus = LiouvilleTorus::new(&sys, vec![0.0, 1.0], 1e-12).unwrap();
        let psi = SectionPerturbation::new(
            DiskTemplate::linked_pair(0.1, k).unwrap(),
            BumpProfile::new(0.5, 0.05),
            vec![0.0, 1.0],
        )
        .unwrap();
        realize(&sys, &torus, &psi, &RealizationSettings { levels: 4, ..Default::default() }).unwrap()
    }

    /// A phase point with `|(Q_1, P_1 − p*_1)| < r`, `H` near `h₀` and `q_n` in the transition zone.
    fn inside(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let p1: f64 = rng.random_range(-0.07..0.07);
        let h: f64 = rng.random_range(0.47..0.53);
        let p2 = (2.0 * h - p1 * p1).sqrt();
        let qn = rng.random_range(0.42..0.58);
        let q1 = rng.random_range(-0.07..0.07) + qn * p1 / p2;
        (vec![q1, qn], vec![p1, p2])
    }

    #[test]
    fn zero_template_gives_the_base_hamiltonian() {
        let ham = realized(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (q, p) = inside(&mut rng);
            assert_eq!(ham.value(&q, &p).unwrap(), 0.5 * (p[0] * p[0] + p[1] * p[1]));
        }
    }

    #[test]
    fn newton_glue_agrees_with_bisection() {
        let ham = realized(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut moved = 0;
        for _ in 0..200 {
            let (q, p) = inside(&mut rng);
            let a = ham.value(&q, &p).unwrap();
            let b = glue_levels(&ham, &q, &p).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            if a != IntegrableHamiltonian::energy(&ham.system, &p) {
                moved += 1;
            }
        }
        assert!(moved > 100);
    }

    #[test]
    fn exact_outside_the_neighbourhood() {
        let ham = realized(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let (mut q, p) = inside(&mut rng);
            // out of the transition zone
            q[1] = rng.random_range(0.0..0.38);
            assert_eq!(ham.value(&q, &p).unwrap(), IntegrableHamiltonian::energy(&ham.system, &p));
            // out of the envelope
            let far = [p[0], p[1] * 1.2];
            let (q2, _) = inside(&mut rng);
            assert_eq!(ham.value(&q2, &far).unwrap(), IntegrableHamiltonian::energy(&ham.system, &far));
        }
    }

    #[test]
    fn constant_on_leaves() {
        let ham = realized(0.1);
        let fam = &ham.family;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let label = LeafLabel {
                b: rng.random_range(-0.05..0.05),
                level: rng.random_range(0.48..0.52),
            };
            let beta = ham.envelope.value(label.level);
            let mut values = Vec::new();
            for _ in 0..2 {
                let q1 = rng.random_range(-0.06..0.06);
                let qn_time = rng.random_range(0.4..0.6);
                let [p1, pn] = fam.leaf_eval(q1, qn_time, label, beta).unwrap();
                // back to action-angle coordinates on this level
                let p2 = (2.0 * pn - p1 * p1).sqrt();
                let qn = qn_time * p2;
                let q = vec![q1 + qn * p1 / p2, qn];
                values.push(ham.value(&q, &[p1, p2]).unwrap());
            }
            assert!((values[0] - label.level).abs() < 1e-10 && (values[1] - label.level).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ham = realized(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = 1e-6;
        for _ in 0..200 {
            let (q, p) = inside(&mut rng);
            let (mut dq, mut dp) = (vec![0.0; 2], vec![0.0; 2]);
            ham.value_and_gradient(&q, &p, &mut dq, &mut dp).unwrap();
            let grad: Vec<f64> = dq.iter().chain(&dp).copied().collect();
            let x0: Vec<f64> = q.iter().chain(&p).copied().collect();
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            for j in 0..4 {
                let at = |d: f64| {
                    let mut x = x0.clone();
                    x[j] += d;
                    ham.value(&x[..2], &x[2..]).unwrap()
                };
                let fd = (at(-2.0 * e) - 8.0 * at(-e) + 8.0 * at(e) - at(2.0 * e)) / (12.0 * e);
                assert!((fd - grad[j]).abs() < 1e-6 * scale, "component {j}: {fd} vs {}", grad[j]);
            }
        }
    }
}
