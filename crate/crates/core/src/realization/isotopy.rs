//! The isotopy `φ_t` from the template map to the identity.
//!
//! `φ_t` is generated by `G(Q, p) = Q·p + ρ(t)·W(Q; p)`: the point `(q, p)` goes
//! to `(Q, P)` with `q = Q + ρ ∂W/∂p` and `P = p + ρ ∂W/∂Q`. Each `φ_t` is
//! symplectic, and `ρ` is constant on `[0, 1/3]` and on `[2/3, 1]`, so the
//! family is exactly stationary there.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::profiles::isotopy_weight;

use super::potential::LeafPotential;

#[derive(Debug, Clone, PartialEq)]
pub struct Isotopy {
    pub potential: LeafPotential,
    /// Envelope value the template is frozen at.
    pub beta: f64,
}

pub fn isotopy_family(potential: LeafPotential, beta: f64) -> Isotopy {
    Isotopy { potential, beta }
}

impl Isotopy {
    /// `φ_t(z)` and its Jacobian.
    pub fn apply(&self, t: f64, z: [f64; 2]) -> Result<([f64; 2], Matrix2<f64>)> {
        let rho = isotopy_weight(t);
        if rho == 0.0 {
            return Ok((z, Matrix2::identity()));
        }
        let [q, p] = z;
        let pot = &self.potential;
        let r = pot.support_radius();
        let (mut lo, mut hi) = (q - 2.0 * r, q + 2.0 * r);
        let mut x = q;
        for _ in 0..100 {
            let w = pot.jet(x, p, self.beta)?;
            let res = x + rho * w.w_b - q;
            // 1 + ρ ∂²W/∂Q∂p = (1 − ρ) + ρ/X_q > 0
            let d = 1.0 + rho * w.w_qb;
            let converged = res.abs() <= 8.0 * f64::EPSILON * (r + q.abs());
            if converged || hi - lo <= f64::EPSILON * r {
                let big_p = p + rho * w.w_q;
                let jac = Matrix2::new(
                    1.0 / d,
                    -rho * w.w_bb / d,
                    rho * w.w_qq / d,
                    d - rho * rho * w.w_qq * w.w_bb / d,
                );
                return Ok(([x, big_p], jac));
            }
            if res < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
            let next = x - res / d;
            x = if d > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        Err(Error::GeneratingSolve(format!(
            "isotopy solve at t = {t}, z = {z:?} did not converge"
        )))
    }

    pub fn map(&self, t: f64, z: [f64; 2]) -> Result<[f64; 2]> {
        Ok(self.apply(t, z)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::DiskTemplate;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso() -> Isotopy {
        isotopy_family(LeafPotential::new(DiskTemplate::linked_pair(0.1, 0.2).unwrap()), 1.0)
    }

    #[test]
    fn endpoints_of_the_family() {
        let f = iso();
        let t = &f.potential.template;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let z = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let phi0 = f.map(0.0, z).unwrap();
            assert_eq!(f.map(0.2, z).unwrap(), phi0);
            assert_eq!(f.map(1.0 / 3.0, z).unwrap(), phi0);
            assert_eq!(f.map(0.9, z).unwrap(), z);
            let want = t.apply(z, 1.0);
            assert!((phi0[0] - want[0]).abs() < 1e-13 && (phi0[1] - want[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn every_member_preserves_area() {
        let f = iso();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..300 {
            let t = rng.random_range(0.0..1.0);
            let z = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let (_, j) = f.apply(t, z).unwrap();
            assert!((j.determinant() - 1.0).abs() < 1e-10);
            let e = 1e-6;
            for k in 0..2 {
                let mut a = z;
                let mut b = z;
                a[k] += e;
                b[k] -= e;
                let (fa, fb) = (f.map(t, a).unwrap(), f.map(t, b).unwrap());
                for i in 0..2 {
                    assert!(((fa[i] - fb[i]) / (2.0 * e) - j[(i, k)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn boundary_neighbourhood_is_fixed() {
        let f = iso();
        for t in [0.0, 0.4, 0.5, 0.6] {
            for z in [[0.0, 0.1], [-0.08, 0.07], [0.3, 0.0]] {
                assert_eq!(f.map(t, z).unwrap(), z);
            }
        }
    }
}
