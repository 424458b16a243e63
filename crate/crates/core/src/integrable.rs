//! Integrable Hamiltonians in action-angle form.
//!
//! Angles use the unit period: every angle lives in `[0, 1)`, so a full turn
//! of `q_n` is one crossing of the section `q_n = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduces an angle into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduces an angle into `[-1/2, 1/2)`, the chart used around the anchor torus.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    let r = wrap_unit(x + 0.5) - 0.5;
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// Phase point `(q, p)` of an action-angle chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAngleState {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl ActionAngleState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension(format!(
                "angles have {} components, actions {}",
                q.len(),
                p.len()
            )));
        }
        if q.len() < 2 {
            return Err(Error::Dimension("need at least two degrees of freedom".into()));
        }
        Ok(ActionAngleState {
            q: q.into_iter().map(wrap_unit).collect(),
            p,
        })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// A completely integrable Hamiltonian `H(p)` with analytic derivatives.
///
/// Implementations must make `frequency_into` the exact gradient of `energy`
/// and `hessian` its exact Jacobian; downstream tangent maps rely on it.
pub trait IntegrableHamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    fn energy(&self, p: &[f64]) -> f64;

    /// Writes the frequency vector `∂H/∂p` into `out`.
    fn frequency_into(&self, p: &[f64], out: &mut [f64]);

    fn hessian(&self, p: &[f64]) -> DMatrix<f64>;

    /// Only `∂H/∂p_n`, the rate at which orbits cross the section.
    fn crossing_rate(&self, p: &[f64]) -> f64 {
        let mut w = vec![0.0; self.dim()];
        self.frequency_into(p, &mut w);
        w[self.dim() - 1]
    }

    fn frequency(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.frequency_into(p, &mut out);
        out
    }
}

/// One monomial `coefficient * Π p_i^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

/// The built-in systems selectable from an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum System {
    /// `H = |p|^2 / 2`: geodesic flow of the flat torus, KAM-nondegenerate.
    Quadratic { n: usize },
    /// `H = p_n`: the straightened chart. Degenerate; a realization testbed.
    Canonical { n: usize },
    /// A user polynomial in the actions.
    Polynomial { n: usize, terms: Vec<Monomial> },
}

impl System {
    pub fn quadratic(n: usize) -> Self {
        System::Quadratic { n }
    }

    pub fn canonical(n: usize) -> Self {
        System::Canonical { n }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::config("system needs n >= 2"));
        }
        if let System::Polynomial { terms, .. } = self {
            if terms.is_empty() {
                return Err(Error::config("polynomial system has no terms"));
            }
            for t in terms {
                if t.exponents.len() != n {
                    return Err(Error::config(format!(
                        "monomial has {} exponents, system has n = {n}",
                        t.exponents.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Quadratic { .. } => "quadratic",
            System::Canonical { .. } => "canonical",
            System::Polynomial { .. } => "polynomial",
        }
    }
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

impl IntegrableHamiltonian for System {
    fn dim(&self) -> usize {
        match self {
            System::Quadratic { n } | System::Canonical { n } | System::Polynomial { n, .. } => *n,
        }
    }

    fn energy(&self, p: &[f64]) -> f64 {
        match self {
            System::Quadratic { .. } => 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
            System::Canonical { n } => p[n - 1],
            System::Polynomial { terms, .. } => terms
                .iter()
                .map(|t| {
                    t.coefficient
                        * t.exponents.iter().zip(p).map(|(&k, &x)| powi(x, k)).product::<f64>()
                })
                .sum(),
        }
    }

    fn frequency_into(&self, p: &[f64], out: &mut [f64]) {
        match self {
            System::Quadratic { .. } => out.copy_from_slice(p),
            System::Canonical { n } => {
                out.fill(0.0);
                out[n - 1] = 1.0;
            }
            System::Polynomial { terms, .. } => {
                out.fill(0.0);
                for t in terms {
                    for (i, o) in out.iter_mut().enumerate() {
                        let ki = t.exponents[i];
                        if ki == 0 {
                            continue;
                        }
                        let mut prod = t.coefficient * ki as f64;
                        for (j, (&k, &x)) in t.exponents.iter().zip(p).enumerate() {
                            prod *= if j == i { powi(x, k - 1) } else { powi(x, k) };
                        }
                        *o += prod;
                    }
                }
            }
        }
    }

    fn crossing_rate(&self, p: &[f64]) -> f64 {
        match self {
            System::Quadratic { n } => p[n - 1],
            System::Canonical { .. } => 1.0,
            System::Polynomial { .. } => self.frequency(p)[p.len() - 1],
        }
    }

    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            System::Quadratic { .. } => DMatrix::identity(n, n),
            System::Canonical { .. } => DMatrix::zeros(n, n),
            System::Polynomial { terms, .. } => {
                let mut h = DMatrix::zeros(n, n);
                for t in terms {
                    for i in 0..n {
                        for j in 0..n {
                            let (ki, kj) = (t.exponents[i], t.exponents[j]);
                            let factor = if i == j {
                                if ki < 2 {
                                    continue;
                                }
                                (ki * (ki - 1)) as f64
                            } else {
                                if ki == 0 || kj == 0 {
                                    continue;
                                }
                                (ki * kj) as f64
                            };
                            let mut prod = t.coefficient * factor;
                            for (l, (&k, &x)) in t.exponents.iter().zip(p).enumerate() {
                                let drop = (l == i) as u32 + (l == j) as u32;
                                prod *= powi(x, k - drop);
                            }
                            h[(i, j)] += prod;
                        }
                    }
                }
                h
            }
        }
    }
}

/// `∂H/∂p` at `p`.
pub fn frequency<H: IntegrableHamiltonian + ?Sized>(sys: &H, p: &[f64]) -> Vec<f64> {
    sys.frequency(p)
}

/// Exact linear flow on the torus through `state`: `q + t ω(p)` reduced mod 1.
pub fn flow_exact<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    state: &ActionAngleState,
    t: f64,
) -> ActionAngleState {
    let w = sys.frequency(&state.p);
    ActionAngleState {
        q: state.q.iter().zip(&w).map(|(q, w)| wrap_unit(q + t * w)).collect(),
        p: state.p.clone(),
    }
}

/// `det ∂²H/∂p²`; the system is KAM-nondegenerate where this is bounded away from zero.
pub fn kam_nondegeneracy<H: IntegrableHamiltonian + ?Sized>(sys: &H, p: &[f64]) -> f64 {
    sys.hessian(p).determinant()
}

/// Returns the period of the torus `p = p_star` when its flow winds only along `q_n`.
///
/// A torus whose other frequencies are below `tol_rat` in magnitude is treated
/// as periodic with period `1/|ω_n|`; anything else is reported as absent.
pub fn periodic_torus_check<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    p_star: &[f64],
    tol_rat: f64,
) -> Result<Option<f64>> {
    let w = sys.frequency(p_star);
    if w.iter().all(|x| *x == 0.0) {
        return Err(Error::VanishingFrequency);
    }
    let (last, rest) = w.split_last().expect("n >= 2");
    if *last != 0.0 && rest.iter().all(|x| x.abs() < tol_rat) {
        Ok(Some(1.0 / last.abs()))
    } else {
        Ok(None)
    }
}

/// An invariant torus `p = p_star` of the integrable flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleTorus {
    pub p_star: Vec<f64>,
    pub period: Option<f64>,
}

impl LiouvilleTorus {
    pub fn new<H: IntegrableHamiltonian + ?Sized>(sys: &H, p_star: Vec<f64>, tol_rat: f64) -> Result<Self> {
        if p_star.len() != sys.dim() {
            return Err(Error::Dimension(format!(
                "torus action has {} components, system n = {}",
                p_star.len(),
                sys.dim()
            )));
        }
        let period = periodic_torus_check(sys, &p_star, tol_rat)?;
        Ok(LiouvilleTorus { p_star, period })
    }

    pub fn omega<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H) -> Vec<f64> {
        sys.frequency(&self.p_star)
    }

    pub fn energy<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H) -> f64 {
        sys.energy(&self.p_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rk4_linear(w: &[f64], q: &[f64], t: f64, dt: f64) -> Vec<f64> {
        // Oracle: classical RK4 on q' = ω, p' = 0, unwrapped.
        let steps = (t / dt).round() as usize;
        let mut q = q.to_vec();
        for _ in 0..steps {
            for (qi, wi) in q.iter_mut().zip(w) {
                let k = *wi;
                *qi += dt * (k + 2.0 * k + 2.0 * k + k) / 6.0;
            }
        }
        q.into_iter().map(wrap_unit).collect()
    }

    fn sample_poly() -> System {
        // H = p1^2/2 + p1 p2^2 + 0.3 p2^3
        System::Polynomial {
            n: 2,
            terms: vec![
                Monomial { coefficient: 0.5, exponents: vec![2, 0] },
                Monomial { coefficient: 1.0, exponents: vec![1, 2] },
                Monomial { coefficient: 0.3, exponents: vec![0, 3] },
            ],
        }
    }

    #[test]
    fn frequency_examples() {
        let q = System::quadratic(2);
        assert_eq!(frequency(&q, &[0.1, 1.0]), vec![0.1, 1.0]);
        assert_eq!(frequency(&q, &[0.0, 0.0]), vec![0.0, 0.0]);
        let c = System::canonical(3);
        assert_eq!(frequency(&c, &[0.4, -2.0, 7.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        assert_eq!(wrap_unit(-1e-18), 0.0);
        assert_eq!(wrap_unit(1.0), 0.0);
        assert!((wrap_unit(-0.25) - 0.75).abs() < 1e-16);
        assert!((wrap_centered(0.75) + 0.25).abs() < 1e-16);
        assert_eq!(wrap_centered(0.5), -0.5);
    }

    #[test]
    fn flow_exact_examples() {
        let sys = System::quadratic(2);
        let s = ActionAngleState::new(vec![0.0, 0.0], vec![0.1, 1.0]).unwrap();
        assert_eq!(flow_exact(&sys, &s, 0.0), s);
        let t1 = flow_exact(&sys, &s, 1.0);
        assert!((t1.q()[0] - 0.1).abs() < 1e-15);
        assert_eq!(t1.q()[1], 0.0);
        assert_eq!(t1.p(), s.p());
        let oracle = rk4_linear(&[0.1, 1.0], &[0.0, 0.0], 1.0, 1e-4);
        for (a, b) in t1.q().iter().zip(&oracle) {
            let d = wrap_centered(a - b).abs();
            assert!(d < 1e-10, "closed form vs RK4: {d}");
        }
    }

    #[test]
    fn kam_examples() {
        assert_eq!(kam_nondegeneracy(&System::quadratic(2), &[0.3, 0.9]), 1.0);
        assert_eq!(kam_nondegeneracy(&System::canonical(2), &[0.3, 0.9]), 0.0);
        // H = p1^2/2 + p2: finite-difference Hessian oracle gives det = 0.
        let sys = System::Polynomial {
            n: 2,
            terms: vec![
                Monomial { coefficient: 0.5, exponents: vec![2, 0] },
                Monomial { coefficient: 1.0, exponents: vec![0, 1] },
            ],
        };
        let p = [0.4, 0.7];
        let h = 1e-4;
        let mut fd = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let e = |di: f64, dj: f64| {
                    let mut x = p;
                    x[i] += di;
                    x[j] += dj;
                    sys.energy(&x)
                };
                fd[i][j] = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
            }
        }
        let fd_det = fd[0][0] * fd[1][1] - fd[0][1] * fd[1][0];
        assert!(fd_det.abs() < 1e-6);
        assert_eq!(kam_nondegeneracy(&sys, &p), 0.0);
    }

    #[test]
    fn periodic_torus_examples() {
        let sys = System::quadratic(2);
        assert_eq!(periodic_torus_check(&sys, &[0.0, 1.0], 1e-9).unwrap(), Some(1.0));
        assert_eq!(periodic_torus_check(&sys, &[0.0, 2.0], 1e-9).unwrap(), Some(0.5));
        assert_eq!(periodic_torus_check(&sys, &[0.3, 1.0], 1e-9).unwrap(), None);
        // the q1 trajectory does not close after t = 1
        let s = ActionAngleState::new(vec![0.0, 0.0], vec![0.3, 1.0]).unwrap();
        assert!(flow_exact(&sys, &s, 1.0).q()[0] > 0.2);
        assert!(matches!(
            periodic_torus_check(&sys, &[0.0, 0.0], 1e-9),
            Err(Error::VanishingFrequency)
        ));
    }

    #[test]
    fn torus_period_closes_orbit() {
        let sys = System::quadratic(2);
        let torus = LiouvilleTorus::new(&sys, vec![0.0, 2.0], 1e-9).unwrap();
        let s = ActionAngleState::new(vec![0.3, 0.7], torus.p_star.clone()).unwrap();
        let back = flow_exact(&sys, &s, torus.period.unwrap());
        for (a, b) in back.q().iter().zip(s.q()) {
            assert!(wrap_centered(a - b).abs() < 1e-12);
        }
        assert_eq!(torus.omega(&sys), vec![0.0, 2.0]);
    }

    #[test]
    fn state_rejects_bad_dimensions() {
        assert!(ActionAngleState::new(vec![0.0], vec![1.0]).is_err());
        assert!(ActionAngleState::new(vec![0.0, 0.1], vec![1.0]).is_err());
        let s = ActionAngleState::new(vec![1.25, -0.25], vec![0.0, 1.0]).unwrap();
        assert_eq!(s.q(), &[0.25, 0.75]);
    }

    #[test]
    fn polynomial_hessian_is_symmetric_and_matches_gradient() {
        let sys = sample_poly();
        let p = [0.3, -0.8];
        let h = sys.hessian(&p);
        assert!((h[(0, 1)] - h[(1, 0)]).abs() < 1e-12);
        for j in 0..2 {
            let mut a = p;
            let mut b = p;
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let (fa, fb) = (sys.frequency(&a), sys.frequency(&b));
            for i in 0..2 {
                let fd = (fa[i] - fb[i]) / 2e-6;
                assert!((fd - h[(i, j)]).abs() < 1e-7);
            }
        }
    }

    fn box_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 2)
    }

    proptest! {
        #[test]
        fn gradient_matches_centered_differences(p in box_point()) {
            for sys in [System::quadratic(2), sample_poly()] {
                let w = sys.frequency(&p);
                for i in 0..2 {
                    let h = 1e-6;
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (sys.energy(&a) - sys.energy(&b)) / (2.0 * h);
                    let scale = w[i].abs().max(1.0);
                    prop_assert!((fd - w[i]).abs() / scale < 1e-6);
                }
            }
        }

        #[test]
        fn flow_is_a_group_and_conserves_actions(
            q in prop::collection::vec(0.0f64..1.0, 2),
            p in box_point(),
            t1 in -5.0f64..5.0,
            t2 in -5.0f64..5.0,
        ) {
            let sys = sample_poly();
            let s = ActionAngleState::new(q, p).unwrap();
            let a = flow_exact(&sys, &flow_exact(&sys, &s, t2), t1);
            let b = flow_exact(&sys, &s, t1 + t2);
            prop_assert_eq!(a.p(), s.p());
            for (x, y) in a.q().iter().zip(b.q()) {
                prop_assert!(wrap_centered(x - y).abs() < 1e-12);
            }
        }
    }
}
