//! Symplectic integration of general Hamiltonians and numerical section crossings.
//!
//! Angles are carried unwrapped during integration so that crossings of
//! `q_n = k` are plain sign changes; Hamiltonians reduce them modulo 1 as
//! they need.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{IntegrableHamiltonian, System};
use crate::section::SectionPoint;

/// A Hamiltonian on `T^n × R^n` evaluable with its gradient.
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    fn energy(&self, q: &[f64], p: &[f64]) -> Result<f64>;

    /// Writes `∂H/∂q` and `∂H/∂p`.
    fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()>;

    /// Hessian in `(q, p)` order. The default differentiates the gradient
    /// numerically and symmetrizes the result.
    fn hessian(&self, q: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        fd_hessian(self, q, p, 1e-6)
    }

    /// `(∂T/∂p, ∂V/∂q)` for `H = T(p) + V(q)`, when that split exists.
    fn split(&self) -> Option<&dyn Separable> {
        None
    }
}

/// The two halves of a separable Hamiltonian `T(p) + V(q)`.
pub trait Separable {
    fn kinetic_gradient(&self, p: &[f64], out: &mut [f64]);
    fn potential_gradient(&self, q: &[f64], out: &mut [f64]);
}

/// Centered differences of the gradient, symmetrized.
pub fn fd_hessian<H: Hamiltonian + ?Sized>(ham: &H, q: &[f64], p: &[f64], eps: f64) -> Result<DMatrix<f64>> {
    let n = ham.dim();
    let mut hess = DMatrix::zeros(2 * n, 2 * n);
    let mut x: Vec<f64> = q.iter().chain(p).copied().collect();
    let mut ga = vec![0.0; 2 * n];
    let mut gb = vec![0.0; 2 * n];
    for j in 0..2 * n {
        let x0 = x[j];
        x[j] = x0 + eps;
        {
            let (a, b) = ga.split_at_mut(n);
            ham.gradient(&x[..n], &x[n..], a, b)?;
        }
        x[j] = x0 - eps;
        {
            let (a, b) = gb.split_at_mut(n);
            ham.gradient(&x[..n], &x[n..], a, b)?;
        }
        x[j] = x0;
        for i in 0..2 * n {
            hess[(i, j)] = (ga[i] - gb[i]) / (2.0 * eps);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

impl Hamiltonian for System {
    fn dim(&self) -> usize {
        IntegrableHamiltonian::dim(self)
    }

    fn energy(&self, _q: &[f64], p: &[f64]) -> Result<f64> {
        Ok(IntegrableHamiltonian::energy(self, p))
    }

    fn gradient(&self, _q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        dq.iter_mut().for_each(|v| *v = 0.0);
        self.frequency_into(p, dp);
        Ok(())
    }

    fn hessian(&self, _q: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        let n = IntegrableHamiltonian::dim(self);
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((n, n), (n, n)).copy_from(&IntegrableHamiltonian::hessian(self, p));
        Ok(out)
    }

    fn split(&self) -> Option<&dyn Separable> {
        Some(self)
    }
}

impl Separable for System {
    fn kinetic_gradient(&self, p: &[f64], out: &mut [f64]) {
        self.frequency_into(p, out);
    }

    fn potential_gradient(&self, _q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Implicit midpoint rule (second order, symplectic, symmetric).
    ImplicitMidpoint,
    /// Triple-jump composition of the midpoint rule (fourth order).
    Midpoint4,
    /// Störmer–Verlet for separable Hamiltonians.
    Splitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSettings {
    pub scheme: Scheme,
    pub step: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub crossing_tol: f64,
    /// Longest time `integrate_to_section` searches before giving up.
    pub horizon: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            scheme: Scheme::ImplicitMidpoint,
            step: 1e-2,
            newton_tol: 1e-12,
            max_newton: 25,
            crossing_tol: 1e-10,
            horizon: 100.0,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step", self.step),
            ("newton_tol", self.newton_tol),
            ("crossing_tol", self.crossing_tol),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("integrator {name} must be positive, got {v}")));
            }
        }
        if self.max_newton == 0 {
            return Err(Error::config("integrator max_newton must be at least 1"));
        }
        Ok(())
    }
}

/// A phase point with unwrapped angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension(format!("{} angles and {} actions", q.len(), p.len())));
        }
        Ok(PhaseState { q, p })
    }

    /// The point of `{q_n = 0}` above a section point.
    pub fn on_section(sp: &SectionPoint) -> Self {
        let mut q = sp.q_bar.clone();
        q.push(0.0);
        PhaseState { q, p: sp.p.clone() }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    fn to_vec(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    fn from_slice(x: &[f64]) -> Self {
        let n = x.len() / 2;
        PhaseState {
            q: x[..n].to_vec(),
            p: x[n..].to_vec(),
        }
    }
}

/// `J∇H` at `x = (q, p)`.
fn vector_field<H: Hamiltonian + ?Sized>(ham: &H, x: &[f64], out: &mut [f64]) -> Result<()> {
    let n = x.len() / 2;
    let (dq, dp) = out.split_at_mut(n);
    // writes ∂H/∂q into dq and ∂H/∂p into dp, then rotates
    ham.gradient(&x[..n], &x[n..], dq, dp)?;
    for i in 0..n {
        let hq = dq[i];
        dq[i] = dp[i];
        dp[i] = -hq;
    }
    Ok(())
}

fn midpoint_step<H: Hamiltonian + ?Sized>(
    ham: &H,
    x0: &[f64],
    dt: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<f64>> {
    let dim = x0.len();
    let mut f = vec![0.0; dim];
    vector_field(ham, x0, &mut f)?;
    let mut x1: Vec<f64> = x0.iter().zip(&f).map(|(a, b)| a + dt * b).collect();
    let mut mid = vec![0.0; dim];
    let mut residual = f64::INFINITY;
    for _ in 0..settings.max_newton {
        for i in 0..dim {
            mid[i] = 0.5 * (x0[i] + x1[i]);
        }
        vector_field(ham, &mid, &mut f)?;
        residual = 0.0;
        for i in 0..dim {
            let next = x0[i] + dt * f[i];
            residual = residual.max((next - x1[i]).abs());
            x1[i] = next;
        }
        if residual < settings.newton_tol {
            return Ok(x1);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::StepSize { residual })
}

const TRIPLE_JUMP: [f64; 3] = {
    // w1 = 1/(2 − 2^{1/3}), w0 = 1 − 2·w1
    let w1 = 1.351_207_191_959_657_8;
    [w1, 1.0 - 2.0 * w1, w1]
};

fn splitting_step(split: &dyn Separable, x0: &[f64], dt: f64) -> Vec<f64> {
    let n = x0.len() / 2;
    let mut q = x0[..n].to_vec();
    let mut p = x0[n..].to_vec();
    let mut g = vec![0.0; n];
    split.potential_gradient(&q, &mut g);
    for i in 0..n {
        p[i] -= 0.5 * dt * g[i];
    }
    split.kinetic_gradient(&p, &mut g);
    for i in 0..n {
        q[i] += dt * g[i];
    }
    split.potential_gradient(&q, &mut g);
    for i in 0..n {
        p[i] -= 0.5 * dt * g[i];
    }
    q.extend(p);
    q
}

fn step_vec<H: Hamiltonian + ?Sized>(ham: &H, x0: &[f64], dt: f64, settings: &IntegratorSettings) -> Result<Vec<f64>> {
    match settings.scheme {
        Scheme::ImplicitMidpoint => midpoint_step(ham, x0, dt, settings),
        Scheme::Midpoint4 => {
            let mut x = x0.to_vec();
            for w in TRIPLE_JUMP {
                x = midpoint_step(ham, &x, w * dt, settings)?;
            }
            Ok(x)
        }
        Scheme::Splitting => {
            let split = ham
                .split()
                .ok_or_else(|| Error::Unsupported("splitting scheme needs a separable Hamiltonian".into()))?;
            Ok(splitting_step(split, x0, dt))
        }
    }
}

/// One step of the configured scheme.
pub fn step<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &PhaseState,
    dt: f64,
    settings: &IntegratorSettings,
) -> Result<PhaseState> {
    Ok(PhaseState::from_slice(&step_vec(ham, &state.to_vec(), dt, settings)?))
}

/// Linearization of one midpoint step: `(I − dt/2·J·S) δx₁ = (I + dt/2·J·S) δx₀`,
/// with `S` the Hessian at the midpoint. A Cayley transform of a Hamiltonian
/// matrix, hence exactly symplectic.
fn midpoint_tangent<H: Hamiltonian + ?Sized>(ham: &H, x0: &[f64], x1: &[f64], dt: f64) -> Result<DMatrix<f64>> {
    let dim = x0.len();
    let n = dim / 2;
    let mid: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| 0.5 * (a + b)).collect();
    let s = ham.hessian(&mid[..n], &mid[n..])?;
    let j = crate::linalg::symplectic_form(dim);
    let a = &j * s * (0.5 * dt);
    let id = DMatrix::identity(dim, dim);
    (&id - &a)
        .lu()
        .solve(&(&id + &a))
        .ok_or_else(|| Error::StepSize { residual: f64::INFINITY })
}

fn step_with_tangent<H: Hamiltonian + ?Sized>(
    ham: &H,
    x0: &[f64],
    dt: f64,
    settings: &IntegratorSettings,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let substeps: &[f64] = match settings.scheme {
        Scheme::ImplicitMidpoint => &[1.0],
        Scheme::Midpoint4 => &TRIPLE_JUMP,
        Scheme::Splitting => {
            return Err(Error::Unsupported("tangent propagation uses the midpoint schemes".into()));
        }
    };
    let mut x = x0.to_vec();
    let mut m = DMatrix::identity(x0.len(), x0.len());
    for w in substeps {
        let next = midpoint_step(ham, &x, w * dt, settings)?;
        m = midpoint_tangent(ham, &x, &next, w * dt)? * m;
        x = next;
    }
    Ok((x, m))
}

/// A numerically refined section crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub state: PhaseState,
    pub time: f64,
    /// `|q_n − target|` at the returned state.
    pub residual: f64,
}

/// Finds the partial step `τ ∈ (0, dt]` landing on `q_n = target`.
fn refine_crossing<H: Hamiltonian + ?Sized>(
    ham: &H,
    x0: &[f64],
    dt: f64,
    target: f64,
    settings: &IntegratorSettings,
) -> Result<(f64, Vec<f64>)> {
    let n = x0.len() / 2;
    let g = |tau: f64| -> Result<(f64, Vec<f64>)> {
        let x = step_vec(ham, x0, tau, settings)?;
        Ok((x[n - 1] - target, x))
    };
    let (mut lo, mut hi) = (0.0, dt);
    let mut tau = dt * (target - x0[n - 1]) / (g(dt)?.0 + target - x0[n - 1]);
    if !(tau > 0.0 && tau <= dt) {
        tau = 0.5 * dt;
    }
    let mut f = vec![0.0; 2 * n];
    for _ in 0..100 {
        let (r, x) = g(tau)?;
        if r.abs() < settings.crossing_tol {
            return Ok((tau, x));
        }
        if r < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        // Newton in τ: dq_n/dτ ≈ q̇_n at the partial endpoint
        vector_field(ham, &x, &mut f)?;
        let next = tau - r / f[n - 1];
        tau = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    Err(Error::NoCrossing { horizon: dt })
}

/// Integrates until `q_n` crosses `target` upward.
pub fn integrate_to_target<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &PhaseState,
    target: f64,
    settings: &IntegratorSettings,
) -> Result<CrossingEvent> {
    let n = state.dim();
    let mut x = state.to_vec();
    let mut t = 0.0;
    let dt = settings.step;
    while t < settings.horizon {
        let next = step_vec(ham, &x, dt, settings)?;
        if x[n - 1] < target && next[n - 1] >= target {
            let (tau, xc) = refine_crossing(ham, &x, dt, target, settings)?;
            let residual = (xc[n - 1] - target).abs();
            return Ok(CrossingEvent {
                state: PhaseState::from_slice(&xc),
                time: t + tau,
                residual,
            });
        }
        x = next;
        t += dt;
    }
    Err(Error::NoCrossing { horizon: settings.horizon })
}

/// Integrates to the next upward crossing of an integer value of `q_n`.
pub fn integrate_to_section<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &PhaseState,
    settings: &IntegratorSettings,
) -> Result<CrossingEvent> {
    let target = state.q[state.dim() - 1].floor() + 1.0;
    integrate_to_target(ham, state, target, settings)
}

/// The section point reached by a crossing event.
pub fn crossing_to_section(ev: &CrossingEvent) -> Result<SectionPoint> {
    let n = ev.state.dim();
    SectionPoint::new(ev.state.q[..n - 1].to_vec(), ev.state.p.clone())
}

/// Integrated Poincaré map with its Jacobian in `(q̄, p)` coordinates.
///
/// The flow Jacobian is carried through every step, including the partial
/// step to the crossing, and then projected along the flow onto the section.
pub fn section_monodromy<H: Hamiltonian + ?Sized>(
    ham: &H,
    sp: &SectionPoint,
    settings: &IntegratorSettings,
) -> Result<(SectionPoint, DMatrix<f64>)> {
    let n = sp.dim();
    let dim = 2 * n;
    let start = PhaseState::on_section(sp);
    let target = 1.0;
    let mut x = start.to_vec();
    let mut m = DMatrix::identity(dim, dim);
    let mut t = 0.0;
    let dt = settings.step;
    loop {
        if t >= settings.horizon {
            return Err(Error::NoCrossing { horizon: settings.horizon });
        }
        let next = step_vec(ham, &x, dt, settings)?;
        if next[n - 1] >= target {
            break;
        }
        let (xn, mn) = step_with_tangent(ham, &x, dt, settings)?;
        x = xn;
        m = mn * m;
        t += dt;
    }
    let (tau, _) = refine_crossing(ham, &x, dt, target, settings)?;
    let (xc, mc) = step_with_tangent(ham, &x, tau, settings)?;
    let m = mc * m;
    // project along the flow: δx ↦ δx − f·δq_n/f_n
    let mut f = vec![0.0; dim];
    vector_field(ham, &xc, &mut f)?;
    let fv = DVector::from_vec(f);
    let row = m.row(n - 1).into_owned();
    let projected = &m - &fv * row / fv[n - 1];
    // drop the q_n row and column
    let keep: Vec<usize> = (0..dim).filter(|&i| i != n - 1).collect();
    let reduced = DMatrix::from_fn(dim - 1, dim - 1, |i, j| projected[(keep[i], keep[j])]);
    let out = SectionPoint::new(xc[..n - 1].to_vec(), xc[n..].to_vec())?;
    Ok((out, reduced))
}

/// Samples `(t, q, p)` along a trajectory every `every` steps.
pub fn trajectory<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &PhaseState,
    t_end: f64,
    every: usize,
    settings: &IntegratorSettings,
) -> Result<Vec<(f64, PhaseState)>> {
    let mut out = vec![(0.0, state.clone())];
    let mut x = state.to_vec();
    let steps = (t_end / settings.step).round() as usize;
    for k in 1..=steps {
        x = step_vec(ham, &x, settings.step, settings)?;
        if k % every.max(1) == 0 || k == steps {
            out.push((k as f64 * settings.step, PhaseState::from_slice(&x)));
        }
    }
    Ok(out)
}

/// Writes a trajectory as CSV with columns `t, q1..qn, p1..pn`.
pub fn write_trajectory_csv<W: Write>(out: &mut W, rows: &[(f64, PhaseState)]) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.1.dim());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.extend((1..=n).map(|i| format!("p{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (t, s) in rows {
        let mut line = format!("{t:.17e}");
        for v in s.q.iter().chain(&s.p) {
            line.push_str(&format!(",{v:.17e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
