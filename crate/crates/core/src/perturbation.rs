//! Level-preserving section perturbations `Ψ` and the perturbed return map `R̃ = R ∘ Ψ`.
//!
//! `Ψ` acts on each level slice `Σ^h`. Its core is a [`DiskTemplate`]: a
//! composition of radial twists in the `(q_1, p_1)` plane around the torus,
//! with twist angles scaled by an energy envelope `β(h)`. Every twist is a
//! rotation by an angle depending only on the radius, hence exactly
//! area-preserving, and is the identity outside its disk.
//!
//! An optional [`Untwist`] factor follows the template. It is generated by a
//! type-2 generating function and coincides with `R⁻¹` on a neighbourhood of
//! the template, so that `R̃` restricted to the template disk is the template
//! itself and the disk is invariant.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{wrap_centered, wrap_unit, IntegrableHamiltonian};
use crate::profiles::{annulus, annulus_tail, BumpProfile, Jet, PlateauCutoff};
use crate::section::{lift_action, SectionPoint, DEFAULT_TRANSVERSALITY, LIFT_TRUST};
use crate::slice::{shift_jet, slice_return, LevelJacobian, SlicePoint};

/// Rotation about `center` by the angle `K·scale·g(|z − center|²/ρ²)` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialTwist {
    pub center: [f64; 2],
    pub radius: f64,
    /// Peak rotation angle, reached on the circle of radius `ρ/√2`.
    pub amplitude: f64,
}

/// Image, derivatives and action of a twist or template at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistJet {
    pub image: Vector2<f64>,
    pub jacobian: Matrix2<f64>,
    /// Derivative of the image with respect to the amplitude scale.
    pub d_scale: Vector2<f64>,
    /// Compactly supported `S` with `dS = Y dX − y dx`.
    pub action: f64,
    /// `∂S/∂scale` at fixed input.
    pub d_scale_action: f64,
}

impl TwistJet {
    fn identity(z: Vector2<f64>) -> Self {
        TwistJet {
            image: z,
            jacobian: Matrix2::identity(),
            d_scale: Vector2::zeros(),
            action: 0.0,
            d_scale_action: 0.0,
        }
    }
}

impl RadialTwist {
    pub fn new(center: [f64; 2], radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("twist radius must be positive, got {radius}")));
        }
        if !amplitude.is_finite() || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::config("twist center and amplitude must be finite"));
        }
        Ok(RadialTwist { center, radius, amplitude })
    }

    /// Radius of the circle rotated by the full amplitude.
    pub fn peak_radius(&self) -> f64 {
        self.radius / 2f64.sqrt()
    }

    pub fn contains(&self, z: [f64; 2]) -> bool {
        let (a, b) = (z[0] - self.center[0], z[1] - self.center[1]);
        a * a + b * b < self.radius * self.radius
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        let w = self.jet(Vector2::new(z[0], z[1]), 1.0).image;
        [w.x, w.y]
    }

    pub fn derivative(&self, z: [f64; 2]) -> Matrix2<f64> {
        self.jet(Vector2::new(z[0], z[1]), 1.0).jacobian
    }

    pub fn jet(&self, z: Vector2<f64>, scale: f64) -> TwistJet {
        let c = Vector2::new(self.center[0], self.center[1]);
        let zt = z - c;
        let rho2 = self.radius * self.radius;
        let r2 = zt.norm_squared();
        let u = r2 / rho2;
        if u >= 1.0 {
            return TwistJet::identity(z);
        }
        let g = annulus(u);
        let k = self.amplitude;
        let a = scale * k;
        let theta = a * g.value;
        let (s, co) = theta.sin_cos();
        let rt = Vector2::new(co * zt.x - s * zt.y, s * zt.x + co * zt.y);
        let perp = Vector2::new(-rt.y, rt.x);
        let rot = Matrix2::new(co, -s, s, co);
        let jacobian = rot + perp * (2.0 * a * g.d1 / rho2) * zt.transpose();
        let tail = annulus_tail(u);
        let action = c.y * (rt.x - zt.x) + 0.5 * (rt.x * rt.y - zt.x * zt.y) - 0.5 * r2 * theta
            - 0.5 * a * rho2 * tail;
        let kg = k * g.value;
        let d_scale_action = -c.y * rt.y * kg + 0.5 * (rt.x * rt.x - rt.y * rt.y) * kg - 0.5 * r2 * kg
            - 0.5 * k * rho2 * tail;
        TwistJet {
            image: c + rt,
            jacobian,
            d_scale: perp * kg,
            action,
            d_scale_action,
        }
    }
}

/// An ordered composition of radial twists inside the disk of radius `support_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskTemplate {
    pub support_radius: f64,
    pub twists: Vec<RadialTwist>,
}

impl DiskTemplate {
    pub fn new(support_radius: f64, twists: Vec<RadialTwist>) -> Result<Self> {
        let t = DiskTemplate { support_radius, twists };
        t.validate()?;
        Ok(t)
    }

    /// Two equal twists of radius `r/1.5` centred at `(±r/3, 0)`.
    ///
    /// Their disks overlap in a lens around the origin and their union
    /// touches the circle of radius `r`.
    pub fn linked_pair(support_radius: f64, amplitude: f64) -> Result<Self> {
        let rho = support_radius / 1.5;
        DiskTemplate::new(
            support_radius,
            vec![
                RadialTwist::new([-rho / 2.0, 0.0], rho, amplitude)?,
                RadialTwist::new([rho / 2.0, 0.0], rho, amplitude)?,
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.support_radius;
        if !(r > 0.0 && r < 0.5) {
            return Err(Error::config(format!(
                "template support radius must lie in (0, 1/2), got {r}"
            )));
        }
        for tw in &self.twists {
            RadialTwist::new(tw.center, tw.radius, tw.amplitude)?;
            let reach = tw.center[0].hypot(tw.center[1]) + tw.radius;
            if reach > r * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "twist centred at {:?} with radius {} leaves the support disk of radius {r}",
                    tw.center, tw.radius
                )));
            }
        }
        Ok(())
    }

    /// Copy with every twist amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DiskTemplate {
        let mut t = self.clone();
        for tw in &mut t.twists {
            tw.amplitude *= factor;
        }
        t
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.twists.iter().fold(0.0, |m, t| m.max(t.amplitude.abs()))
    }

    pub fn in_support(&self, z: [f64; 2]) -> bool {
        z[0].hypot(z[1]) < self.support_radius
    }

    pub fn apply(&self, z: [f64; 2], scale: f64) -> [f64; 2] {
        let mut w = Vector2::new(z[0], z[1]);
        for tw in &self.twists {
            w = tw.jet(w, scale).image;
        }
        [w.x, w.y]
    }

    /// Image, derivatives and action of the composition.
    pub fn jet(&self, z: [f64; 2], scale: f64) -> TwistJet {
        let mut acc = TwistJet::identity(Vector2::new(z[0], z[1]));
        for tw in &self.twists {
            let t = tw.jet(acc.image, scale);
            // gradient of this twist's action with respect to its input
            let grad = Vector2::new(
                t.image.y * t.jacobian[(0, 0)] - acc.image.y,
                t.image.y * t.jacobian[(0, 1)],
            );
            acc.d_scale_action += t.d_scale_action + grad.dot(&acc.d_scale);
            acc.action += t.action;
            acc.d_scale = t.jacobian * acc.d_scale + t.d_scale;
            acc.jacobian = t.jacobian * acc.jacobian;
            acc.image = t.image;
        }
        acc
    }
}

/// Type-2 generated map that undoes the return shift near the torus.
///
/// The generating function is `c(q̄, P̄, h) = β_u(h)·χ(q̄, P̄)·S_h(P̄)` with
/// `∇S_h = ω̄/ω_n` along the level and `χ` a product of plateau cutoffs.
/// The map is `p̄ = P̄ − ∂c/∂q̄`, `Q̄ = q̄ − ∂c/∂P̄`; where `χ = β_u = 1` it is
/// exactly the inverse return map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Untwist {
    /// Cutoff in each centred angle `wrap_centered(q_i)`.
    pub angle: PlateauCutoff,
    /// Cutoff in each action offset `P_i − p*_i`.
    pub action: PlateauCutoff,
    /// Cutoff in `h − h₀`.
    pub level: PlateauCutoff,
}

/// Derivatives of the generating function `c` at one `(q̄, P̄, h)`.
struct GeneratorJet {
    c_q: DVector<f64>,
    c_p: DVector<f64>,
    c_qq: DMatrix<f64>,
    c_qp: DMatrix<f64>,
    c_pp: DMatrix<f64>,
    c_qh: DVector<f64>,
    c_ph: DVector<f64>,
    /// `p_n` on the level at `P̄`.
    p_n: f64,
}

/// Value, gradient and Hessian of `Π f_i(x_i)`.
fn product_jet(jets: &[Jet]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let m = jets.len();
    let others = |skip: &[usize]| -> f64 {
        jets.iter()
            .enumerate()
            .filter(|(k, _)| !skip.contains(k))
            .map(|(_, j)| j.value)
            .product()
    };
    let value = others(&[]);
    let mut grad = DVector::zeros(m);
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..m {
        grad[i] = jets[i].d1 * others(&[i]);
        hess[(i, i)] = jets[i].d2 * others(&[i]);
        for j in 0..i {
            let v = jets[i].d1 * jets[j].d1 * others(&[i, j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (value, grad, hess)
}

impl Untwist {
    pub fn new(angle: PlateauCutoff, action: PlateauCutoff, level: PlateauCutoff) -> Result<Self> {
        if angle.support() >= 0.5 {
            return Err(Error::config(format!(
                "untwist angle support {} must stay below 1/2",
                angle.support()
            )));
        }
        Ok(Untwist { angle, action, level })
    }

    /// Parameters sized for a template of radius `r_supp` under an envelope of half-width `delta_h`.
    pub fn around(r_supp: f64, delta_h: f64) -> Result<Self> {
        Untwist::new(
            PlateauCutoff::new(1.5 * r_supp, 0.45 - 1.5 * r_supp),
            PlateauCutoff::new(1.5 * r_supp, 2.0 * r_supp),
            PlateauCutoff::new(delta_h, delta_h),
        )
    }

    fn generator<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        anchor: &Anchor,
        level_star: (f64, f64),
        h: f64,
        q_bar: &[f64],
        big_p: &[f64],
        p_n_guess: f64,
        beta: Jet,
    ) -> Result<GeneratorJet> {
        let qj: Vec<Jet> = q_bar.iter().map(|&q| self.angle.eval(wrap_centered(q))).collect();
        let pj: Vec<Jet> = big_p
            .iter()
            .zip(&anchor.p_star)
            .map(|(&p, &ps)| self.action.eval(p - ps))
            .collect();
        let (a, a_g, a_h) = product_jet(&qj);
        let (b, b_g, b_h) = product_jet(&pj);

        // S_h(P̄) = φ(p̄*, h) − φ(P̄, h)
        let (pn_star, rate_star) = level_star;
        let p_n = lift_action(sys, h, big_p, p_n_guess, LIFT_TRUST)?;
        let full: Vec<f64> = big_p.iter().copied().chain(std::iter::once(p_n)).collect();
        let sj = shift_jet(sys, &full)?;
        let s = pn_star - p_n;
        let s_g = DVector::from_column_slice(&sj.shift);
        let s_hh = &sj.d_slice;
        let s_h = 1.0 / rate_star - 1.0 / sj.rate;
        let s_gh = DVector::from_column_slice(&sj.d_level);

        let bu = beta.value;
        // ∂(B·S)/∂P̄ and its h-derivative
        let bs_g = &b_g * s + &s_g * b;
        let bs_gh = &b_g * s_h + &s_gh * b;
        let c_q = &a_g * (bu * b * s);
        let c_p = &bs_g * (bu * a);
        let c_qq = &a_h * (bu * b * s);
        let c_qp = &a_g * bs_g.transpose() * bu;
        let c_pp = (&b_h * s + &b_g * s_g.transpose() + &s_g * b_g.transpose() + s_hh * b) * (bu * a);
        let c_qh = &a_g * (b * (beta.d1 * s + bu * s_h));
        let c_ph = (&bs_g * beta.d1 + &bs_gh * bu) * a;
        Ok(GeneratorJet {
            c_q,
            c_p,
            c_qq,
            c_qp,
            c_pp,
            c_qh,
            c_ph,
            p_n,
        })
    }

    fn apply<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        anchor: &Anchor,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        let m = x.m();
        let beta = self.level.eval(x.h - anchor.h0);
        let inactive = beta.value == 0.0
            || x.q_bar.iter().any(|&q| self.angle.eval(wrap_centered(q)).value == 0.0);
        if inactive {
            if let Some(j) = jac {
                *j = LevelJacobian::identity(m);
            }
            return Ok(());
        }
        // torus action lifted to this level, with its crossing rate
        let mut star = anchor.p_star.clone();
        star[m] = lift_action(sys, x.h, &anchor.p_star[..m], anchor.p_star[m], LIFT_TRUST)?;
        let level_star = (star[m], sys.crossing_rate(&star));
        if m == 1 {
            return self.apply_planar(sys, anchor, level_star, beta, x, jac);
        }
        self.apply_general(sys, anchor, level_star, beta, x, jac)
    }

    fn apply_general<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        anchor: &Anchor,
        level_star: (f64, f64),
        beta: Jet,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        let m = x.m();
        let target = DVector::from_column_slice(&x.p_bar);
        let mut big_p = target.clone();
        let mut guess = x.p_n;
        let mut gen = None;
        let scale = 1.0 + target.amax();
        for _ in 0..50 {
            let g = self.generator(sys, anchor, level_star, x.h, &x.q_bar, big_p.as_slice(), guess, beta)?;
            guess = g.p_n;
            let residual = &big_p - &g.c_q - &target;
            let done = residual.amax() <= 1e-15 * scale;
            let mmat = DMatrix::identity(m, m) - &g.c_qp;
            gen = Some(g);
            if done {
                break;
            }
            let step = mmat
                .lu()
                .solve(&residual)
                .ok_or_else(|| Error::GeneratingSolve("singular untwist Jacobian".into()))?;
            big_p -= step;
            gen = None;
        }
        let g = gen.ok_or_else(|| {
            Error::GeneratingSolve("untwist Newton iteration did not converge; shrink the action support".into())
        })?;
        let q_old = x.q_bar.clone();
        for i in 0..m {
            x.q_bar[i] = wrap_unit(q_old[i] - g.c_p[i]);
            x.p_bar[i] = big_p[i];
        }
        x.p_n = g.p_n;
        if let Some(j) = jac {
            let minv = (DMatrix::identity(m, m) - &g.c_qp)
                .try_inverse()
                .ok_or_else(|| Error::GeneratingSolve("singular untwist Jacobian".into()))?;
            let dp_dq = &minv * &g.c_qq;
            let dp_dh = &minv * &g.c_qh;
            let dq_dq = DMatrix::identity(m, m) - g.c_qp.transpose() - &g.c_pp * &dp_dq;
            let dq_dp = -(&g.c_pp * &minv);
            let dq_dh = -(&g.c_ph) - &g.c_pp * &dp_dh;
            let mut slice = DMatrix::zeros(2 * m, 2 * m);
            slice.view_mut((0, 0), (m, m)).copy_from(&dq_dq);
            slice.view_mut((0, m), (m, m)).copy_from(&dq_dp);
            slice.view_mut((m, 0), (m, m)).copy_from(&dp_dq);
            slice.view_mut((m, m), (m, m)).copy_from(&minv);
            let mut level = DVector::zeros(2 * m);
            level.rows_mut(0, m).copy_from(&dq_dh);
            level.rows_mut(m, m).copy_from(&dp_dh);
            *j = LevelJacobian { slice, level };
        }
        Ok(())
    }

    /// The `n = 2` case of [`Untwist::apply`] in scalar arithmetic.
    fn apply_planar<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        anchor: &Anchor,
        level_star: (f64, f64),
        beta: Jet,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        let (pn_star, rate_star) = level_star;
        let bu = beta.value;
        let q = x.q_bar[0];
        let a = self.angle.eval(wrap_centered(q));
        let target = x.p_bar[0];
        let scale = 1.0 + target.abs();
        let mut big_p = target;
        let mut guess = x.p_n;
        let mut w = [0.0; 2];
        let mut gen = None;
        for _ in 0..50 {
            let b = self.action.eval(big_p - anchor.p_star[0]);
            let p_n = lift_action(sys, x.h, &[big_p], guess, LIFT_TRUST)?;
            guess = p_n;
            let full = [big_p, p_n];
            sys.frequency_into(&full, &mut w);
            let rate = w[1];
            if !(rate > DEFAULT_TRANSVERSALITY) {
                return Err(Error::Transversality { rate, p: full.to_vec() });
            }
            let hess = sys.hessian(&full);
            // ∂r/∂p_j for the shift r = ω_1/ω_2, then along the level
            let dr = |j: usize| (hess[(0, j)] * rate - w[0] * hess[(1, j)]) / (rate * rate);
            let shift = w[0] / rate;
            let s_hh = dr(0) - dr(1) * w[0] / rate;
            let s_gh = dr(1) / rate;
            let s = pn_star - p_n;
            let s_h = 1.0 / rate_star - 1.0 / rate;
            let bs_g = b.d1 * s + shift * b.value;
            let c_q = a.d1 * bu * b.value * s;
            let c_qp = a.d1 * bs_g * bu;
            let residual = big_p - c_q - target;
            if residual.abs() <= 1e-15 * scale {
                gen = Some(PlanarJet {
                    c_p: bs_g * bu * a.value,
                    c_qq: a.d2 * bu * b.value * s,
                    c_qp,
                    c_pp: (b.d2 * s + 2.0 * b.d1 * shift + s_hh * b.value) * bu * a.value,
                    c_qh: a.d1 * b.value * (beta.d1 * s + bu * s_h),
                    c_ph: (bs_g * beta.d1 + (b.d1 * s_h + s_gh * b.value) * bu) * a.value,
                    p_n,
                });
                break;
            }
            let d = 1.0 - c_qp;
            if d == 0.0 {
                return Err(Error::GeneratingSolve("singular untwist Jacobian".into()));
            }
            big_p -= residual / d;
        }
        let g = gen.ok_or_else(|| {
            Error::GeneratingSolve("untwist Newton iteration did not converge; shrink the action support".into())
        })?;
        x.q_bar[0] = wrap_unit(q - g.c_p);
        x.p_bar[0] = big_p;
        x.p_n = g.p_n;
        if let Some(j) = jac {
            let d = 1.0 - g.c_qp;
            if d == 0.0 {
                return Err(Error::GeneratingSolve("singular untwist Jacobian".into()));
            }
            let minv = 1.0 / d;
            let dp_dq = minv * g.c_qq;
            let dp_dh = minv * g.c_qh;
            let slice = DMatrix::from_row_slice(2, 2, &[1.0 - g.c_qp - g.c_pp * dp_dq, -g.c_pp * minv, dp_dq, minv]);
            let level = DVector::from_column_slice(&[-g.c_ph - g.c_pp * dp_dh, dp_dh]);
            *j = LevelJacobian { slice, level };
        }
        Ok(())
    }
}

struct PlanarJet {
    c_p: f64,
    c_qq: f64,
    c_qp: f64,
    c_pp: f64,
    c_qh: f64,
    c_ph: f64,
    p_n: f64,
}

/// Torus action and energy the perturbation is centred on.
#[derive(Debug, Clone, PartialEq)]
struct Anchor {
    p_star: Vec<f64>,
    h0: f64,
}

/// The level-preserving map `Ψ` on the section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPerturbation {
    pub template: DiskTemplate,
    /// `β(h)`, centred at `h₀` with half-width `δ_h`.
    pub envelope: BumpProfile,
    pub p_star: Vec<f64>,
    #[serde(default)]
    pub untwist: Option<Untwist>,
}

/// `β(h)`.
pub fn envelope_eval(envelope: &BumpProfile, h: f64) -> f64 {
    envelope.value(h)
}

impl SectionPerturbation {
    pub fn new(template: DiskTemplate, envelope: BumpProfile, p_star: Vec<f64>) -> Result<Self> {
        template.validate()?;
        if p_star.len() < 2 {
            return Err(Error::Dimension("torus action needs at least two components".into()));
        }
        Ok(SectionPerturbation {
            template,
            envelope,
            p_star,
            untwist: None,
        })
    }

    pub fn with_untwist(mut self, untwist: Untwist) -> Self {
        self.untwist = Some(untwist);
        self
    }

    pub fn identity(p_star: Vec<f64>, h0: f64) -> Self {
        SectionPerturbation {
            template: DiskTemplate {
                support_radius: 0.1,
                twists: Vec::new(),
            },
            envelope: BumpProfile::new(h0, 0.05),
            p_star,
            untwist: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.p_star.len()
    }

    pub fn h0(&self) -> f64 {
        self.envelope.center
    }

    /// `Ψ` is the identity on every level `h` with `|h − h₀|` at least this.
    pub fn level_support_radius(&self) -> f64 {
        let u = self.untwist.map_or(0.0, |u| u.level.support());
        self.envelope.radius.max(u)
    }

    fn anchor(&self) -> Anchor {
        Anchor {
            p_star: self.p_star.clone(),
            h0: self.h0(),
        }
    }

    /// Template coordinates `(wrap_centered(q_1), p_1 − p*_1)` of a slice point.
    pub fn local(&self, x: &SlicePoint) -> [f64; 2] {
        [wrap_centered(x.q_bar[0]), x.p_bar[0] - self.p_star[0]]
    }

    /// True when `Ψ` is exactly the identity near `x`.
    pub fn is_inactive(&self, x: &SlicePoint) -> bool {
        let template_off = self.envelope.value(x.h) == 0.0 || !self.template.in_support(self.local(x));
        let untwist_off = match &self.untwist {
            None => true,
            Some(u) => {
                u.level.eval(x.h - self.h0()).value == 0.0
                    || x.q_bar.iter().any(|&q| u.angle.eval(wrap_centered(q)).value == 0.0)
            }
        };
        template_off && untwist_off
    }

    /// Applies the template factor on the slice of `x`.
    pub fn apply_template<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        let m = x.m();
        let beta = self.envelope.eval(x.h);
        let z = self.local(x);
        if beta.value == 0.0 || !self.template.in_support(z) {
            if let Some(j) = jac {
                *j = LevelJacobian::identity(m);
            }
            return Ok(());
        }
        let t = self.template.jet(z, beta.value);
        x.q_bar[0] = wrap_unit(t.image.x);
        x.p_bar[0] = t.image.y + self.p_star[0];
        x.relift(sys)?;
        if let Some(j) = jac {
            let mut out = LevelJacobian::identity(m);
            out.slice[(0, 0)] = t.jacobian[(0, 0)];
            out.slice[(0, m)] = t.jacobian[(0, 1)];
            out.slice[(m, 0)] = t.jacobian[(1, 0)];
            out.slice[(m, m)] = t.jacobian[(1, 1)];
            out.level[0] = t.d_scale.x * beta.d1;
            out.level[m] = t.d_scale.y * beta.d1;
            *j = out;
        }
        Ok(())
    }

    /// `Ψ` on slice coordinates, optionally with its Jacobian.
    pub fn apply_slice<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        match jac {
            None => {
                self.apply_template(sys, x, None)?;
                if let Some(u) = &self.untwist {
                    u.apply(sys, &self.anchor(), x, None)?;
                }
            }
            Some(jac) => {
                let mut jt = LevelJacobian::identity(x.m());
                self.apply_template(sys, x, Some(&mut jt))?;
                if let Some(u) = &self.untwist {
                    let mut ju = LevelJacobian::identity(x.m());
                    u.apply(sys, &self.anchor(), x, Some(&mut ju))?;
                    jt = jt.then(&ju);
                }
                *jac = jt;
            }
        }
        Ok(())
    }

    pub fn apply<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H, sp: &SectionPoint) -> Result<SectionPoint> {
        self.check_dim(sp)?;
        let mut x = SlicePoint::from_section(sys, sp);
        self.apply_slice(sys, &mut x, None)?;
        Ok(x.to_section())
    }

    /// `R̃ = R ∘ Ψ` on slice coordinates.
    pub fn perturbed_return_slice<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        x: &mut SlicePoint,
        jac: Option<&mut LevelJacobian>,
    ) -> Result<()> {
        match jac {
            None => {
                self.apply_slice(sys, x, None)?;
                slice_return(sys, x, None)
            }
            Some(jac) => {
                let mut jp = LevelJacobian::identity(x.m());
                self.apply_slice(sys, x, Some(&mut jp))?;
                let mut jr = LevelJacobian::identity(x.m());
                slice_return(sys, x, Some(&mut jr))?;
                *jac = jp.then(&jr);
                Ok(())
            }
        }
    }

    pub fn perturbed_return<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H, sp: &SectionPoint) -> Result<SectionPoint> {
        self.check_dim(sp)?;
        let mut x = SlicePoint::from_section(sys, sp);
        self.perturbed_return_slice(sys, &mut x, None)?;
        Ok(x.to_section())
    }

    /// Jacobian of `Ψ` in `(q̄, p)` coordinates.
    pub fn derivative<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H, sp: &SectionPoint) -> Result<DMatrix<f64>> {
        self.check_dim(sp)?;
        let mut x = SlicePoint::from_section(sys, sp);
        let mut j = LevelJacobian::identity(x.m());
        self.apply_slice(sys, &mut x, Some(&mut j))?;
        Ok(j.to_section_jacobian(sys, &sp.p, &x.action()))
    }

    /// Jacobian of `R̃` in `(q̄, p)` coordinates.
    pub fn tangent_return_map<H: IntegrableHamiltonian + ?Sized>(&self, sys: &H, sp: &SectionPoint) -> Result<DMatrix<f64>> {
        self.check_dim(sp)?;
        let mut x = SlicePoint::from_section(sys, sp);
        let mut j = LevelJacobian::identity(x.m());
        self.perturbed_return_slice(sys, &mut x, Some(&mut j))?;
        Ok(j.to_section_jacobian(sys, &sp.p, &x.action()))
    }

    fn check_dim(&self, sp: &SectionPoint) -> Result<()> {
        if sp.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "perturbation built for n = {}, point has n = {}",
                self.dim(),
                sp.dim()
            )));
        }
        Ok(())
    }
}

/// `Ψ` followed by `R`, as a free function.
pub fn perturbed_return<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    psi: &SectionPerturbation,
    sp: &SectionPoint,
) -> Result<SectionPoint> {
    psi.perturbed_return(sys, sp)
}

/// Exact `D(R ∘ Ψ)` in `(q̄, p)` coordinates.
pub fn tangent_return_map<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    psi: &SectionPerturbation,
    sp: &SectionPoint,
) -> Result<DMatrix<f64>> {
    psi.tangent_return_map(sys, sp)
}
