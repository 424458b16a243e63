//! Smooth cutoff functions.
//!
//! Everything compactly supported in this crate is built from one primitive,
//! the smooth step
//!
//! ```text
//! S(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}),   0 < t < 1
//! ```
//!
//! which is 0 for `t <= 0`, 1 for `t >= 1` and flat to all orders at both
//! ends. Bumps, transitions and plateaus are affine reparametrizations of it
//! (or, for [`BumpProfile`], of the classic `exp(1 - 1/(1 - u^2))` bump).

use serde::{Deserialize, Serialize};

/// Value and first two derivatives of a scalar profile.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet { value: 0.0, d1: 0.0, d2: 0.0 };
    pub const ONE: Jet = Jet { value: 1.0, d1: 0.0, d2: 0.0 };

    /// Jet of `self(a * t + b)` with respect to `t`.
    pub fn rescaled(self, a: f64) -> Jet {
        Jet {
            value: self.value,
            d1: self.d1 * a,
            d2: self.d2 * a * a,
        }
    }
}

/// The standard smooth step on `[0, 1]` with derivatives.
pub fn smooth_step(t: f64) -> Jet {
    if t <= 0.0 {
        return Jet::ZERO;
    }
    if t >= 1.0 {
        return Jet::ONE;
    }
    let s = 1.0 - t;
    // S = 1 / (1 + e^f), f = 1/t - 1/(1-t)
    let f = 1.0 / t - 1.0 / s;
    if f > 700.0 {
        return Jet::ZERO;
    }
    if f < -700.0 {
        return Jet::ONE;
    }
    let df = -1.0 / (t * t) - 1.0 / (s * s);
    let d2f = 2.0 / (t * t * t) - 2.0 / (s * s * s);
    let value = 1.0 / (1.0 + f.exp());
    let m = value * (1.0 - value);
    let d1 = -df * m;
    let d2 = -d2f * m - df * d1 * (1.0 - 2.0 * value);
    Jet { value, d1, d2 }
}

/// Smooth step climbing from 0 at `-half_width` to 1 at `+half_width`.
///
/// This is the leaf transition profile: leaves are flat for `s <= -eps`
/// and carry the full image potential for `s >= eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionProfile {
    pub half_width: f64,
}

impl TransitionProfile {
    pub fn new(half_width: f64) -> Self {
        assert!(half_width > 0.0, "transition half-width must be positive");
        TransitionProfile { half_width }
    }

    pub fn eval(&self, s: f64) -> Jet {
        let w = 2.0 * self.half_width;
        smooth_step((s + self.half_width) / w).rescaled(1.0 / w)
    }

    /// True when `s` lies where both the profile and its slope are constant.
    pub fn is_flat(&self, s: f64) -> bool {
        s.abs() >= self.half_width
    }
}

/// Compactly supported bump `exp(1 - 1/(1 - v^2))` with `v = (s - center)/radius`.
///
/// Equal to 1 at the center, identically 0 for `|s - center| >= radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub center: f64,
    pub radius: f64,
}

impl BumpProfile {
    pub fn new(center: f64, radius: f64) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        BumpProfile { center, radius }
    }

    pub fn eval(&self, s: f64) -> Jet {
        let v = (s - self.center) / self.radius;
        if v == 0.0 {
            return Jet {
                value: 1.0,
                d1: 0.0,
                d2: -2.0 / (self.radius * self.radius),
            };
        }
        let w = 1.0 - v * v;
        if w <= 0.0 {
            return Jet::ZERO;
        }
        let value = (1.0 - 1.0 / w).exp();
        if value == 0.0 {
            return Jet::ZERO;
        }
        // d/dv of the exponent: -2v / w^2
        let e1 = -2.0 * v / (w * w);
        let e2 = -2.0 / (w * w) - 8.0 * v * v / (w * w * w);
        Jet {
            value,
            d1: value * e1,
            d2: value * (e2 + e1 * e1),
        }
        .rescaled(1.0 / self.radius)
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s).value
    }

    pub fn contains(&self, s: f64) -> bool {
        (s - self.center).abs() < self.radius
    }
}

/// Even cutoff: 1 on `|s| <= plateau`, smoothly down to 0 at `|s| >= plateau + ramp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauCutoff {
    pub plateau: f64,
    pub ramp: f64,
}

impl PlateauCutoff {
    pub fn new(plateau: f64, ramp: f64) -> Self {
        assert!(plateau >= 0.0 && ramp > 0.0);
        PlateauCutoff { plateau, ramp }
    }

    pub fn eval(&self, s: f64) -> Jet {
        let a = s.abs();
        if a <= self.plateau {
            return Jet::ONE;
        }
        if a >= self.plateau + self.ramp {
            return Jet::ZERO;
        }
        let j = smooth_step((a - self.plateau) / self.ramp).rescaled(1.0 / self.ramp);
        let sign = s.signum();
        Jet {
            value: 1.0 - j.value,
            d1: -j.d1 * sign,
            d2: -j.d2,
        }
    }

    pub fn support(&self) -> f64 {
        self.plateau + self.ramp
    }
}

/// Isotopy time profile: 1 on `[0, 1/3]`, 0 on `[2/3, 1]`.
pub fn isotopy_weight(t: f64) -> f64 {
    1.0 - smooth_step(3.0 * t - 1.0).value
}

/// Annular twist profile on `u in [0, 1]`: peak 1 at `u = 1/2`, flat zero at both ends.
///
/// It is the normalized derivative of the smooth step, so its tail integral
/// `∫_u^1 g` is available in closed form through [`annulus_tail`].
pub fn annulus(u: f64) -> Jet {
    let j = smooth_step(u);
    // S'(1/2) = 2
    Jet {
        value: 0.5 * j.d1,
        d1: 0.5 * j.d2,
        d2: 0.0,
    }
}

/// `∫_u^1 annulus(x) dx`.
pub fn annulus_tail(u: f64) -> f64 {
    0.5 * (1.0 - smooth_step(u).value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn smooth_step_endpoints_and_symmetry() {
        assert_eq!(smooth_step(0.0).value, 0.0);
        assert_eq!(smooth_step(1.0).value, 1.0);
        assert!((smooth_step(0.5).value - 0.5).abs() < 1e-15);
        assert!((smooth_step(0.5).d1 - 2.0).abs() < 1e-14);
        for &t in &[0.1, 0.27, 0.4] {
            let a = smooth_step(t);
            let b = smooth_step(1.0 - t);
            assert!((a.value + b.value - 1.0).abs() < 1e-15);
            assert!((a.d1 - b.d1).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_step_derivatives_match_finite_differences() {
        for i in 1..40 {
            let t = i as f64 / 40.0;
            let j = smooth_step(t);
            assert!((j.d1 - fd(|x| smooth_step(x).value, t, 1e-6)).abs() < 1e-7);
            assert!((j.d2 - fd(|x| smooth_step(x).d1, t, 1e-6)).abs() < 1e-5);
        }
    }

    #[test]
    fn transition_is_flat_outside_zone() {
        let tp = TransitionProfile::new(0.2);
        let out = tp.eval(-0.2 - 1e-9);
        assert_eq!((out.value, out.d1, out.d2), (0.0, 0.0, 0.0));
        let out = tp.eval(0.2 + 1e-9);
        assert_eq!((out.value, out.d1, out.d2), (1.0, 0.0, 0.0));
        for i in 0..=100 {
            let s = -0.25 + 0.5 * i as f64 / 100.0;
            assert!(tp.eval(s).d1 >= 0.0);
        }
    }

    #[test]
    fn bump_center_edge_and_half_point() {
        let b = BumpProfile::new(0.5, 0.05);
        assert_eq!(b.value(0.5), 1.0);
        assert_eq!(b.value(0.55), 0.0);
        assert_eq!(b.value(0.45 - 1e-9), 0.0);
        // exp(1 - 1/(1 - 0.25))
        let expected = (1.0f64 - 1.0 / 0.75).exp();
        assert!((b.value(0.525) - expected).abs() < 1e-15);
        let j = b.eval(0.53);
        assert!((j.d1 - fd(|x| b.value(x), 0.53, 1e-7)).abs() < 1e-6);
        assert!((j.d2 - fd(|x| b.eval(x).d1, 0.53, 1e-7)).abs() < 1e-3);
    }

    #[test]
    fn annulus_tail_is_antiderivative() {
        for i in 1..50 {
            let u = i as f64 / 50.0;
            let d = fd(annulus_tail, u, 1e-6);
            assert!((d + annulus(u).value).abs() < 1e-8, "u = {u}");
        }
        assert!((annulus(0.5).value - 1.0).abs() < 1e-14);
        assert_eq!(annulus_tail(1.0), 0.0);
        assert_eq!(annulus_tail(0.0), 0.5);
    }

    #[test]
    fn isotopy_weight_plateaus() {
        for &t in &[0.0, 0.1, 0.2, 1.0 / 3.0] {
            assert_eq!(isotopy_weight(t), 1.0);
        }
        for &t in &[2.0 / 3.0, 0.8, 1.0] {
            assert_eq!(isotopy_weight(t), 0.0);
        }
    }

    #[test]
    fn plateau_cutoff_shape() {
        let c = PlateauCutoff::new(0.1, 0.2);
        assert_eq!(c.eval(0.05).value, 1.0);
        assert_eq!(c.eval(-0.1).value, 1.0);
        assert_eq!(c.eval(0.3).value, 0.0);
        let j = c.eval(-0.17);
        assert!((j.d1 - fd(|x| c.eval(x).value, -0.17, 1e-7)).abs() < 1e-6);
    }
}
