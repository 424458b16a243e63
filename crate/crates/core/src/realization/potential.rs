//! Generating potentials of image manifolds.
//!
//! The template maps the horizontal line `{p = b}` of the `(q, p)` plane onto
//! a curve which, in the near-identity regime, is a graph `p = b + W'(Q)`
//! over the image angle `Q`. With `q(Q)` the preimage of `Q` on the line and
//! `S` the template action,
//!
//! ```text
//! W(Q; b, β) = S(q, b; β) − b·(Q − q)
//! ```
//!
//! is the compactly supported primitive, and `∂W/∂b = q − Q` recovers the
//! angle shift. [`LeafPotential`] evaluates it in closed form;
//! [`image_manifold_potential`] reconstructs it from samples of the map alone.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::{DiskTemplate, TwistJet};

/// `W` and the derivatives the leaf solves need, at one `(Q, b, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PotentialJet {
    pub w: f64,
    pub w_q: f64,
    pub w_b: f64,
    pub w_beta: f64,
    pub w_qq: f64,
    pub w_qb: f64,
    pub w_qbeta: f64,
    pub w_bb: f64,
}

/// Closed-form leaf potential of a disk template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPotential {
    pub template: DiskTemplate,
}

impl LeafPotential {
    pub fn new(template: DiskTemplate) -> Self {
        LeafPotential { template }
    }

    pub fn support_radius(&self) -> f64 {
        self.template.support_radius
    }

    /// True where `W` and all its derivatives vanish.
    pub fn is_flat(&self, q_img: f64, b: f64, beta: f64) -> bool {
        beta == 0.0 || self.template.twists.is_empty() || !self.template.in_support([q_img, b])
    }

    /// Solves `X(q, b; β) = q_img` for `q`.
    pub fn preimage(&self, q_img: f64, b: f64, beta: f64) -> Result<(f64, TwistJet)> {
        let r = self.template.support_radius;
        let (mut lo, mut hi) = (-r, r);
        let mut q = q_img;
        for _ in 0..100 {
            let jet = self.template.jet([q, b], beta);
            let x_q = jet.jacobian[(0, 0)];
            if !(x_q > 0.0) {
                return Err(Error::AmplitudeTooLarge { at: q });
            }
            let res = jet.image.x - q_img;
            if res.abs() <= 4.0 * f64::EPSILON * r {
                return Ok((q, jet));
            }
            if res < 0.0 {
                lo = q;
            } else {
                hi = q;
            }
            let next = q - res / x_q;
            q = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * r {
                return Ok((q, self.template.jet([q, b], beta)));
            }
        }
        Err(Error::AmplitudeTooLarge { at: q })
    }

    pub fn value(&self, q_img: f64, b: f64, beta: f64) -> Result<f64> {
        Ok(self.jet(q_img, b, beta)?.w)
    }

    pub fn jet(&self, q_img: f64, b: f64, beta: f64) -> Result<PotentialJet> {
        if self.is_flat(q_img, b, beta) {
            return Ok(PotentialJet::default());
        }
        let (q, t) = self.preimage(q_img, b, beta)?;
        let j = &t.jacobian;
        let (x_q, x_p, y_q, y_p) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
        let (x_b, y_b) = (t.d_scale.x, t.d_scale.y);
        let y = t.image.y;
        Ok(PotentialJet {
            w: t.action - b * (q_img - q),
            w_q: y - b,
            w_b: q - q_img,
            w_beta: t.d_scale_action - y * x_b,
            w_qq: y_q / x_q,
            w_qb: y_p - 1.0 - y_q * x_p / x_q,
            w_qbeta: y_b - y_q * x_b / x_q,
            w_bb: -x_p / x_q,
        })
    }

    /// Checks that every horizontal line through the support disk stays a graph.
    pub fn check_graph(&self, beta: f64, lines: usize, nodes: usize) -> Result<()> {
        let r = self.template.support_radius;
        for i in 0..lines {
            let b = -r + 2.0 * r * (i as f64 + 0.5) / lines as f64;
            for k in 0..=nodes {
                let q = -r + 2.0 * r * k as f64 / nodes as f64;
                let x_q = self.template.jet([q, b], beta).jacobian[(0, 0)];
                if !(x_q > 0.0) {
                    return Err(Error::AmplitudeTooLarge { at: q });
                }
            }
        }
        Ok(())
    }
}

/// A planar level map with its Jacobian, in template coordinates.
pub trait PlaneMap {
    fn apply(&self, z: [f64; 2]) -> ([f64; 2], Matrix2<f64>);
}

impl<F: Fn([f64; 2]) -> ([f64; 2], Matrix2<f64>)> PlaneMap for F {
    fn apply(&self, z: [f64; 2]) -> ([f64; 2], Matrix2<f64>) {
        self(z)
    }
}

/// Sampling of one label line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialGrid {
    /// Lines are sampled on `q ∈ [−half_width, half_width]`.
    pub half_width: f64,
    pub nodes: usize,
}

/// `W(·; b)` reconstructed from samples of the image of `{p = b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPotential {
    pub label: f64,
    /// Image angles `Q_i`, strictly increasing.
    pub q_img: Vec<f64>,
    /// Preimage angles `q_i`.
    pub q_pre: Vec<f64>,
    pub w: Vec<f64>,
    /// `W'(Q_i) = P_i − b`.
    pub slope: Vec<f64>,
    /// `W''(Q_i)`.
    pub curvature: Vec<f64>,
    /// `∂q/∂Q` at the nodes.
    pub pre_slope: Vec<f64>,
    /// `|W|` at the right end of the line, where it must vanish again.
    pub closure_defect: f64,
    /// Largest `|∂_b(W') − ∂_Q(q − Q)|` along the line.
    pub curl_defect: f64,
}

struct Line {
    q_img: Vec<f64>,
    q_pre: Vec<f64>,
    slope: Vec<f64>,
    curvature: Vec<f64>,
    pre_slope: Vec<f64>,
}

fn sample_line<M: PlaneMap + ?Sized>(map: &M, b: f64, grid: &PotentialGrid) -> Result<Line> {
    let n = grid.nodes.max(2);
    let mut line = Line {
        q_img: Vec::with_capacity(n + 1),
        q_pre: Vec::with_capacity(n + 1),
        slope: Vec::with_capacity(n + 1),
        curvature: Vec::with_capacity(n + 1),
        pre_slope: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let q = -grid.half_width + 2.0 * grid.half_width * k as f64 / n as f64;
        let (z, j) = map.apply([q, b]);
        let x_q = j[(0, 0)];
        if !(x_q > 0.0) || line.q_img.last().is_some_and(|&prev| z[0] <= prev) {
            return Err(Error::AmplitudeTooLarge { at: q });
        }
        line.q_img.push(z[0]);
        line.q_pre.push(q);
        line.slope.push(z[1] - b);
        line.curvature.push(j[(1, 0)] / x_q);
        line.pre_slope.push(1.0 / x_q);
    }
    Ok(line)
}

/// Quintic Hermite interpolation of `(f, f', f'')`, value and derivative.
#[allow(clippy::too_many_arguments)]
fn hermite5(x0: f64, x1: f64, f: [f64; 2], d: [f64; 2], dd: [f64; 2], x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let basis = [
        1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
        t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
        0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
        0.5 * (t3 - 2.0 * t4 + t5),
        -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
        10.0 * t3 - 15.0 * t4 + 6.0 * t5,
    ];
    let dbasis = [
        -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
        1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
        0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
        0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
        -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
        30.0 * t2 - 60.0 * t3 + 30.0 * t4,
    ];
    let c = [f[0], h * d[0], h * h * dd[0], h * h * dd[1], h * d[1], f[1]];
    let v = basis.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>();
    let dv = dbasis.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>() / h;
    (v, dv)
}

fn locate(xs: &[f64], x: f64) -> usize {
    match xs.partition_point(|&v| v <= x) {
        0 => 0,
        k if k >= xs.len() => xs.len() - 2,
        k => k - 1,
    }
}

/// Builds `W(·; b)` for the label `b` of the level map `map`.
///
/// The image of the line is sampled, checked to be a graph, and its slope
/// field integrated from the left end where `W = 0`. Two neighbouring label
/// lines at `b ± δ` are sampled as well to test that the 1-form
/// `W' dQ + (q − Q) db` is closed.
pub fn image_manifold_potential<M: PlaneMap + ?Sized>(map: &M, b: f64, grid: &PotentialGrid) -> Result<SampledPotential> {
    let line = sample_line(map, b, grid)?;
    let n = line.q_img.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = line.q_img[i] - line.q_img[i - 1];
        // Hermite-corrected trapezoid rule
        w[i] = w[i - 1]
            + 0.5 * h * (line.slope[i - 1] + line.slope[i])
            + h * h * (line.curvature[i - 1] - line.curvature[i]) / 12.0;
    }
    let closure_defect = w[n - 1].abs();

    // The form W' dQ + (q − Q) db is closed exactly when the map preserves
    // area; its curl in (Q, b) is (det J − 1)/X_q, with the label derivatives
    // taken across neighbouring lines at equal preimage angle.
    let delta = 1e-6 * grid.half_width.max(1e-300);
    let up = sample_line(map, b + delta, grid)?;
    let down = sample_line(map, b - delta, grid)?;
    let mut curl_defect: f64 = 0.0;
    for k in 0..n {
        let x_q = 1.0 / line.pre_slope[k];
        let y_q = line.curvature[k] * x_q;
        let x_b = (up.q_img[k] - down.q_img[k]) / (2.0 * delta);
        let y_b = 1.0 + (up.slope[k] - down.slope[k]) / (2.0 * delta);
        curl_defect = curl_defect.max((x_q * y_b - x_b * y_q - 1.0).abs() / x_q);
    }
    if curl_defect > 1e-6 {
        return Err(Error::NotClosed { defect: curl_defect });
    }
    Ok(SampledPotential {
        label: b,
        q_img: line.q_img,
        q_pre: line.q_pre,
        w,
        slope: line.slope,
        curvature: line.curvature,
        pre_slope: line.pre_slope,
        closure_defect,
        curl_defect,
    })
}

impl SampledPotential {
    /// `(W, W')` at an image angle; zero outside the sampled range.
    pub fn eval(&self, q: f64) -> (f64, f64) {
        let n = self.q_img.len();
        if q <= self.q_img[0] || q >= self.q_img[n - 1] {
            return (0.0, 0.0);
        }
        let i = locate(&self.q_img, q);
        hermite5(
            self.q_img[i],
            self.q_img[i + 1],
            [self.w[i], self.w[i + 1]],
            [self.slope[i], self.slope[i + 1]],
            [self.curvature[i], self.curvature[i + 1]],
            q,
        )
    }
}

/// Potentials sampled on equally spaced labels `b_0 + k·δ`, `k = −2..=2`,
/// for recovering `∂W/∂b` by five-point differences.
#[derive(Debug, Clone)]
pub struct LabelStencil {
    pub center: f64,
    pub delta: f64,
    pub lines: [SampledPotential; 5],
}

impl LabelStencil {
    pub fn build<M: PlaneMap + ?Sized>(map: &M, b: f64, delta: f64, grid: &PotentialGrid) -> Result<Self> {
        let mk = |k: f64| image_manifold_potential(map, b + k * delta, grid);
        Ok(LabelStencil {
            center: b,
            delta,
            lines: [mk(-2.0)?, mk(-1.0)?, mk(0.0)?, mk(1.0)?, mk(2.0)?],
        })
    }

    /// `(∂W/∂b, ∂²W/∂b∂Q)` at an image angle.
    pub fn d_label(&self, q: f64) -> (f64, f64) {
        let e: Vec<(f64, f64)> = self.lines.iter().map(|l| l.eval(q)).collect();
        let five = |f: &dyn Fn(usize) -> f64| (f(0) - 8.0 * f(1) + 8.0 * f(3) - f(4)) / (12.0 * self.delta);
        (five(&|i| e[i].0), five(&|i| e[i].1))
    }

    /// Recovers the level map at `(q, b)` from the partition into label lines:
    /// `Q` solves `Q + ∂W/∂b(Q) = q` and the image momentum is `b + W'(Q)`.
    pub fn reconstruct(&self, q: f64) -> Result<[f64; 2]> {
        let mut x = q;
        for _ in 0..100 {
            let (w_b, w_bq) = self.d_label(x);
            let res = x + w_b - q;
            if res.abs() < 1e-14 {
                break;
            }
            let d = 1.0 + w_bq;
            if !(d > 0.0) {
                return Err(Error::AmplitudeTooLarge { at: x });
            }
            x -= res / d;
        }
        let (_, slope) = self.lines[2].eval(x);
        Ok([x, self.center + slope])
    }
}

/// Rebuilds the template at envelope value `beta` from its label partition
/// alone and returns the largest deviation from the direct map over an
/// `n × n` grid of the support box.
///
/// For each grid label `b` the image lines of `b + kδ`, `k = −2..=2`, are
/// sampled, their potentials fitted, and the point `(q, b)` is recovered as
/// the intersection of its leaf with the line of its label.
pub fn reconstruct_from_partition(
    template: &DiskTemplate,
    beta: f64,
    n: usize,
    grid: &PotentialGrid,
    delta: f64,
) -> Result<f64> {
    let r = template.support_radius;
    let map = |z: [f64; 2]| {
        let j = template.jet(z, beta);
        ([j.image.x, j.image.y], j.jacobian)
    };
    let axis: Vec<f64> = (0..n).map(|i| -r + 2.0 * r * (i as f64 + 0.5) / n as f64).collect();
    let mut worst: f64 = 0.0;
    for &b in &axis {
        let st = LabelStencil::build(&map, b, delta, grid)?;
        for &q in &axis {
            let got = st.reconstruct(q)?;
            let want = template.apply([q, b], beta);
            worst = worst.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::RadialTwist;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(k: f64) -> LeafPotential {
        LeafPotential::new(DiskTemplate::linked_pair(0.1, k).unwrap())
    }

    #[test]
    fn potential_jet_matches_differences() {
        let lp = pair(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = 1e-6;
        for _ in 0..100 {
            let (q, b, beta) = (rng.random_range(-0.09..0.09), rng.random_range(-0.09..0.09), rng.random_range(0.1..1.0));
            let j = lp.jet(q, b, beta).unwrap();
            let d = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + e) - f(x - e)) / (2.0 * e);
            let jq = |x: f64| lp.jet(x, b, beta).unwrap();
            let jb = |x: f64| lp.jet(q, x, beta).unwrap();
            let jbeta = |x: f64| lp.jet(q, b, x).unwrap();
            let checks = [
                (d(&|x| jq(x).w, q), j.w_q),
                (d(&|x| jb(x).w, b), j.w_b),
                (d(&|x| jbeta(x).w, beta), j.w_beta),
                (d(&|x| jq(x).w_q, q), j.w_qq),
                (d(&|x| jb(x).w_q, b), j.w_qb),
                (d(&|x| jbeta(x).w_q, beta), j.w_qbeta),
                (d(&|x| jb(x).w_b, b), j.w_bb),
            ];
            for (k, (fd, an)) in checks.iter().enumerate() {
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "check {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn potential_vanishes_outside_the_disk() {
        let lp = pair(0.4);
        assert_eq!(lp.jet(0.0, 0.1, 1.0).unwrap(), PotentialJet::default());
        assert_eq!(lp.jet(0.05, 0.02, 0.0).unwrap(), PotentialJet::default());
        // the chord integral closes: W → 0 at the right end of each line
        let w = lp.value(0.0999, 0.001, 1.0).unwrap();
        assert!(w.abs() < 1e-15);
    }

    #[test]
    fn fold_is_reported() {
        let lp = LeafPotential::new(DiskTemplate::new(0.1, vec![RadialTwist::new([0.0, 0.0], 0.1, 40.0).unwrap()]).unwrap());
        assert!(matches!(lp.check_graph(1.0, 32, 256), Err(Error::AmplitudeTooLarge { .. })));
        assert!(pair(0.1).check_graph(1.0, 32, 256).is_ok());
    }

    fn template_map(t: DiskTemplate) -> impl Fn([f64; 2]) -> ([f64; 2], Matrix2<f64>) {
        move |z| {
            let j = t.jet(z, 1.0);
            ([j.image.x, j.image.y], j.jacobian)
        }
    }

    #[test]
    fn identity_map_gives_zero_potential() {
        let id = |z: [f64; 2]| (z, Matrix2::identity());
        let grid = PotentialGrid { half_width: 0.1, nodes: 64 };
        let sp = image_manifold_potential(&id, 0.02, &grid).unwrap();
        assert!(sp.w.iter().all(|&w| w == 0.0));
        assert_eq!(sp.curl_defect, 0.0);
    }

    #[test]
    fn sampled_potential_reproduces_image_manifold() {
        let tw = RadialTwist::new([0.0, 0.0], 0.1, 0.1).unwrap();
        let t = DiskTemplate::new(0.1, vec![tw]).unwrap();
        let lp = LeafPotential::new(t.clone());
        let grid = PotentialGrid { half_width: 0.1, nodes: 1024 };
        let map = template_map(t.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &b in &[-0.06, -0.01, 0.0, 0.03, 0.07] {
            let sp = image_manifold_potential(&map, b, &grid).unwrap();
            assert!(sp.curl_defect < 1e-8, "{}", sp.curl_defect);
            assert!(sp.closure_defect < 1e-12);
            for _ in 0..200 {
                let q = rng.random_range(-0.1..0.1);
                let img = t.apply([q, b], 1.0);
                let (w, slope) = sp.eval(img[0]);
                assert!((b + slope - img[1]).abs() < 1e-8);
                assert!((w - lp.value(img[0], b, 1.0).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn label_stencil_reconstructs_the_map() {
        let t = DiskTemplate::linked_pair(0.1, 0.1).unwrap();
        let map = template_map(t.clone());
        let grid = PotentialGrid { half_width: 0.1, nodes: 1024 };
        let st = LabelStencil::build(&map, 0.031, 3e-4, &grid).unwrap();
        for k in 0..20 {
            let q = -0.095 + 0.01 * k as f64;
            let got = st.reconstruct(q).unwrap();
            let want = t.apply([q, 0.031], 1.0);
            assert!((got[0] - want[0]).abs() < 1e-8 && (got[1] - want[1]).abs() < 1e-8);
        }
    }
}
