//! Realizing a level-preserving section perturbation as a Hamiltonian flow.
//!
//! Given `Ψ` on the section of a periodic torus, [`realize`] builds a
//! Hamiltonian `H̃` which agrees with `H` outside a small neighbourhood `U` of
//! the torus and whose return map is `R̃ = R ∘ Ψ`.
//!
//! The construction runs in the canonical chart `(Q, P)` in which `H = P_n`
//! and the unperturbed flow is `Q̇_n = 1`. Between two section hits the
//! flat Lagrangian leaves `{P = p̂}` are bent, inside a transition zone in
//! `Q_n`, into the images of the flat leaves under the template map
//! ([`leaves`]). `H̃` is the level label of the leaf through a point, and the
//! per-level Hamiltonians are glued by solving for the level that labels
//! itself ([`hamiltonian`]).

pub mod artifact;
pub mod hamiltonian;
pub mod isotopy;
pub mod leaves;
pub mod potential;
pub mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{IntegrableHamiltonian, LiouvilleTorus, System};
use crate::perturbation::SectionPerturbation;
use crate::profiles::TransitionProfile;
use crate::section::{lift_action, LIFT_TRUST};

pub use artifact::{load_realization, save_realization, ARTIFACT_FORMAT, ARTIFACT_VERSION};
pub use hamiltonian::{glue_levels, GlueSettings, RealizedHamiltonian};
pub use isotopy::{isotopy_family, Isotopy};
pub use leaves::{build_leaf_family, LeafFamily, LeafLabel, LeafPoint};
pub use potential::{image_manifold_potential, LabelStencil, LeafPotential, PotentialGrid, PotentialJet, SampledPotential};
pub use verify::{verify_realization, FidelityReport};

/// Tunable constants of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealizationSettings {
    /// Half-width `ε_U` of the transition zone, in units where the section
    /// hits sit at `s = ±1`.
    pub transition_half_width: f64,
    /// Number of levels across the envelope support on which the closed-form
    /// potential is cross-checked against sampled image manifolds.
    pub levels: usize,
    /// Nodes per sampled label line.
    pub nodes: usize,
    pub glue: GlueSettings,
}

impl Default for RealizationSettings {
    fn default() -> Self {
        RealizationSettings {
            transition_half_width: 0.2,
            levels: 64,
            nodes: 512,
            glue: GlueSettings::default(),
        }
    }
}

impl RealizationSettings {
    pub fn validate(&self) -> Result<()> {
        let e = self.transition_half_width;
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::config(format!("transition half-width must lie in (0, 1), got {e}")));
        }
        if self.levels == 0 || self.nodes < 8 {
            return Err(Error::config("realization needs at least one level and eight nodes per line"));
        }
        if !(self.glue.tol > 0.0) || self.glue.max_iter == 0 {
            return Err(Error::config("glue tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// Largest disagreement between the closed-form potential and potentials
/// rebuilt from sampled image manifolds, over a grid of levels and labels.
pub fn potential_consistency(
    potential: &LeafPotential,
    psi: &SectionPerturbation,
    levels: usize,
    nodes: usize,
) -> Result<f64> {
    let r = potential.support_radius();
    let grid = PotentialGrid { half_width: r, nodes };
    let env = &psi.envelope;
    let labels = [-0.6 * r, -0.2 * r, 0.15 * r, 0.5 * r];
    let mut worst: f64 = 0.0;
    for k in 0..levels {
        let h = env.center - env.radius + 2.0 * env.radius * (k as f64 + 0.5) / levels as f64;
        let beta = env.value(h);
        let template = &potential.template;
        let map = |z: [f64; 2]| {
            let j = template.jet(z, beta);
            ([j.image.x, j.image.y], j.jacobian)
        };
        for &b in &labels {
            let sp = image_manifold_potential(&map, b, &grid)
                .map_err(|e| e.context(format!("image manifold at h = {h}, label {b}")))?;
            for (qi, wi) in sp.q_img.iter().zip(&sp.w) {
                worst = worst.max((potential.value(*qi, b, beta)? - wi).abs());
            }
        }
    }
    Ok(worst)
}

/// Builds `H̃` for `Ψ` around the periodic torus `torus` of `sys`.
pub fn realize(
    sys: &System,
    torus: &LiouvilleTorus,
    psi: &SectionPerturbation,
    settings: &RealizationSettings,
) -> Result<RealizedHamiltonian> {
    settings.validate()?;
    sys.validate()?;
    if psi.untwist.is_some() {
        return Err(Error::Unsupported(
            "realization handles template perturbations; remove the untwist factor".into(),
        ));
    }
    if torus.p_star != psi.p_star {
        return Err(Error::config("perturbation and torus use different actions p*"));
    }
    let period = torus
        .period
        .ok_or_else(|| Error::config("realization needs a periodic torus (ω parallel to the q_n axis)"))?;
    let potential = LeafPotential::new(psi.template.clone());
    for beta in [0.25, 0.5, 0.75, 1.0] {
        potential
            .check_graph(beta, 32, settings.nodes)
            .map_err(|e| e.context("template image lines"))?;
    }
    let defect = potential_consistency(&potential, psi, settings.levels, settings.nodes)?;
    if defect > 1e-8 {
        return Err(Error::NotClosed { defect }.context("closed-form potential against sampled image manifolds"));
    }
    let family = build_leaf_family(potential, TransitionProfile::new(settings.transition_half_width), period);
    let ham = RealizedHamiltonian {
        system: sys.clone(),
        p_star: psi.p_star.clone(),
        family,
        envelope: psi.envelope,
        glue: settings.glue,
    };
    check_return_times(&ham, sys, psi)?;
    Ok(ham)
}

/// The transition must finish before orbits through the active region return.
fn check_return_times(ham: &RealizedHamiltonian, sys: &System, psi: &SectionPerturbation) -> Result<()> {
    let n = psi.dim();
    let r = psi.template.support_radius;
    let env = &psi.envelope;
    for i in 0..=8 {
        let h = env.center - env.radius + 2.0 * env.radius * i as f64 / 8.0;
        for j in 0..=8 {
            let mut p_bar = psi.p_star[..n - 1].to_vec();
            p_bar[0] += -r + 2.0 * r * j as f64 / 8.0;
            let pn = lift_action(sys, h, &p_bar, psi.p_star[n - 1], LIFT_TRUST)
                .map_err(|e| e.context("lifting the active region"))?;
            p_bar.push(pn);
            let rate = sys.crossing_rate(&p_bar);
            if ham.family.s(1.0 / rate) < ham.family.transition.half_width {
                return Err(Error::Unsupported(format!(
                    "return time 1/{rate:.6} at h = {h} leaves the transition incomplete; shrink the envelope or the support"
                )));
            }
        }
    }
    Ok(())
}
