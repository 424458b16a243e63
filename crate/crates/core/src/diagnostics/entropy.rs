//! Chaotic fraction and entropy proxies over a sampled region of the section.
//!
//! Each sample gets a finite-time spectrum on its level slice. A sample is
//! chaotic when `λ₁` exceeds the threshold. Per slice,
//!
//! ```text
//! map proxy  = chaotic fraction × mean positive-exponent sum over chaotic samples
//! flow proxy = map proxy / mean return time
//! ```
//!
//! Slices are Gauss-Legendre nodes across the level window. Slice values are
//! combined with the quadrature weights, and the flow proxy of the aggregate
//! is again the aggregate map proxy over the aggregate return time.

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrable::{wrap_unit, IntegrableHamiltonian};
use crate::perturbation::SectionPerturbation;
use crate::rng::stream;
use crate::section::{return_time, slice_lift};
use crate::slice::SlicePoint;

use super::lyapunov::{lyapunov_spectrum, SliceReturn};

const BOOTSTRAP_STREAM: u64 = 1 << 40;

/// Where initial conditions are drawn.
///
/// Local coordinates `(wrap_centered(q_1) , p_1 − p*_1)` are uniform in the
/// disk of `radius`; remaining angles are 0 and remaining actions sit at the
/// torus. Levels are `slices` Gauss-Legendre nodes of `center ± half_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRegion {
    pub radius: f64,
    pub level_center: f64,
    pub level_half_width: f64,
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySettings {
    /// Samples per slice. Every slice reuses the same local initial conditions.
    pub samples: usize,
    pub iterations: usize,
    pub threshold: f64,
    /// Thresholds for the sensitivity table.
    pub thresholds: Vec<f64>,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for EntropySettings {
    fn default() -> Self {
        EntropySettings {
            samples: 1000,
            iterations: 10_000,
            threshold: 0.05,
            thresholds: vec![0.01, 0.05, 0.1],
            bootstrap: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub slice: usize,
    pub index: usize,
    pub level: f64,
    pub q1: f64,
    pub p1: f64,
    pub lambda1: f64,
    pub positive_sum: f64,
    pub return_time: f64,
    pub iterations: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub level: f64,
    pub weight: f64,
    pub chaotic_fraction: f64,
    pub map_proxy: f64,
    pub mean_return_time: f64,
    pub flow_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub chaotic_fraction: f64,
    pub map_proxy: f64,
    pub flow_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub region: EntropyRegion,
    pub samples: usize,
    pub iterations: usize,
    pub threshold: f64,
    pub seed: u64,
    pub chaotic_fraction: f64,
    /// Mean positive-exponent sum over the chaotic samples.
    pub mean_positive_sum: f64,
    pub map_proxy: f64,
    /// Mean of `max(λ₁, 0)` over all samples, without thresholding.
    pub mean_positive_part: f64,
    pub mean_return_time: f64,
    pub flow_proxy: f64,
    /// Bootstrap 95% percentile interval for the chaotic fraction.
    pub fraction_interval: [f64; 2],
    pub bootstrap: usize,
    pub truncated: usize,
    pub thresholds: Vec<ThresholdRow>,
    pub slices: Vec<SliceSummary>,
    #[serde(skip)]
    pub rows: Vec<SampleRow>,
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

impl EntropyRegion {
    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.level_half_width >= 0.0) || self.slices == 0 {
            return Err(Error::config(
                "entropy region needs radius > 0, level half-width >= 0 and at least one slice",
            ));
        }
        Ok(())
    }

    /// Slice levels and normalized weights.
    pub fn levels(&self) -> Vec<(f64, f64)> {
        let (x, w) = gauss_legendre(self.slices);
        x.iter()
            .zip(&w)
            .map(|(xi, wi)| (self.level_center + self.level_half_width * xi, wi / 2.0))
            .collect()
    }
}

/// Local initial condition `j`, uniform in the disk of `radius`.
pub fn disk_sample(seed: u64, j: usize, radius: f64) -> ([f64; 2], u64) {
    let mut rng = stream(seed, j as u64);
    loop {
        let z = [rng.random_range(-radius..radius), rng.random_range(-radius..radius)];
        if z[0] * z[0] + z[1] * z[1] < radius * radius {
            return (z, rng.random());
        }
    }
}

/// Slice point with local coordinates `z` on level `h`.
pub fn region_point<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    p_star: &[f64],
    h: f64,
    z: [f64; 2],
) -> Result<SlicePoint> {
    let m = p_star.len() - 1;
    let mut q_bar = vec![0.0; m];
    let mut p_bar = p_star[..m].to_vec();
    q_bar[0] = wrap_unit(z[0]);
    p_bar[0] += z[1];
    let sp = slice_lift(sys, h, &q_bar, &p_bar, p_star[m])?;
    Ok(SlicePoint {
        h,
        q_bar: sp.q_bar,
        p_bar,
        p_n: sp.p[m],
    })
}

struct Accounting {
    fraction: f64,
    map: f64,
}

fn account(rows: &[&SampleRow], threshold: f64) -> Accounting {
    let n = rows.len() as f64;
    let chaotic: Vec<f64> = rows
        .iter()
        .filter(|r| r.lambda1 > threshold)
        .map(|r| r.positive_sum)
        .collect();
    let fraction = chaotic.len() as f64 / n;
    let mean_sum = if chaotic.is_empty() {
        0.0
    } else {
        chaotic.iter().sum::<f64>() / chaotic.len() as f64
    };
    Accounting {
        fraction,
        map: fraction * mean_sum,
    }
}

/// Samples finite-time spectra of `R̃` over `region` and reduces them to entropy proxies.
pub fn entropy_estimate<S: IntegrableHamiltonian + ?Sized>(
    sys: &S,
    psi: &SectionPerturbation,
    region: &EntropyRegion,
    settings: &EntropySettings,
) -> Result<EntropyEstimate> {
    region.validate()?;
    if settings.samples == 0 || settings.iterations == 0 {
        return Err(Error::config("entropy estimate needs samples and iterations"));
    }
    if !(settings.threshold >= 0.0) {
        return Err(Error::config("chaotic threshold must be non-negative"));
    }
    let levels = region.levels();
    let local: Vec<([f64; 2], u64)> = (0..settings.samples)
        .map(|j| disk_sample(settings.seed, j, region.radius))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|k| (0..settings.samples).map(move |j| (k, j)))
        .collect();
    let map = SliceReturn { sys, psi: Some(psi) };
    let rows: Vec<SampleRow> = jobs
        .par_iter()
        .map(|&(k, j)| -> Result<SampleRow> {
            let h = levels[k].0;
            let (z, frame_seed) = local[j];
            let x0 = region_point(sys, &psi.p_star, h, z)?;
            let mut first = x0.clone();
            psi.apply_slice(sys, &mut first, None)?;
            let tau = return_time(sys, &first.to_section())?;
            let rep = lyapunov_spectrum(&map, &x0, settings.iterations, frame_seed);
            Ok(SampleRow {
                slice: k,
                index: j,
                level: h,
                q1: z[0],
                p1: z[1],
                lambda1: rep.max_exponent(),
                positive_sum: rep.positive_sum(),
                return_time: tau,
                iterations: rep.iterations,
                truncated: rep.truncated,
            })
        })
        .collect::<Result<_>>()?;

    let by_slice: Vec<Vec<&SampleRow>> = (0..levels.len())
        .map(|k| rows.iter().filter(|r| r.slice == k).collect())
        .collect();
    let mean_tau: Vec<f64> = by_slice
        .iter()
        .map(|s| s.iter().map(|r| r.return_time).sum::<f64>() / s.len() as f64)
        .collect();
    let aggregate = |threshold: f64| -> (Vec<Accounting>, Accounting) {
        let per: Vec<Accounting> = by_slice.iter().map(|s| account(s, threshold)).collect();
        let mut total = Accounting { fraction: 0.0, map: 0.0 };
        for (a, (_, w)) in per.iter().zip(&levels) {
            total.fraction += w * a.fraction;
            total.map += w * a.map;
        }
        (per, total)
    };
    let mean_return_time: f64 = mean_tau.iter().zip(&levels).map(|(t, (_, w))| w * t).sum();
    let (per, total) = aggregate(settings.threshold);
    let slices = per
        .iter()
        .zip(&levels)
        .zip(&mean_tau)
        .map(|((a, &(level, weight)), &tau)| SliceSummary {
            level,
            weight,
            chaotic_fraction: a.fraction,
            map_proxy: a.map,
            mean_return_time: tau,
            flow_proxy: a.map / tau,
        })
        .collect();
    let thresholds = settings
        .thresholds
        .iter()
        .map(|&t| {
            let (_, a) = aggregate(t);
            ThresholdRow {
                threshold: t,
                chaotic_fraction: a.fraction,
                map_proxy: a.map,
                flow_proxy: a.map / mean_return_time,
            }
        })
        .collect();
    let mean_positive_part = levels
        .iter()
        .zip(&by_slice)
        .map(|((_, w), s)| w * s.iter().map(|r| r.lambda1.max(0.0)).sum::<f64>() / s.len() as f64)
        .sum();

    Ok(EntropyEstimate {
        region: region.clone(),
        samples: rows.len(),
        iterations: settings.iterations,
        threshold: settings.threshold,
        seed: settings.seed,
        chaotic_fraction: total.fraction,
        mean_positive_sum: if total.fraction > 0.0 { total.map / total.fraction } else { 0.0 },
        map_proxy: total.map,
        mean_positive_part,
        mean_return_time,
        flow_proxy: total.map / mean_return_time,
        fraction_interval: bootstrap_interval(&by_slice, &levels, settings),
        bootstrap: settings.bootstrap,
        truncated: rows.iter().filter(|r| r.truncated).count(),
        thresholds,
        slices,
        rows,
    })
}

/// Percentile interval of the weighted chaotic fraction under stratified resampling.
fn bootstrap_interval(by_slice: &[Vec<&SampleRow>], levels: &[(f64, f64)], settings: &EntropySettings) -> [f64; 2] {
    let flags: Vec<Vec<bool>> = by_slice
        .iter()
        .map(|s| s.iter().map(|r| r.lambda1 > settings.threshold).collect())
        .collect();
    if settings.bootstrap == 0 {
        return [f64::NAN, f64::NAN];
    }
    let mut rng = stream(settings.seed, BOOTSTRAP_STREAM);
    let mut stats: Vec<f64> = (0..settings.bootstrap)
        .map(|_| {
            flags
                .iter()
                .zip(levels)
                .map(|(f, (_, w))| {
                    let hits = (0..f.len()).filter(|_| f[rng.random_range(0..f.len())]).count();
                    w * hits as f64 / f.len() as f64
                })
                .sum()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let pick = |q: f64| stats[((q * settings.bootstrap as f64).floor() as usize).min(settings.bootstrap - 1)];
    [pick(0.025), pick(0.975)]
}
