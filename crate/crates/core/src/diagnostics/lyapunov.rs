//! Finite-time Lyapunov spectra by QR reorthonormalization.

use nalgebra::DMatrix;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::integrable::IntegrableHamiltonian;
use crate::perturbation::SectionPerturbation;
use crate::rng::stream;
use crate::section::{return_map, return_map_derivative, SectionPoint};
use crate::slice::{slice_return, LevelJacobian, SlicePoint};

/// Running estimates are recorded every this many iterations.
pub const HISTORY_STRIDE: usize = 100;

const FRAME_STREAM: u64 = 0x4c59_4150;

/// A map together with its exact derivative along orbits.
pub trait TangentMap: Sync {
    type State: Clone + Send + Sync;

    /// Dimension of the tangent space the exponents live in.
    fn dim(&self) -> usize;

    /// Advances `x` by one iterate and writes the derivative at the old point into `jac`.
    fn step(&self, x: &mut Self::State, jac: &mut DMatrix<f64>) -> Result<()>;

    fn coords(&self, x: &Self::State) -> Vec<f64>;
}

/// `R̃` (or `R` when `psi` is `None`) on one level slice, with the `(2n−2)`-square slice block.
pub struct SliceReturn<'a, S: IntegrableHamiltonian + ?Sized> {
    pub sys: &'a S,
    pub psi: Option<&'a SectionPerturbation>,
}

impl<S: IntegrableHamiltonian + ?Sized> TangentMap for SliceReturn<'_, S> {
    type State = SlicePoint;

    fn dim(&self) -> usize {
        2 * (self.sys.dim() - 1)
    }

    fn step(&self, x: &mut SlicePoint, jac: &mut DMatrix<f64>) -> Result<()> {
        let mut lj = LevelJacobian::identity(x.m());
        match self.psi {
            Some(psi) => psi.perturbed_return_slice(self.sys, x, Some(&mut lj))?,
            None => slice_return(self.sys, x, Some(&mut lj))?,
        }
        *jac = lj.slice;
        Ok(())
    }

    fn coords(&self, x: &SlicePoint) -> Vec<f64> {
        x.to_section().to_coords()
    }
}

/// `R̃` on the full section in `(q̄, p)` coordinates.
pub struct SectionReturn<'a, S: IntegrableHamiltonian + ?Sized> {
    pub sys: &'a S,
    pub psi: Option<&'a SectionPerturbation>,
}

impl<S: IntegrableHamiltonian + ?Sized> TangentMap for SectionReturn<'_, S> {
    type State = SectionPoint;

    fn dim(&self) -> usize {
        2 * self.sys.dim() - 1
    }

    fn step(&self, x: &mut SectionPoint, jac: &mut DMatrix<f64>) -> Result<()> {
        match self.psi {
            Some(psi) => {
                *jac = psi.tangent_return_map(self.sys, x)?;
                *x = psi.perturbed_return(self.sys, x)?;
            }
            None => {
                *jac = return_map_derivative(self.sys, x)?;
                *x = return_map(self.sys, x)?;
            }
        }
        Ok(())
    }

    fn coords(&self, x: &SectionPoint) -> Vec<f64> {
        x.to_coords()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Exponents per iterate, descending.
    pub exponents: Vec<f64>,
    /// Iterations actually completed.
    pub iterations: usize,
    pub history: Vec<HistoryRow>,
    pub initial: Vec<f64>,
    /// Set when the orbit left the working chart before `N` iterations.
    pub truncated: bool,
    pub failure: Option<String>,
}

impl LyapunovReport {
    pub fn max_exponent(&self) -> f64 {
        self.exponents.first().copied().unwrap_or(0.0)
    }

    pub fn positive_sum(&self) -> f64 {
        self.exponents.iter().filter(|&&l| l > 0.0).sum()
    }
}

/// Random orthonormal frame from `seed`.
fn initial_frame(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, FRAME_STREAM);
    let mut frame = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    // a random matrix is singular with probability zero; the fallback keeps the frame well defined
    if gram_schmidt(&mut frame).iter().any(|&n| !(n > 1e-8)) {
        frame = DMatrix::identity(dim, dim);
    }
    frame
}

/// Orthonormalizes the columns in place (modified Gram-Schmidt) and returns the
/// diagonal of the triangular factor.
fn gram_schmidt(a: &mut DMatrix<f64>) -> Vec<f64> {
    let d = a.ncols();
    let mut diag = vec![0.0; d];
    for j in 0..d {
        for k in 0..j {
            let proj = a.column(k).dot(&a.column(j));
            let ck = a.column(k).clone_owned();
            a.column_mut(j).axpy(-proj, &ck, 1.0);
        }
        let norm = a.column(j).norm();
        diag[j] = norm;
        if norm > 0.0 {
            a.column_mut(j).unscale_mut(norm);
        }
    }
    diag
}

fn descending(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// QR-based Lyapunov exponents over `n` iterates of `map` from `x0`.
///
/// The initial tangent frame is drawn from `seed`. If a step fails the report
/// covers the completed iterates and is flagged as truncated.
pub fn lyapunov_spectrum<T: TangentMap>(map: &T, x0: &T::State, n: usize, seed: u64) -> LyapunovReport {
    let d = map.dim();
    let mut frame = initial_frame(d, seed);
    let mut jac = DMatrix::zeros(d, d);
    let mut next = DMatrix::zeros(d, d);
    let mut sums = vec![0.0; d];
    let mut history = Vec::with_capacity(n / HISTORY_STRIDE);
    let mut x = x0.clone();
    let mut done = 0;
    let mut failure = None;
    while done < n {
        if let Err(e) = map.step(&mut x, &mut jac) {
            failure = Some(e.to_string());
            break;
        }
        jac.mul_to(&frame, &mut next);
        std::mem::swap(&mut frame, &mut next);
        for (s, r) in sums.iter_mut().zip(gram_schmidt(&mut frame)) {
            *s += r.ln();
        }
        done += 1;
        if done % HISTORY_STRIDE == 0 {
            let est: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
            history.push(HistoryRow {
                iteration: done,
                exponents: descending(&est),
            });
        }
    }
    let exponents = if done == 0 {
        vec![0.0; d]
    } else {
        descending(&sums.iter().map(|s| s / done as f64).collect::<Vec<_>>())
    };
    LyapunovReport {
        exponents,
        iterations: done,
        history,
        initial: map.coords(x0),
        truncated: failure.is_some(),
        failure,
    }
}
