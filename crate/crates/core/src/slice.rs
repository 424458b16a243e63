//! Level-slice coordinates `(q̄, p̄; h)` on the section.
//!
//! Every map in the pipeline preserves `H`, so it is cheapest to carry points
//! as slice coordinates plus the level `h`, with the lifted `p_n` cached.
//! Jacobians are kept in the same split form: the `(2n−2)`-square slice block
//! and the derivative with respect to the level.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrable::{wrap_unit, IntegrableHamiltonian};
use crate::section::{lift_action, SectionPoint, DEFAULT_TRANSVERSALITY, LIFT_TRUST};

/// A point of `Σ^h` in slice coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePoint {
    pub h: f64,
    pub q_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    /// `p_n` solving `H(p̄, p_n) = h`.
    pub p_n: f64,
}

impl SlicePoint {
    pub fn from_section<H: IntegrableHamiltonian + ?Sized>(sys: &H, sp: &SectionPoint) -> Self {
        let n = sp.dim();
        SlicePoint {
            h: sys.energy(&sp.p),
            q_bar: sp.q_bar.clone(),
            p_bar: sp.p[..n - 1].to_vec(),
            p_n: sp.p[n - 1],
        }
    }

    pub fn to_section(&self) -> SectionPoint {
        SectionPoint {
            q_bar: self.q_bar.clone(),
            p: self.action(),
        }
    }

    pub fn action(&self) -> Vec<f64> {
        self.p_bar.iter().copied().chain(std::iter::once(self.p_n)).collect()
    }

    pub fn m(&self) -> usize {
        self.q_bar.len()
    }

    /// Re-solves `p_n` after `p̄` changed, starting from the cached value.
    pub fn relift<H: IntegrableHamiltonian + ?Sized>(&mut self, sys: &H) -> Result<()> {
        self.p_n = lift_action(sys, self.h, &self.p_bar, self.p_n, LIFT_TRUST)?;
        Ok(())
    }
}

/// Derivative of a level-preserving map in slice coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelJacobian {
    /// `∂(q̄', p̄')/∂(q̄, p̄)` at fixed `h`.
    pub slice: DMatrix<f64>,
    /// `∂(q̄', p̄')/∂h` at fixed `(q̄, p̄)`.
    pub level: DVector<f64>,
}

impl LevelJacobian {
    pub fn identity(m: usize) -> Self {
        LevelJacobian {
            slice: DMatrix::identity(2 * m, 2 * m),
            level: DVector::zeros(2 * m),
        }
    }

    /// Jacobian of `outer ∘ self`.
    pub fn then(&self, outer: &LevelJacobian) -> LevelJacobian {
        LevelJacobian {
            slice: &outer.slice * &self.slice,
            level: &outer.slice * &self.level + &outer.level,
        }
    }

    /// Converts to the `(2n−1)`-square Jacobian in `(q̄, p)` coordinates.
    ///
    /// `p_in`/`p_out` are the full action vectors before and after the map.
    pub fn to_section_jacobian<H: IntegrableHamiltonian + ?Sized>(
        &self,
        sys: &H,
        p_in: &[f64],
        p_out: &[f64],
    ) -> DMatrix<f64> {
        let n = p_in.len();
        let m = n - 1;
        let dim = 2 * n - 1;
        let w_in = sys.frequency(p_in);
        let w_out = sys.frequency(p_out);
        // (q̄, p) -> (q̄, p̄, h)
        let mut j_in = DMatrix::identity(dim, dim);
        for j in 0..n {
            j_in[(dim - 1, m + j)] = w_in[j];
        }
        let mut level_map = DMatrix::identity(dim, dim);
        level_map.view_mut((0, 0), (2 * m, 2 * m)).copy_from(&self.slice);
        level_map.view_mut((0, dim - 1), (2 * m, 1)).copy_from(&self.level);
        // (q̄, p̄, h) -> (q̄, p)
        let mut j_out = DMatrix::identity(dim, dim);
        let rate = w_out[n - 1];
        for j in 0..m {
            j_out[(dim - 1, m + j)] = -w_out[j] / rate;
        }
        j_out[(dim - 1, dim - 1)] = 1.0 / rate;
        j_out * level_map * j_in
    }
}

/// The return shift `r = ω̄/ω_n` and its derivatives along a level.
#[derive(Debug, Clone)]
pub struct ShiftJet {
    pub shift: Vec<f64>,
    /// `∂r/∂p̄` with `p_n` following the level.
    pub d_slice: DMatrix<f64>,
    /// `∂r/∂h` at fixed `p̄`.
    pub d_level: Vec<f64>,
    pub rate: f64,
}

pub fn shift_jet<H: IntegrableHamiltonian + ?Sized>(sys: &H, p: &[f64]) -> Result<ShiftJet> {
    let n = p.len();
    let m = n - 1;
    let w = sys.frequency(p);
    let rate = w[m];
    if !(rate > DEFAULT_TRANSVERSALITY) {
        return Err(Error::Transversality { rate, p: p.to_vec() });
    }
    let hess = sys.hessian(p);
    let shift: Vec<f64> = w[..m].iter().map(|x| x / rate).collect();
    // ∂r_i/∂p_j for the full action vector
    let dr = |i: usize, j: usize| (hess[(i, j)] * rate - w[i] * hess[(m, j)]) / (rate * rate);
    let mut d_slice = DMatrix::zeros(m, m);
    let mut d_level = vec![0.0; m];
    for i in 0..m {
        let dn = dr(i, m);
        for j in 0..m {
            d_slice[(i, j)] = dr(i, j) - dn * w[j] / rate;
        }
        d_level[i] = dn / rate;
    }
    Ok(ShiftJet {
        shift,
        d_slice,
        d_level,
        rate,
    })
}

/// The unperturbed return map on a slice, optionally with its Jacobian.
pub fn slice_return<H: IntegrableHamiltonian + ?Sized>(
    sys: &H,
    x: &mut SlicePoint,
    jac: Option<&mut LevelJacobian>,
) -> Result<()> {
    let m = x.m();
    let p = x.action();
    match jac {
        None => {
            let w = sys.frequency(&p);
            let rate = w[m];
            if !(rate > DEFAULT_TRANSVERSALITY) {
                return Err(Error::Transversality { rate, p });
            }
            for (q, wi) in x.q_bar.iter_mut().zip(&w) {
                *q = wrap_unit(*q + wi / rate);
            }
        }
        Some(jac) => {
            let sj = shift_jet(sys, &p)?;
            for (q, s) in x.q_bar.iter_mut().zip(&sj.shift) {
                *q = wrap_unit(*q + s);
            }
            let mut slice = DMatrix::identity(2 * m, 2 * m);
            slice.view_mut((0, m), (m, m)).copy_from(&sj.d_slice);
            let mut level = DVector::zeros(2 * m);
            for i in 0..m {
                level[i] = sj.d_level[i];
            }
            *jac = LevelJacobian { slice, level };
        }
    }
    Ok(())
}
