use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Standard skew form `[[0, I], [-I, 0]]` of size `2m`.
pub fn symplectic_form(dim: usize) -> DMatrix<f64> {
    assert!(dim % 2 == 0, "symplectic form needs even dimension");
    let m = dim / 2;
    let mut j = DMatrix::zeros(dim, dim);
    for i in 0..m {
        j[(i, m + i)] = 1.0;
        j[(m + i, i)] = -1.0;
    }
    j
}

/// `‖MᵀJM − J‖_∞` (largest absolute entry).
pub fn symplecticity_defect(m: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.nrows() % 2 != 0 || j.shape() != m.shape() {
        return Err(Error::Dimension(format!(
            "symplecticity check needs matching even square matrices, got {:?} and {:?}",
            m.shape(),
            j.shape()
        )));
    }
    Ok((m.transpose() * j * m - j).amax())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
