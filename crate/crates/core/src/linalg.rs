//! Small dense complex helpers shared by the echo and oracle code.

use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) type CMatrix = DMatrix<Complex64>;

/// Largest entry of `|H - H^dagger|` divided by the largest entry of `|H|`.
pub(crate) fn hermitian_residual(h: &CMatrix) -> f64 {
    let n = h.nrows();
    let mut scale = 0.0_f64;
    let mut residual = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            scale = scale.max(h[(i, j)].norm_sqr()).max(h[(j, i)].norm_sqr());
            residual = residual.max((h[(i, j)] - h[(j, i)].conj()).norm_sqr());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        libm::sqrt(residual / scale)
    }
}

/// Replace `h` by `(h + h^dagger) / 2`.
pub(crate) fn symmetrize(h: &mut CMatrix) {
    let n = h.nrows();
    for i in 0..n {
        h[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            h[(i, j)] = avg;
            h[(j, i)] = avg.conj();
        }
    }
}

/// Eigenvalues and column eigenvectors of a Hermitian matrix.
pub(crate) fn hermitian_eigen(h: CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = h.nrows();
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 1000 * n.max(1)).ok_or(Error::EigenFailure)?;
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}
