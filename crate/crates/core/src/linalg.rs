//! Small dense helpers over complex Hermitian matrices.

use nalgebra::{Cholesky, DMatrix};

use crate::{CMatrix, CVector, Error, Result, C64};

/// Overwrite `m` with its Hermitian part (exactly real diagonal).
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] = C64::new(m[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Inverse and log-determinant of a Hermitian positive-definite matrix.
pub fn hpd_inverse_logdet(m: &CMatrix) -> Result<(CMatrix, f64)> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite("cholesky"))?;
    // complex sqrt never fails, so a negative pivot shows up as an imaginary diagonal entry
    if chol
        .l_dirty()
        .diagonal()
        .iter()
        .any(|z| !(z.re > 0.0) || z.im.abs() > 1e-12 * z.re)
    {
        return Err(Error::NotPositiveDefinite("cholesky pivot"));
    }
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
    let mut inv = chol.inverse();
    hermitize(&mut inv);
    Ok((inv, logdet))
}

/// `a a^H`.
pub fn outer(a: &CVector) -> CMatrix {
    a * a.adjoint()
}

/// Real part of `x^H m y`.
pub fn quad_re(x: &CVector, m: &CMatrix, y: &CVector) -> f64 {
    x.dotc(&(m * y)).re
}

pub fn identity(n: usize) -> CMatrix {
    DMatrix::identity(n, n)
}
