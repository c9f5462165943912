//! Thin wrappers over the LAPACK backend plus small dense-matrix helpers.
//!
//! Everything in the library works with `Array2<Complex64>`; matrices are
//! small (n <= ~20), so convenience beats cleverness throughout.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use ndarray_linalg::{Eig, Eigh, Norm, Solve, SVD, UPLO};
use num_complex::Complex64;

use crate::error::{Result, WkError};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Rebuild into an owned standard-layout matrix (LAPACK rejects the
/// zero-stride axes that ndarray uses for length-1 dimensions).
fn std_mat(m: &CMat) -> CMat {
    CMat::from_shape_vec(m.dim(), m.iter().cloned().collect()).expect("shape")
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros((rows, cols))
}

pub fn eye(n: usize) -> CMat {
    CMat::eye(n)
}

pub fn adjoint(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

/// Hermitian part (m + m*)/2.
pub fn herm_part(m: &CMat) -> CMat {
    (m + &adjoint(m)).mapv(|z| 0.5 * z)
}

/// Matrix imaginary part (m - m*)/(2i); Hermitian for any m.
pub fn imag_part(m: &CMat) -> CMat {
    (m - &adjoint(m)).mapv(|z| z / (2.0 * I))
}

/// Frobenius norm.
pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm via singular values; 0 for empty matrices.
pub fn norm2(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let m = std_mat(m);
    let (_, sv, _) = m.svd(false, false).expect("svd failed");
    sv.iter().cloned().fold(0.0, f64::max)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues/vectors of a Hermitian matrix, ascending eigenvalue order;
/// eigenvectors are the columns of the returned matrix.
///
/// The backend diagonalizes the transposed (row-major) buffer, so its
/// eigenvector columns come out conjugated for complex Hermitian input;
/// undo that here.
pub fn eigh(m: &CMat) -> Result<(Array1<f64>, CMat)> {
    if m.nrows() == 0 {
        return Ok((Array1::zeros(0), zeros(0, 0)));
    }
    let std = std_mat(m);
    let (vals, vecs) = std.eigh(UPLO::Lower)?;
    Ok((vals, vecs.mapv(|z| z.conj())))
}

/// Eigenvalues/right eigenvectors of a general complex matrix.
pub fn eig(m: &CMat) -> Result<(CVec, CMat)> {
    if m.nrows() == 0 {
        return Ok((Array1::zeros(0), zeros(0, 0)));
    }
    let std = std_mat(m);
    let (vals, vecs) = std.eig()?;
    Ok((vals, vecs))
}

/// Solve a X = b for a square `a` and matrix right-hand side.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(zeros(0, b.ncols()));
    }
    let a = std_mat(a);
    let mut x = zeros(n, b.ncols());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let sol = a.solve(&col.to_owned())?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

pub struct SvdParts {
    pub u: CMat,
    pub s: Array1<f64>,
    pub vt: CMat,
}

pub fn svd_full(m: &CMat) -> Result<SvdParts> {
    let std = std_mat(m);
    let (u, s, vt) = std.svd(true, true)?;
    Ok(SvdParts {
        u: u.expect("svd u"),
        s,
        vt: vt.expect("svd vt"),
    })
}

/// 2-norm condition number estimate; `f64::INFINITY` when rank deficient.
pub fn cond2(m: &CMat) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let m = std_mat(m);
    let (_, sv, _) = m.svd(false, false).expect("svd failed");
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Moore-Penrose pseudoinverse with relative cutoff.
pub fn pinv(m: &CMat, rcond: f64) -> Result<CMat> {
    if m.is_empty() {
        return Ok(zeros(m.ncols(), m.nrows()));
    }
    let parts = svd_full(m)?;
    let smax = parts.s.iter().cloned().fold(0.0, f64::max);
    let cut = rcond * smax;
    let k = parts.s.len();
    let mut sinv = zeros(k, k);
    for i in 0..k {
        if parts.s[i] > cut {
            sinv[(i, i)] = cr(1.0 / parts.s[i]);
        }
    }
    let u_k = parts.u.slice(s![.., ..k]).to_owned();
    let vt_k = parts.vt.slice(s![..k, ..]).to_owned();
    Ok(adjoint(&vt_k).dot(&sinv).dot(&adjoint(&u_k)))
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &CMat, rcond: f64) -> Result<CMat> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        return Ok(eye(ncols));
    }
    let parts = svd_full(m)?;
    let smax = parts.s.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let rank = parts.s.iter().filter(|&&sv| sv > rcond * smax).count();
    let v = adjoint(&parts.vt);
    Ok(v.slice(s![.., rank..]).to_owned())
}

pub fn rank(m: &CMat, rcond: f64) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let m = std_mat(m);
    let (_, sv, _) = m.svd(false, false)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&x| x > rcond * smax).count())
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
/// Matrices here are tiny, so plain series with scaling is accurate enough.
pub fn expm(m: &CMat) -> CMat {
    let n = m.nrows();
    let nrm = norm2(m);
    let scale = ((nrm / 0.5).log2().ceil().max(0.0)) as u32;
    let a = m.mapv(|z| z / cr(2f64.powi(scale as i32)));
    let mut term = eye(n);
    let mut sum = eye(n);
    for k in 1..30 {
        term = term.dot(&a).mapv(|z| z / cr(k as f64));
        sum = &sum + &term;
        if max_abs(&term) < 1e-18 {
            break;
        }
    }
    let mut result = sum;
    for _ in 0..scale {
        result = result.dot(&result);
    }
    result
}

/// Stack matrices vertically; tolerates zero-row blocks.
pub fn vstack(blocks: &[&CMat]) -> CMat {
    let cols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let views: Vec<_> = blocks
        .iter()
        .filter(|b| b.nrows() > 0)
        .map(|b| b.view())
        .collect();
    if views.is_empty() {
        return zeros(0, cols);
    }
    concatenate(Axis(0), &views).expect("vstack shape mismatch")
}

/// Stack matrices horizontally; tolerates zero-column blocks.
pub fn hstack(blocks: &[&CMat]) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let views: Vec<_> = blocks
        .iter()
        .filter(|b| b.ncols() > 0)
        .map(|b| b.view())
        .collect();
    if views.is_empty() {
        return zeros(rows, 0);
    }
    concatenate(Axis(1), &views).expect("hstack shape mismatch")
}

/// Check Hermiticity within `tol * norm`, returning the residual.
pub fn require_hermitian(m: &CMat, tol: f64) -> Result<f64> {
    let scale = norm2(m).max(1.0);
    let residual = norm2(&(m - &adjoint(m)));
    if residual > tol * scale {
        return Err(WkError::NonHermitian {
            residual,
            tol: tol * scale,
        });
    }
    Ok(residual)
}

/// Smallest eigenvalue of the Hermitian part; used for PSD checks.
pub fn min_eig_herm(m: &CMat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let (vals, _) = eigh(&herm_part(m))?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// || . ||_2 of an Array1 viewed as column.
pub fn vec_norm(v: &CVec) -> f64 {
    v.norm_l2()
}
