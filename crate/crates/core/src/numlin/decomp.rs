//! Factorizations and the derived operators built on them.
//!
//! SVD, QR and the symmetric eigensolver are delegated to `nalgebra`; this
//! module adapts them to [`Matrix`], fixes the ordering and sign conventions,
//! and turns iteration-cap failures into [`GshError::Numerical`].

use nalgebra::linalg::{SymmetricEigen, QR, SVD};

use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{shape_err, GshError, Result};

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD, `m = u · diag(s) · vt`, singular values descending.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul(&self.vt).expect("svd factors are conformant")
    }

    /// Numerical rank with the usual `max(m, n) · eps · s_max` cutoff.
    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.s.iter().filter(|&&v| v > cut).count()
    }

    pub fn cutoff(&self) -> f64 {
        let smax = self.s.first().copied().unwrap_or(0.0);
        (self.u.rows().max(self.vt.cols()) as f64) * f64::EPSILON * smax
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(GshError::Domain {
            op: "svd",
            detail: "non-finite input".into(),
        });
    }
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            vt: Matrix::zeros(0, cols),
        });
    }
    let dec = SVD::try_new(m.to_na(), true, true, f64::EPSILON, SVD_MAX_ITER).ok_or_else(|| {
        GshError::Numerical {
            op: "svd",
            detail: format!("no convergence within {SVD_MAX_ITER} iterations on {rows}x{cols}"),
        }
    })?;
    let u = dec.u.expect("u requested");
    let vt = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let s = order.iter().map(|&i| dec.singular_values[i].max(0.0)).collect();
    let u = Matrix::from_fn(rows, k, |i, j| u[(i, order[j])]);
    let vt = Matrix::from_fn(k, cols, |i, j| vt[(order[i], j)]);
    Ok(SvdResult { u, s, vt })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub spectral: f64,
    pub nuclear: f64,
}

pub fn norms(m: &Matrix) -> Result<Norms> {
    let s = svd(m)?.s;
    Ok(Norms {
        frobenius: m.frobenius(),
        spectral: s.first().copied().unwrap_or(0.0),
        nuclear: s.iter().sum(),
    })
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.s.iter().sum())
}

pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.s.first().copied().unwrap_or(0.0))
}

/// `U S^{1/2} Vᵀ`; for symmetric PSD input this is the principal square root.
pub fn matrix_sqrt(m: &Matrix) -> Result<Matrix> {
    let d = svd(m)?;
    let sq: Vec<f64> = d.s.iter().map(|v| v.sqrt()).collect();
    scaled_product(&d.u, &sq, &d.vt)
}

/// `u · diag(s) · vt`
pub(crate) fn scaled_product(u: &Matrix, s: &[f64], vt: &Matrix) -> Result<Matrix> {
    let us = Matrix::from_fn(u.rows(), s.len(), |i, j| u[(i, j)] * s[j]);
    us.matmul(vt)
}

pub fn pseudoinverse(m: &Matrix) -> Result<Matrix> {
    let d = svd(m)?;
    let cut = d.cutoff();
    let inv: Vec<f64> = d
        .s
        .iter()
        .map(|&v| if v > cut { 1.0 / v } else { 0.0 })
        .collect();
    // V S⁺ Uᵀ
    let v_sinv = Matrix::from_fn(d.vt.cols(), inv.len(), |i, j| d.vt[(j, i)] * inv[j]);
    v_sinv.matmul_t(&d.u)
}

/// Minimizer of `‖A X − B‖_F` (minimum-norm when `A` is rank deficient).
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return shape_err(
            "least_squares",
            format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
        );
    }
    pseudoinverse(a)?.matmul(b)
}

/// Ridge-regularized least squares, `(AᵀA + ridge I)⁻¹ Aᵀ B`.
pub fn ridge_least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return shape_err(
            "ridge_least_squares",
            format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
        );
    }
    let mut g = a.t_matmul(a)?;
    for i in 0..g.rows() {
        g[(i, i)] += ridge;
    }
    let rhs = a.t_matmul(b)?;
    least_squares(&g, &rhs)
}

pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize, variance: f64) -> Result<Matrix> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(GshError::Domain {
            op: "gaussian_matrix",
            detail: format!("variance must be positive, got {variance}"),
        });
    }
    let std = variance.sqrt();
    Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols, std))
}

/// Householder QR; `q` is `rows × min(rows, cols)` with `diag(r) ≥ 0`.
pub fn qr(m: &Matrix) -> (Matrix, Matrix) {
    let dec = QR::new(m.to_na());
    let mut q = Matrix::from_na(&dec.q());
    let mut r = Matrix::from_na(&dec.r());
    for j in 0..r.rows() {
        if r[(j, j)] < 0.0 {
            for c in 0..r.cols() {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..q.rows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    (q, r)
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal(rng: &mut SeededRng, n: usize) -> Result<Matrix> {
    let g = gaussian_matrix(rng, n, n, 1.0)?;
    Ok(qr(&g).0)
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return shape_err("symmetric_eigen", format!("{:?} not square", m.shape()));
    }
    let sym = m.symmetrize()?;
    let dec = SymmetricEigen::try_new(sym.to_na(), f64::EPSILON, SVD_MAX_ITER).ok_or_else(|| {
        GshError::Numerical {
            op: "symmetric_eigen",
            detail: "no convergence".into(),
        }
    })?;
    let n = m.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[a].total_cmp(&dec.eigenvalues[b]));
    let vals = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    let vecs = Matrix::from_fn(n, n, |i, j| dec.eigenvectors[(i, order[j])]);
    Ok((vals, vecs))
}

/// Orthonormal basis of the orthogonal complement of the columns of `q`
/// (which must be orthonormal). Returns a `D × (D − r)` matrix.
pub fn orthonormal_complement(q: &Matrix) -> Result<Matrix> {
    let d = q.rows();
    let r = q.cols();
    if r >= d {
        return Ok(Matrix::zeros(d, 0));
    }
    let mut proj = q.matmul_t(q)?.scale(-1.0);
    for i in 0..d {
        proj[(i, i)] += 1.0;
    }
    let (_vals, vecs) = symmetric_eigen(&proj)?;
    // eigenvalues ascending: the last d − r are ≈ 1
    Ok(vecs.col_block(r, d))
}
