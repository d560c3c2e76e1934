//! The random-ReLU kernel toolkit: the dual activation `σ̂` and its Taylor
//! coefficients, Monte-Carlo Gram matrices, explicit monomial feature maps,
//! semi-orthogonal factor recovery, Gaussian random projections and the
//! univariate q-norm bound.

mod features;
mod series;

use std::f64::consts::PI;

use rayon::prelude::*;

pub use features::{
    enumerate_monomials, monomial_count, mu_power, multinomial, phi_k_features, psi_features,
    FeatureVector, MonomialIndex, DEFAULT_FEATURE_CAP,
};
pub use series::PowerSeries;

use crate::error::{GshError, Result};
use crate::numlin::{
    self, dot, gaussian_matrix, matrix_sqrt, norm, orthonormal_complement, svd, Matrix,
    SeededRng,
};

const ETA_CLAMP: f64 = 1e-12;

/// `σ̂(η) = (√(1−η²) + (π − arccos η) η) / 2π`, the dual activation of ReLU
/// under `N(0, I)` weights.
pub fn dual_activation(eta: f64) -> Result<f64> {
    if !eta.is_finite() || eta.abs() > 1.0 + ETA_CLAMP {
        return Err(GshError::Domain {
            op: "dual_activation",
            detail: format!("correlation {eta} outside [-1, 1]"),
        });
    }
    let eta = eta.clamp(-1.0, 1.0);
    Ok(((1.0 - eta * eta).sqrt() + (PI - eta.acos()) * eta) / (2.0 * PI))
}

/// `K(x, y) = ‖x‖‖y‖ σ̂(xᵀy / ‖x‖‖y‖)`
pub fn relu_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(GshError::Domain {
            op: "relu_kernel",
            detail: "zero vector".into(),
        });
    }
    Ok(nx * ny * dual_activation(dot(x, y) / (nx * ny))?)
}

/// Kernel matrix over the columns of `x`.
pub fn kernel_matrix(x: &Matrix) -> Result<Matrix> {
    let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.col(j)).collect();
    let n = cols.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = relu_kernel(&cols[i], &cols[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Taylor coefficients of `σ̂` up to degree `order`, obtained by series
/// arithmetic on `√(1−η²)` and `η(π/2 + arcsin η)`.
pub fn taylor_sigma_hat(order: usize) -> PowerSeries {
    let n = order + 1;
    let eta = PowerSeries::identity(n);
    let one = PowerSeries::constant(1.0, n);
    let root = one.sub(&eta.mul(&eta)).sqrt();
    // arcsin η = ∫ (1−η²)^{-1/2}
    let arcsin = root.recip().integrate().truncate(n);
    // π − arccos η = π/2 + arcsin η
    let shifted = PowerSeries::constant(PI / 2.0, n).add(&arcsin);
    root.add(&eta.mul(&shifted))
        .scale(1.0 / (2.0 * PI))
        .truncate(order)
}

/// `β · g̃'(β) + |a₀|` where `g̃` has the absolute coefficients of `series`.
pub fn qnorm_upper_bound(series: &PowerSeries, beta: f64) -> f64 {
    let deriv: f64 = series
        .coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, a)| k as f64 * a.abs() * beta.powi(k as i32 - 1))
        .sum();
    beta * deriv + series.coeffs[0].abs()
}

const GRAM_CHUNK: usize = 4096;

/// `Z_Dᵀ Z_D` with `Z_D = relu(C X)` and fresh `C ∈ R^{D×d}` with `N(0, 1/D)`
/// entries. `x` holds one input per column. Width chunks draw from child
/// streams of a seed taken from `rng`, and are reduced in chunk order.
pub fn mc_gram(x: &Matrix, width: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if width == 0 {
        return Err(GshError::Domain {
            op: "mc_gram",
            detail: "width must be >= 1".into(),
        });
    }
    let parent = SeededRng::new(rng.next_u64());
    let d = x.rows();
    let n = x.cols();
    let var = 1.0 / width as f64;
    let chunks: Vec<(usize, usize)> = (0..width)
        .step_by(GRAM_CHUNK)
        .map(|s| (s, (s + GRAM_CHUNK).min(width)))
        .collect();
    let partials: Vec<Result<Matrix>> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, &(s, e))| {
            let mut r = parent.child(ci as u64);
            let c = gaussian_matrix(&mut r, e - s, d, var)?;
            let z = c.matmul(x)?.map(|v| v.max(0.0));
            z.t_matmul(&z)
        })
        .collect();
    let mut g = Matrix::zeros(n, n);
    for p in partials {
        g.axpy(1.0, &p?)?;
    }
    Ok(g)
}

/// `‖Z_DᵀZ_D − K(X, X)‖_F` for one fresh draw of `C`.
pub fn gram_error(x: &Matrix, width: usize, rng: &mut SeededRng) -> Result<f64> {
    let g = mc_gram(x, width, rng)?;
    Ok(g.sub(&kernel_matrix(x)?)?.frobenius())
}

/// Finds a `D × D` orthogonal `U` with `U Y = X`, given `XᵀX = YᵀY` up to
/// `tol` in Frobenius norm. `U = X Y⁺` on the column span of `Y`, extended
/// by an isometry between the orthogonal complements of the two spans.
pub fn semi_orthogonal_solve(x: &Matrix, y: &Matrix, tol: f64) -> Result<Matrix> {
    if x.shape() != y.shape() {
        return crate::error::shape_err(
            "semi_orthogonal_solve",
            format!("X is {:?}, Y is {:?}", x.shape(), y.shape()),
        );
    }
    let gram_gap = x.t_matmul(x)?.sub(&y.t_matmul(y)?)?.frobenius();
    if gram_gap > tol {
        return Err(GshError::Precondition {
            op: "semi_orthogonal_solve",
            detail: format!("‖XᵀX − YᵀY‖_F = {gram_gap:.3e} exceeds tolerance {tol:.3e}"),
        });
    }
    let d = x.rows();
    let dec = svd(y)?;
    let r = dec.rank();
    let y_basis = dec.u.col_block(0, r);
    // X V_r S_r⁻¹ has orthonormal columns when the Grams agree
    let v_r = dec.vt.transpose().col_block(0, r);
    let x_basis = Matrix::from_fn(d, r, {
        let xv = x.matmul(&v_r)?;
        move |i, j| xv[(i, j)] / dec.s[j]
    });
    let mut u = x_basis.matmul_t(&y_basis)?;
    if r < d {
        let x_orth = numlin::qr(&x_basis).0;
        let xc = orthonormal_complement(&x_orth)?;
        let yc = orthonormal_complement(&y_basis)?;
        u.axpy(1.0, &xc.matmul_t(&yc)?)?;
    }
    Ok(u)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SqrtPerturbationReport {
    pub gram_error_x: f64,
    pub gram_error_y: f64,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Roundoff allowance added to the `2√ε` bound (matters only at `ε = 0`).
const SQRT_CHECK_SLACK: f64 = 1e-10;

/// Draws `X, Y` with `‖XᵀX − A‖_F ≤ ε` and `‖YᵀY − A‖_F ≤ ε`, recovers an
/// orthogonal `U` through the square roots of the two Grams, and compares
/// `‖X − UY‖_F` with `2√ε`.
pub fn sqrt_perturbation_check(a: &Matrix, eps: f64, rng: &mut SeededRng) -> Result<SqrtPerturbationReport> {
    if !a.is_square() {
        return crate::error::shape_err("sqrt_perturbation_check", "A must be square");
    }
    let n = a.rows();
    let big_d = n + 2;
    let root = matrix_sqrt(a)?;
    let draw = |rng: &mut SeededRng| -> Result<(Matrix, f64)> {
        let e = gaussian_matrix(rng, n, n, 1.0)?;
        let t = perturbation_scale(&root, &e, a, eps)?;
        let mut f = root.clone();
        f.axpy(t, &e)?;
        let frame = numlin::random_orthogonal(rng, big_d)?.col_block(0, n);
        let m = frame.matmul(&f)?;
        let err = m.t_matmul(&m)?.sub(a)?.frobenius();
        Ok((m, err))
    };
    let (x, gx) = draw(rng)?;
    let (y, gy) = draw(rng)?;
    let pad = |g: &Matrix| -> Result<Matrix> {
        let r = matrix_sqrt(g)?;
        r.vcat(&Matrix::zeros(big_d - n, n))
    };
    let xtx = x.t_matmul(&x)?;
    let yty = y.t_matmul(&y)?;
    let bx = pad(&xtx)?;
    let by = pad(&yty)?;
    let tol = |g: &Matrix| 1e-8 * (1.0 + g.frobenius());
    let p = semi_orthogonal_solve(&x, &bx, tol(&xtx))?;
    let q = semi_orthogonal_solve(&y, &by, tol(&yty))?;
    let u = p.matmul_t(&q)?;
    let residual = x.sub(&u.matmul(&y)?)?.frobenius();
    let bound = 2.0 * eps.sqrt();
    Ok(SqrtPerturbationReport {
        gram_error_x: gx,
        gram_error_y: gy,
        residual,
        bound,
        pass: residual <= bound + SQRT_CHECK_SLACK,
    })
}

/// Largest `t ∈ [0, 1]` (by bisection) with `‖(R + tE)ᵀ(R + tE) − A‖_F ≤ ε`.
fn perturbation_scale(root: &Matrix, e: &Matrix, a: &Matrix, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Ok(0.0);
    }
    let err = |t: f64| -> Result<f64> {
        let mut f = root.clone();
        f.axpy(t, e)?;
        Ok(f.t_matmul(&f)?.sub(a)?.frobenius())
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if err(hi)? <= eps {
        return Ok(hi);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if err(mid)? <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Gaussian,
    /// `R = I`; requires `k` equal to the input dimension.
    Identity,
}

#[derive(Clone, Debug)]
pub struct JlResult {
    pub projected: Vec<Vec<f64>>,
    /// `max_{i ≤ j} |⟨Rx_i, Rx_j⟩ − ⟨x_i, x_j⟩|`
    pub max_distortion: f64,
}

/// Projects with `R ∈ R^{k×d}`, entries `N(0, 1/k)`.
pub fn jl_project(
    vectors: &[Vec<f64>],
    k: usize,
    mode: Projection,
    rng: &mut SeededRng,
) -> Result<JlResult> {
    if k == 0 {
        return Err(GshError::Domain {
            op: "jl_project",
            detail: "target dimension must be >= 1".into(),
        });
    }
    let d = vectors.first().map_or(0, Vec::len);
    let x = Matrix::from_rows(vectors)?;
    let r = match mode {
        Projection::Gaussian => gaussian_matrix(rng, k, d, 1.0 / k as f64)?,
        Projection::Identity if k == d => Matrix::identity(d),
        Projection::Identity => {
            return crate::error::shape_err("jl_project", "identity mode needs k = d")
        }
    };
    let proj = x.matmul_t(&r)?;
    let before = x.matmul_t(&x)?;
    let after = proj.matmul_t(&proj)?;
    let mut max_distortion: f64 = 0.0;
    for i in 0..vectors.len() {
        for j in i..vectors.len() {
            max_distortion = max_distortion.max((after[(i, j)] - before[(i, j)]).abs());
        }
    }
    Ok(JlResult {
        projected: proj.to_rows(),
        max_distortion,
    })
}
