//! Numerical checks of the matrix and optimization lemmas behind the
//! training objective. Each check returns a [`LemmaReport`] with what was
//! measured, the bound it was held to, and a verdict.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{shape_err, GshError, Result};
use crate::gshmetrics::vhat_mn;
use crate::kernelview::{psi_features, DEFAULT_FEATURE_CAP};
use crate::net::weighted_loss_of_predictions;
use crate::numlin::{
    dot, gaussian_matrix, matrix_sqrt, nuclear_norm, random_orthogonal, svd, Grouped, Matrix,
    SeededRng,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub measured: BTreeMap<String, f64>,
    pub bounds: BTreeMap<String, f64>,
    pub pass: bool,
    pub seed: Option<u64>,
    pub sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LemmaReport {
    fn new(lemma: &str) -> Self {
        Self {
            lemma: lemma.to_string(),
            measured: BTreeMap::new(),
            bounds: BTreeMap::new(),
            pass: false,
            seed: None,
            sizes: Vec::new(),
            note: None,
        }
    }

    fn measure(mut self, key: &str, v: f64) -> Self {
        self.measured.insert(key.to_string(), v);
        self
    }

    fn bound(mut self, key: &str, v: f64) -> Self {
        self.bounds.insert(key.to_string(), v);
        self
    }

    fn verdict(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }

    fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn sized(mut self, sizes: &[usize]) -> Self {
        self.sizes = sizes.to_vec();
        self
    }

    fn noted(mut self, note: &str) -> Self {
        self.note = Some(note.to_string());
        self
    }

    pub fn get(&self, key: &str) -> f64 {
        self.measured.get(key).copied().unwrap_or(f64::NAN)
    }
}

/// `A = U S^{1/2}`, `B = S^{1/2} Vᵀ` from the thin SVD of `w`.
pub fn balanced_factors(w: &Matrix) -> Result<(Matrix, Matrix)> {
    let d = svd(w)?;
    let root: Vec<f64> = d.s.iter().map(|s| s.sqrt()).collect();
    let a = Matrix::from_fn(d.u.rows(), root.len(), |i, j| d.u[(i, j)] * root[j]);
    let b = Matrix::from_fn(root.len(), d.vt.cols(), |i, j| root[i] * d.vt[(i, j)]);
    Ok((a, b))
}

/// `½(‖A‖² + ‖B‖²)` of the balanced factorization equals `‖W‖_*`, and
/// `AB = W`, both within `1e-9`.
pub fn nuclear_frobenius_equiv(w: &Matrix) -> Result<LemmaReport> {
    let (a, b) = balanced_factors(w)?;
    let balanced = 0.5 * (a.frobenius_sq() + b.frobenius_sq());
    let nuclear = nuclear_norm(w)?;
    let recon = a.matmul(&b)?.sub(w)?.frobenius();
    let gap = (balanced - nuclear).abs();
    Ok(LemmaReport::new("nuclear_frobenius_equiv")
        .measure("balanced_half_sum", balanced)
        .measure("nuclear", nuclear)
        .measure("gap", gap)
        .measure("reconstruction", recon)
        .bound("gap", 1e-9)
        .bound("reconstruction", 1e-9)
        .sized(&[w.rows(), w.cols()])
        .verdict(gap <= 1e-9 && recon <= 1e-9))
}

/// Signature of a balanced minimum: `AᵀA = BBᵀ` within `1e-8` and
/// `‖A‖_F = ‖B‖_F` within `1e-10`.
pub fn balanced_signature(a: &Matrix, b: &Matrix) -> Result<LemmaReport> {
    let gram_gap = a.t_matmul(a)?.sub(&b.matmul_t(b)?)?.frobenius();
    let norm_gap = (a.frobenius() - b.frobenius()).abs();
    Ok(LemmaReport::new("balanced_minimum_check")
        .measure("gram_gap", gram_gap)
        .measure("norm_gap", norm_gap)
        .bound("gram_gap", 1e-8)
        .bound("norm_gap", 1e-10)
        .sized(&[a.rows(), a.cols(), b.cols()])
        .verdict(gram_gap <= 1e-8 && norm_gap <= 1e-10))
}

/// `A = U S^{1/2} R`, `B = Rᵀ S^{1/2} Vᵀ` with `R` the first `rank` rows of
/// a random orthogonal `inner × inner` matrix (`R Rᵀ = I`).
pub fn rotated_balanced_factors(w: &Matrix, inner: usize, rng: &mut SeededRng) -> Result<(Matrix, Matrix)> {
    let (a0, b0) = balanced_factors(w)?;
    let k = a0.cols();
    if inner < k {
        return shape_err("balanced_minimum_check", format!("inner dimension {inner} < {k}"));
    }
    let r = random_orthogonal(rng, inner)?.row_block(0, k);
    Ok((a0.matmul(&r)?, r.t_matmul(&b0)?))
}

/// Checks the balanced signature for `w` with a random rotation inserted.
pub fn balanced_minimum_check(w: &Matrix, rng: &mut SeededRng) -> Result<LemmaReport> {
    let k = w.rows().min(w.cols());
    let (a, b) = rotated_balanced_factors(w, k + 2, rng)?;
    Ok(balanced_signature(&a, &b)?.seeded(rng.seed()))
}

/// `Σ_i min(s_i, λ)² + 2λ(s_i − λ)₊`, the optimum of
/// `min_W ‖T − W‖² + 2λ‖W‖_*` (singular values soft-thresholded by `λ`).
pub fn soft_threshold_optimum(target: &Matrix, lambda: f64) -> Result<f64> {
    let d = svd(target)?;
    Ok(d.s
        .iter()
        .map(|&s| {
            if s <= lambda {
                s * s
            } else {
                lambda * lambda + 2.0 * lambda * (s - lambda)
            }
        })
        .sum())
}

fn factorized_objective(t: &Matrix, a: &Matrix, b: &Matrix, lambda: f64) -> Result<(f64, Matrix)> {
    let resid = t.sub(&a.matmul(b)?)?;
    Ok((
        resid.frobenius_sq() + lambda * (a.frobenius_sq() + b.frobenius_sq()),
        resid,
    ))
}

/// Gradient descent on `‖T − AB‖² + λ(‖A‖² + ‖B‖²)` with inner dimension
/// `min(rows, cols)` from a seeded `N(0, 0.01)` start, compared against
/// [`soft_threshold_optimum`]. Passes within 0.5% relative (or `1e-10`
/// absolute when the optimum is zero).
pub fn factorized_descent(target: &Matrix, lambda: f64, max_steps: usize, rng: &mut SeededRng) -> Result<LemmaReport> {
    if !(lambda >= 0.0) {
        return Err(GshError::Domain {
            op: "factorized_descent",
            detail: "lambda must be >= 0".into(),
        });
    }
    let seed = rng.seed();
    let (m, n) = target.shape();
    let r = m.min(n);
    let mut a = gaussian_matrix(rng, m, r, 0.01)?;
    let mut b = gaussian_matrix(rng, r, n, 0.01)?;
    let smax = svd(target)?.s.first().copied().unwrap_or(0.0);
    let mut lr = 0.25 / (smax + lambda + 1e-12);
    let (mut f, mut resid) = factorized_objective(target, &a, &b, lambda)?;
    if !f.is_finite() {
        return Err(GshError::Divergence { step: 0, value: f });
    }
    let mut steps = 0;
    'outer: for _ in 0..max_steps {
        steps += 1;
        let mut ga = resid.matmul_t(&b)?.scale(-2.0);
        ga.axpy(2.0 * lambda, &a)?;
        let mut gb = a.t_matmul(&resid)?.scale(-2.0);
        gb.axpy(2.0 * lambda, &b)?;
        let gnorm = (ga.frobenius_sq() + gb.frobenius_sq()).sqrt();
        if gnorm < 1e-11 {
            break;
        }
        loop {
            let mut a2 = a.clone();
            a2.axpy(-lr, &ga)?;
            let mut b2 = b.clone();
            b2.axpy(-lr, &gb)?;
            let (f2, r2) = factorized_objective(target, &a2, &b2, lambda)?;
            if f2 <= f {
                a = a2;
                b = b2;
                f = f2;
                resid = r2;
                lr *= 1.05;
                break;
            }
            lr *= 0.5;
            if lr < 1e-16 {
                break 'outer;
            }
        }
    }
    let opt = soft_threshold_optimum(target, lambda)?;
    let gap = f - opt;
    let rel = if opt > 0.0 { gap / opt } else { gap };
    let pass = if opt > 1e-10 { rel <= 5e-3 } else { gap <= 1e-10 } && gap >= -1e-9 * (1.0 + opt);
    Ok(LemmaReport::new("factorized_descent")
        .measure("descent_objective", f)
        .measure("convex_optimum", opt)
        .measure("relative_gap", rel)
        .measure("residual", resid.frobenius())
        .measure("steps", steps as f64)
        .bound("relative_gap", 5e-3)
        .seeded(seed)
        .sized(&[m, n, r])
        .verdict(pass))
}

/// Non-negative convex objective for [`multi_objective_check`].
#[derive(Clone, Debug)]
pub enum ConvexObjective {
    /// `a‖θ − c‖² + b`
    Quadratic { a: f64, center: Vec<f64>, offset: f64 },
    /// `max(0, wᵀθ + b)`
    Hinge { w: Vec<f64>, b: f64 },
}

impl ConvexObjective {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            ConvexObjective::Quadratic { a, center, offset } => {
                a * crate::numlin::sq_dist(theta, center) + offset
            }
            ConvexObjective::Hinge { w, b } => (dot(w, theta) + b).max(0.0),
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// With `OPT_i = O_i(θ*)`, minimizes `Σ O_i / OPT_i` and checks
/// `O_i(θ̂) ≤ q·OPT_i + 1e-9` for each of the `q` objectives. All-quadratic
/// sets are minimized in closed form; otherwise `θ` must be 1-d and a
/// golden-section search is used.
pub fn multi_objective_check(objs: &[ConvexObjective], theta_star: &[f64]) -> Result<LemmaReport> {
    let q = objs.len();
    if q == 0 {
        return shape_err("multi_objective_check", "no objectives");
    }
    let opts: Vec<f64> = objs.iter().map(|o| o.eval(theta_star)).collect();
    if opts.iter().any(|&v| !(v > 0.0)) {
        return Err(GshError::Domain {
            op: "multi_objective_check",
            detail: "every OPT_i must be > 0".into(),
        });
    }
    let dim = theta_star.len();
    let all_quadratic = objs.iter().all(|o| matches!(o, ConvexObjective::Quadratic { .. }));
    let theta_hat = if all_quadratic {
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for (o, &opt) in objs.iter().zip(&opts) {
            if let ConvexObjective::Quadratic { a, center, .. } = o {
                let w = a / opt;
                for (n, c) in num.iter_mut().zip(center) {
                    *n += w * c;
                }
                den += w;
            }
        }
        num.iter().map(|v| v / den).collect::<Vec<_>>()
    } else {
        if dim != 1 {
            return shape_err("multi_objective_check", "non-quadratic objectives need a 1-d parameter");
        }
        let total = |t: f64| objs.iter().zip(&opts).map(|(o, p)| o.eval(&[t]) / p).sum::<f64>();
        let r = 10.0 * (1.0 + theta_star[0].abs());
        vec![golden_section(total, -r, r)]
    };
    let ratios: Vec<f64> = objs.iter().zip(&opts).map(|(o, p)| o.eval(&theta_hat) / p).collect();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    let pass = objs
        .iter()
        .zip(&opts)
        .all(|(o, p)| o.eval(&theta_hat) <= q as f64 * p + 1e-9);
    Ok(LemmaReport::new("multi_objective_check")
        .measure("max_ratio", worst)
        .measure("sum_of_ratios", ratios.iter().sum())
        .bound("max_ratio", q as f64)
        .sized(&[q, dim])
        .verdict(pass))
}

/// Loss reduction from replacing each prediction by its manifold mean, and
/// the bound `V̂_mn(ŷ)/(2(m−1))`. Predictions are grouped `m × n × m`.
pub fn centering_instance(yhat: &Grouped) -> Result<(f64, f64)> {
    let m = yhat.m;
    if yhat.width() != m || m < 2 || yhat.n < 2 {
        return shape_err("centering_check", "need m >= 2 classes, n >= 2 and m outputs");
    }
    let labels = yhat.labels();
    let before = weighted_loss_of_predictions(&yhat.data, &labels)?;
    let means: Vec<Vec<f64>> = (0..m).map(|l| yhat.group_mean(l)).collect();
    let centered = Matrix::from_fn(yhat.data.rows(), m, |i, j| means[i / yhat.n][j]);
    let after = weighted_loss_of_predictions(&centered, &labels)?;
    let (_, v) = vhat_mn(yhat)?;
    Ok((before - after, v / (2.0 * (m - 1) as f64)))
}

/// `trials` random prediction sets with `m ∈ [2, max_m]`, `n ∈ [2, max_n]`;
/// counts violations of `reduction ≥ bound − 1e-12`.
pub fn centering_check(trials: usize, max_m: usize, max_n: usize, rng: &mut SeededRng) -> Result<LemmaReport> {
    let seed = rng.seed();
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    for _ in 0..trials {
        let m = 2 + rng.below(max_m.max(2) - 1);
        let n = 2 + rng.below(max_n.max(2) - 1);
        let scale = 0.1 + 2.0 * rng.uniform();
        let data = Matrix::from_vec(m * n, m, rng.normal_vec(m * n * m, scale))?;
        let (red, bound) = centering_instance(&Grouped::new(m, n, data)?)?;
        let slack = red - bound;
        min_slack = min_slack.min(slack);
        if slack < -1e-12 {
            violations += 1;
        }
    }
    Ok(LemmaReport::new("centering_check")
        .measure("violations", violations as f64)
        .measure("min_slack", min_slack)
        .bound("slack", -1e-12)
        .seeded(seed)
        .sized(&[trials, max_m, max_n])
        .verdict(violations == 0))
}

/// For the balanced minimum with weights `λ₁, λ₂`,
/// `A = (λ₂/λ₁)^{1/4} U S^{1/2}` and `B = (λ₁/λ₂)^{1/4} S^{1/2} Vᵀ`, checks
/// `V̂(ŷ) ≥ (λ₂/λ₁) V̂(r)²/4 − 1e-9` with `ŷ = W z`, `r = B z`, and that
/// `V̂(ŷ)` and `V̂(r)` vanish together. `z` holds features grouped by
/// manifold; the bound needs `‖Z'‖_F² ≤ 4` for the centered, `1/√(mn)`
/// scaled features `Z'`.
pub fn variance_relation_check(w: &Matrix, lambda1: f64, lambda2: f64, z: &Grouped) -> Result<LemmaReport> {
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(GshError::Domain {
            op: "variance_relation_check",
            detail: "lambda1 and lambda2 must be > 0".into(),
        });
    }
    if z.width() != w.cols() {
        return shape_err("variance_relation_check", "feature width differs from W columns");
    }
    let (_, b0) = balanced_factors(w)?;
    let b = b0.scale((lambda1 / lambda2).powf(0.25));
    let yhat = Grouped::new(z.m, z.n, z.data.matmul_t(w)?)?;
    let r = Grouped::new(z.m, z.n, z.data.matmul_t(&b)?)?;
    let (_, vy) = vhat_mn(&yhat)?;
    let (_, vr) = vhat_mn(&r)?;
    let (_, zmass) = vhat_mn(z)?;
    let bound = lambda2 / lambda1 * vr * vr / 4.0;
    let zero_y = vy <= 1e-20;
    let zero_r = vr <= 1e-10;
    Ok(LemmaReport::new("variance_relation_check")
        .measure("vhat_output", vy)
        .measure("vhat_representation", vr)
        .measure("feature_mass", zmass)
        .measure("bound", bound)
        .bound("feature_mass", 4.0)
        .sized(&[w.rows(), w.cols(), z.m, z.n])
        .verdict(zmass <= 4.0 && vy >= bound - 1e-9 && zero_y == zero_r)
        .noted("checked at the balanced factorization; arbitrary (A, B) need not satisfy the bound"))
}

/// `m` unit vectors in `R^s` with `|γ_aᵀγ_b| ≤ tau` for all pairs.
pub fn two_sided_separated(m: usize, s: usize, tau: f64, rng: &mut SeededRng) -> Result<Matrix> {
    const ATTEMPTS: usize = 10_000;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    while rows.len() < m {
        let mut found = false;
        let mut conflicts = 0;
        for _ in 0..ATTEMPTS {
            let c = rng.unit_vec(s);
            conflicts = rows.iter().filter(|r| dot(r, &c).abs() > tau).count();
            if conflicts == 0 {
                rows.push(c);
                found = true;
                break;
            }
        }
        if !found {
            return Err(GshError::Infeasible {
                tau,
                failing_pairs: conflicts,
                attempts: ATTEMPTS,
            });
        }
    }
    Matrix::from_rows(&rows)
}

/// Head `A*` with rows `ψ(γ_l)` fed the exact features `ψ(γ_l)`: diagonal
/// outputs 1, off-diagonal `≤ τ^p + 1e-10`, `‖A*‖_F² = m`, and weighted loss
/// `≤ τ^{2p}/2`. The γs must be unit vectors with `|γ_aᵀγ_b| ≤ τ`.
pub fn ground_truth_head_check(gammas: &Matrix, p: usize, tau: f64) -> Result<LemmaReport> {
    let m = gammas.rows();
    for a in 0..m {
        if (dot(gammas.row(a), gammas.row(a)) - 1.0).abs() > 1e-10 {
            return Err(GshError::Domain {
                op: "ground_truth_head_check",
                detail: format!("gamma {a} is not a unit vector"),
            });
        }
        for b in (a + 1)..m {
            if dot(gammas.row(a), gammas.row(b)).abs() > tau + 1e-12 {
                return Err(GshError::Domain {
                    op: "ground_truth_head_check",
                    detail: format!("gammas {a} and {b} are not {tau}-separated"),
                });
            }
        }
    }
    let feats: Vec<Vec<f64>> = (0..m)
        .map(|l| psi_features(gammas.row(l), p, DEFAULT_FEATURE_CAP).map(|f| f.values))
        .collect::<Result<_>>()?;
    let head = Matrix::from_rows(&feats)?;
    // column l holds the outputs for input ψ(γ_l)
    let out = head.matmul_t(&head)?;
    let mut diag_err: f64 = 0.0;
    let mut off_max = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                diag_err = diag_err.max((out[(i, j)] - 1.0).abs());
            } else {
                off_max = off_max.max(out[(i, j)].abs());
            }
        }
    }
    if m < 2 {
        off_max = 0.0;
    }
    let tp = tau.powi(p as i32);
    let fro = head.frobenius_sq();
    let loss = if m >= 2 {
        weighted_loss_of_predictions(&out.transpose(), &(0..m).collect::<Vec<_>>())?
    } else {
        0.0
    };
    let pass = diag_err <= 1e-10
        && off_max <= tp + 1e-10
        && (fro - m as f64).abs() <= 1e-10 * m as f64
        && loss <= tp * tp / 2.0 + 1e-12;
    Ok(LemmaReport::new("ground_truth_head_check")
        .measure("diag_error", diag_err)
        .measure("max_offdiag", off_max)
        .measure("head_frobenius_sq", fro)
        .measure("weighted_loss", loss)
        .bound("max_offdiag", tp)
        .bound("head_frobenius_sq", m as f64)
        .bound("weighted_loss", tp * tp / 2.0)
        .sized(&[m, gammas.cols(), p, head.cols()])
        .verdict(pass))
}

/// Monte-Carlo mean of the within-manifold variance estimator of `r = Bz`,
/// `z ~ N(0, Σ)`, over `trials` sets of `n` samples, against
/// `tr(B Σ Bᵀ)`. The estimator is scaled by `n/(n−1)` when `unbiased`,
/// otherwise divided by `n` only. Passes when within 3 standard errors.
pub fn vreg_unbiasedness_mc(
    b: &Matrix,
    sigma: &Matrix,
    n: usize,
    trials: usize,
    unbiased: bool,
    rng: &mut SeededRng,
) -> Result<LemmaReport> {
    if n < 2 || trials < 2 {
        return Err(GshError::Domain {
            op: "vreg_unbiasedness_mc",
            detail: "need n >= 2 and trials >= 2".into(),
        });
    }
    if !sigma.is_square() || sigma.rows() != b.cols() {
        return shape_err("vreg_unbiasedness_mc", "covariance must be square and match B");
    }
    let seed = rng.seed();
    let root = matrix_sqrt(sigma)?;
    let map = b.matmul(&root)?;
    let target = b.matmul(sigma)?.matmul_t(b)?.trace();
    let p = sigma.rows();
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..trials {
        let g = Matrix::from_vec(n, p, rng.normal_vec(n * p, 1.0))?;
        let r = Grouped::new(1, n, g.matmul_t(&map)?)?;
        let (_, v) = vhat_mn(&r)?;
        let est = if unbiased { v * n as f64 / (n - 1) as f64 } else { v };
        s += est;
        s2 += est * est;
    }
    let k = trials as f64;
    let mean = s / k;
    let se = ((s2 / k - mean * mean).max(0.0) / (k - 1.0)).sqrt();
    let dev = (mean - target).abs();
    Ok(LemmaReport::new(if unbiased {
        "vreg_unbiasedness_mc"
    } else {
        "vreg_unbiasedness_mc_divide_by_n"
    })
    .measure("mean_estimate", mean)
    .measure("target", target)
    .measure("standard_error", se)
    .measure("deviation_in_se", if se > 0.0 { dev / se } else { 0.0 })
    .bound("deviation", 3.0 * se)
    .seeded(seed)
    .sized(&[n, trials, p])
    .verdict(dev <= 3.0 * se))
}

fn combine(lemma: &str, parts: &[LemmaReport], keys: &[&str], seed: u64) -> LemmaReport {
    let mut r = LemmaReport::new(lemma).seeded(seed);
    for &k in keys {
        let worst = parts.iter().map(|p| p.get(k)).fold(f64::NEG_INFINITY, f64::max);
        r = r.measure(&format!("worst_{k}"), worst);
        if let Some(b) = parts.first().and_then(|p| p.bounds.get(k)) {
            r = r.bound(&format!("worst_{k}"), *b);
        }
    }
    r.measure("instances", parts.len() as f64)
        .measure("failures", parts.iter().filter(|p| !p.pass).count() as f64)
        .verdict(parts.iter().all(|p| p.pass))
}

/// Every check at its default sizes. Each entry is independent and seeded
/// from `seed`; the order of the result is fixed.
pub fn run_suite(seed: u64) -> Vec<Result<LemmaReport>> {
    let root = SeededRng::new(seed);
    type Job = Box<dyn Fn(SeededRng) -> Result<LemmaReport> + Send + Sync>;
    let jobs: Vec<Job> = vec![
        Box::new(|mut rng| {
            let parts = (0..100)
                .map(|_| nuclear_frobenius_equiv(&gaussian_matrix(&mut rng, 12, 9, 1.0)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(combine("nuclear_frobenius_equiv", &parts, &["gap", "reconstruction"], rng.seed()))
        }),
        Box::new(|mut rng| {
            let parts = (0..100)
                .map(|_| {
                    let w = gaussian_matrix(&mut rng, 7, 5, 1.0)?;
                    balanced_minimum_check(&w, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(combine("balanced_minimum_check", &parts, &["gram_gap", "norm_gap"], rng.seed()))
        }),
        Box::new(|mut rng| {
            let w = gaussian_matrix(&mut rng, 7, 5, 1.0)?;
            let (a, b) = balanced_factors(&w)?;
            let neg = balanced_signature(&a.scale(2.0), &b.scale(0.5))?;
            Ok(LemmaReport::new("balanced_minimum_negative_control")
                .measure("gram_gap", neg.get("gram_gap"))
                .bound("gram_gap", 1e-8)
                .seeded(rng.seed())
                .verdict(!neg.pass)
                .noted("passes when the unbalanced factorization is rejected"))
        }),
        Box::new(|rng| {
            let mut parts = Vec::new();
            for (i, (m, n)) in [(10, 8), (6, 6), (5, 9)].into_iter().enumerate() {
                for s in 0..5u64 {
                    let mut r = rng.child(i as u64 * 100 + s);
                    let t = gaussian_matrix(&mut r, m, n, 1.0)?;
                    parts.push(factorized_descent(&t, 0.1, 20_000, &mut r)?);
                }
            }
            Ok(combine("factorized_descent", &parts, &["relative_gap"], rng.seed()))
        }),
        Box::new(|mut rng| {
            let mut parts = Vec::new();
            for _ in 0..50 {
                let q = 2 + rng.below(4);
                let dim = 1 + rng.below(4);
                let objs: Vec<ConvexObjective> = (0..q)
                    .map(|_| ConvexObjective::Quadratic {
                        a: 0.1 + rng.uniform(),
                        center: rng.normal_vec(dim, 2.0),
                        offset: rng.uniform(),
                    })
                    .collect();
                parts.push(multi_objective_check(&objs, &rng.normal_vec(dim, 1.0))?);
            }
            Ok(combine("multi_objective_check", &parts, &["max_ratio"], rng.seed()))
        }),
        Box::new(|mut rng| centering_check(1000, 6, 6, &mut rng)),
        Box::new(|rng| {
            let mut parts = Vec::new();
            for t in 0..500u64 {
                let mut r = rng.child(t);
                let (m, d) = (2 + r.below(4), 3 + r.below(6));
                let w = gaussian_matrix(&mut r, m, d, 1.0)?;
                let (mm, n) = (2 + r.below(3), 2 + r.below(4));
                let z = Matrix::from_vec(mm * n, d, r.normal_vec(mm * n * d, 1.0))?;
                let z = Grouped::new(mm, n, z)?;
                let (_, mass) = vhat_mn(&z)?;
                let target = 4.0 * r.uniform();
                let z = Grouped::new(mm, n, z.data.scale((target / mass).sqrt()))?;
                let l1 = 10f64.powf(-3.0 + 3.0 * r.uniform());
                let l2 = 10f64.powf(-3.0 + 3.0 * r.uniform());
                parts.push(variance_relation_check(&w, l1, l2, &z)?);
            }
            Ok(combine("variance_relation_check", &parts, &["vhat_output"], rng.seed()))
        }),
        Box::new(|mut rng| {
            let mut parts = Vec::new();
            for s in 2..=8 {
                let tau = 1.0 / (s as f64).sqrt();
                let g = two_sided_separated(s, s, tau, &mut rng)?;
                for p in 1..=6 {
                    parts.push(ground_truth_head_check(&g, p, tau)?);
                }
            }
            Ok(combine("ground_truth_head_check", &parts, &["max_offdiag", "weighted_loss"], rng.seed()))
        }),
        Box::new(|mut rng| {
            let b = Matrix::identity(1);
            let sigma = Matrix::identity(1);
            vreg_unbiasedness_mc(&b, &sigma, 5, 10_000, true, &mut rng)
        }),
        Box::new(|mut rng| {
            let b = Matrix::identity(1);
            let sigma = Matrix::identity(1);
            let neg = vreg_unbiasedness_mc(&b, &sigma, 5, 10_000, false, &mut rng)?;
            Ok(LemmaReport::new("vreg_unbiasedness_negative_control")
                .measure("deviation_in_se", neg.get("deviation_in_se"))
                .bound("deviation_in_se", 3.0)
                .seeded(rng.seed())
                .verdict(!neg.pass)
                .noted("passes when the divide-by-n estimator is detected as biased"))
        }),
    ];
    jobs.par_iter()
        .enumerate()
        .map(|(i, job)| job(root.child(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nuclear_examples() {
        let r = nuclear_frobenius_equiv(&Matrix::from_diag(&[3.0, 4.0])).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.get("nuclear"), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get("balanced_half_sum"), 7.0, epsilon = 1e-12);
        let mut rng = SeededRng::new(1);
        let u = rng.unit_vec(5);
        let v = rng.unit_vec(4);
        let w = Matrix::from_fn(5, 4, |i, j| u[i] * v[j]);
        let r = nuclear_frobenius_equiv(&w).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.get("nuclear"), 1.0, epsilon = 1e-12);
        let r = nuclear_frobenius_equiv(&gaussian_matrix(&mut rng, 12, 9, 1.0).unwrap()).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn balanced_examples_and_negative_control() {
        let (a, b) = balanced_factors(&Matrix::identity(3)).unwrap();
        let r = balanced_signature(&a, &b).unwrap();
        assert!(r.pass);
        assert_eq!(r.get("gram_gap"), 0.0);
        let mut rng = SeededRng::new(2);
        let w = gaussian_matrix(&mut rng, 6, 4, 1.0).unwrap();
        assert!(balanced_minimum_check(&w, &mut rng).unwrap().pass);
        let (a, b) = balanced_factors(&w).unwrap();
        assert!(!balanced_signature(&a.scale(2.0), &b.scale(0.5)).unwrap().pass);
    }

    #[test]
    fn factorized_descent_examples() {
        let mut rng = SeededRng::new(3);
        let t = gaussian_matrix(&mut rng, 6, 5, 1.0).unwrap();
        let r = factorized_descent(&t, 0.0, 20_000, &mut rng).unwrap();
        assert!(r.pass);
        assert!(r.get("residual") < 1e-6, "{}", r.get("residual"));

        let r = factorized_descent(&t, 1e3, 2000, &mut rng).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.get("descent_objective"), t.frobenius_sq(), epsilon = 1e-6);

        let t = gaussian_matrix(&mut rng, 10, 8, 1.0).unwrap();
        for s in 0..5 {
            let r = factorized_descent(&t, 0.1, 20_000, &mut rng.child(s)).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn soft_threshold_benchmark_is_the_prox_optimum() {
        // brute-force check on a diagonal target: the optimum separates per singular value
        let t = Matrix::from_diag(&[2.0, 0.05]);
        let lambda = 0.1;
        let opt = soft_threshold_optimum(&t, lambda).unwrap();
        let per = |s: f64| {
            (0..=20_000)
                .map(|i| {
                    let w = s * i as f64 / 20_000.0;
                    (s - w).powi(2) + 2.0 * lambda * w
                })
                .fold(f64::INFINITY, f64::min)
        };
        assert!((opt - per(2.0) - per(0.05)).abs() < 1e-6);
    }

    #[test]
    fn multi_objective_examples() {
        let single = [ConvexObjective::Quadratic { a: 1.0, center: vec![1.0], offset: 0.5 }];
        let r = multi_objective_check(&single, &[3.0]).unwrap();
        assert!(r.pass && r.get("max_ratio") <= 1.0);

        let two = [
            ConvexObjective::Quadratic { a: 1.0, center: vec![-1.0, 0.0], offset: 0.0 },
            ConvexObjective::Quadratic { a: 1.0, center: vec![1.0, 0.0], offset: 0.0 },
        ];
        let r = multi_objective_check(&two, &[0.0, 0.5]).unwrap();
        assert!(r.pass && r.get("max_ratio") <= 2.0);

        // the hinge keeps falling towards θ = β while the other ratio grows
        // only to 2 − β there, so the bound q = 2 is nearly attained
        let beta = 0.05;
        let tight = [
            ConvexObjective::Hinge { w: vec![-1.0], b: 2.0 },
            ConvexObjective::Hinge { w: vec![1.0 / (1.0 - beta)], b: -beta / (1.0 - beta) },
        ];
        let r = multi_objective_check(&tight, &[1.0]).unwrap();
        assert!(r.pass);
        assert!(r.get("max_ratio") > 0.9 * 2.0, "{}", r.get("max_ratio"));
    }

    #[test]
    fn centering_examples() {
        let yc = Grouped::new(2, 2, Matrix::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.0, 0.7], vec![0.0, 0.7]]).unwrap()).unwrap();
        let (red, bound) = centering_instance(&yc).unwrap();
        assert_abs_diff_eq!(red, 0.0, epsilon = 1e-15);
        assert_eq!(bound, 0.0);
        let y = Grouped::new(2, 2, Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap()).unwrap();
        let (red, bound) = centering_instance(&y).unwrap();
        assert_abs_diff_eq!(bound, 0.5, epsilon = 1e-15);
        assert!(red >= 0.5 - 1e-12);
        let r = centering_check(1000, 6, 6, &mut SeededRng::new(4)).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn variance_relation_examples() {
        let w = Matrix::identity(3);
        let zero = Grouped::new(2, 3, Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 6]).unwrap()).unwrap();
        let r = variance_relation_check(&w, 0.5, 0.5, &zero).unwrap();
        assert!(r.pass);
        assert_eq!(r.get("vhat_output"), 0.0);
        let mut rng = SeededRng::new(5);
        let z = Grouped::new(2, 3, gaussian_matrix(&mut rng, 6, 3, 0.1).unwrap()).unwrap();
        let r = variance_relation_check(&w, 0.5, 0.5, &z).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.get("vhat_output"), r.get("vhat_representation"), epsilon = 1e-12);

        // features in the kernel of W: both variances vanish
        let wk = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let zk = Grouped::new(2, 2, Matrix::from_rows(&[vec![1.0, 2.0, 0.3], vec![1.0, 2.0, -0.3], vec![0.0, 1.0, 0.5], vec![0.0, 1.0, 0.1]]).unwrap()).unwrap();
        let r = variance_relation_check(&wk, 0.1, 1.0, &zk).unwrap();
        assert!(r.pass);
        assert!(r.get("vhat_output") < 1e-30 && r.get("vhat_representation") < 1e-30);
    }

    #[test]
    fn ground_truth_examples() {
        let e = Matrix::identity(4);
        let r = ground_truth_head_check(&e, 1, 0.0).unwrap();
        assert!(r.pass);
        assert_eq!(r.get("max_offdiag"), 0.0);
        let mut rng = SeededRng::new(6);
        let tau = 1.0 / 8f64.sqrt();
        let g = two_sided_separated(8, 8, tau, &mut rng).unwrap();
        let r = ground_truth_head_check(&g, 6, tau).unwrap();
        assert!(r.pass);
        assert!(r.get("max_offdiag") <= 8f64.powi(-3) + 1e-10);
        assert_abs_diff_eq!(r.get("head_frobenius_sq"), 8.0, epsilon = 1e-10);
    }

    #[test]
    fn vreg_examples_and_negative_control() {
        let mut rng = SeededRng::new(7);
        let r = vreg_unbiasedness_mc(&Matrix::identity(2), &Matrix::zeros(2, 2), 4, 100, true, &mut rng).unwrap();
        assert!(r.pass);
        assert_eq!(r.get("mean_estimate"), 0.0);
        let r = vreg_unbiasedness_mc(&Matrix::identity(1), &Matrix::identity(1), 5, 10_000, true, &mut rng).unwrap();
        assert!(r.pass, "{r:?}");
        let r = vreg_unbiasedness_mc(&Matrix::identity(1), &Matrix::identity(1), 5, 10_000, false, &mut rng).unwrap();
        assert!(!r.pass);
        let b = gaussian_matrix(&mut rng, 2, 3, 1.0).unwrap();
        let l = gaussian_matrix(&mut rng, 3, 3, 1.0).unwrap();
        let sigma = l.matmul_t(&l).unwrap();
        let r = vreg_unbiasedness_mc(&b, &sigma, 3, 10_000, true, &mut rng).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn suite_passes() {
        for r in run_suite(0) {
            let r = r.unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    fn grouped_predictions() -> impl proptest::strategy::Strategy<Value = Grouped> {
        use proptest::prelude::*;
        (2usize..6, 2usize..6).prop_flat_map(|(m, n)| {
            proptest::collection::vec(-3.0f64..3.0, m * n * m)
                .prop_map(move |v| Grouped::new(m, n, Matrix::from_vec(m * n, m, v).unwrap()).unwrap())
        })
    }

    proptest::proptest! {
        #[test]
        fn centering_reduction_meets_bound(yhat in grouped_predictions()) {
            let (red, bound) = centering_instance(&yhat).unwrap();
            proptest::prop_assert!(red >= bound - 1e-12, "reduction {red} < bound {bound}");
        }

        #[test]
        fn partial_centering_is_monotone(yhat in grouped_predictions(), t in 0.0f64..1.0) {
            let m = yhat.m;
            let labels = yhat.labels();
            let means: Vec<Vec<f64>> = (0..m).map(|l| yhat.group_mean(l)).collect();
            let shrunk = Matrix::from_fn(yhat.data.rows(), m, |i, j| {
                let mu = means[i / yhat.n][j];
                mu + t * (yhat.data[(i, j)] - mu)
            });
            let before = weighted_loss_of_predictions(&yhat.data, &labels).unwrap();
            let after = weighted_loss_of_predictions(&shrunk, &labels).unwrap();
            proptest::prop_assert!(after <= before + 1e-12);
            let (_, v0) = vhat_mn(&yhat).unwrap();
            let (_, v1) = vhat_mn(&Grouped::new(m, yhat.n, shrunk).unwrap()).unwrap();
            proptest::prop_assert!((v1 - t * t * v0).abs() <= 1e-9 * (1.0 + v0));
        }
    }
}
