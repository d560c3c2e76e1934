//! Weighted square loss with Frobenius and variance regularization, and its
//! analytic gradients.
//!
//! For a batch grouped by manifold, with `m_b` manifolds present and `n_l`
//! samples of manifold `l`, write `z = relu(Cx)`, `r = Bz`, `ŷ = Ar`,
//! `α_i = 1/(m_b n_l)` and `β_i = 1/(m_b (n_l − 1))`. Then
//!
//! ```text
//! L      = Σ_i α_i ‖w_l ⊙ (y_i − ŷ_i)‖²
//! V_reg  = Σ_i β_i ‖r_i − r̄_l‖²
//! total  = L + λ₁‖A‖²_F + λ₂(‖B‖²_F + V_reg·[use_vreg])
//!
//! ∂L/∂ŷ_i   = 2 α_i w_l² ⊙ (ŷ_i − y_i)          (rows of G_Y)
//! ∂/∂A      = G_Yᵀ R + 2λ₁A
//! ∂/∂B      = (G_Y A)ᵀ Z + 2λ₂B + 2λ₂ (diag(β) R̂)ᵀ Ẑ
//! ```
//!
//! where hats denote per-manifold centering. With the full dataset
//! (`m_b = m`, `n_l = n`) the last term is `(2λ₂/(m(n−1))) B ẐᵀẐ`.
//!
//! [`MomentObjective`] evaluates the same full-batch objective from
//! per-manifold feature moments. Because `w_l²` takes only the two values
//! `1/2` and `c = 1/(2(m−1))`, with `U = AB` and `u_l` its rows,
//!
//! ```text
//! L = c·tr(U M̄ Uᵀ) + ((1/2 − c)/m) Σ_l u_lᵀ M_l u_l − (1/m) Σ_l u_lᵀ z̄_l + 1/2
//! ```
//!
//! with `M_l = E_n[z zᵀ]`, `M̄ = E_m[M_l]` and `z̄_l = E_n[z]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::GshModel;
use crate::error::{shape_err, GshError, Result};
use crate::numlin::{dot, Grouped, Matrix, SeededRng};

/// Per-class weights for true label `label` (0-based) among `m` classes:
/// `1/√2` on the label and `1/√(2(m−1))` elsewhere, so the squared weights
/// are `1/2` and `1/(2(m−1))`.
pub fn weight_vector(m: usize, label: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(GshError::Domain {
            op: "weight_vector",
            detail: format!("need at least 2 classes, got {m}"),
        });
    }
    if label >= m {
        return Err(GshError::Domain {
            op: "weight_vector",
            detail: format!("label {label} out of range for {m} classes"),
        });
    }
    let off = 1.0 / (2.0 * (m - 1) as f64).sqrt();
    let mut w = vec![off; m];
    w[label] = std::f64::consts::FRAC_1_SQRT_2;
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_vreg: bool,
    pub lr: f64,
    pub steps: usize,
    /// `None` for full-batch gradient descent.
    #[serde(default)]
    pub batch: Option<usize>,
    /// samples drawn per manifold by the mini-batch sampler
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

fn default_group_size() -> usize {
    2
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-3,
            use_vreg: true,
            lr: 1.0,
            steps: 1000,
            batch: None,
            group_size: default_group_size(),
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    /// `λ₁ = ε/m`, `λ₂ = ε/β`.
    pub fn lambdas_from_rule(eps: f64, m: usize, beta: f64) -> (f64, f64) {
        (eps / m as f64, eps / beta)
    }

    /// Stand-in for the `s^{O(log 1/ε)}` factor in `λ₂`.
    pub fn default_beta(s: usize) -> f64 {
        (s * s) as f64
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr must be > 0, got {}", self.lr));
        }
        if self.steps == 0 {
            errs.push("train.steps must be >= 1".into());
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            errs.push("train.lambda1 and train.lambda2 must be >= 0".into());
        }
        if !(self.init_scale >= 0.0) {
            errs.push("train.init_scale must be >= 0".into());
        }
        if self.batch == Some(0) {
            errs.push("train.batch must be >= 1 when set".into());
        }
        if self.group_size == 0 || (self.use_vreg && self.group_size < 2) {
            errs.push("train.group_size must be >= 2 with variance regularization".into());
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub weighted_loss: f64,
    /// `‖A‖²_F`
    pub reg_a: f64,
    /// `‖B‖²_F`
    pub reg_b: f64,
    /// unbiased intra-manifold representation variance
    pub vreg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(weighted_loss: f64, reg_a: f64, reg_b: f64, vreg: f64, cfg: &TrainConfig) -> Self {
        let v = if cfg.use_vreg { vreg } else { 0.0 };
        Self {
            weighted_loss,
            reg_a,
            reg_b,
            vreg,
            total: weighted_loss + cfg.lambda1 * reg_a + cfg.lambda2 * (reg_b + v),
        }
    }
}

/// Inputs (one per row) with 0-based manifold labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_grouped(points: &Grouped) -> Self {
        Self {
            x: points.data.clone(),
            labels: points.labels(),
        }
    }

    pub fn subset(points: &Grouped, rows: &[usize]) -> Self {
        let labels = points.labels();
        Self {
            x: points.data.select_rows(rows),
            labels: rows.iter().map(|&i| labels[i]).collect(),
        }
    }
}

struct Groups {
    /// sample indices per label present in the batch
    members: Vec<(usize, Vec<usize>)>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn group_batch(labels: &[usize], classes: usize, need_pairs: bool) -> Result<Groups> {
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(GshError::Domain {
                op: "loss",
                detail: format!("label {l} out of range for {classes} classes"),
            });
        }
        by_label[l].push(i);
    }
    let members: Vec<(usize, Vec<usize>)> = by_label
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .collect();
    if members.is_empty() {
        return Err(GshError::Domain {
            op: "loss",
            detail: "empty batch".into(),
        });
    }
    let mb = members.len() as f64;
    let mut alpha = vec![0.0; labels.len()];
    let mut beta = vec![0.0; labels.len()];
    for (_, idx) in &members {
        let n = idx.len();
        if need_pairs && n < 2 {
            return Err(GshError::Domain {
                op: "loss",
                detail: "variance regularization needs >= 2 samples per manifold".into(),
            });
        }
        for &i in idx {
            alpha[i] = 1.0 / (mb * n as f64);
            if n >= 2 {
                beta[i] = 1.0 / (mb * (n - 1) as f64);
            }
        }
    }
    Ok(Groups {
        members,
        alpha,
        beta,
    })
}

/// Subtracts each manifold's mean row.
fn center_rows(m: &Matrix, groups: &Groups) -> Matrix {
    let mut out = m.clone();
    for (_, idx) in &groups.members {
        let mut mean = vec![0.0; m.cols()];
        for &i in idx {
            for (a, b) in mean.iter_mut().zip(m.row(i)) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= idx.len() as f64);
        for &i in idx {
            for (a, b) in out.row_mut(i).iter_mut().zip(&mean) {
                *a -= b;
            }
        }
    }
    out
}

fn scale_rows(m: &Matrix, s: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (i, &si) in s.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= si);
    }
    out
}

struct DirectPass {
    groups: Groups,
    pre: Matrix,
    z: Matrix,
    r: Matrix,
    yhat: Matrix,
    rc: Matrix,
}

fn direct_pass(model: &GshModel, batch: &Batch, cfg: &TrainConfig) -> Result<DirectPass> {
    if batch.x.rows() != batch.labels.len() {
        return shape_err("loss", "inputs and labels differ in length");
    }
    if batch.x.cols() != model.input_dim() {
        return shape_err(
            "loss",
            format!("inputs have {} columns, model expects {}", batch.x.cols(), model.input_dim()),
        );
    }
    let classes = model.classes();
    if classes < 2 {
        return shape_err("loss", "weighted loss needs at least 2 classes");
    }
    let groups = group_batch(&batch.labels, classes, cfg.use_vreg)?;
    let pre = batch.x.matmul_t(&model.c)?;
    let z = pre.map(|v| v.max(0.0));
    let r = z.matmul_t(&model.b)?;
    let yhat = r.matmul_t(&model.a)?;
    let rc = center_rows(&r, &groups);
    Ok(DirectPass {
        groups,
        pre,
        z,
        r,
        yhat,
        rc,
    })
}

fn weighted_sq(yhat: &[f64], label: usize) -> f64 {
    let m = yhat.len();
    let c = 1.0 / (2.0 * (m - 1) as f64);
    yhat.iter()
        .enumerate()
        .map(|(j, &v)| {
            if j == label {
                0.5 * (1.0 - v) * (1.0 - v)
            } else {
                c * v * v
            }
        })
        .sum()
}

/// `(1/m_b) Σ_l (1/n_l) Σ_i ‖w_l ⊙ (e_l − ŷ_i)‖²` for predictions stored
/// one per row.
pub fn weighted_loss_of_predictions(yhat: &Matrix, labels: &[usize]) -> Result<f64> {
    if yhat.rows() != labels.len() {
        return shape_err("weighted_loss", "predictions and labels differ in length");
    }
    if yhat.cols() < 2 {
        return shape_err("weighted_loss", "need at least 2 classes");
    }
    let groups = group_batch(labels, yhat.cols(), false)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| groups.alpha[i] * weighted_sq(yhat.row(i), l))
        .sum())
}

/// Objective on a batch, computed sample by sample.
pub fn loss(model: &GshModel, batch: &Batch, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let p = direct_pass(model, batch, cfg)?;
    let mut weighted = 0.0;
    let mut vreg = 0.0;
    for (i, &l) in batch.labels.iter().enumerate() {
        weighted += p.groups.alpha[i] * weighted_sq(p.yhat.row(i), l);
        vreg += p.groups.beta[i] * dot(p.rc.row(i), p.rc.row(i));
    }
    Ok(LossBreakdown::assemble(
        weighted,
        model.a.frobenius_sq(),
        model.b.frobenius_sq(),
        vreg,
        cfg,
    ))
}

/// Gradients of the total objective; `c` is populated when `with_c` is set.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Option<Matrix>,
}

pub fn gradients(model: &GshModel, batch: &Batch, cfg: &TrainConfig) -> Result<Gradients> {
    gradients_impl(model, batch, cfg, false).map(|(g, _)| g)
}

pub(crate) fn gradients_impl(
    model: &GshModel,
    batch: &Batch,
    cfg: &TrainConfig,
    with_c: bool,
) -> Result<(Gradients, LossBreakdown)> {
    let p = direct_pass(model, batch, cfg)?;
    let m = model.classes();
    let c = 1.0 / (2.0 * (m - 1) as f64);
    let mut gy = Matrix::zeros(p.yhat.rows(), m);
    let mut weighted = 0.0;
    let mut vreg = 0.0;
    for (i, &l) in batch.labels.iter().enumerate() {
        let a_i = p.groups.alpha[i];
        let yh = p.yhat.row(i);
        weighted += a_i * weighted_sq(yh, l);
        vreg += p.groups.beta[i] * dot(p.rc.row(i), p.rc.row(i));
        let row = gy.row_mut(i);
        for j in 0..m {
            row[j] = if j == l {
                2.0 * a_i * 0.5 * (yh[j] - 1.0)
            } else {
                2.0 * a_i * c * yh[j]
            };
        }
    }
    let mut ga = gy.t_matmul(&p.r)?;
    ga.axpy(2.0 * cfg.lambda1, &model.a)?;
    // ∂/∂R, T columns
    let mut gr = gy.matmul(&model.a)?;
    if cfg.use_vreg {
        gr.axpy(1.0, &scale_rows(&p.rc, &p.groups.beta).scale(2.0 * cfg.lambda2))?;
    }
    let mut gb = gr.t_matmul(&p.z)?;
    gb.axpy(2.0 * cfg.lambda2, &model.b)?;
    let gc = if with_c {
        // centering is an orthogonal projection, so routing the vreg term
        // through R (above) already gives the correct ∂/∂Z
        let gz = gr.matmul(&model.b)?;
        let mask = p.pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let gpre = gz.hadamard(&mask)?;
        Some(gpre.t_matmul(&batch.x)?)
    } else {
        None
    };
    let lb = LossBreakdown::assemble(
        weighted,
        model.a.frobenius_sq(),
        model.b.frobenius_sq(),
        vreg,
        cfg,
    );
    Ok((Gradients { a: ga, b: gb, c: gc }, lb))
}

/// Full-batch objective in terms of feature moments of a fixed `C`.
pub struct MomentObjective {
    classes: usize,
    n: usize,
    /// `m·n × D`
    z: Matrix,
    /// `m × D`
    zbar: Matrix,
    /// `E_m E_n[z zᵀ]`, `D × D`
    mbar: Matrix,
    /// `E_m[(1/(n−1)) Ẑ_lᵀ Ẑ_l]`, present when `n ≥ 2`
    within: Option<Matrix>,
}

impl MomentObjective {
    pub fn new(model: &GshModel, points: &Grouped) -> Result<Self> {
        if points.m != model.classes() {
            return shape_err(
                "MomentObjective::new",
                format!("{} manifolds but {} classes", points.m, model.classes()),
            );
        }
        if model.classes() < 2 {
            return shape_err("MomentObjective::new", "weighted loss needs at least 2 classes");
        }
        let z = model.features(&points.data)?;
        let zg = Grouped::new(points.m, points.n, z)?;
        let (m, n) = (points.m, points.n);
        let zbar = Matrix::from_rows(&(0..m).map(|l| zg.group_mean(l)).collect::<Vec<_>>())?;
        let mbar = zg.data.t_matmul(&zg.data)?.scale(1.0 / (m * n) as f64);
        let within = if n >= 2 {
            let mut centered = zg.data.clone();
            for l in 0..m {
                for i in 0..n {
                    for (a, b) in centered.row_mut(l * n + i).iter_mut().zip(zbar.row(l)) {
                        *a -= b;
                    }
                }
            }
            Some(centered.t_matmul(&centered)?.scale(1.0 / (m * (n - 1)) as f64))
        } else {
            None
        };
        Ok(Self {
            classes: m,
            n,
            z: zg.data,
            zbar,
            mbar,
            within,
        })
    }

    /// `(M_l u_l)` for every row `u_l` of `u`.
    fn second_moment_products(&self, u: &Matrix) -> Matrix {
        let n = self.n;
        let d = self.z.cols();
        let rows: Vec<Vec<f64>> = (0..self.classes)
            .into_par_iter()
            .map(|l| {
                let ul = u.row(l);
                let mut out = vec![0.0; d];
                for i in 0..n {
                    let zi = self.z.row(l * n + i);
                    let s = dot(zi, ul);
                    for (o, z) in out.iter_mut().zip(zi) {
                        *o += s * z;
                    }
                }
                out.iter_mut().for_each(|v| *v /= n as f64);
                out
            })
            .collect();
        Matrix::from_rows(&rows).expect("uniform rows")
    }

    pub fn evaluate(
        &self,
        a: &Matrix,
        b: &Matrix,
        cfg: &TrainConfig,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<(Matrix, Matrix)>)> {
        let m = self.classes as f64;
        let c = 1.0 / (2.0 * (m - 1.0));
        let u = a.matmul(b)?;
        let um = u.matmul(&self.mbar)?;
        let v = self.second_moment_products(&u);
        let term1 = c * um.dot(&u)?;
        let mut term2 = 0.0;
        let mut term3 = 0.0;
        for l in 0..self.classes {
            term2 += dot(u.row(l), v.row(l));
            term3 += dot(u.row(l), self.zbar.row(l));
        }
        let weighted = term1 + (0.5 - c) / m * term2 - term3 / m + 0.5;
        let bw = match &self.within {
            Some(w) => Some(b.matmul(w)?),
            None if cfg.use_vreg => {
                return Err(GshError::Domain {
                    op: "loss",
                    detail: "variance regularization needs n >= 2".into(),
                })
            }
            None => None,
        };
        let vreg = match &bw {
            Some(bw) => bw.dot(b)?,
            None => 0.0,
        };
        let lb = LossBreakdown::assemble(weighted, a.frobenius_sq(), b.frobenius_sq(), vreg, cfg);
        if !want_grad {
            return Ok((lb, None));
        }
        let mut gu = um.scale(2.0 * c);
        gu.axpy(2.0 * (0.5 - c) / m, &v)?;
        gu.axpy(-1.0 / m, &self.zbar)?;
        let mut ga = gu.matmul_t(b)?;
        ga.axpy(2.0 * cfg.lambda1, a)?;
        let mut gb = a.t_matmul(&gu)?;
        gb.axpy(2.0 * cfg.lambda2, b)?;
        if cfg.use_vreg {
            if let Some(bw) = &bw {
                gb.axpy(2.0 * cfg.lambda2, bw)?;
            }
        }
        Ok((lb, Some((ga, gb))))
    }
}

/// Largest relative deviation between analytic gradients and central
/// differences with step `h`, over a seeded subset of at least 200 entries
/// of `A` and `B` (all entries when there are fewer). The relative error
/// of an entry is `|g − g_fd| / max(|g|, |g_fd|, 1e-6)`.
pub fn grad_check(
    model: &GshModel,
    batch: &Batch,
    cfg: &TrainConfig,
    h: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(GshError::Domain {
            op: "grad_check",
            detail: "h must be > 0".into(),
        });
    }
    let g = gradients(model, batch, cfg)?;
    let na = model.a.as_slice().len();
    let nb = model.b.as_slice().len();
    let total = na + nb;
    let picks: Vec<usize> = if total <= 200 {
        (0..total).collect()
    } else {
        rng.permutation(total).into_iter().take(200.max(total / 10).min(total)).collect()
    };
    let mut worst: f64 = 0.0;
    for idx in picks {
        let eval = |delta: f64| -> Result<f64> {
            let mut m2 = model.clone();
            if idx < na {
                m2.a.as_mut_slice()[idx] += delta;
            } else {
                m2.b.as_mut_slice()[idx - na] += delta;
            }
            Ok(loss(&m2, batch, cfg)?.total)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let an = if idx < na {
            g.a.as_slice()[idx]
        } else {
            g.b.as_slice()[idx - na]
        };
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::Augmentation;
    use crate::net::model::ArchConfig;
    use approx::assert_abs_diff_eq;

    fn random_setup(m: usize, n: usize, seed: u64) -> (GshModel, Grouped) {
        let arch = ArchConfig {
            width: 12,
            rep_dim: 5,
            train_c: false,
        };
        let model = GshModel::new(4, m, &arch, Augmentation::None, seed, 0.5, seed + 1).unwrap();
        let mut rng = SeededRng::new(seed + 2);
        let x = Matrix::from_vec(m * n, 4, rng.normal_vec(m * n * 4, 1.0)).unwrap();
        (model, Grouped::new(m, n, x).unwrap())
    }

    #[test]
    fn weight_vector_cases() {
        let w = weight_vector(2, 0).unwrap();
        assert_abs_diff_eq!(w[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5f64.sqrt(), epsilon = 1e-15);
        let w = weight_vector(3, 0).unwrap();
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.5, epsilon = 1e-15);
        for m in 2..20 {
            let s: f64 = weight_vector(m, m - 1).unwrap().iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
        }
        assert!(weight_vector(1, 0).is_err());
        assert!(weight_vector(3, 3).is_err());
    }

    #[test]
    fn zero_predictions_give_half() {
        let (mut model, pts) = random_setup(2, 3, 1);
        model.a = Matrix::zeros(2, 5);
        let cfg = TrainConfig { use_vreg: false, ..Default::default() };
        let lb = loss(&model, &Batch::from_grouped(&pts), &cfg).unwrap();
        assert_abs_diff_eq!(lb.weighted_loss, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_representation_has_zero_vreg() {
        let (mut model, pts) = random_setup(3, 4, 2);
        model.b = Matrix::zeros(5, 12);
        let lb = loss(&model, &Batch::from_grouped(&pts), &TrainConfig::default()).unwrap();
        assert_eq!(lb.vreg, 0.0);
    }

    #[test]
    fn vreg_needs_two_per_manifold() {
        let (model, pts) = random_setup(3, 1, 3);
        let b = Batch::from_grouped(&pts);
        assert!(loss(&model, &b, &TrainConfig::default()).is_err());
        let cfg = TrainConfig { use_vreg: false, ..Default::default() };
        assert!(loss(&model, &b, &cfg).is_ok());
    }

    #[test]
    fn pure_regularizer_gradient() {
        let (mut model, pts) = random_setup(3, 2, 4);
        model.a = Matrix::identity(3).hcat(&Matrix::zeros(3, 2)).unwrap();
        model.b = Matrix::zeros(5, 12);
        let cfg = TrainConfig {
            lambda1: 0.3,
            lambda2: 0.0,
            use_vreg: false,
            ..Default::default()
        };
        // with B = 0 the data term has zero A-gradient
        let g = gradients(&model, &Batch::from_grouped(&pts), &cfg).unwrap();
        let expect = model.a.scale(0.6);
        assert!(g.a.sub(&expect).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn moment_path_matches_direct_path() {
        for (use_vreg, seed) in [(true, 10), (false, 11)] {
            let (model, pts) = random_setup(4, 6, seed);
            let cfg = TrainConfig {
                lambda1: 0.01,
                lambda2: 0.02,
                use_vreg,
                ..Default::default()
            };
            let batch = Batch::from_grouped(&pts);
            let (gd, ld) = gradients_impl(&model, &batch, &cfg, false).unwrap();
            let mo = MomentObjective::new(&model, &pts).unwrap();
            let (lm, gm) = mo.evaluate(&model.a, &model.b, &cfg, true).unwrap();
            let (ga, gb) = gm.unwrap();
            assert_abs_diff_eq!(ld.total, lm.total, epsilon = 1e-12);
            assert_abs_diff_eq!(ld.vreg, lm.vreg, epsilon = 1e-12);
            assert!(gd.a.sub(&ga).unwrap().max_abs() < 1e-12);
            assert!(gd.b.sub(&gb).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn grad_check_quadratic_only() {
        // zero inputs leave only the regularizers varying
        let (mut model, _) = random_setup(3, 3, 5);
        model.a = Matrix::from_fn(3, 5, |i, j| 0.5 + 0.1 * (i + j) as f64);
        model.b = Matrix::from_fn(5, 12, |i, j| -0.3 - 0.05 * (i + j) as f64);
        let pts = Grouped::new(3, 3, Matrix::zeros(9, 4)).unwrap();
        let cfg = TrainConfig {
            lambda1: 0.7,
            lambda2: 0.4,
            use_vreg: true,
            ..Default::default()
        };
        // each coordinate enters quadratically, so a larger step only reduces roundoff
        let err = grad_check(&model, &Batch::from_grouped(&pts), &cfg, 1e-3, &mut SeededRng::new(1)).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_full_objective() {
        let (model, pts) = random_setup(4, 5, 6);
        let batch = Batch::from_grouped(&pts);
        let mut cfg = TrainConfig {
            lambda1: 0.05,
            lambda2: 0.1,
            use_vreg: true,
            ..Default::default()
        };
        let e1 = grad_check(&model, &batch, &cfg, 1e-5, &mut SeededRng::new(2)).unwrap();
        assert!(e1 < 1e-5, "{e1}");
        cfg.use_vreg = false;
        let e2 = grad_check(&model, &batch, &cfg, 1e-5, &mut SeededRng::new(2)).unwrap();
        assert!(e2 < 1e-6, "{e2}");
    }

    #[test]
    fn c_gradient_matches_finite_differences() {
        let (model, pts) = random_setup(3, 3, 7);
        let batch = Batch::from_grouped(&pts);
        let cfg = TrainConfig {
            lambda1: 0.01,
            lambda2: 0.02,
            use_vreg: true,
            ..Default::default()
        };
        let (g, _) = gradients_impl(&model, &batch, &cfg, true).unwrap();
        let gc = g.c.unwrap();
        let h = 1e-6;
        for idx in [0usize, 5, 13, 27, 40] {
            let mut p = model.clone();
            p.c.as_mut_slice()[idx] += h;
            let mut q = model.clone();
            q.c.as_mut_slice()[idx] -= h;
            let fd = (loss(&p, &batch, &cfg).unwrap().total - loss(&q, &batch, &cfg).unwrap().total) / (2.0 * h);
            assert!((fd - gc.as_slice()[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", gc.as_slice()[idx]);
        }
    }
}
