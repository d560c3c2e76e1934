//! Synthetic manifold data: `x = f(γ, θ)` with a per-manifold identifier `γ`
//! and a per-sample shift `θ`.
//!
//! Two families are provided. Linear manifolds are `Pθ + Qγ` with `P` and `Q`
//! spanning orthogonal subspaces. Analytic manifolds are sums of pointwise
//! functions `p_i(V_i γ + W_i θ)` with `V_i, W_i` having `N(0, 1/d)` entries.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GshError, Result};
use crate::numlin::{self, dot, gaussian_matrix, io, norm, Grouped, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    UnitSphere,
    StandardGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    UnitSphere,
    /// `N(0, I/k)`
    GaussianScaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub s: usize,
    pub k: usize,
    pub tau: f64,
    pub gamma_mode: GammaMode,
    pub theta_mode: ThetaMode,
}

impl LatentConfig {
    /// Unit-sphere latents with `tau = 1/√s`.
    pub fn theory(s: usize, k: usize) -> Self {
        Self {
            s,
            k,
            tau: 1.0 / (s as f64).sqrt(),
            gamma_mode: GammaMode::UnitSphere,
            theta_mode: ThetaMode::UnitSphere,
        }
    }

    /// Standard Gaussian `γ` and `N(0, I/k)` `θ`.
    pub fn experiment(s: usize, k: usize) -> Self {
        Self {
            gamma_mode: GammaMode::StandardGaussian,
            theta_mode: ThetaMode::GaussianScaled,
            ..Self::theory(s, k)
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.s == 0 {
            errs.push("latent.s must be >= 1".to_string());
        }
        if self.k == 0 {
            errs.push("latent.k must be >= 1".to_string());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            errs.push(format!("latent.tau must lie in (0, 1), got {}", self.tau));
        }
        errs
    }

    fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(GshError::Config(errs))
        }
    }

    pub fn sample_theta(&self, rng: &mut SeededRng) -> Vec<f64> {
        match self.theta_mode {
            ThetaMode::UnitSphere => rng.unit_vec(self.k),
            ThetaMode::GaussianScaled => rng.normal_vec(self.k, 1.0 / (self.k as f64).sqrt()),
        }
    }
}

const GAMMA_ATTEMPTS_PER_ROW: usize = 10_000;

/// Draws `m` manifold identifiers. In unit-sphere mode every pair satisfies
/// `γ_aᵀγ_b ≤ tau` (rejection sampling); Gaussian mode does not reject.
pub fn sample_gammas(cfg: &LatentConfig, m: usize, rng: &mut SeededRng) -> Result<Matrix> {
    cfg.check()?;
    if m == 0 {
        return Err(GshError::Domain {
            op: "sample_gammas",
            detail: "m must be >= 1".into(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    match cfg.gamma_mode {
        GammaMode::StandardGaussian => {
            for _ in 0..m {
                rows.push(rng.normal_vec(cfg.s, 1.0));
            }
        }
        GammaMode::UnitSphere => {
            while rows.len() < m {
                let mut accepted = false;
                let mut last_conflicts = 0;
                for _ in 0..GAMMA_ATTEMPTS_PER_ROW {
                    let cand = rng.unit_vec(cfg.s);
                    last_conflicts = rows.iter().filter(|r| dot(r, &cand) > cfg.tau).count();
                    if last_conflicts == 0 {
                        rows.push(cand);
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    return Err(GshError::Infeasible {
                        tau: cfg.tau,
                        failing_pairs: last_conflicts,
                        attempts: GAMMA_ATTEMPTS_PER_ROW,
                    });
                }
            }
        }
    }
    Matrix::from_rows(&rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pointwise {
    /// `e^{x/2}`
    #[serde(rename = "exp-half")]
    ExpHalf,
    #[serde(rename = "sin")]
    Sin,
    #[serde(rename = "cos")]
    Cos,
    /// `log((1 + x²)/2)`
    #[serde(rename = "log-half-1px2")]
    LogHalf1px2,
}

impl Pointwise {
    pub const ALL: [Pointwise; 4] = [
        Pointwise::ExpHalf,
        Pointwise::Sin,
        Pointwise::Cos,
        Pointwise::LogHalf1px2,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Pointwise::ExpHalf => (x / 2.0).exp(),
            Pointwise::Sin => x.sin(),
            Pointwise::Cos => x.cos(),
            Pointwise::LogHalf1px2 => ((1.0 + x * x) / 2.0).ln(),
        }
    }

    /// Even functions lose the sign of `γ`.
    pub fn is_even(self) -> bool {
        matches!(self, Pointwise::Cos | Pointwise::LogHalf1px2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum FamilyKind {
    Linear,
    Analytic {
        functions: Vec<Pointwise>,
        per_function: usize,
    },
}

/// Everything needed to rebuild a [`ManifoldFamily`] bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub d: usize,
    pub s: usize,
    pub k: usize,
    pub normalize_x: bool,
    pub seed: u64,
}

impl FamilySpec {
    /// Named analytic presets: `sine`, `cosine`, `exp`, `log`, `mixture`
    /// (four components per function type), and `linear`.
    pub fn preset(name: &str, d: usize, s: usize, k: usize, seed: u64) -> Result<Self> {
        let analytic = |functions: Vec<Pointwise>| FamilyKind::Analytic {
            functions,
            per_function: 4,
        };
        let kind = match name {
            "linear" => FamilyKind::Linear,
            "sine" => analytic(vec![Pointwise::Sin]),
            "cosine" => analytic(vec![Pointwise::Cos]),
            "exp" => analytic(vec![Pointwise::ExpHalf]),
            "log" => analytic(vec![Pointwise::LogHalf1px2]),
            "mixture" => analytic(Pointwise::ALL.to_vec()),
            other => {
                return Err(GshError::Config(vec![format!(
                    "unknown family preset {other:?} (expected linear, sine, cosine, exp, log, mixture)"
                )]))
            }
        };
        Ok(Self {
            kind,
            d,
            s,
            k,
            normalize_x: false,
            seed,
        })
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.d == 0 || self.s == 0 || self.k == 0 {
            errs.push("family dimensions d, s, k must be >= 1".into());
        }
        match &self.kind {
            FamilyKind::Linear if self.d < self.s + self.k => {
                errs.push(format!(
                    "linear family needs d >= s + k, got d={} s={} k={}",
                    self.d, self.s, self.k
                ));
            }
            FamilyKind::Analytic {
                functions,
                per_function,
            } if functions.is_empty() || *per_function == 0 => {
                errs.push("analytic family needs at least one component".into());
            }
            _ => {}
        }
        errs
    }

    /// True when some component is an even function of its argument.
    pub fn has_even_only(&self) -> bool {
        match &self.kind {
            FamilyKind::Linear => false,
            FamilyKind::Analytic { functions, .. } => functions.iter().all(|f| f.is_even()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalyticComponent {
    pub func: Pointwise,
    /// `d × s`, acts on `γ`
    pub v: Matrix,
    /// `d × k`, acts on `θ`
    pub w: Matrix,
}

#[derive(Clone, Debug)]
pub enum FamilyVariant {
    Linear { p: Matrix, q: Matrix },
    Analytic { components: Vec<AnalyticComponent> },
}

#[derive(Clone, Debug)]
pub struct ManifoldFamily {
    pub spec: FamilySpec,
    pub variant: FamilyVariant,
}

impl ManifoldFamily {
    pub fn build(spec: &FamilySpec) -> Result<Self> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(GshError::Config(errs));
        }
        let mut rng = SeededRng::new(spec.seed);
        let variant = match &spec.kind {
            FamilyKind::Linear => {
                // one QR split into θ-columns and γ-columns
                let g = gaussian_matrix(&mut rng, spec.d, spec.k + spec.s, 1.0)?;
                let (q, _) = numlin::qr(&g);
                FamilyVariant::Linear {
                    p: q.col_block(0, spec.k),
                    q: q.col_block(spec.k, spec.k + spec.s),
                }
            }
            FamilyKind::Analytic {
                functions,
                per_function,
            } => {
                let var = 1.0 / spec.d as f64;
                let mut components = Vec::new();
                for &func in functions {
                    for _ in 0..*per_function {
                        let v = gaussian_matrix(&mut rng, spec.d, spec.s, var)?;
                        let w = gaussian_matrix(&mut rng, spec.d, spec.k, var)?;
                        components.push(AnalyticComponent { func, v, w });
                    }
                }
                FamilyVariant::Analytic { components }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            variant,
        })
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn generate_point(&self, gamma: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        if gamma.len() != self.spec.s || theta.len() != self.spec.k {
            return crate::error::shape_err(
                "generate_point",
                format!(
                    "family expects γ∈R^{} θ∈R^{}, got {} and {}",
                    self.spec.s,
                    self.spec.k,
                    gamma.len(),
                    theta.len()
                ),
            );
        }
        let mut x = match &self.variant {
            FamilyVariant::Linear { p, q } => {
                let pt = p.matvec(theta)?;
                let qg = q.matvec(gamma)?;
                pt.iter().zip(&qg).map(|(a, b)| a + b).collect::<Vec<_>>()
            }
            FamilyVariant::Analytic { components } => {
                let mut x = vec![0.0; self.spec.d];
                for c in components {
                    let vg = c.v.matvec(gamma)?;
                    let wt = c.w.matvec(theta)?;
                    for ((xi, a), b) in x.iter_mut().zip(&vg).zip(&wt) {
                        *xi += c.func.apply(a + b);
                    }
                }
                x
            }
        };
        if self.spec.normalize_x {
            let n = norm(&x);
            if n > 0.0 {
                x.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augmentation {
    None,
    /// `(x/√2, 1/√2)`
    BiasHalf,
    /// bias-half followed by the constant `√(k(d+1))/√(d+k)`
    LinearExtra,
}

impl Augmentation {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Augmentation::None => d,
            Augmentation::BiasHalf => d + 1,
            Augmentation::LinearExtra => d + 2,
        }
    }
}

/// Constant appended by [`Augmentation::LinearExtra`].
pub fn linear_extra_constant(d: usize, k: usize) -> f64 {
    ((k * (d + 1)) as f64).sqrt() / ((d + k) as f64).sqrt()
}

/// `theta_dim` is only consulted by [`Augmentation::LinearExtra`].
pub fn augment(x: &[f64], mode: Augmentation, theta_dim: usize) -> Vec<f64> {
    match mode {
        Augmentation::None => x.to_vec(),
        Augmentation::BiasHalf | Augmentation::LinearExtra => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let mut out: Vec<f64> = x.iter().map(|v| v * h).collect();
            out.push(h);
            if mode == Augmentation::LinearExtra {
                out.push(linear_extra_constant(x.len(), theta_dim));
            }
            out
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub family: FamilySpec,
    pub latent: LatentConfig,
    pub augmentation: Augmentation,
    pub seed: u64,
    /// `m × s`
    pub gammas: Matrix,
    /// `m × n × k`
    pub thetas: Grouped,
    /// `m × n × d_aug`
    pub points: Grouped,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.points.m
    }

    pub fn n(&self) -> usize {
        self.points.n
    }

    pub fn d_aug(&self) -> usize {
        self.points.width()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.points.labels()
    }

    /// Recomputes every point from the stored latents and compares bits.
    pub fn regenerates_exactly(&self, family: &ManifoldFamily) -> Result<bool> {
        for l in 0..self.m() {
            for i in 0..self.n() {
                let x = family.generate_point(self.gammas.row(l), self.thetas.sample(l, i))?;
                let x = augment(&x, self.augmentation, self.latent.k);
                let stored = self.points.sample(l, i);
                if x.iter().zip(stored).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(io::encode(&self.gammas));
        h.update(io::encode(&self.thetas.data));
        h.update(io::encode(&self.points.data));
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = DatasetManifest {
            family: self.family.clone(),
            latent: self.latent.clone(),
            augmentation: self.augmentation,
            seed: self.seed,
            m: self.m(),
            n: self.n(),
            d_aug: self.d_aug(),
            tau: self.latent.tau,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        io::write_matrix(&dir.join("gammas.f64m"), &self.gammas)?;
        io::write_matrix(&dir.join("thetas.f64m"), &self.thetas.data)?;
        io::write_matrix(&dir.join("points.f64m"), &self.points.data)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| GshError::MissingInput {
            path: mpath.clone(),
            reason: e.to_string(),
        })?;
        let man: DatasetManifest = serde_json::from_str(&text)?;
        let gammas = io::read_matrix(&dir.join("gammas.f64m"))?;
        let thetas = io::read_matrix(&dir.join("thetas.f64m"))?;
        let points = io::read_matrix(&dir.join("points.f64m"))?;
        let bad = |what: &str| GshError::Format {
            path: dir.to_path_buf(),
            detail: format!("{what} does not match manifest"),
        };
        if gammas.shape() != (man.m, man.family.s) {
            return Err(bad("gammas.f64m shape"));
        }
        if thetas.shape() != (man.m * man.n, man.family.k) {
            return Err(bad("thetas.f64m shape"));
        }
        if points.shape() != (man.m * man.n, man.d_aug) {
            return Err(bad("points.f64m shape"));
        }
        Ok(Self {
            family: man.family,
            latent: man.latent,
            augmentation: man.augmentation,
            seed: man.seed,
            gammas,
            thetas: Grouped::new(man.m, man.n, thetas)?,
            points: Grouped::new(man.m, man.n, points)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    family: FamilySpec,
    latent: LatentConfig,
    augmentation: Augmentation,
    seed: u64,
    m: usize,
    n: usize,
    d_aug: usize,
    tau: f64,
}

/// Draws `n` fresh samples on each of the given manifolds. Manifold `l`
/// uses the child stream `l` of `seed`, so the result does not depend on
/// thread scheduling.
pub fn sample_on_manifolds(
    family: &ManifoldFamily,
    cfg: &LatentConfig,
    gammas: &Matrix,
    n: usize,
    augmentation: Augmentation,
    seed: u64,
) -> Result<Dataset> {
    cfg.check()?;
    if n == 0 {
        return Err(GshError::Domain {
            op: "generate_dataset",
            detail: "n must be >= 1".into(),
        });
    }
    if cfg.s != family.spec.s || cfg.k != family.spec.k {
        return crate::error::shape_err(
            "generate_dataset",
            "latent dimensions disagree with family dimensions",
        );
    }
    let m = gammas.rows();
    let root = SeededRng::new(seed);
    let per: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..m)
        .into_par_iter()
        .map(|l| {
            let mut rng = root.child(l as u64);
            let mut thetas = Vec::with_capacity(n * cfg.k);
            let mut points = Vec::with_capacity(n * augmentation.output_dim(family.d()));
            for _ in 0..n {
                let theta = cfg.sample_theta(&mut rng);
                let x = family.generate_point(gammas.row(l), &theta)?;
                points.extend(augment(&x, augmentation, cfg.k));
                thetas.extend(theta);
            }
            Ok((thetas, points))
        })
        .collect();
    let mut thetas = Vec::with_capacity(m * n * cfg.k);
    let mut points = Vec::new();
    for r in per {
        let (t, p) = r?;
        thetas.extend(t);
        points.extend(p);
    }
    let d_aug = augmentation.output_dim(family.d());
    Ok(Dataset {
        family: family.spec.clone(),
        latent: cfg.clone(),
        augmentation,
        seed,
        gammas: gammas.clone(),
        thetas: Grouped::new(m, n, Matrix::from_vec(m * n, cfg.k, thetas)?)?,
        points: Grouped::new(m, n, Matrix::from_vec(m * n, d_aug, points)?)?,
    })
}

/// Draws `m` identifiers and `n` samples per manifold.
pub fn generate_dataset(
    family: &ManifoldFamily,
    cfg: &LatentConfig,
    m: usize,
    n: usize,
    augmentation: Augmentation,
    seed: u64,
) -> Result<Dataset> {
    let mut grng = SeededRng::new(seed).labeled("gammas");
    let gammas = sample_gammas(cfg, m, &mut grng)?;
    sample_on_manifolds(
        family,
        cfg,
        &gammas,
        n,
        augmentation,
        numlin::derive_seed(seed, "thetas"),
    )
    .map(|mut ds| {
        ds.seed = seed;
        ds
    })
}
