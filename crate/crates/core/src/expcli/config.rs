//! Experiment configuration.
//!
//! The file format is TOML (JSON is accepted when the file ends in `.json`).
//! Every seed used anywhere in a run is written out explicitly; the presets
//! fill them from one root seed through [`ExperimentConfig::reseed`].
//!
//! ```toml
//! name = "desk-mixture"
//!
//! [data]
//! family = "mixture"          # linear | sine | cosine | exp | log | mixture
//! m = 20
//! n_train = 400
//! n_test = 100
//! d = 30
//! family_seed = 123
//! seed = 456
//! test_seed = 789
//!
//! [data.latent]
//! s = 8
//! k = 8
//! tau = 0.35
//! gamma_mode = "standard-gaussian"   # or unit-sphere
//! theta_mode = "gaussian-scaled"     # or unit-sphere
//!
//! [arch]
//! width = 512
//! rep_dim = 64
//! train_c = false
//! augmentation = "bias-half"         # none | bias-half | linear-extra
//!
//! [train]
//! lambda1 = 0.0005
//! lambda2 = 0.00015625
//! use_vreg = true
//! lr = 1.0
//! steps = 3000
//! # batch = 32                       # omit for full-batch descent
//! group_size = 2
//! seed = 42
//! init_scale = 0.01
//!
//! [eval]
//! # epsilon = 0.2                    # omit to use the training V̂
//! rho = 3.0
//! pair_cap = 1000000
//! histogram_bins = 50
//! seed = 7
//!
//! [transfer]
//! n_fresh_manifolds = 50
//! samples_each = 5
//! seed = 8
//!
//! [probe]
//! manifolds = 200
//! samples_each = 5
//! test_samples = 1000
//! seed = 9
//! test_seed = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GshError, Result};
use crate::manifolds::{Augmentation, FamilySpec, LatentConfig};
use crate::net::{ArchConfig, TrainConfig};
use crate::numlin::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub family: String,
    pub latent: LatentConfig,
    pub m: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub family_seed: u64,
    pub seed: u64,
    pub test_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub width: usize,
    pub rep_dim: usize,
    #[serde(default)]
    pub train_c: bool,
    pub augmentation: Augmentation,
}

impl ArchSection {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            width: self.width,
            rep_dim: self.rep_dim,
            train_c: self.train_c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// GSH verdict threshold; the training `V̂_mn` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub rho: f64,
    pub pair_cap: usize,
    pub histogram_bins: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub n_fresh_manifolds: usize,
    pub samples_each: usize,
    /// Lookup radius parameter; the training `V̂_mn` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub manifolds: usize,
    pub samples_each: usize,
    pub test_samples: usize,
    pub seed: u64,
    pub test_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataConfig,
    pub arch: ArchSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub transfer: TransferConfig,
    pub probe: ProbeConfig,
}

pub const PRESETS: [&str; 7] = [
    "desk-mixture",
    "desk-sine",
    "desk-cosine",
    "desk-exp",
    "desk-log",
    "desk-linear",
    "paper-synthetic",
];

/// Target `ε` for the desk presets' `λ₁ = ε/m`, `λ₂ = ε/s²`.
pub const DESK_EPSILON: f64 = 0.01;

/// Seeds are kept below 2⁶³ so that they fit TOML integers.
fn seed_of(root: u64, label: &str) -> u64 {
    derive_seed(root, label) & (i64::MAX as u64)
}

impl ExperimentConfig {
    /// Named presets; see [`PRESETS`]. `desk-*` use the frozen first layer,
    /// `paper-synthetic` trains every layer with mini-batches.
    pub fn preset(name: &str) -> Result<Self> {
        let desk_family = name.strip_prefix("desk-");
        let mut cfg = match (name, desk_family) {
            ("paper-synthetic", _) => Self::build(name, "mixture", 50, 8000, 2000, 11, 11, 1000, 64)
                .with_train(TrainConfig {
                    lambda1: 0.01,
                    lambda2: 0.01,
                    use_vreg: true,
                    lr: 0.1,
                    // 200 epochs of m·n/batch steps
                    steps: 200 * 50 * 8000 / 32,
                    batch: Some(32),
                    group_size: 2,
                    seed: 0,
                    init_scale: 0.01,
                })
                .with_train_c(),
            (_, Some(fam)) if ["mixture", "sine", "cosine", "exp", "log", "linear"].contains(&fam) => {
                Self::build(name, fam, 20, 400, 100, 8, 8, 512, 64)
            }
            _ => {
                return Err(GshError::Config(vec![format!(
                    "unknown preset {name:?} (expected one of {})",
                    PRESETS.join(", ")
                )]))
            }
        };
        cfg.reseed(1);
        Ok(cfg)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        name: &str,
        family: &str,
        m: usize,
        n_train: usize,
        n_test: usize,
        s: usize,
        k: usize,
        width: usize,
        rep_dim: usize,
    ) -> Self {
        let d = if family == "linear" { 30.max(s + k) } else { 30 };
        let (lambda1, lambda2) = TrainConfig::lambdas_from_rule(DESK_EPSILON, m, TrainConfig::default_beta(s));
        Self {
            name: name.to_string(),
            data: DataConfig {
                family: family.to_string(),
                latent: LatentConfig::experiment(s, k),
                m,
                n_train,
                n_test,
                d,
                family_seed: 0,
                seed: 0,
                test_seed: 0,
            },
            arch: ArchSection {
                width,
                rep_dim,
                train_c: false,
                augmentation: Augmentation::BiasHalf,
            },
            train: TrainConfig {
                lambda1,
                lambda2,
                steps: 3000,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                epsilon: None,
                rho: 3.0,
                pair_cap: crate::gshmetrics::DEFAULT_PAIR_CAP,
                histogram_bins: 50,
                seed: 0,
            },
            transfer: TransferConfig {
                n_fresh_manifolds: 50,
                samples_each: 5,
                epsilon: None,
                seed: 0,
            },
            probe: ProbeConfig {
                manifolds: 200,
                samples_each: 5,
                test_samples: 1000,
                seed: 0,
                test_seed: 0,
            },
        }
    }

    fn with_train(mut self, t: TrainConfig) -> Self {
        self.train = t;
        self
    }

    fn with_train_c(mut self) -> Self {
        self.arch.train_c = true;
        self
    }

    /// Overwrites every seed with one derived from `root`.
    pub fn reseed(&mut self, root: u64) {
        self.data.family_seed = seed_of(root, "family");
        self.data.seed = seed_of(root, "train-data");
        self.data.test_seed = seed_of(root, "test-data");
        self.train.seed = seed_of(root, "train");
        self.eval.seed = seed_of(root, "eval");
        self.transfer.seed = seed_of(root, "transfer");
        self.probe.seed = seed_of(root, "probe");
        self.probe.test_seed = seed_of(root, "probe-test");
    }

    pub fn family_spec(&self) -> Result<FamilySpec> {
        let d = &self.data;
        FamilySpec::preset(&d.family, d.d, d.latent.s, d.latent.k, d.family_seed)
    }

    /// Every problem with the config, one message per field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.data;
        match self.family_spec() {
            Ok(spec) => errs.extend(spec.validate().into_iter().map(|e| format!("data: {e}"))),
            Err(GshError::Config(e)) => errs.extend(e.into_iter().map(|e| format!("data.family: {e}"))),
            Err(e) => errs.push(format!("data.family: {e}")),
        }
        errs.extend(d.latent.validate().into_iter().map(|e| format!("data.{e}")));
        if d.m < 2 {
            errs.push(format!("data.m must be >= 2, got {}", d.m));
        }
        if d.n_train == 0 {
            errs.push("data.n_train must be >= 1".into());
        }
        if self.train.use_vreg && d.n_train < 2 {
            errs.push("data.n_train must be >= 2 with variance regularization".into());
        }
        if d.n_test == 0 {
            errs.push("data.n_test must be >= 1".into());
        }
        if d.d == 0 {
            errs.push("data.d must be >= 1".into());
        }
        if self.arch.width == 0 {
            errs.push("arch.width must be >= 1".into());
        }
        if self.arch.rep_dim == 0 {
            errs.push("arch.rep_dim must be >= 1".into());
        }
        errs.extend(self.train.validate());
        if let Some(b) = self.train.batch {
            if b % self.train.group_size.max(1) != 0 {
                errs.push(format!(
                    "train.batch ({b}) must be a multiple of train.group_size ({})",
                    self.train.group_size
                ));
            }
        }
        if let Some(e) = self.eval.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                errs.push(format!("eval.epsilon must be > 0, got {e}"));
            }
        }
        if !(self.eval.rho > 0.0 && self.eval.rho.is_finite()) {
            errs.push(format!("eval.rho must be > 0, got {}", self.eval.rho));
        }
        if self.eval.pair_cap == 0 {
            errs.push("eval.pair_cap must be >= 1".into());
        }
        if self.eval.histogram_bins == 0 {
            errs.push("eval.histogram_bins must be >= 1".into());
        }
        if self.transfer.n_fresh_manifolds == 0 {
            errs.push("transfer.n_fresh_manifolds must be >= 1".into());
        }
        if self.transfer.samples_each < 2 {
            errs.push("transfer.samples_each must be >= 2 (one enrolled, the rest queried)".into());
        }
        if let Some(e) = self.transfer.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                errs.push(format!("transfer.epsilon must be >= 0, got {e}"));
            }
        }
        if self.probe.manifolds == 0 || self.probe.samples_each == 0 {
            errs.push("probe.manifolds and probe.samples_each must be >= 1".into());
        }
        if self.probe.test_samples == 0 {
            errs.push("probe.test_samples must be >= 1".into());
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(GshError::Config(errs))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GshError::Config(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GshError::Config(vec![e.to_string()]))
    }

    /// Reads TOML, or JSON when the extension is `.json`. Does not validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GshError::MissingInput {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| GshError::Config(vec![format!("{}: {e}", path.display())]))
        } else {
            toml::from_str(&text).map_err(|e| GshError::Config(vec![format!("{}: {e}", path.display())]))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. `name` is a label and does not
    /// take part.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("name");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert!(cfg.validate().is_empty(), "{name}: {:?}", cfg.validate());
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        }
    }

    #[test]
    fn paper_preset_fields() {
        let c = ExperimentConfig::preset("paper-synthetic").unwrap();
        assert_eq!((c.data.m, c.data.n_train, c.data.n_test), (50, 8000, 2000));
        assert_eq!((c.data.latent.s, c.data.latent.k), (11, 11));
        assert_eq!(c.arch.width, 1000);
        assert!(c.arch.train_c);
        assert_eq!(c.train.lr, 0.1);
        assert_eq!(c.train.batch, Some(32));
        assert_eq!(c.train.steps, 200 * c.data.m * c.data.n_train / 32);
        assert_eq!((c.train.lambda1, c.train.lambda2), (0.01, 0.01));
    }

    #[test]
    fn desk_preset_fields() {
        let c = ExperimentConfig::preset("desk-mixture").unwrap();
        assert_eq!((c.data.m, c.data.n_train, c.data.n_test, c.data.d), (20, 400, 100, 30));
        assert_eq!((c.data.latent.s, c.data.latent.k), (8, 8));
        assert_eq!((c.arch.width, c.arch.rep_dim), (512, 64));
        assert!(!c.arch.train_c);
        assert!(c.train.steps <= 3000);
    }

    #[test]
    fn validation_lists_every_field() {
        let mut c = ExperimentConfig::preset("desk-mixture").unwrap();
        c.data.m = 1;
        c.arch.width = 0;
        c.train.lr = -1.0;
        c.transfer.samples_each = 1;
        c.data.family = "spiral".into();
        let errs = c.validate();
        for key in ["data.m", "arch.width", "train.lr", "transfer.samples_each", "data.family"] {
            assert!(errs.iter().any(|e| e.contains(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = ExperimentConfig::preset("desk-mixture").unwrap();
        let mut b = a.clone();
        b.name = "renamed".into();
        assert_eq!(a.hash(), b.hash());
        b.train.lambda2 *= 2.0;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.reseed(2);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = ExperimentConfig::preset("desk-sine").unwrap();
        let text = cfg.to_toml().unwrap().replace("[arch]", "[arch]\nwidht = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(ExperimentConfig::preset("desk-spiral"), Err(GshError::Config(_))));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_keeps_hash(
            preset in proptest::sample::select(PRESETS.to_vec()),
            root in 0u64..1_000_000,
            width in 1usize..4096,
            lambda in 1e-8f64..1.0,
        ) {
            let mut cfg = ExperimentConfig::preset(preset).unwrap();
            cfg.reseed(root);
            cfg.arch.width = width;
            cfg.train.lambda1 = lambda;
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            proptest::prop_assert_eq!(back.hash(), cfg.hash());
            proptest::prop_assert_eq!(&back, &cfg);
            proptest::prop_assert_eq!(cfg.short_hash().len(), 12);
            proptest::prop_assert!(cfg.hash().starts_with(&cfg.short_hash()));
        }
    }
}
