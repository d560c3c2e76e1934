//! Stages of an experiment run. Each stage reads its inputs from, and writes
//! its outputs to, one run directory:
//!
//! ```text
//! config.toml
//! data/{train,test,fresh,probe,probe_test}/   datasets (manifest.json + .f64m)
//! model/                                       checkpoint (model.json + A/B/C.f64m)
//! trace.csv
//! gsh_report.json          train / test / transfer GSH metrics
//! hist_{train,test,transfer}.csv
//! oneshot_report.json
//! probe_report.json
//! FAILED                   only after a failed stage
//! ```
//!
//! Metric files carry no timestamps, so reruns of one config are byte-equal.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use crate::error::{GshError, Result};
use crate::gshmetrics::{export_histograms, write_histogram_csv, GshReport};
use crate::manifolds::{generate_dataset, sample_on_manifolds, Dataset, ManifoldFamily};
use crate::net::{train, write_trace_csv, GshModel, TraceRow, TrainConfig};
use crate::numlin::SeededRng;
use crate::transfer::{
    expand_gammas, gamma_probe, normalized_recovery_distance, oneshot_eval, OneShotReport, ProbeReport,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Train,
    Eval,
    Oneshot,
    Probe,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Gen, Stage::Train, Stage::Eval, Stage::Oneshot, Stage::Probe];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Oneshot => "oneshot",
            Stage::Probe => "probe",
        }
    }
}

/// A run directory bound to its config.
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
}

impl Run {
    /// Uses `dir` as the run directory, writing `config.toml` into it.
    pub fn create(dir: &Path, config: ExperimentConfig) -> Result<Self> {
        config.check()?;
        fs::create_dir_all(dir)?;
        config.save(&dir.join(CONFIG_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
        })
    }

    /// Reopens a run directory from its stored config.
    pub fn open(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        config.check()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
        })
    }

    fn provenance(&self) -> serde_json::Value {
        json!({
            "config": self.config.name,
            "config_hash": self.config.hash(),
            "distance_convention": crate::gshmetrics::DISTANCE_CONVENTION,
        })
    }

    fn data_dir(&self, which: &str) -> PathBuf {
        self.dir.join("data").join(which)
    }

    fn load_data(&self, which: &str) -> Result<Dataset> {
        let dir = self.data_dir(which);
        if !dir.join("manifest.json").exists() {
            return Err(GshError::MissingInput {
                path: dir.join("manifest.json"),
                reason: "run the gen stage first".into(),
            });
        }
        Dataset::load(&dir)
    }

    fn load_model(&self) -> Result<GshModel> {
        let dir = self.dir.join("model");
        if !dir.join("model.json").exists() {
            return Err(GshError::MissingInput {
                path: dir.join("model.json"),
                reason: "run the train stage first".into(),
            });
        }
        GshModel::load(&dir)
    }

    fn family(&self) -> Result<ManifoldFamily> {
        ManifoldFamily::build(&self.config.family_spec()?)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        info!("stage {} in {}", stage.name(), self.dir.display());
        let r = match stage {
            Stage::Gen => self.gen(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval(),
            Stage::Oneshot => self.oneshot().map(|_| ()),
            Stage::Probe => self.probe().map(|_| ()),
        };
        if let Err(e) = &r {
            let _ = fs::write(
                self.dir.join(FAILED_MARKER),
                format!("stage: {}\nerror: {e}\n", stage.name()),
            );
        }
        r
    }

    /// Train, test, fresh-manifold, probe and probe-test datasets.
    pub fn gen(&self) -> Result<()> {
        let c = &self.config;
        let family = self.family()?;
        let lat = &c.data.latent;
        let aug = c.arch.augmentation;
        let train = generate_dataset(&family, lat, c.data.m, c.data.n_train, aug, c.data.seed)?;
        train.save(&self.data_dir("train"))?;
        sample_on_manifolds(&family, lat, &train.gammas, c.data.n_test, aug, c.data.test_seed)?
            .save(&self.data_dir("test"))?;
        generate_dataset(
            &family,
            lat,
            c.transfer.n_fresh_manifolds,
            c.transfer.samples_each,
            aug,
            c.transfer.seed,
        )?
        .save(&self.data_dir("fresh"))?;
        generate_dataset(&family, lat, c.probe.manifolds, c.probe.samples_each, aug, c.probe.seed)?
            .save(&self.data_dir("probe"))?;
        generate_dataset(&family, lat, c.probe.test_samples, 1, aug, c.probe.test_seed)?
            .save(&self.data_dir("probe_test"))?;
        Ok(())
    }

    pub fn train(&self) -> Result<()> {
        let data = self.load_data("train")?;
        let c = &self.config;
        let res = train(&data.points, c.arch.augmentation, &c.arch.arch(), &c.train)?;
        let fl = res.final_loss();
        info!(
            "trained: total {:.4e}, weighted {:.4e}, {} lr halvings",
            fl.total, fl.weighted_loss, res.lr_halvings
        );
        res.model.save(
            &self.dir.join("model"),
            json!({
                "config_hash": c.hash(),
                "train": c.train,
                "lr_halvings": res.lr_halvings,
                "final_loss": fl,
            }),
        )?;
        write_trace_csv(&self.dir.join("trace.csv"), &res.trace)
    }

    /// `V̂_mn` of the training representations, the default `ε`.
    pub fn train_vhat(&self, model: &GshModel) -> Result<f64> {
        let data = self.load_data("train")?;
        Ok(GshReport::compute(&model.represent_grouped(&data.points)?)?.vhat_mn)
    }

    pub fn eval(&self) -> Result<()> {
        let model = self.load_model()?;
        let c = &self.config;
        let mut reports = serde_json::Map::new();
        let mut eps = c.eval.epsilon;
        let mut rng = SeededRng::new(c.eval.seed);
        for (key, which) in [("train", "train"), ("test", "test"), ("transfer", "fresh")] {
            let data = self.load_data(which)?;
            let reps = model.represent_grouped(&data.points)?;
            let rep = GshReport::compute(&reps)?;
            let e = *eps.get_or_insert(rep.vhat_mn);
            let rep = rep.with_verdict(e, c.eval.rho);
            let rows = export_histograms(&reps, c.eval.histogram_bins, c.eval.pair_cap, &mut rng)?;
            write_histogram_csv(&self.dir.join(format!("hist_{key}.csv")), &rows)?;
            let mut v = serde_json::to_value(&rep)?;
            if which != "fresh" {
                v["zero_one_error"] = json!(model.zero_one_error(&data.points)?);
            }
            reports.insert(key.into(), v);
        }
        let out = json!({
            "reports": reports,
            "provenance": self.provenance(),
            "model_hash": model.content_hash(),
        });
        fs::write(self.dir.join("gsh_report.json"), serde_json::to_string_pretty(&out)?)?;
        Ok(())
    }

    pub fn oneshot(&self) -> Result<OneShotReport> {
        let model = self.load_model()?;
        let fresh = self.load_data("fresh")?;
        let eps = match self.config.transfer.epsilon {
            Some(e) => e,
            None => self.train_vhat(&model)?,
        };
        let rep = oneshot_eval(&model, &fresh.points, eps)?;
        rep.write_json(&self.dir.join("oneshot_report.json"), self.provenance())?;
        Ok(rep)
    }

    pub fn probe(&self) -> Result<ProbeReport> {
        let model = self.load_model()?;
        let probe = self.load_data("probe")?;
        let test = self.load_data("probe_test")?;
        let reps = model.represent(&probe.points.data)?;
        let gammas = expand_gammas(&probe.gammas, probe.n());
        let fit = gamma_probe(&reps, &gammas)?;
        let test_reps = model.represent(&test.points.data)?;
        let rep = ProbeReport {
            normalized_distance: normalized_recovery_distance(&fit, &test_reps, &test.gammas)?,
            probe_samples: reps.rows(),
            test_samples: test_reps.rows(),
            ridge_used: fit.ridge_used,
        };
        rep.write_json(&self.dir.join("probe_report.json"), self.provenance())?;
        Ok(rep)
    }
}

/// `run-<unix seconds>-<config hash>`
pub fn run_dir_name(config: &ExperimentConfig) -> String {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("run-{ts}-{}", config.short_hash())
}

/// Runs every stage in a fresh run directory under `out_root` and returns
/// its path. A failed stage leaves a `FAILED` marker naming it.
pub fn run_pipeline(config: ExperimentConfig, out_root: &Path) -> Result<PathBuf> {
    config.check()?;
    let mut dir = out_root.join(run_dir_name(&config));
    let mut k = 1;
    while dir.exists() {
        dir = out_root.join(format!("{}-{k}", run_dir_name(&config)));
        k += 1;
    }
    let run = Run::create(&dir, config)?;
    for stage in Stage::ALL {
        run.run_stage(stage)?;
    }
    Ok(dir)
}

/// [`run_pipeline`] from a config file.
pub fn run_pipeline_file(path: &Path, out_root: &Path) -> Result<PathBuf> {
    run_pipeline(ExperimentConfig::load(path)?, out_root)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationArm {
    pub label: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_vreg: bool,
    pub vhat_mn: f64,
    pub rho_hat: f64,
    pub test_error: f64,
    pub lr_halvings: usize,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub baseline: AblationArm,
    pub large_lambda_no_vreg: AblationArm,
    pub tiny_lambda_no_vreg: AblationArm,
    /// tiny-λ no-vreg `V̂` ≤ large-λ no-vreg `V̂`
    pub trend_holds: bool,
    /// tiny ≤ large ≤ baseline
    pub ordering_holds: bool,
    /// baseline has the smallest `V̂` of the three
    pub vreg_lowest: bool,
}

pub const ABLATION_LARGE_LAMBDA: f64 = 1e-2;
pub const ABLATION_TINY_LAMBDA: f64 = 1e-6;

/// Trains the config as given (baseline) and twice without variance
/// regularization, at `λ = 1e-2` and `λ = 1e-6`, on the same data.
pub fn ablation_no_vreg(config: &ExperimentConfig) -> Result<AblationReport> {
    config.check()?;
    let family = ManifoldFamily::build(&config.family_spec()?)?;
    let d = &config.data;
    let aug = config.arch.augmentation;
    let data = generate_dataset(&family, &d.latent, d.m, d.n_train, aug, d.seed)?;
    let test = sample_on_manifolds(&family, &d.latent, &data.gammas, d.n_test, aug, d.test_seed)?;
    let arm = |label: &str, tc: TrainConfig| -> Result<AblationArm> {
        info!("ablation arm {label}");
        let res = train(&data.points, aug, &config.arch.arch(), &tc)?;
        let rep = GshReport::compute(&res.model.represent_grouped(&data.points)?)?;
        Ok(AblationArm {
            label: label.to_string(),
            lambda1: tc.lambda1,
            lambda2: tc.lambda2,
            use_vreg: tc.use_vreg,
            vhat_mn: rep.vhat_mn,
            rho_hat: rep.rho_hat,
            test_error: res.model.zero_one_error(&test.points)?,
            lr_halvings: res.lr_halvings,
            trace: res.trace,
        })
    };
    let no_vreg = |lambda: f64| TrainConfig {
        lambda1: lambda,
        lambda2: lambda,
        use_vreg: false,
        ..config.train.clone()
    };
    let baseline = arm("baseline", config.train.clone())?;
    let large = arm("large-lambda-no-vreg", no_vreg(ABLATION_LARGE_LAMBDA))?;
    let tiny = arm("tiny-lambda-no-vreg", no_vreg(ABLATION_TINY_LAMBDA))?;
    Ok(AblationReport {
        trend_holds: tiny.vhat_mn <= large.vhat_mn,
        ordering_holds: tiny.vhat_mn <= large.vhat_mn && large.vhat_mn <= baseline.vhat_mn,
        vreg_lowest: baseline.vhat_mn <= large.vhat_mn && baseline.vhat_mn <= tiny.vhat_mn,
        baseline,
        large_lambda_no_vreg: large,
        tiny_lambda_no_vreg: tiny,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("desk-sine").unwrap();
        c.data.m = 4;
        c.data.n_train = 12;
        c.data.n_test = 6;
        c.data.d = 6;
        c.data.latent.s = 3;
        c.data.latent.k = 2;
        c.arch.width = 32;
        c.arch.rep_dim = 6;
        c.train.steps = 20;
        c.transfer.n_fresh_manifolds = 5;
        c.transfer.samples_each = 3;
        c.probe.manifolds = 10;
        c.probe.samples_each = 2;
        c.probe.test_samples = 15;
        c.eval.histogram_bins = 8;
        c
    }

    #[test]
    fn stages_need_their_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        let run = Run::create(tmp.path(), tiny_config()).unwrap();
        match run.run_stage(Stage::Train) {
            Err(GshError::MissingInput { path, .. }) => assert!(path.ends_with("data/train/manifest.json")),
            other => panic!("unexpected {other:?}"),
        }
        let marker = fs::read_to_string(tmp.path().join(FAILED_MARKER)).unwrap();
        assert!(marker.starts_with("stage: train"));
        match run.run_stage(Stage::Eval) {
            Err(GshError::MissingInput { path, .. }) => assert!(path.ends_with("model/model.json")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gen_alone_writes_only_data() {
        let tmp = tempfile::tempdir().unwrap();
        let run = Run::create(tmp.path(), tiny_config()).unwrap();
        run.run_stage(Stage::Gen).unwrap();
        let mut names: Vec<String> = fs::read_dir(tmp.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, ["config.toml", "data"]);
        let test = Dataset::load(&tmp.path().join("data/test")).unwrap();
        let train = Dataset::load(&tmp.path().join("data/train")).unwrap();
        assert_eq!(test.gammas, train.gammas);
    }

    #[test]
    fn full_pipeline_is_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_pipeline(tiny_config(), tmp.path()).unwrap();
        let b = run_pipeline(tiny_config(), tmp.path()).unwrap();
        assert_ne!(a, b);
        let name = a.file_name().unwrap().to_string_lossy().into_owned();
        assert!(name.starts_with("run-") && name.contains(&tiny_config().short_hash()));
        for f in [
            "gsh_report.json",
            "oneshot_report.json",
            "probe_report.json",
            "trace.csv",
            "hist_train.csv",
            "hist_test.csv",
            "hist_transfer.csv",
            "model/A.f64m",
        ] {
            let x = fs::read(a.join(f)).unwrap();
            let y = fs::read(b.join(f)).unwrap();
            assert_eq!(x, y, "{f} differs between reruns");
        }
        assert!(!a.join(FAILED_MARKER).exists());
    }

    #[test]
    fn stages_resume_from_disk() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let run = Run::create(tmp.path(), tiny_config()).unwrap();
            run.run_stage(Stage::Gen).unwrap();
            run.run_stage(Stage::Train).unwrap();
        }
        let run = Run::open(tmp.path()).unwrap();
        run.run_stage(Stage::Eval).unwrap();
        let rep = run.oneshot().unwrap();
        assert_eq!(rep.manifolds, 5);
        assert_eq!(rep.queries, 10);
    }

    #[test]
    fn ablation_reports_three_arms() {
        let rep = ablation_no_vreg(&tiny_config()).unwrap();
        assert!(rep.baseline.use_vreg);
        assert!(!rep.tiny_lambda_no_vreg.use_vreg);
        assert_eq!(rep.large_lambda_no_vreg.lambda1, ABLATION_LARGE_LAMBDA);
        assert_eq!(rep.tiny_lambda_no_vreg.lambda2, ABLATION_TINY_LAMBDA);
        for arm in [&rep.baseline, &rep.large_lambda_no_vreg, &rep.tiny_lambda_no_vreg] {
            assert_eq!(arm.trace.len(), 21);
        }
    }
}
