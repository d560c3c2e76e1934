use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gshlab::expcli::{
    ablation_no_vreg, kernel_check, lemmas, run_pipeline, write_kernel_csv, ExperimentConfig, Run, Stage,
};

#[derive(Parser)]
#[command(name = "gshlab", version, about = "Geometry sensitive hashing experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// config file (.toml or .json) or a preset name such as desk-mixture
    #[arg(long)]
    config: Option<String>,
    /// root seed; overrides every seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// all stages in a new run-<timestamp>-<hash> directory under --out
    Run(Common),
    /// generate datasets into the run directory --out
    Gen(Common),
    /// train on the datasets in --out
    Train(Common),
    /// GSH reports and histograms
    Eval(Common),
    /// one-shot lookup on fresh manifolds
    Oneshot(Common),
    /// linear recovery of manifold identifiers
    Probe(Common),
    /// vreg on / off ablation
    Ablation(Common),
    /// random-feature Gram error against the arc-cosine kernel
    KernelCheck {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        widths: Vec<usize>,
        /// number of seeds, counting up from --seed
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 30)]
        dim: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// oracle suite with aggregate verdict
    Lemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// print a preset config as TOML
    Preset { name: String },
}

fn load_config(spec: &str, seed: Option<u64>) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    let mut cfg = if path.exists() {
        ExperimentConfig::load(path)?
    } else {
        ExperimentConfig::preset(spec).with_context(|| format!("{spec} is neither a file nor a preset"))?
    };
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    cfg.check()?;
    Ok(cfg)
}

/// Opens the run directory `--out`, creating it from `--config` if needed.
fn open_run(c: &Common, create: bool) -> Result<Run> {
    let stored = c.out.join(gshlab::expcli::pipeline::CONFIG_FILE);
    match (&c.config, stored.exists()) {
        (Some(spec), true) => {
            let cfg = load_config(spec, c.seed)?;
            let run = Run::open(&c.out)?;
            if run.config.hash() != cfg.hash() {
                bail!("{} holds a different config; use a new --out", stored.display());
            }
            Ok(run)
        }
        (Some(spec), false) if create => Ok(Run::create(&c.out, load_config(spec, c.seed)?)?),
        (None, true) => {
            if c.seed.is_some() {
                bail!("--seed needs --config");
            }
            Ok(Run::open(&c.out)?)
        }
        _ => bail!(
            "missing input {}: run `gshlab gen --config ... --out {}` first",
            stored.display(),
            c.out.display()
        ),
    }
}

fn stage(c: &Common, stage: Stage, out: &mut dyn Write) -> Result<()> {
    let run = open_run(c, stage == Stage::Gen)?;
    run.run_stage(stage)
        .with_context(|| format!("stage {} failed", stage.name()))?;
    writeln!(out, "{} done: {}", stage.name(), run.dir.display())?;
    Ok(())
}

fn thread_cap(var: Option<String>) -> Result<Option<usize>> {
    var.map(|v| v.parse().with_context(|| format!("GSHLAB_THREADS={v:?} is not a count")))
        .transpose()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = thread_cap(std::env::var("GSHLAB_THREADS").ok())? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        info!("using {n} worker threads");
    }
    execute(Cli::parse().cmd, &mut std::io::stdout().lock())
}

fn execute(cmd: Cmd, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Cmd::Run(c) => {
            let spec = c.config.as_deref().context("run needs --config")?;
            let cfg = load_config(spec, c.seed)?;
            std::fs::create_dir_all(&c.out)?;
            let dir = run_pipeline(cfg, &c.out)?;
            writeln!(out, "{}", dir.display())?;
        }
        Cmd::Gen(c) => stage(&c, Stage::Gen, out)?,
        Cmd::Train(c) => stage(&c, Stage::Train, out)?,
        Cmd::Eval(c) => stage(&c, Stage::Eval, out)?,
        Cmd::Oneshot(c) => stage(&c, Stage::Oneshot, out)?,
        Cmd::Probe(c) => stage(&c, Stage::Probe, out)?,
        Cmd::Ablation(c) => {
            let spec = c.config.as_deref().context("ablation needs --config")?;
            let rep = ablation_no_vreg(&load_config(spec, c.seed)?)?;
            std::fs::create_dir_all(&c.out)?;
            let path = c.out.join("ablation_report.json");
            std::fs::write(&path, serde_json::to_string_pretty(&rep)?)?;
            for arm in [&rep.baseline, &rep.large_lambda_no_vreg, &rep.tiny_lambda_no_vreg] {
                writeln!(out, "{:<22} vhat_mn={:.4e} rho={:.2}", arm.label, arm.vhat_mn, arm.rho_hat)?;
            }
            writeln!(out, "trend_holds={} ordering_holds={}", rep.trend_holds, rep.ordering_holds)?;
            writeln!(out, "{}", path.display())?;
        }
        Cmd::KernelCheck {
            widths,
            seeds,
            seed,
            points,
            dim,
            out: dir,
        } => {
            let seed_list: Vec<u64> = (seed..seed + seeds).collect();
            let rows = kernel_check(&widths, &seed_list, points, dim)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("kernel_check.csv");
            write_kernel_csv(&path, &rows)?;
            for r in &rows {
                writeln!(out, "width={:<8} seed={:<4} frob_error={:.4e}", r.width, r.seed, r.frob_error)?;
            }
            writeln!(out, "{}", path.display())?;
        }
        Cmd::Lemmas { seed, out: dir } => {
            let summary = lemmas(seed);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("lemmas.json");
            std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
            for r in &summary.reports {
                writeln!(out, "{:<4} {}", if r.pass { "PASS" } else { "FAIL" }, r.lemma)?;
            }
            for e in &summary.errors {
                writeln!(out, "ERR  {e}")?;
            }
            writeln!(out, "aggregate: {}/{} pass", summary.passed, summary.total)?;
            if !summary.pass {
                bail!("oracle suite failed");
            }
        }
        Cmd::Preset { name } => write!(out, "{}", ExperimentConfig::preset(&name)?.to_toml()?)?,
    }
    Ok(())
}
