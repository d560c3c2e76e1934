//! Experiment orchestration: configs, run directories and the standalone
//! checks behind the `gshlab` binary.

pub mod config;
pub mod pipeline;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use config::{ArchSection, DataConfig, EvalConfig, ExperimentConfig, ProbeConfig, TransferConfig, PRESETS};
pub use pipeline::{
    ablation_no_vreg, run_pipeline, run_pipeline_file, AblationArm, AblationReport, Run, Stage, FAILED_MARKER,
};

use crate::error::Result;
use crate::kernelview::gram_error;
use crate::numlin::{Matrix, SeededRng};
use crate::oracles::{run_suite, LemmaReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelCheckRow {
    pub width: usize,
    pub frob_error: f64,
    pub seed: u64,
}

/// Gram-matrix error of random ReLU features against the arc-cosine kernel
/// on `points` unit vectors in `R^dim`, one row per (seed, width).
pub fn kernel_check(widths: &[usize], seeds: &[u64], points: usize, dim: usize) -> Result<Vec<KernelCheckRow>> {
    let mut rows = Vec::with_capacity(widths.len() * seeds.len());
    for &seed in seeds {
        let mut rng = SeededRng::new(seed);
        let mut x = Matrix::zeros(dim, points);
        for j in 0..points {
            for (i, v) in rng.unit_vec(dim).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        for &width in widths {
            rows.push(KernelCheckRow {
                width,
                frob_error: gram_error(&x, width, &mut rng)?,
                seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_kernel_csv(path: &Path, rows: &[KernelCheckRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "width,frob_error,seed")?;
    for r in rows {
        writeln!(f, "{},{:e},{}", r.width, r.frob_error, r.seed)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaSummary {
    pub seed: u64,
    pub pass: bool,
    pub passed: usize,
    pub total: usize,
    pub reports: Vec<LemmaReport>,
    pub errors: Vec<String>,
}

/// Runs the oracle suite; errors count as failures.
pub fn lemmas(seed: u64) -> LemmaSummary {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for r in run_suite(seed) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    let total = reports.len() + errors.len();
    LemmaSummary {
        seed,
        pass: passed == total,
        passed,
        total,
        reports,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_check_one_row_per_width_and_seed() {
        let rows = kernel_check(&[100, 1000, 4000], &[1, 2], 5, 4).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.seed == 2).count(), 3);
        assert!(rows.iter().all(|r| r.frob_error.is_finite() && r.frob_error > 0.0));
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("k.csv");
        write_kernel_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("width,frob_error,seed\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
