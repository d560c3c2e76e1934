use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::model::{ArchConfig, GshModel};
use super::objective::{gradients_impl, loss, Batch, LossBreakdown, MomentObjective, TrainConfig};
use crate::error::{GshError, Result};
use crate::manifolds::Augmentation;
use crate::numlin::{derive_seed, Grouped, Matrix, SeededRng};

/// Learning rates below this end training early.
const MIN_LR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: GshModel,
    pub trace: Vec<TraceRow>,
    pub lr_halvings: usize,
}

impl TrainResult {
    pub fn final_loss(&self) -> LossBreakdown {
        self.trace.last().map(|r| r.loss).unwrap_or_default()
    }
}

/// Trains on `points` (already augmented). `C` is drawn from the seed
/// derived from `cfg.seed`, so two runs with the same config are identical.
pub fn train(
    points: &Grouped,
    augmentation: Augmentation,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(GshError::Config(errs));
    }
    let model = GshModel::new(
        points.width(),
        points.m,
        arch,
        augmentation,
        derive_seed(cfg.seed, "C"),
        cfg.init_scale,
        derive_seed(cfg.seed, "init"),
    )?;
    train_from(model, points, arch.train_c, cfg)
}

/// Continues training an existing model.
pub fn train_from(
    model: GshModel,
    points: &Grouped,
    train_c: bool,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if cfg.use_vreg && points.n < 2 {
        return Err(GshError::Domain {
            op: "train",
            detail: "variance regularization needs n >= 2".into(),
        });
    }
    match cfg.batch {
        Some(b) if b < points.m * points.n => train_sgd(model, points, train_c, cfg, b),
        _ if train_c => train_full_direct(model, points, cfg),
        _ => train_full_moments(model, points, cfg),
    }
}

fn check_finite(step: usize, lb: &LossBreakdown) -> Result<()> {
    if lb.total.is_finite() {
        Ok(())
    } else {
        Err(GshError::Divergence {
            step,
            value: lb.total,
        })
    }
}

fn step_params(p: &Matrix, g: &Matrix, lr: f64) -> Matrix {
    let mut out = p.clone();
    out.axpy(-lr, g).expect("gradient shape matches parameter");
    out
}

/// Full-batch gradient descent with frozen `C`; the objective is evaluated
/// from feature moments.
fn train_full_moments(mut model: GshModel, points: &Grouped, cfg: &TrainConfig) -> Result<TrainResult> {
    let obj = MomentObjective::new(&model, points)?;
    let (mut cur, g) = obj.evaluate(&model.a, &model.b, cfg, true)?;
    check_finite(0, &cur)?;
    let (mut ga, mut gb) = g.expect("gradient requested");
    let mut lr = cfg.lr;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut halvings = 0;
    for step in 0..cfg.steps {
        trace.push(TraceRow { step, loss: cur, lr });
        let a = step_params(&model.a, &ga, lr);
        let b = step_params(&model.b, &gb, lr);
        let (next, g) = obj.evaluate(&a, &b, cfg, true)?;
        check_finite(step + 1, &next)?;
        if next.total > cur.total {
            lr *= 0.5;
            halvings += 1;
            log::info!("step {step}: loss rose {} -> {}, lr halved to {lr:e}", cur.total, next.total);
            if lr < MIN_LR {
                break;
            }
            continue;
        }
        model.a = a;
        model.b = b;
        cur = next;
        (ga, gb) = g.expect("gradient requested");
    }
    trace.push(TraceRow {
        step: cfg.steps,
        loss: cur,
        lr,
    });
    Ok(TrainResult {
        model,
        trace,
        lr_halvings: halvings,
    })
}

fn apply_update(model: &mut GshModel, g: &super::objective::Gradients, lr: f64) {
    model.a = step_params(&model.a, &g.a, lr);
    model.b = step_params(&model.b, &g.b, lr);
    if let Some(gc) = &g.c {
        model.c = step_params(&model.c, gc, lr);
        model.c_trained = true;
    }
}

/// Full-batch gradient descent evaluated sample by sample; used when `C`
/// is trained too.
fn train_full_direct(mut model: GshModel, points: &Grouped, cfg: &TrainConfig) -> Result<TrainResult> {
    let batch = Batch::from_grouped(points);
    let (mut g, mut cur) = gradients_impl(&model, &batch, cfg, true)?;
    check_finite(0, &cur)?;
    let mut lr = cfg.lr;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut halvings = 0;
    for step in 0..cfg.steps {
        trace.push(TraceRow { step, loss: cur, lr });
        let mut cand = model.clone();
        apply_update(&mut cand, &g, lr);
        let (g2, next) = gradients_impl(&cand, &batch, cfg, true)?;
        check_finite(step + 1, &next)?;
        if next.total > cur.total {
            lr *= 0.5;
            halvings += 1;
            log::info!("step {step}: loss rose {} -> {}, lr halved to {lr:e}", cur.total, next.total);
            if lr < MIN_LR {
                break;
            }
            continue;
        }
        model = cand;
        cur = next;
        g = g2;
    }
    trace.push(TraceRow {
        step: cfg.steps,
        loss: cur,
        lr,
    });
    Ok(TrainResult {
        model,
        trace,
        lr_halvings: halvings,
    })
}

/// Row indices of a mini-batch: `batch / group_size` distinct manifolds
/// with `group_size` distinct samples each.
pub fn sample_batch(points: &Grouped, batch: usize, group_size: usize, rng: &mut SeededRng) -> Vec<usize> {
    let g = group_size.min(points.n).max(1);
    let groups = (batch / g).clamp(1, points.m);
    let mut rows = Vec::with_capacity(groups * g);
    for l in rng.permutation(points.m).into_iter().take(groups) {
        for i in rng.permutation(points.n).into_iter().take(g) {
            rows.push(l * points.n + i);
        }
    }
    rows
}

/// Mini-batch SGD. One trace row per epoch (`m·n / batch` steps) holding
/// the full-data objective; the step size is halved when it rises between
/// epochs.
fn train_sgd(
    mut model: GshModel,
    points: &Grouped,
    train_c: bool,
    cfg: &TrainConfig,
    batch: usize,
) -> Result<TrainResult> {
    let full = Batch::from_grouped(points);
    let mut rng = SeededRng::new(derive_seed(cfg.seed, "batches"));
    let epoch = (points.m * points.n / batch).max(1);
    let mut lr = cfg.lr;
    let mut halvings = 0;
    let mut cur = loss(&model, &full, cfg)?;
    check_finite(0, &cur)?;
    let mut trace = vec![TraceRow { step: 0, loss: cur, lr }];
    for step in 0..cfg.steps {
        let rows = sample_batch(points, batch, cfg.group_size, &mut rng);
        let b = Batch::subset(points, &rows);
        let (g, lb) = gradients_impl(&model, &b, cfg, train_c)?;
        check_finite(step, &lb)?;
        apply_update(&mut model, &g, lr);
        if (step + 1) % epoch == 0 || step + 1 == cfg.steps {
            let next = loss(&model, &full, cfg)?;
            check_finite(step + 1, &next)?;
            if next.total > cur.total {
                lr *= 0.5;
                halvings += 1;
                log::info!("step {step}: epoch loss rose {} -> {}, lr halved to {lr:e}", cur.total, next.total);
            }
            cur = next;
            trace.push(TraceRow {
                step: step + 1,
                loss: cur,
                lr,
            });
            if lr < MIN_LR {
                break;
            }
        }
    }
    Ok(TrainResult {
        model,
        trace,
        lr_halvings: halvings,
    })
}

/// `step,weighted,regA,regB,vreg,total,lr`
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,weighted,regA,regB,vreg,total,lr")?;
    for r in trace {
        let l = &r.loss;
        writeln!(
            f,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.step, l.weighted_loss, l.reg_a, l.reg_b, l.vreg, l.total, r.lr
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_points(m: usize, n: usize, seed: u64) -> Grouped {
        let mut rng = SeededRng::new(seed);
        let centers: Vec<Vec<f64>> = (0..m).map(|_| rng.unit_vec(3)).collect();
        let mut data = Vec::new();
        for c in &centers {
            for _ in 0..n {
                data.extend(c.iter().map(|v| v + 0.05 * rng.normal()));
            }
        }
        Grouped::new(m, n, Matrix::from_vec(m * n, 3, data).unwrap()).unwrap()
    }

    fn arch() -> ArchConfig {
        ArchConfig {
            width: 64,
            rep_dim: 8,
            train_c: false,
        }
    }

    #[test]
    fn deterministic_and_c_frozen() {
        let pts = toy_points(3, 6, 1);
        let cfg = TrainConfig {
            steps: 50,
            lr: 0.5,
            seed: 4,
            ..Default::default()
        };
        let r1 = train(&pts, Augmentation::None, &arch(), &cfg).unwrap();
        let r2 = train(&pts, Augmentation::None, &arch(), &cfg).unwrap();
        assert_eq!(r1.trace, r2.trace);
        let c0 = GshModel::new(3, 3, &arch(), Augmentation::None, derive_seed(4, "C"), 0.01, 0).unwrap().c;
        assert!(c0.as_slice().iter().zip(r1.model.c.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(!r1.model.c_trained);
    }

    #[test]
    fn total_loss_never_increases_full_batch() {
        let pts = toy_points(4, 5, 2);
        let cfg = TrainConfig {
            steps: 200,
            lr: 50.0,
            seed: 1,
            ..Default::default()
        };
        let r = train(&pts, Augmentation::None, &arch(), &cfg).unwrap();
        assert!(r.lr_halvings > 0);
        for w in r.trace.windows(2) {
            assert!(w[1].loss.total <= w[0].loss.total);
        }
    }

    #[test]
    fn separable_toy_fits() {
        // two manifolds on the 1-d sphere with opposite centres
        let mut rng = SeededRng::new(3);
        let mut data = Vec::new();
        for sign in [1.0, -1.0] {
            for _ in 0..10 {
                let t = 0.3 * rng.normal();
                data.extend([sign * t.cos(), sign * t.sin(), 1.0]);
            }
        }
        let pts = Grouped::new(2, 10, Matrix::from_vec(20, 3, data).unwrap()).unwrap();
        let cfg = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            use_vreg: false,
            steps: 2000,
            lr: 2.0,
            seed: 2,
            init_scale: 0.1,
            ..Default::default()
        };
        let r = train(&pts, Augmentation::None, &ArchConfig { width: 128, rep_dim: 4, train_c: false }, &cfg).unwrap();
        let wl = r.final_loss().weighted_loss;
        assert!(wl < 1e-2, "{wl}");
        assert_eq!(r.model.zero_one_error(&pts).unwrap(), 0.0);
    }

    #[test]
    fn huge_regularization_shrinks_weights() {
        let pts = toy_points(3, 4, 5);
        let cfg = TrainConfig {
            lambda1: 100.0,
            lambda2: 100.0,
            steps: 30,
            lr: 1e-3,
            init_scale: 1.0,
            seed: 3,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        let mut model = GshModel::new(3, 3, &arch(), Augmentation::None, 1, 1.0, 2).unwrap();
        for _ in 0..cfg.steps {
            let r = train_from(model, &pts, false, &TrainConfig { steps: 1, ..cfg.clone() }).unwrap();
            model = r.model;
            let fa = model.a.frobenius();
            assert!(fa < last);
            last = fa;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn sgd_and_train_c_paths_run() {
        let pts = toy_points(4, 6, 6);
        let cfg = TrainConfig {
            steps: 40,
            lr: 0.2,
            batch: Some(8),
            seed: 9,
            ..Default::default()
        };
        let r = train(&pts, Augmentation::None, &arch(), &cfg).unwrap();
        assert!(r.final_loss().total < r.trace[0].loss.total);
        let a2 = ArchConfig { train_c: true, ..arch() };
        let r = train(&pts, Augmentation::None, &a2, &TrainConfig { batch: None, ..cfg }).unwrap();
        assert!(r.model.c_trained);
        assert!(r.final_loss().total < r.trace[0].loss.total);
    }

    #[test]
    fn batches_group_by_manifold() {
        let pts = toy_points(5, 4, 7);
        let rows = sample_batch(&pts, 6, 2, &mut SeededRng::new(1));
        assert_eq!(rows.len(), 6);
        let labels: Vec<usize> = rows.iter().map(|r| r / 4).collect();
        for pair in labels.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let pts = toy_points(2, 3, 8);
        let cfg = TrainConfig {
            lr: f64::MAX,
            steps: 3,
            init_scale: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            train(&pts, Augmentation::None, &arch(), &cfg),
            Err(GshError::Divergence { .. })
        ));
    }

    #[test]
    fn trace_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace_csv(&p, &[TraceRow { step: 0, loss: LossBreakdown::default(), lr: 1.0 }]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("step,weighted,regA,regB,vreg,total,lr\n0,"));
    }
}
