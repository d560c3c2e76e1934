//! One-shot classification of new manifolds by hash-table lookup, and
//! linear recovery of the manifold identifier from the representation.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{shape_err, GshError, Result};
use crate::net::GshModel;
use crate::numlin::{least_squares, ridge_least_squares, sq_dist, svd, Grouped, Matrix};

/// Anchors enrolled from a single example each. A query matches the
/// nearest anchor when its squared distance is strictly below `2ε`.
#[derive(Clone, Debug, Default)]
pub struct HashTable {
    entries: Vec<(Vec<f64>, usize)>,
    threshold: f64,
}

impl HashTable {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(GshError::Domain {
                op: "HashTable::new",
                detail: format!("epsilon must be finite and >= 0, got {epsilon}"),
            });
        }
        Ok(Self {
            entries: Vec::new(),
            threshold: 2.0 * epsilon,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn enroll(&mut self, r: &[f64], class: usize) -> Result<()> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(GshError::Domain {
                op: "enroll",
                detail: "anchor has non-finite entries".into(),
            });
        }
        if let Some((first, _)) = self.entries.first() {
            if first.len() != r.len() {
                return shape_err("enroll", "anchor length differs from earlier anchors");
            }
        }
        self.entries.push((r.to_vec(), class));
        Ok(())
    }

    /// Class ids enrolled more than once, in ascending order.
    pub fn duplicate_classes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.1).collect();
        ids.sort_unstable();
        let mut dups: Vec<usize> = ids.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
        dups.dedup();
        dups
    }

    /// Nearest anchor (earliest enrolled on ties) with its squared distance.
    pub fn nearest(&self, r: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (anchor, class) in &self.entries {
            let d = sq_dist(anchor, r);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*class, d));
            }
        }
        best
    }

    pub fn lookup(&self, r: &[f64]) -> Option<usize> {
        self.nearest(r)
            .and_then(|(c, d)| (d < self.threshold).then_some(c))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub correct: u64,
    pub wrong: u64,
    pub rejected: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OneShotReport {
    /// correct / all queries (rejections count as errors)
    pub accuracy: f64,
    pub reject_rate: f64,
    /// correct / answered queries
    pub accuracy_answered: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub manifolds: usize,
    pub queries: u64,
    /// `per_class[l]` counts the queries drawn from manifold `l`
    pub per_class: Vec<ClassCounts>,
    pub duplicate_classes: Vec<usize>,
}

impl OneShotReport {
    pub fn write_json(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut v = serde_json::to_value(self)?;
        v["provenance"] = extra;
        std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
        Ok(())
    }
}

/// Enrolls sample 0 of each manifold and classifies samples `1..n`.
pub fn oneshot_eval_reps(reps: &Grouped, epsilon: f64) -> Result<OneShotReport> {
    if reps.n < 2 {
        return Err(GshError::Domain {
            op: "oneshot_eval",
            detail: "need >= 2 samples per manifold (1 enroll, >= 1 query)".into(),
        });
    }
    let mut table = HashTable::new(epsilon)?;
    for l in 0..reps.m {
        table.enroll(reps.sample(l, 0), l)?;
    }
    let per_class: Vec<ClassCounts> = (0..reps.m)
        .into_par_iter()
        .map(|l| {
            let mut c = ClassCounts::default();
            for i in 1..reps.n {
                match table.lookup(reps.sample(l, i)) {
                    Some(p) if p == l => c.correct += 1,
                    Some(_) => c.wrong += 1,
                    None => c.rejected += 1,
                }
            }
            c
        })
        .collect();
    let correct: u64 = per_class.iter().map(|c| c.correct).sum();
    let rejected: u64 = per_class.iter().map(|c| c.rejected).sum();
    let queries = (reps.m * (reps.n - 1)) as u64;
    let answered = queries - rejected;
    Ok(OneShotReport {
        accuracy: correct as f64 / queries as f64,
        reject_rate: rejected as f64 / queries as f64,
        accuracy_answered: if answered > 0 {
            correct as f64 / answered as f64
        } else {
            0.0
        },
        epsilon,
        threshold: table.threshold(),
        manifolds: reps.m,
        queries,
        per_class,
        duplicate_classes: table.duplicate_classes(),
    })
}

/// [`oneshot_eval_reps`] on the model's representations of `fresh`.
pub fn oneshot_eval(model: &GshModel, fresh: &Grouped, epsilon: f64) -> Result<OneShotReport> {
    oneshot_eval_reps(&model.represent_grouped(fresh)?, epsilon)
}

/// Affine map `γ ≈ L r + b`.
#[derive(Clone, Debug)]
pub struct GammaProbe {
    /// `s × T`
    pub l: Matrix,
    pub bias: Vec<f64>,
    pub ridge_used: bool,
}

impl GammaProbe {
    /// Predictions for representations stored one per row.
    pub fn apply(&self, reps: &Matrix) -> Result<Matrix> {
        let mut out = reps.matmul_t(&self.l)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

pub const PROBE_RIDGE: f64 = 1e-8;

/// Least-squares fit of `γ` from representations (one sample per row, with
/// matching rows of `gammas`). Falls back to ridge `1e-8` when the design
/// `[R, 1]` is rank deficient.
pub fn gamma_probe(reps: &Matrix, gammas: &Matrix) -> Result<GammaProbe> {
    if reps.rows() != gammas.rows() {
        return shape_err("gamma_probe", "representation and gamma counts differ");
    }
    if reps.rows() < gammas.cols() + 1 {
        return Err(GshError::Domain {
            op: "gamma_probe",
            detail: format!(
                "need at least s + 1 = {} probe samples, got {}",
                gammas.cols() + 1,
                reps.rows()
            ),
        });
    }
    let t = reps.cols();
    let design = reps.hcat(&Matrix::from_fn(reps.rows(), 1, |_, _| 1.0))?;
    let rank = svd(&design)?.rank();
    let ridge_used = rank < t + 1;
    let coef = if ridge_used {
        log::warn!("gamma probe design has rank {rank} < {}; using ridge {PROBE_RIDGE:e}", t + 1);
        ridge_least_squares(&design, gammas, PROBE_RIDGE)?
    } else {
        least_squares(&design, gammas)?
    };
    // coef is (T+1) × s
    Ok(GammaProbe {
        l: coef.row_block(0, t).transpose(),
        bias: coef.row(t).to_vec(),
        ridge_used,
    })
}

/// `mean_i ‖L r_i + b − γ_i‖²` divided by the mean of `‖γ_i − γ_j‖²` over
/// pairs of test samples with distinct `γ`.
pub fn normalized_recovery_distance(probe: &GammaProbe, reps: &Matrix, gammas: &Matrix) -> Result<f64> {
    if reps.rows() != gammas.rows() || reps.rows() < 2 {
        return shape_err("normalized_recovery_distance", "need matching rows, at least 2");
    }
    let pred = probe.apply(reps)?;
    let n = reps.rows();
    let err = (0..n).map(|i| sq_dist(pred.row(i), gammas.row(i))).sum::<f64>() / n as f64;
    let (sum, count) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let mut c = 0u64;
            for j in (i + 1)..n {
                let d = sq_dist(gammas.row(i), gammas.row(j));
                if d > 0.0 {
                    s += d;
                    c += 1;
                }
            }
            (s, c)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if count == 0 {
        return Err(GshError::Domain {
            op: "normalized_recovery_distance",
            detail: "test set has a single distinct gamma".into(),
        });
    }
    Ok(err / (sum / count as f64))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub normalized_distance: f64,
    pub probe_samples: usize,
    pub test_samples: usize,
    pub ridge_used: bool,
}

impl ProbeReport {
    pub fn write_json(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut v = serde_json::to_value(self)?;
        v["provenance"] = extra;
        std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
        Ok(())
    }
}

/// Repeats each row of `gammas` (`m × s`) `n` times to align with grouped samples.
pub fn expand_gammas(gammas: &Matrix, n: usize) -> Matrix {
    let idx: Vec<usize> = (0..gammas.rows()).flat_map(|l| std::iter::repeat_n(l, n)).collect();
    gammas.select_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::{gaussian_matrix, SeededRng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn enroll_and_lookup_examples() {
        let mut t = HashTable::new(0.1).unwrap();
        assert_eq!(t.lookup(&[0.0, 0.0]), None);
        t.enroll(&[0.0, 0.0], 7).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup(&[0.0, 0.0]), Some(7));
        assert_eq!(t.lookup(&[0.3, 0.3]), Some(7));
        assert_eq!(t.lookup(&[1.0, 1.0]), None);
        // squared distance 0.25 against threshold 0.25: rejected
        let mut b = HashTable::new(0.125).unwrap();
        b.enroll(&[0.0], 1).unwrap();
        assert_eq!(b.lookup(&[0.5]), None);
        t.enroll(&[5.0, 5.0], 7).unwrap();
        assert_eq!(t.duplicate_classes(), vec![7]);
        assert!(t.enroll(&[f64::NAN, 0.0], 1).is_err());
    }

    #[test]
    fn ties_go_to_first_enrolled() {
        let mut t = HashTable::new(10.0).unwrap();
        t.enroll(&[1.0], 3).unwrap();
        t.enroll(&[-1.0], 4).unwrap();
        assert_eq!(t.lookup(&[0.0]), Some(3));
    }

    fn constant_reps(m: usize, n: usize) -> Grouped {
        let rows: Vec<Vec<f64>> = (0..m).flat_map(|l| std::iter::repeat_n(vec![l as f64, 1.0], n)).collect();
        Grouped::new(m, n, Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn oneshot_examples() {
        let r = oneshot_eval_reps(&constant_reps(5, 4), 0.1).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.queries, 15);
        let r = oneshot_eval_reps(&constant_reps(5, 4), 0.0).unwrap();
        assert_eq!(r.reject_rate, 1.0);
        assert!(oneshot_eval_reps(&constant_reps(5, 1), 0.1).is_err());
    }

    #[test]
    fn oneshot_invariant_to_relabeling() {
        let mut rng = SeededRng::new(3);
        let m = 6;
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..m)
            .flat_map(|l| {
                let c = vec![l as f64, 0.0];
                (0..n).map(|_| c.iter().map(|v| v + 0.3 * rng.normal()).collect::<Vec<_>>()).collect::<Vec<_>>()
            })
            .collect();
        let g = Grouped::new(m, n, Matrix::from_rows(&rows).unwrap()).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut prow = Vec::new();
        for &l in &perm {
            prow.extend(rows[l * n..(l + 1) * n].iter().cloned());
        }
        let p = Grouped::new(m, n, Matrix::from_rows(&prow).unwrap()).unwrap();
        let a = oneshot_eval_reps(&g, 0.2).unwrap();
        let b = oneshot_eval_reps(&p, 0.2).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.reject_rate, b.reject_rate);
    }

    proptest! {
        #[test]
        fn lookup_scale_consistent(seed in 0u64..500, c in 0.1f64..10.0) {
            let mut rng = SeededRng::new(seed);
            let eps = 0.5;
            let mut t = HashTable::new(eps).unwrap();
            let mut ts = HashTable::new(eps * c * c).unwrap();
            for k in 0..4 {
                let a = rng.normal_vec(3, 1.0);
                t.enroll(&a, k).unwrap();
                ts.enroll(&a.iter().map(|v| v * c).collect::<Vec<_>>(), k).unwrap();
            }
            for _ in 0..20 {
                let q = rng.normal_vec(3, 1.0);
                let qs: Vec<f64> = q.iter().map(|v| v * c).collect();
                prop_assert_eq!(t.lookup(&q), ts.lookup(&qs));
            }
        }
    }

    #[test]
    fn probe_identity_and_linear_recovery() {
        let mut rng = SeededRng::new(1);
        let g = gaussian_matrix(&mut rng, 40, 4, 1.0).unwrap();
        let p = gamma_probe(&g, &g).unwrap();
        assert!(p.l.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10);
        assert_abs_diff_eq!(normalized_recovery_distance(&p, &g, &g).unwrap(), 0.0, epsilon = 1e-10);

        let map = gaussian_matrix(&mut rng, 4, 4, 1.0).unwrap();
        let reps = g.matmul_t(&map).unwrap().map(|v| v + 0.5);
        let p = gamma_probe(&reps, &g).unwrap();
        let test = gaussian_matrix(&mut rng, 20, 4, 1.0).unwrap();
        let test_reps = test.matmul_t(&map).unwrap().map(|v| v + 0.5);
        assert!(normalized_recovery_distance(&p, &test_reps, &test).unwrap() < 1e-10);
        assert!(!p.ridge_used);
        let recon = p.l.matmul(&map).unwrap();
        assert!(recon.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn probe_on_noise_is_about_one() {
        let mut rng = SeededRng::new(2);
        let g = gaussian_matrix(&mut rng, 2000, 3, 1.0).unwrap();
        let noise = gaussian_matrix(&mut rng, 2000, 5, 1.0).unwrap();
        let p = gamma_probe(&noise, &g).unwrap();
        let gt = gaussian_matrix(&mut rng, 300, 3, 1.0).unwrap();
        let nt = gaussian_matrix(&mut rng, 300, 5, 1.0).unwrap();
        let d = normalized_recovery_distance(&p, &nt, &gt).unwrap();
        // predicting the mean gives E‖γ‖² / E‖γ−γ'‖² = 1/2
        assert!((d - 0.5).abs() < 0.1, "{d}");
    }

    #[test]
    fn rank_deficient_probe_uses_ridge() {
        let mut rng = SeededRng::new(3);
        let g = gaussian_matrix(&mut rng, 30, 2, 1.0).unwrap();
        let reps = g.hcat(&g).unwrap();
        let p = gamma_probe(&reps, &g).unwrap();
        assert!(p.ridge_used);
        assert!(normalized_recovery_distance(&p, &reps, &g).unwrap() < 1e-6);
        assert!(gamma_probe(&reps.row_block(0, 2), &g.row_block(0, 2)).is_err());
    }
}
