//! Hashing statistics of a representation: intra-manifold variance,
//! inter-manifold squared distance, their ratio, and distance histograms.
//!
//! All distances in reports are squared Euclidean unless noted.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GshError, Result};
use crate::numlin::{sq_dist, Grouped, Matrix, SeededRng};

/// Reported in every JSON output.
pub const DISTANCE_CONVENTION: &str = "squared-euclidean";

/// Default cap on explicitly enumerated sample pairs.
pub const DEFAULT_PAIR_CAP: usize = 1_000_000;

/// Per-manifold mean squared distance to the manifold mean (divide by `n`)
/// and its average over manifolds.
pub fn vhat_mn(reps: &Grouped) -> Result<(Vec<f64>, f64)> {
    if reps.n == 0 || reps.m == 0 {
        return Err(GshError::Domain {
            op: "vhat_mn",
            detail: "need at least one manifold with one sample".into(),
        });
    }
    let per: Vec<f64> = (0..reps.m)
        .into_par_iter()
        .map(|l| {
            let mu = reps.group_mean(l);
            (0..reps.n).map(|i| sq_dist(reps.sample(l, i), &mu)).sum::<f64>() / reps.n as f64
        })
        .collect();
    let avg = per.iter().sum::<f64>() / reps.m as f64;
    Ok((per, avg))
}

#[derive(Clone, Debug, Serialize)]
pub struct InterStats {
    /// mean of `‖r_i − r_j‖²` over all pairs from different manifolds
    pub mean_inter_sq: f64,
    /// `m × m`; entry `(l, l')` is the mean over pairs across `l` and `l'`,
    /// and the diagonal holds the same-manifold mean including `i = j`
    #[serde(skip)]
    pub per_pair: Matrix,
    pub pairs: u64,
}

fn means_and_vars(reps: &Grouped) -> (Vec<Vec<f64>>, Vec<f64>) {
    (0..reps.m)
        .into_par_iter()
        .map(|l| {
            let mu = reps.group_mean(l);
            let v = (0..reps.n).map(|i| sq_dist(reps.sample(l, i), &mu)).sum::<f64>() / reps.n as f64;
            (mu, v)
        })
        .unzip()
}

/// Exact cross-manifold statistics, from
/// `E‖x − y‖² = ‖μ_l − μ_l'‖² + V_l + V_l'` for independent groups.
pub fn inter_stats(reps: &Grouped) -> Result<InterStats> {
    if reps.m < 2 || reps.n == 0 {
        return Err(GshError::Domain {
            op: "inter_stats",
            detail: "need at least 2 manifolds".into(),
        });
    }
    let (mus, vars) = means_and_vars(reps);
    let m = reps.m;
    let per_pair = Matrix::from_fn(m, m, |a, b| sq_dist(&mus[a], &mus[b]) + vars[a] + vars[b]);
    let mut sum = 0.0;
    for a in 0..m {
        for b in 0..m {
            if a != b {
                sum += per_pair[(a, b)];
            }
        }
    }
    let mean_inter_sq = sum / (m * (m - 1)) as f64;
    let n = reps.n as u64;
    Ok(InterStats {
        mean_inter_sq,
        per_pair,
        pairs: (m as u64) * (m as u64 - 1) / 2 * n * n,
    })
}

/// Monte-Carlo estimate of the cross-manifold mean from `pairs` uniformly
/// drawn cross pairs; returns `(estimate, standard error)`.
pub fn inter_stats_subsampled(reps: &Grouped, pairs: usize, rng: &mut SeededRng) -> Result<(f64, f64)> {
    if reps.m < 2 || reps.n == 0 || pairs < 2 {
        return Err(GshError::Domain {
            op: "inter_stats",
            detail: "need at least 2 manifolds and 2 pairs".into(),
        });
    }
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..pairs {
        let a = rng.below(reps.m);
        let mut b = rng.below(reps.m - 1);
        if b >= a {
            b += 1;
        }
        let d = sq_dist(reps.sample(a, rng.below(reps.n)), reps.sample(b, rng.below(reps.n)));
        s += d;
        s2 += d * d;
    }
    let k = pairs as f64;
    let mean = s / k;
    let var = (s2 / k - mean * mean).max(0.0) * k / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}

/// Mean of `‖r_i − r_j‖²` over same-manifold pairs `i ≠ j`, averaged over
/// manifolds; equals `2n/(n−1)` times the average divide-by-`n` variance.
pub fn intra_pair_mean(reps: &Grouped) -> Result<f64> {
    if reps.n < 2 {
        return Err(GshError::Domain {
            op: "intra_pair_mean",
            detail: "need at least 2 samples per manifold".into(),
        });
    }
    let (_, v) = vhat_mn(reps)?;
    Ok(2.0 * reps.n as f64 / (reps.n - 1) as f64 * v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RhoHat {
    /// `+∞` when `infinite` is set
    pub value: f64,
    pub infinite: bool,
}

/// `mean_inter_sq / vhat_mn`, with an infinite sentinel when the variance
/// is exactly zero.
pub fn rho_hat(mean_inter_sq: f64, vhat: f64) -> RhoHat {
    if vhat > 0.0 {
        RhoHat {
            value: mean_inter_sq / vhat,
            infinite: false,
        }
    } else {
        RhoHat {
            value: f64::INFINITY,
            infinite: true,
        }
    }
}

/// Averages the cross-manifold mean squared distance over consecutive
/// pairs of a random permutation of the manifolds. With odd `m` the last
/// manifold (by index) is dropped first.
pub fn permutation_pairing(reps: &Grouped, rng: &mut SeededRng) -> Result<f64> {
    let stats = inter_stats(reps)?;
    Ok(permutation_pairing_from(&stats.per_pair, rng))
}

/// [`permutation_pairing`] from a precomputed per-pair matrix.
pub fn permutation_pairing_from(per_pair: &Matrix, rng: &mut SeededRng) -> f64 {
    let m = per_pair.rows() - per_pair.rows() % 2;
    let perm = rng.permutation(m);
    let total: f64 = perm.chunks(2).map(|p| per_pair[(p[0], p[1])]).sum();
    total / (m / 2) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramRow {
    /// lower edge of the bucket (unsquared distance)
    pub bucket: f64,
    pub intra_count: u64,
    pub inter_count: u64,
}

/// Histogram of unsquared pairwise distances split by same/different
/// manifold. All unordered pairs are used when there are at most
/// `pair_cap` of them; otherwise `pair_cap` pairs are drawn with `rng`.
pub fn export_histograms(
    reps: &Grouped,
    bins: usize,
    pair_cap: usize,
    rng: &mut SeededRng,
) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(GshError::Domain {
            op: "export_histograms",
            detail: "bins must be >= 1".into(),
        });
    }
    let total = reps.m * reps.n;
    let all_pairs = total * total.saturating_sub(1) / 2;
    let mut dists: Vec<(f64, bool)> = Vec::with_capacity(all_pairs.min(pair_cap));
    let label = |row: usize| row / reps.n;
    if all_pairs <= pair_cap {
        for i in 0..total {
            for j in (i + 1)..total {
                dists.push((sq_dist(reps.data.row(i), reps.data.row(j)).sqrt(), label(i) == label(j)));
            }
        }
    } else {
        for _ in 0..pair_cap {
            let i = rng.below(total);
            let mut j = rng.below(total - 1);
            if j >= i {
                j += 1;
            }
            dists.push((sq_dist(reps.data.row(i), reps.data.row(j)).sqrt(), label(i) == label(j)));
        }
    }
    let max = dists.iter().map(|d| d.0).fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|b| HistogramRow {
            bucket: b as f64 * width,
            intra_count: 0,
            inter_count: 0,
        })
        .collect();
    for (d, same) in dists {
        let b = ((d / width) as usize).min(bins - 1);
        if same {
            rows[b].intra_count += 1;
        } else {
            rows[b].inter_count += 1;
        }
    }
    Ok(rows)
}

pub fn write_histogram_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "bucket,intra_count,inter_count")?;
    for r in rows {
        writeln!(f, "{:e},{},{}", r.bucket, r.intra_count, r.inter_count)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub epsilon: f64,
    pub rho: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GshReport {
    pub per_manifold_variance: Vec<f64>,
    pub vhat_mn: f64,
    pub mean_inter_sq: f64,
    pub rho_hat: f64,
    pub rho_infinite: bool,
    pub intra_pair_mean: f64,
    pub inter_pairs: u64,
    pub pass: Option<Verdict>,
    pub distance_convention: &'static str,
}

impl GshReport {
    pub fn compute(reps: &Grouped) -> Result<Self> {
        let (per, vhat) = vhat_mn(reps)?;
        let inter = inter_stats(reps)?;
        let rho = rho_hat(inter.mean_inter_sq, vhat);
        let intra = if reps.n >= 2 {
            2.0 * reps.n as f64 / (reps.n - 1) as f64 * vhat
        } else {
            0.0
        };
        Ok(Self {
            per_manifold_variance: per,
            vhat_mn: vhat,
            mean_inter_sq: inter.mean_inter_sq,
            rho_hat: rho.value,
            rho_infinite: rho.infinite,
            intra_pair_mean: intra,
            inter_pairs: inter.pairs,
            pass: None,
            distance_convention: DISTANCE_CONVENTION,
        })
    }

    /// `vhat_mn ≤ ε` and `mean_inter_sq ≥ ρ·ε`.
    pub fn verdict(&self, epsilon: f64, rho: f64) -> Verdict {
        Verdict {
            epsilon,
            rho,
            pass: self.vhat_mn <= epsilon && self.mean_inter_sq >= rho * epsilon,
        }
    }

    pub fn with_verdict(mut self, epsilon: f64, rho: f64) -> Self {
        self.pass = Some(self.verdict(epsilon, rho));
        self
    }

    /// Writes the report merged with `provenance` under a `provenance` key.
    pub fn write_json(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        let mut v = serde_json::to_value(self)?;
        v["provenance"] = provenance;
        std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grouped(m: usize, n: usize, rows: Vec<Vec<f64>>) -> Grouped {
        Grouped::new(m, n, Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    fn random_grouped(m: usize, n: usize, t: usize, seed: u64, spread: f64) -> Grouped {
        let mut rng = SeededRng::new(seed);
        let mut rows = Vec::new();
        for _ in 0..m {
            let c = rng.normal_vec(t, spread);
            for _ in 0..n {
                rows.push(c.iter().map(|v| v + rng.normal()).collect());
            }
        }
        grouped(m, n, rows)
    }

    #[test]
    fn variance_examples() {
        let c = grouped(2, 3, vec![vec![1.0, 2.0]; 6]);
        assert_eq!(vhat_mn(&c).unwrap().1, 0.0);
        let g = grouped(1, 2, vec![vec![0.0], vec![2.0]]);
        let (per, avg) = vhat_mn(&g).unwrap();
        assert_eq!(per, vec![1.0]);
        assert_eq!(avg, 1.0);
        assert_eq!(avg * 2.0 / 1.0, 2.0);
    }

    #[test]
    fn inter_examples() {
        let g = grouped(2, 3, [vec![vec![1.0, 0.0]; 3], vec![vec![0.0, 1.0]; 3]].concat());
        assert_abs_diff_eq!(inter_stats(&g).unwrap().mean_inter_sq, 2.0, epsilon = 1e-15);
        let same = grouped(3, 2, vec![vec![0.5, 0.5]; 6]);
        assert_eq!(inter_stats(&same).unwrap().mean_inter_sq, 0.0);
        assert!(inter_stats(&grouped(1, 2, vec![vec![0.0], vec![1.0]])).is_err());
    }

    #[test]
    fn exact_matches_brute_force_and_subsample() {
        let g = random_grouped(10, 50, 4, 3, 1.0);
        let exact = inter_stats(&g).unwrap().mean_inter_sq;
        let mut brute = 0.0;
        let mut count = 0.0;
        for i in 0..500 {
            for j in 0..500 {
                if i / 50 != j / 50 {
                    brute += sq_dist(g.data.row(i), g.data.row(j));
                    count += 1.0;
                }
            }
        }
        assert!((exact - brute / count).abs() < 1e-10 * exact);
        let (est, se) = inter_stats_subsampled(&g, 20_000, &mut SeededRng::new(1)).unwrap();
        assert!((est - exact).abs() < 3.0 * se, "{est} {exact} {se}");
    }

    #[test]
    fn rho_examples() {
        let mut rng = SeededRng::new(4);
        let v: f64 = 1e-4;
        let mut rows = Vec::new();
        for c in [[1.0, 0.0], [0.0, 1.0]] {
            for _ in 0..200 {
                rows.push(vec![c[0] + v.sqrt() * rng.normal() / 2f64.sqrt(), c[1] + v.sqrt() * rng.normal() / 2f64.sqrt()]);
            }
        }
        let g = grouped(2, 200, rows);
        let r = GshReport::compute(&g).unwrap();
        assert!((r.rho_hat * r.vhat_mn / 2.0 - 1.0).abs() < 0.01);
        assert!((r.rho_hat / (2.0 / v) - 1.0).abs() < 0.2, "{}", r.rho_hat);
        let z = rho_hat(1.0, 0.0);
        assert!(z.infinite && z.value.is_infinite());
    }

    #[test]
    fn shared_distribution_gives_ratio_two() {
        let g = random_grouped(2, 5000, 3, 5, 0.0);
        let r = GshReport::compute(&g).unwrap();
        assert!((r.mean_inter_sq / (2.0 * r.vhat_mn) - 1.0).abs() < 0.05);
        assert!((r.rho_hat - 2.0).abs() < 0.1);
    }

    #[test]
    fn pairing_matches_all_pairs_in_expectation() {
        let two = random_grouped(2, 10, 3, 6, 1.0);
        let all = inter_stats(&two).unwrap().mean_inter_sq;
        assert_abs_diff_eq!(permutation_pairing(&two, &mut SeededRng::new(1)).unwrap(), all, epsilon = 1e-12);

        let g = random_grouped(9, 20, 3, 7, 1.0);
        let st = inter_stats(&g).unwrap();
        // all-pairs mean over the first 8 manifolds, as the 9th is dropped
        let mut s = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    s += st.per_pair[(a, b)];
                }
            }
        }
        let target = s / 56.0;
        let mut rng = SeededRng::new(2);
        let draws: Vec<f64> = (0..10_000).map(|_| permutation_pairing_from(&st.per_pair, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * sd / 100.0);
    }

    #[test]
    fn pairing_concentrates_with_more_manifolds() {
        let spread = |m: usize| {
            let g = random_grouped(m, 10, 3, 8, 1.0);
            let st = inter_stats(&g).unwrap();
            let mut rng = SeededRng::new(3);
            let d: Vec<f64> = (0..2000).map(|_| permutation_pairing_from(&st.per_pair, &mut rng)).collect();
            let mu = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        };
        assert!(spread(32) < spread(8));
    }

    #[test]
    fn histogram_bookkeeping() {
        let single = random_grouped(1, 10, 2, 9, 1.0);
        let h = export_histograms(&single, 5, DEFAULT_PAIR_CAP, &mut SeededRng::new(1)).unwrap();
        assert!(h.iter().all(|r| r.inter_count == 0));
        assert_eq!(h.iter().map(|r| r.intra_count).sum::<u64>(), 45);

        let sep = grouped(2, 3, [vec![vec![0.0]; 3], vec![vec![10.0]; 3]].concat());
        let h = export_histograms(&sep, 4, DEFAULT_PAIR_CAP, &mut SeededRng::new(1)).unwrap();
        assert!(h.iter().all(|r| r.intra_count == 0 || r.inter_count == 0));

        let big = random_grouped(4, 30, 2, 10, 1.0);
        let h = export_histograms(&big, 8, 1000, &mut SeededRng::new(1)).unwrap();
        assert_eq!(h.iter().map(|r| r.intra_count + r.inter_count).sum::<u64>(), 1000);
        assert!(export_histograms(&big, 0, 10, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn verdict_logic() {
        let g = grouped(2, 2, vec![vec![0.0], vec![0.2], vec![3.0], vec![3.2]]);
        let r = GshReport::compute(&g).unwrap();
        assert!(r.verdict(0.02, 100.0).pass);
        assert!(!r.verdict(0.001, 1.0).pass);
        assert!(!r.verdict(0.02, 1e6).pass);
    }

    proptest! {
        #[test]
        fn variance_shift_and_scale(seed in 0u64..1000, shift in -5.0f64..5.0, scale in -3.0f64..3.0) {
            let g = random_grouped(3, 4, 2, seed, 1.0);
            let (_, v) = vhat_mn(&g).unwrap();
            let shifted = Grouped::new(3, 4, g.data.map(|x| x + shift)).unwrap();
            let scaled = Grouped::new(3, 4, g.data.scale(scale)).unwrap();
            prop_assert!((vhat_mn(&shifted).unwrap().1 - v).abs() < 1e-9 * (1.0 + v));
            prop_assert!((vhat_mn(&scaled).unwrap().1 - scale * scale * v).abs() < 1e-9 * (1.0 + v));
        }
    }
}
