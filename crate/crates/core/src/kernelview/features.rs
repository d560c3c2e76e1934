//! Explicit monomial feature maps.
//!
//! Both maps use the symmetric (multinomial) form of a tensor power: for
//! `|J| = j`, the coordinate `√(c · multinomial(J)) · x^J` collects the
//! `multinomial(J)` identical entries of `x^{⊗j}` into one.

use serde::Serialize;

use super::taylor_sigma_hat;
use crate::error::{GshError, Result};

pub const DEFAULT_FEATURE_CAP: usize = 1_000_000;

/// Exponent vector `J` of the monomial `x^J = Π x_i^{J_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MonomialIndex(pub Vec<u32>);

impl MonomialIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

/// `C(n, r)` in floating point.
fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of monomials of degree exactly `degree` in `vars` variables.
pub fn monomial_count(vars: usize, degree: usize) -> usize {
    if vars == 0 {
        return usize::from(degree == 0);
    }
    binomial(degree + vars - 1, vars - 1).round() as usize
}

/// `|J|! / Π J_i!`
pub fn multinomial(j: &MonomialIndex) -> f64 {
    let mut total = 0usize;
    let mut acc = 1.0;
    for &e in &j.0 {
        total += e as usize;
        acc *= binomial(total, e as usize);
    }
    acc
}

/// All exponent vectors over `vars` variables with `|J| = degree`, in
/// lexicographically descending order of `J`.
pub fn enumerate_monomials(vars: usize, degree: usize) -> Vec<MonomialIndex> {
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MonomialIndex>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(MonomialIndex(cur.clone()));
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e;
            rec(pos + 1, left - e, cur, out);
        }
    }
    let mut out = Vec::with_capacity(monomial_count(vars, degree));
    if vars == 0 {
        if degree == 0 {
            out.push(MonomialIndex(Vec::new()));
        }
        return out;
    }
    rec(0, degree as u32, &mut vec![0; vars], &mut out);
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct FeatureVector {
    pub indices: Vec<MonomialIndex>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        crate::numlin::dot(&self.values, &other.values)
    }
}

/// Truncated feature map `φ_k` with `⟨φ_k(x), φ_k(y)⟩ = Σ_{j≤k} q_j (xᵀy)^j`,
/// where `q_j` are the Taylor coefficients of `σ̂`.
pub fn phi_k_features(x: &[f64], k: usize, cap: usize) -> Result<FeatureVector> {
    let d = x.len();
    let total: usize = (0..=k).map(|j| monomial_count(d, j)).sum();
    if total > cap {
        return Err(GshError::FeatureCap {
            requested: total,
            cap,
        });
    }
    let q = taylor_sigma_hat(k);
    let mut indices = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for (j, &qj) in q.coeffs.iter().enumerate() {
        let qj = qj.max(0.0);
        for idx in enumerate_monomials(d, j) {
            values.push((qj * multinomial(&idx)).sqrt() * idx.eval(x));
            indices.push(idx);
        }
    }
    Ok(FeatureVector { indices, values })
}

/// `ψ(u)_J = √(multinomial(J)) u^J` over `|J| = p`, so that
/// `⟨ψ(u), ψ(v)⟩ = (uᵀv)^p`.
pub fn psi_features(u: &[f64], p: usize, cap: usize) -> Result<FeatureVector> {
    let count = monomial_count(u.len(), p);
    if count > cap {
        return Err(GshError::FeatureCap {
            requested: count,
            cap,
        });
    }
    let indices = enumerate_monomials(u.len(), p);
    let values = indices
        .iter()
        .map(|idx| multinomial(idx).sqrt() * idx.eval(u))
        .collect();
    Ok(FeatureVector { indices, values })
}

/// `μ(u, v) = ⟨u, v⟩^p`
pub fn mu_power(u: &[f64], v: &[f64], p: usize) -> f64 {
    crate::numlin::dot(u, v).powi(p as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelview::dual_activation;
    use crate::numlin::{dot, SeededRng};
    use approx::assert_abs_diff_eq;

    #[test]
    fn counts_and_multinomials() {
        assert_eq!(monomial_count(2, 2), 3);
        assert_eq!(monomial_count(4, 6), 84);
        assert_eq!(enumerate_monomials(4, 6).len(), 84);
        assert_eq!(multinomial(&MonomialIndex(vec![1, 1])), 2.0);
        assert_eq!(multinomial(&MonomialIndex(vec![2, 1, 1])), 12.0);
        assert!(enumerate_monomials(3, 4).iter().all(|j| j.degree() == 4));
    }

    #[test]
    fn phi_degree_zero_is_constant() {
        let f = phi_k_features(&[0.3, 0.4], 0, DEFAULT_FEATURE_CAP).unwrap();
        assert_eq!(f.len(), 1);
        assert_abs_diff_eq!(f.values[0], (1.0 / (2.0 * std::f64::consts::PI)).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn phi_approximates_sigma_hat() {
        let x = [1.0, 0.0];
        let y = [0.5, 0.75f64.sqrt()];
        let fx = phi_k_features(&x, 12, DEFAULT_FEATURE_CAP).unwrap();
        let fy = phi_k_features(&y, 12, DEFAULT_FEATURE_CAP).unwrap();
        assert!((fx.dot(&fy) - dual_activation(0.5).unwrap()).abs() < 2e-4);
        let self_ip = fx.dot(&fx);
        assert!(self_ip > 0.49 && self_ip < 0.5, "{self_ip}");
    }

    #[test]
    fn phi_matches_series_by_independent_route() {
        let mut rng = SeededRng::new(6);
        let q = taylor_sigma_hat(8);
        for _ in 0..20 {
            let x = rng.unit_vec(3);
            let y = rng.unit_vec(3);
            let fx = phi_k_features(&x, 8, DEFAULT_FEATURE_CAP).unwrap();
            let fy = phi_k_features(&y, 8, DEFAULT_FEATURE_CAP).unwrap();
            let t = dot(&x, &y);
            let series: f64 = q.coeffs.iter().enumerate().map(|(j, c)| c * t.powi(j as i32)).sum();
            assert!((fx.dot(&fy) - series).abs() < 1e-10);
        }
    }

    #[test]
    fn feature_cap_is_enforced() {
        assert!(matches!(
            phi_k_features(&[0.1; 30], 6, 1000),
            Err(GshError::FeatureCap { .. })
        ));
        assert!(psi_features(&[0.1; 30], 8, 1000).is_err());
    }

    #[test]
    fn psi_small_case_and_identity() {
        let f = psi_features(&[0.6, 0.8], 2, DEFAULT_FEATURE_CAP).unwrap();
        let expect = [0.36, 2f64.sqrt() * 0.48, 0.64];
        for (a, b) in f.values.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let mut rng = SeededRng::new(9);
        for s in 1..=4 {
            for p in 0..=6 {
                let u = rng.unit_vec(s);
                let v = rng.unit_vec(s);
                let pu = psi_features(&u, p, DEFAULT_FEATURE_CAP).unwrap();
                let pv = psi_features(&v, p, DEFAULT_FEATURE_CAP).unwrap();
                assert!((pu.dot(&pv) - mu_power(&u, &v, p)).abs() < 1e-10);
                assert_abs_diff_eq!(mu_power(&u, &u, p), 1.0, epsilon = 1e-12);
            }
        }
    }
}
