//! Truncated univariate power series.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub coeffs: Vec<f64>,
}

impl PowerSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a power series needs at least a constant term");
        Self { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        Self::new(vec![0.0; order + 1])
    }

    pub fn constant(c: f64, order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = c;
        s
    }

    /// The series `x`.
    pub fn identity(order: usize) -> Self {
        let mut s = Self::zero(order);
        if order >= 1 {
            s.coeffs[1] = 1.0;
        }
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        Self::new((0..=n).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(self.coeffs.iter().map(|v| v * c).collect())
    }

    /// Cauchy product truncated to the smaller order.
    pub fn mul(&self, other: &Self) -> Self {
        let n = self.order().min(other.order());
        let mut out = vec![0.0; n + 1];
        for (i, &a) in self.coeffs.iter().enumerate().take(n + 1) {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate().take(n + 1 - i) {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    /// `1/f`; requires a non-zero constant term.
    pub fn recip(&self) -> Self {
        let a0 = self.coeffs[0];
        assert!(a0 != 0.0, "recip needs a non-zero constant term");
        let n = self.order();
        let mut b = vec![0.0; n + 1];
        b[0] = 1.0 / a0;
        for k in 1..=n {
            let s: f64 = (1..=k).map(|j| self.coeff(j) * b[k - j]).sum();
            b[k] = -s / a0;
        }
        Self::new(b)
    }

    /// Principal square root; requires a positive constant term.
    pub fn sqrt(&self) -> Self {
        let a0 = self.coeffs[0];
        assert!(a0 > 0.0, "sqrt needs a positive constant term");
        let n = self.order();
        let mut b = vec![0.0; n + 1];
        b[0] = a0.sqrt();
        // b² = a  ⇒  2 b0 bk = ak − Σ_{j=1}^{k-1} bj b_{k−j}
        for k in 1..=n {
            let s: f64 = (1..k).map(|j| b[j] * b[k - j]).sum();
            b[k] = (self.coeff(k) - s) / (2.0 * b[0]);
        }
        Self::new(b)
    }

    /// Antiderivative with zero constant term; order grows by one.
    pub fn integrate(&self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + 1];
        for (k, &a) in self.coeffs.iter().enumerate() {
            out[k + 1] = a / (k + 1) as f64;
        }
        Self::new(out)
    }

    pub fn derivative(&self) -> Self {
        if self.order() == 0 {
            return Self::zero(0);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &a)| k as f64 * a)
                .collect(),
        )
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self::new((0..=order).map(|k| self.coeff(k)).collect())
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    /// Coefficients replaced by their absolute values.
    pub fn abs(&self) -> Self {
        Self::new(self.coeffs.iter().map(|v| v.abs()).collect())
    }

    /// Taylor series of `e^x`.
    pub fn exp_series(order: usize) -> Self {
        let mut c = vec![1.0; order + 1];
        for k in 1..=order {
            c[k] = c[k - 1] / k as f64;
        }
        Self::new(c)
    }

    /// Taylor series of `sin x`.
    pub fn sin_series(order: usize) -> Self {
        let e = Self::exp_series(order);
        Self::new(
            e.coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| match k % 4 {
                    1 => c,
                    3 => -c,
                    _ => 0.0,
                })
                .collect(),
        )
    }
}
