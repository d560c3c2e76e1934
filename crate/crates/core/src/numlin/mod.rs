//! Dense linear algebra and seeded randomness shared by every other module.

mod decomp;
pub mod io;
mod matrix;
mod rng;

pub use decomp::{
    gaussian_matrix, least_squares, matrix_sqrt, norms, nuclear_norm, orthonormal_complement,
    pseudoinverse, qr, random_orthogonal, ridge_least_squares, spectral_norm, svd,
    symmetric_eigen, Norms, SvdResult,
};
pub use matrix::{dot, norm, sq_dist, Matrix, Trans};
pub use rng::{child_seed, derive_seed, splitmix64, SeededRng};

/// `m` groups of `n` rows each, stored as one `(m·n) × width` matrix.
/// Row `l·n + i` is sample `i` of group `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouped {
    pub m: usize,
    pub n: usize,
    pub data: Matrix,
}

impl Grouped {
    pub fn new(m: usize, n: usize, data: Matrix) -> crate::error::Result<Self> {
        if data.rows() != m * n {
            return crate::error::shape_err(
                "Grouped::new",
                format!("{} rows for {m} groups of {n}", data.rows()),
            );
        }
        Ok(Self { m, n, data })
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    pub fn sample(&self, l: usize, i: usize) -> &[f64] {
        self.data.row(l * self.n + i)
    }

    pub fn group(&self, l: usize) -> Matrix {
        self.data.row_block(l * self.n, (l + 1) * self.n)
    }

    pub fn group_mean(&self, l: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.width()];
        for i in 0..self.n {
            for (a, b) in mean.iter_mut().zip(self.sample(l, i)) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= self.n as f64);
        mean
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.m).flat_map(|l| std::iter::repeat_n(l, self.n)).collect()
    }
}
