use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, GshError, Result};
use crate::manifolds::Augmentation;
use crate::numlin::{self, gaussian_matrix, io, Grouped, Matrix, SeededRng};

/// `ŷ = A · B · relu(C · x)` with `C` drawn once and (normally) frozen.
#[derive(Clone, Debug)]
pub struct GshModel {
    /// `D × d_aug`, rows `N(0, I/D)`
    pub c: Matrix,
    /// `m × T`
    pub a: Matrix,
    /// `T × D`
    pub b: Matrix,
    pub augmentation: Augmentation,
    pub c_seed: u64,
    /// `‖C‖₂` at construction
    pub c_spectral: f64,
    /// `C` was updated by training (outside the frozen-layer setting).
    pub c_trained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// hidden width `D`
    pub width: usize,
    /// representation dimension `T`
    pub rep_dim: usize,
    /// update `C` during training too
    #[serde(default)]
    pub train_c: bool,
}

/// Frozen random layer with `N(0, 1/D)` entries.
pub fn random_relu_layer(width: usize, d_in: usize, seed: u64) -> Result<Matrix> {
    gaussian_matrix(&mut SeededRng::new(seed), width, d_in, 1.0 / width as f64)
}

impl GshModel {
    pub fn new(
        d_aug: usize,
        classes: usize,
        arch: &ArchConfig,
        augmentation: Augmentation,
        c_seed: u64,
        init_scale: f64,
        init_seed: u64,
    ) -> Result<Self> {
        if arch.width == 0 || arch.rep_dim == 0 || classes == 0 || d_aug == 0 {
            return shape_err("GshModel::new", "all dimensions must be >= 1");
        }
        let c = random_relu_layer(arch.width, d_aug, c_seed)?;
        let c_spectral = numlin::spectral_norm(&c)?;
        let mut rng = SeededRng::new(init_seed);
        let (a, b) = if init_scale > 0.0 {
            let v = init_scale * init_scale;
            (
                gaussian_matrix(&mut rng, classes, arch.rep_dim, v)?,
                gaussian_matrix(&mut rng, arch.rep_dim, arch.width, v)?,
            )
        } else {
            (
                Matrix::zeros(classes, arch.rep_dim),
                Matrix::zeros(arch.rep_dim, arch.width),
            )
        };
        Ok(Self {
            c,
            a,
            b,
            augmentation,
            c_seed,
            c_spectral,
            c_trained: false,
        })
    }

    pub fn classes(&self) -> usize {
        self.a.rows()
    }

    pub fn rep_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn width(&self) -> usize {
        self.c.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.c.cols()
    }

    /// `relu(X Cᵀ)` for inputs stored one per row; `N × D`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(x.matmul_t(&self.c)?.map(|v| v.max(0.0)))
    }

    /// Representations `B·relu(C·x)`, one per row; `N × T`.
    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        self.features(x)?.matmul_t(&self.b)
    }

    pub fn represent_grouped(&self, x: &Grouped) -> Result<Grouped> {
        Grouped::new(x.m, x.n, self.represent(&x.data)?)
    }

    /// Predictions, one per row; `N × m`.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.represent(x)?.matmul_t(&self.a)
    }

    /// `(representation, prediction)` for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return shape_err(
                "forward",
                format!("model expects {} inputs, got {}", self.input_dim(), x.len()),
            );
        }
        let z: Vec<f64> = self.c.matvec(x)?.into_iter().map(|v| v.max(0.0)).collect();
        let r = self.b.matvec(&z)?;
        let y = self.a.matvec(&r)?;
        Ok((r, y))
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.1))
    }

    /// Fraction of rows of `x` whose predicted label differs from the group.
    pub fn zero_one_error(&self, x: &Grouped) -> Result<f64> {
        let pred = self.predict(&x.data)?;
        let labels = x.labels();
        let wrong = labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| argmax(pred.row(i)) != l)
            .count();
        Ok(wrong as f64 / labels.len().max(1) as f64)
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            classes: self.classes(),
            rep_dim: self.rep_dim(),
            width: self.width(),
            input_dim: self.input_dim(),
            augmentation: self.augmentation,
            c_seed: self.c_seed,
            c_spectral: self.c_spectral,
            c_trained: self.c_trained,
            train: extra,
        };
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)?)?;
        io::write_matrix(&dir.join("A.f64m"), &self.a)?;
        io::write_matrix(&dir.join("B.f64m"), &self.b)?;
        io::write_matrix(&dir.join("C.f64m"), &self.c)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| GshError::MissingInput {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let a = io::read_matrix(&dir.join("A.f64m"))?;
        let b = io::read_matrix(&dir.join("B.f64m"))?;
        let c = io::read_matrix(&dir.join("C.f64m"))?;
        if a.shape() != (meta.classes, meta.rep_dim)
            || b.shape() != (meta.rep_dim, meta.width)
            || c.shape() != (meta.width, meta.input_dim)
        {
            return Err(GshError::Format {
                path,
                detail: "matrix shapes disagree with model.json".into(),
            });
        }
        Ok(Self {
            c,
            a,
            b,
            augmentation: meta.augmentation,
            c_seed: meta.c_seed,
            c_spectral: meta.c_spectral,
            c_trained: meta.c_trained,
        })
    }

    /// Hash of the parameter matrices, for provenance records.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(io::encode(&self.a));
        h.update(io::encode(&self.b));
        h.update(io::encode(&self.c));
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    classes: usize,
    rep_dim: usize,
    width: usize,
    input_dim: usize,
    augmentation: Augmentation,
    c_seed: u64,
    c_spectral: f64,
    c_trained: bool,
    train: serde_json::Value,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(a: f64, b: f64, c: f64) -> GshModel {
        GshModel {
            c: Matrix::from_vec(1, 1, vec![c]).unwrap(),
            a: Matrix::from_vec(1, 1, vec![a]).unwrap(),
            b: Matrix::from_vec(1, 1, vec![b]).unwrap(),
            augmentation: Augmentation::None,
            c_seed: 0,
            c_spectral: c.abs(),
            c_trained: false,
        }
    }

    #[test]
    fn forward_zero_layers_and_relu() {
        let mut m = GshModel::new(3, 2, &ArchConfig { width: 8, rep_dim: 4, train_c: false }, Augmentation::None, 1, 0.5, 2).unwrap();
        m.a = Matrix::zeros(2, 4);
        assert!(m.forward(&[0.1, 0.2, 0.3]).unwrap().1.iter().all(|&v| v == 0.0));
        m.b = Matrix::zeros(4, 8);
        assert!(m.forward(&[0.1, 0.2, 0.3]).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(m.forward(&[0.1]).is_err());

        let t = toy(1.0, 1.0, 1.0);
        assert_eq!(t.forward(&[-2.0]).unwrap().1, vec![0.0]);
        assert_eq!(t.forward(&[2.0]).unwrap().1, vec![2.0]);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.0, 1.0, 0.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = GshModel::new(4, 3, &ArchConfig { width: 6, rep_dim: 2, train_c: false }, Augmentation::BiasHalf, 5, 0.1, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), serde_json::json!({})).unwrap();
        let back = GshModel::load(dir.path()).unwrap();
        assert_eq!(back.content_hash(), m.content_hash());
        assert_eq!(back.augmentation, Augmentation::BiasHalf);
    }
}
