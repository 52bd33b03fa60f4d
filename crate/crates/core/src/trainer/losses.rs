//! Reconstruction, sparsity and orthogonality losses with their exact gradients.

use crate::error::{shape_err, Result};
use crate::latent::{ClassEmbedding, ClassEmbeddingBank, LatentCode};
use crate::linalg::{dot, Matrix};
use crate::rng::SeededRng;
use crate::trainer::{LayerGrouping, SparsityForm};
use crate::world::{ImageVector, SyntheticWorld};

/// Per-layer `d × l` matrices of candidate editing directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDictionary {
    layers: Vec<Matrix>,
}

impl DirectionDictionary {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| shape_err("dictionary needs a layer"))?;
        let shape = first.shape();
        if layers.iter().any(|m| m.shape() != shape) {
            return Err(shape_err("dictionary layers differ in shape"));
        }
        Ok(Self { layers })
    }

    /// Seeded Gaussian entries with variance `1/d`, so columns have unit
    /// expected squared norm.
    pub fn init(layers: usize, dim: usize, directions: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derived(seed, 0x4449_4354);
        let scale = 1.0 / (dim as f64).sqrt();
        let layers = (0..layers)
            .map(|_| {
                Matrix::from_vec(
                    dim,
                    directions,
                    (0..dim * directions).map(|_| scale * rng.normal()).collect(),
                )
                .expect("sized by construction")
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn directions(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// `ŵ_ℓ = w̄_ℓ + A_ℓ · n_{group(ℓ)}`
    pub fn reconstruct(
        &self,
        base: &LatentCode,
        codes: &[Vec<f64>],
        grouping: &LayerGrouping,
    ) -> Result<LatentCode> {
        base.check_shape((self.layer_count(), self.dim()))?;
        check_codes(codes, grouping, self.directions())?;
        let mut values = base.as_slice().to_vec();
        let d = self.dim();
        for (l, a) in self.layers.iter().enumerate() {
            let shift = a.matvec(&codes[grouping.group_of(l)])?;
            for (v, s) in values[l * d..(l + 1) * d].iter_mut().zip(&shift) {
                *v += s;
            }
        }
        LatentCode::new(self.layer_count(), d, values)
    }
}

pub(crate) fn check_codes(codes: &[Vec<f64>], grouping: &LayerGrouping, l: usize) -> Result<()> {
    if codes.len() != grouping.len() || codes.iter().any(|c| c.len() != l) {
        return Err(shape_err(format!(
            "expected {} codes of length {l}",
            grouping.len()
        )));
    }
    Ok(())
}

/// Reconstruction target: an image for image-space loss, a code for latent-space loss.
#[derive(Debug, Clone, Copy)]
pub enum RecTarget<'a> {
    Image(&'a ImageVector),
    Latent(&'a LatentCode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecLoss {
    pub value: f64,
    /// `∂L/∂A_ℓ` per layer.
    pub grad_dictionary: Vec<Matrix>,
    /// `∂L/∂n_g` per group.
    pub grad_codes: Vec<Vec<f64>>,
}

/// Squared reconstruction error of `w̄ + A·n` against `target`.
pub fn loss_rec(
    world: &SyntheticWorld,
    embedding: &ClassEmbedding,
    dictionary: &DirectionDictionary,
    codes: &[Vec<f64>],
    grouping: &LayerGrouping,
    target: RecTarget<'_>,
) -> Result<RecLoss> {
    let w_hat = dictionary.reconstruct(&embedding.code, codes, grouping)?;
    let (value, grad_w) = match target {
        RecTarget::Latent(w) => {
            w.check_shape(w_hat.shape())?;
            let r: Vec<f64> = w_hat.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a - b).collect();
            (dot(&r, &r), r.iter().map(|v| 2.0 * v).collect::<Vec<_>>())
        }
        RecTarget::Image(x) => {
            let g = world.generator();
            if x.0.len() != g.rows() {
                return Err(shape_err("target image dimension"));
            }
            let mut r = g.matvec(w_hat.as_slice())?;
            for (ri, xi) in r.iter_mut().zip(&x.0) {
                *ri -= xi;
            }
            let mut gw = g.matvec_t(&r)?;
            gw.iter_mut().for_each(|v| *v *= 2.0);
            (dot(&r, &r), gw)
        }
    };
    let d = dictionary.dim();
    let mut grad_dictionary = Vec::with_capacity(dictionary.layer_count());
    let mut grad_codes = vec![vec![0.0; dictionary.directions()]; grouping.len()];
    for (l, a) in dictionary.layers().iter().enumerate() {
        let g_layer = &grad_w[l * d..(l + 1) * d];
        let group = grouping.group_of(l);
        let mut ga = Matrix::zeros(a.rows(), a.cols());
        ga.add_outer(1.0, g_layer, &codes[group]);
        grad_dictionary.push(ga);
        let gn = a.matvec_t(g_layer)?;
        for (acc, v) in grad_codes[group].iter_mut().zip(&gn) {
            *acc += v;
        }
    }
    Ok(RecLoss {
        value,
        grad_dictionary,
        grad_codes,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum of `σ(θ0·|n| − θ1)` (or the signed form) over every code entry, with
/// its gradient. The magnitude form has subgradient 0 at `n = 0`.
pub fn loss_sparse(
    codes: &[Vec<f64>],
    theta0: f64,
    theta1: f64,
    form: SparsityForm,
) -> (f64, Vec<Vec<f64>>) {
    let mut value = 0.0;
    let grads = codes
        .iter()
        .map(|code| {
            code.iter()
                .map(|&n| {
                    let (arg, sign) = match form {
                        SparsityForm::Magnitude => (theta0 * n.abs() - theta1, sign0(n)),
                        SparsityForm::Signed => (theta0 * n - theta1, 1.0),
                    };
                    let s = sigmoid(arg);
                    value += s;
                    theta0 * s * (1.0 - s) * sign
                })
                .collect()
        })
        .collect();
    (value, grads)
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ_ℓ ‖B_ℓᵀ A_ℓ‖_F²` and its gradient `2·B_ℓ B_ℓᵀ A_ℓ`.
pub fn loss_orth(
    dictionary: &DirectionDictionary,
    bank: &ClassEmbeddingBank,
) -> Result<(f64, Vec<Matrix>)> {
    if bank.layer_count() != dictionary.layer_count() || bank.code_shape().1 != dictionary.dim() {
        return Err(shape_err("bank and dictionary disagree on layers or dim"));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(dictionary.layer_count());
    for (l, a) in dictionary.layers().iter().enumerate() {
        let bt = bank.layer(l).transpose();
        let bta = bt.matmul(a)?;
        value += dot(bta.as_slice(), bta.as_slice());
        let mut g = bank.layer(l).matmul(&bta)?;
        g.scale(2.0);
        grads.push(g);
    }
    Ok((value, grads))
}

/// `Σ_ℓ ‖B_ℓᵀ A_ℓ‖_F`, the orthogonality residual reported by analyses.
pub fn orthogonality_residual(dictionary: &DirectionDictionary, bank: &ClassEmbeddingBank) -> Result<f64> {
    let mut total = 0.0;
    for (l, a) in dictionary.layers().iter().enumerate() {
        total += bank.layer(l).transpose().matmul(a)?.frobenius_norm();
    }
    Ok(total)
}

/// `L_rec + λ1·L_orth + λ2·L_sparse`
pub fn total_loss(rec: f64, orth: f64, sparse: f64, lambda1: f64, lambda2: f64) -> f64 {
    rec + lambda1 * orth + lambda2 * sparse
}
