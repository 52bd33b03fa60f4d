//! Singular value decomposition, principal angles and the dictionary analyses
//! built on them.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: columns of a working
//! copy are rotated pairwise until mutually orthogonal, at which point their
//! norms are the singular values and the accumulated rotations form `V`.

use serde::Serialize;

use crate::error::{shape_err, AgeError, Result};
use crate::inference::{edit, RefinedDictionary, SparseCode};
use crate::latent::LatentCode;
use crate::linalg::{axpy, dot, modified_gram_schmidt, norm, Matrix};
use crate::world::SyntheticWorld;

/// Maximum number of Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;
/// Pairs whose normalized inner product is below this are treated as orthogonal.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// `A = U · diag(s) · Vᵀ` with `r = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top && s > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose()).expect("svd factors are conformant")
    }
}

/// Thin SVD by one-sided Jacobi rotations.
pub fn svd(matrix: &Matrix) -> Result<SvdResult> {
    if !matrix.is_finite() {
        return Err(AgeError::InvalidValue("svd of non-finite matrix".into()));
    }
    if matrix.rows() >= matrix.cols() {
        jacobi_tall(matrix)
    } else {
        let t = jacobi_tall(&matrix.transpose())?;
        Ok(SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let fro2 = dot(a.as_slice(), a.as_slice());
    let floor = f64::EPSILON * f64::EPSILON * fro2;

    let mut converged = n < 2;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= OFF_DIAGONAL_TOL * (alpha * beta).sqrt() || gamma.abs() <= floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(AgeError::Convergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(usize, f64)> = w.iter().map(|c| norm(c)).enumerate().collect();
    // stable: equal values keep column order
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(j, s)) in order.iter().enumerate() {
        let mut u = vec![0.0; m];
        if s > 1e-300 {
            u = w[j].iter().map(|x| x / s).collect();
            // Tiny singular values leave roundoff in the direction; re-orthogonalize.
            for _ in 0..2 {
                for prev in &u_cols {
                    let r = dot(prev, &u);
                    axpy(-r, prev, &mut u);
                }
            }
            let nu = norm(&u);
            if nu > 0.5 {
                u.iter_mut().for_each(|x| *x /= nu);
            } else {
                u = vec![0.0; m];
                missing.push(k);
            }
        } else {
            missing.push(k);
        }
        u_cols.push(u);
        values.push(s);
        v_cols.push(v[j].clone());
    }
    complete_basis(&mut u_cols, &missing);
    Ok(SvdResult {
        u: from_cols(m, &u_cols),
        singular_values: values,
        v: from_cols(n, &v_cols),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn from_cols(rows: usize, cols: &[Vec<f64>]) -> Matrix {
    let mut m = Matrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j != k {
                        let r = dot(c, &e);
                        axpy(-r, c, &mut e);
                    }
                }
            }
            let n = norm(&e);
            if n > 1e-6 {
                e.iter_mut().for_each(|x| *x /= n);
                cols[k] = e;
                break;
            }
        }
    }
}

/// Moore–Penrose pseudo-inverse via the SVD, dropping singular values below
/// `1e-10 ×` the largest.
pub fn pseudo_inverse(matrix: &Matrix) -> Result<Matrix> {
    let (rows, cols) = matrix.shape();
    let dec = svd(matrix)?;
    let top = dec.singular_values.first().copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in dec.singular_values.iter().enumerate() {
        if s <= 1e-10 * top || s == 0.0 {
            continue;
        }
        let vk = dec.v.column(k);
        let uk = dec.u.column(k);
        out.add_outer(1.0 / s, &vk, &uk);
    }
    Ok(out)
}

/// Cosines of the principal angles between two column spans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceScore {
    pub principal_angle_cosines: Vec<f64>,
    pub mean_cosine: f64,
}

pub fn principal_angles(basis1: &Matrix, basis2: &Matrix) -> Result<SubspaceScore> {
    if basis1.rows() != basis2.rows() {
        return Err(shape_err("bases live in different dimensions"));
    }
    let q1 = modified_gram_schmidt(basis1, 1e-10)?;
    let q2 = modified_gram_schmidt(basis2, 1e-10)?;
    let cross = q1.transpose().matmul(&q2)?;
    let cosines: Vec<f64> = if cross.rows() == 0 || cross.cols() == 0 {
        Vec::new()
    } else {
        svd(&cross)?
            .singular_values
            .into_iter()
            .map(|c| c.clamp(0.0, 1.0))
            .collect()
    };
    let mean_cosine = if cosines.is_empty() {
        0.0
    } else {
        cosines.iter().sum::<f64>() / cosines.len() as f64
    };
    Ok(SubspaceScore {
        principal_angle_cosines: cosines,
        mean_cosine,
    })
}

/// Per-layer principal angles between the refined dictionary and the world's
/// true irrelevant subspace.
///
/// Only the independent columns of each layer's dictionary are scored: the
/// span is taken from the left singular vectors with nonzero singular value.
pub fn subspace_recovery_score(
    refined: &RefinedDictionary,
    world: &SyntheticWorld,
) -> Result<Vec<SubspaceScore>> {
    if refined.layer_count() != world.spec().layers || refined.dim() != world.spec().dim {
        return Err(shape_err("refined dictionary does not match world"));
    }
    (0..refined.layer_count())
        .map(|l| principal_angles(&span_basis(refined.layer(l))?, world.irrelevant_basis(l)))
        .collect()
}

/// Orthonormal basis of `span(m)` from its SVD (rank-revealing).
pub fn span_basis(m: &Matrix) -> Result<Matrix> {
    let dec = svd(m)?;
    let rank = dec.rank(1e-10);
    if rank == 0 {
        return Err(AgeError::Rank("zero matrix has an empty span".into()));
    }
    Ok(dec.u.select_columns(&(0..rank).collect::<Vec<_>>()))
}

/// Pairwise cosine similarities of the displacements produced by applying the
/// same `(ñ, α)` edit to each code. Two zero displacements have cosine 1.
pub fn transferability_check(
    codes: &[LatentCode],
    refined: &RefinedDictionary,
    n_tilde: &SparseCode,
    alpha: f64,
) -> Result<Matrix> {
    if codes.len() < 2 {
        return Err(AgeError::InsufficientData("need at least two codes".into()));
    }
    let displacements = codes
        .iter()
        .map(|c| {
            let e = edit(c, refined, n_tilde, alpha)?;
            Ok(e.as_slice()
                .iter()
                .zip(c.as_slice())
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let k = codes.len();
    let mut out = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            out[(i, j)] = cosine(&displacements[i], &displacements[j]);
        }
    }
    Ok(out)
}

/// Cosine similarity with the zero/zero convention set to 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot(a, b) / (na * nb),
    }
}

/// One left singular direction of a layer of the refined dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub layer: usize,
    pub singular_value: f64,
    pub vector: Vec<f64>,
}

/// Left singular vectors of each layer of `A_f`, strongest first.
pub fn disentangled_directions(refined: &RefinedDictionary) -> Result<Vec<Vec<Direction>>> {
    (0..refined.layer_count())
        .map(|l| {
            let dec = svd(refined.layer(l))?;
            Ok(dec
                .singular_values
                .iter()
                .enumerate()
                .map(|(k, &s)| Direction {
                    layer: l,
                    singular_value: s,
                    vector: dec.u.column(k),
                })
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_matrix(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, rng.normal_vec(r * c)).unwrap()
    }

    fn check_svd(a: &Matrix) {
        let dec = svd(a).unwrap();
        let r = a.rows().min(a.cols());
        assert_eq!(dec.u.shape(), (a.rows(), r));
        assert_eq!(dec.v.shape(), (a.cols(), r));
        let utu = dec.u.transpose().matmul(&dec.u).unwrap();
        let vtv = dec.v.transpose().matmul(&dec.v).unwrap();
        assert!(utu.sub(&Matrix::identity(r)).unwrap().max_abs() < 1e-9);
        assert!(vtv.sub(&Matrix::identity(r)).unwrap().max_abs() < 1e-9);
        let err = dec.reconstruct().sub(a).unwrap().frobenius_norm();
        assert!(err <= 1e-10 * a.frobenius_norm().max(1e-300), "reconstruction {err}");
        assert!(dec.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(svd(&Matrix::identity(3)).unwrap().singular_values, vec![1.0; 3]);
        let d = Matrix::diagonal(&[3.0, 1.0, 2.0]);
        assert_eq!(svd(&d).unwrap().singular_values, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_shapes_decompose() {
        let mut rng = SeededRng::new(73);
        for (r, c) in [(6, 4), (4, 6), (1, 5), (5, 1), (9, 9)] {
            check_svd(&random_matrix(&mut rng, r, c));
        }
    }

    #[test]
    fn rank_deficient_matrix_still_has_orthonormal_u() {
        let mut rng = SeededRng::new(8);
        let col = rng.normal_vec(5);
        let a = Matrix::from_columns(&[col.clone(), col.iter().map(|x| 2.0 * x).collect(), vec![0.0; 5]])
            .unwrap();
        check_svd(&a);
        assert_eq!(svd(&a).unwrap().rank(1e-10), 1);
        check_svd(&Matrix::zeros(3, 2));
    }

    #[test]
    fn pseudo_inverse_small_cases() {
        let i = pseudo_inverse(&Matrix::identity(3)).unwrap();
        assert!(i.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-15);
        let p = pseudo_inverse(&Matrix::diagonal(&[2.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(pseudo_inverse(&Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn principal_angle_basics() {
        let e1 = Matrix::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let e2 = Matrix::from_columns(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(principal_angles(&e1, &e1).unwrap().principal_angle_cosines, vec![1.0]);
        assert_eq!(principal_angles(&e1, &e2).unwrap().mean_cosine, 0.0);
        let theta: f64 = 0.3;
        let rot = Matrix::from_columns(&[vec![theta.cos(), theta.sin(), 0.0]]).unwrap();
        let x = Matrix::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let s = principal_angles(&x, &rot).unwrap();
        assert!((s.mean_cosine - theta.cos()).abs() < 1e-10);
        let dep = Matrix::from_columns(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert!(matches!(principal_angles(&dep, &e1), Err(AgeError::Rank(_))));
    }

    #[test]
    fn principal_angles_are_symmetric() {
        let mut rng = SeededRng::new(4);
        let a = random_matrix(&mut rng, 7, 3);
        let b = random_matrix(&mut rng, 7, 2);
        let ab = principal_angles(&a, &b).unwrap();
        let ba = principal_angles(&b, &a).unwrap();
        for (x, y) in ab.principal_angle_cosines.iter().zip(&ba.principal_angle_cosines) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cosine_conventions() {
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
