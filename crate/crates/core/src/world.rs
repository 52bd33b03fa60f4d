//! A seeded ground-truth generative world.
//!
//! Every category `c` has a class base `b_c`; within-category variation lives in
//! a per-layer irrelevant subspace `U` shared by all categories, and class bases
//! are orthogonal to `U`. A linear map `G` (full column rank) turns a flattened
//! latent code into an "image" vector and its pseudo-inverse inverts it, so the
//! world doubles as generator, inverter and verification oracle.
//!
//! Two optional knobs build a *mismatched* variant: `relevant_rank` confines
//! class bases to a low-rank class-relevant subspace, and `seen_relevant_sigma`
//! adds seen-only within-category variation inside that subspace.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AgeError, Result};
use crate::latent::{LatentCode, LatentDataset, Split};
use crate::linalg::{modified_gram_schmidt, squared_distance, Matrix};
use crate::rng::SeededRng;
use crate::spectral::{pseudo_inverse, svd};

const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    /// Latent layers `L`.
    pub layers: usize,
    /// Latent dimension per layer `d`.
    pub dim: usize,
    /// Image-vector dimension `p ≥ L·d`.
    pub image_dim: usize,
    pub seen_categories: usize,
    pub unseen_categories: usize,
    /// Dimension of the true irrelevant subspace per layer.
    pub irrelevant_rank: usize,
    /// Minimum pairwise distance between flattened class bases.
    pub class_separation: f64,
    /// Probability that a true coefficient is nonzero.
    pub code_sparsity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Rank of the per-layer class-relevant subspace; 0 uses the whole
    /// orthogonal complement of the irrelevant subspace.
    pub relevant_rank: usize,
    /// Std of seen-only variation inside the class-relevant subspace.
    pub seen_relevant_sigma: f64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            layers: 3,
            dim: 32,
            image_dim: 128,
            seen_categories: 8,
            unseen_categories: 4,
            irrelevant_rank: 4,
            class_separation: 8.0,
            code_sparsity: 0.5,
            noise_sigma: 0.02,
            seed: 101,
            relevant_rank: 0,
            seen_relevant_sigma: 0.0,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AgeError::Config(m.to_string()));
        if self.layers == 0 || self.dim == 0 {
            return fail("layers and dim must be positive");
        }
        if self.irrelevant_rank == 0 || self.irrelevant_rank >= self.dim {
            return fail("irrelevant_rank must be in 1..dim");
        }
        if self.image_dim < self.layers * self.dim {
            return fail("image_dim must be at least layers*dim");
        }
        if self.seen_categories < 2 {
            return fail("need at least two seen categories");
        }
        if self.relevant_rank > self.dim - self.irrelevant_rank {
            return fail("relevant_rank exceeds the complement of the irrelevant subspace");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return fail("class_separation must be positive");
        }
        if !(0.0..=1.0).contains(&self.code_sparsity) {
            return fail("code_sparsity must be in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be non-negative");
        }
        if !(self.seen_relevant_sigma >= 0.0 && self.seen_relevant_sigma.is_finite()) {
            return fail("seen_relevant_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn total_categories(&self) -> usize {
        self.seen_categories + self.unseen_categories
    }

    pub fn flat_dim(&self) -> usize {
        self.layers * self.dim
    }
}

/// A `p`-dimensional generated observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector(pub Vec<f64>);

impl ImageVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    spec: SyntheticWorldSpec,
    category_names: Vec<String>,
    class_bases: Vec<LatentCode>,
    irrelevant: Vec<Matrix>,
    relevant: Vec<Matrix>,
    generator: Matrix,
    generator_pinv: Matrix,
}

pub fn category_name(split: Split, i: usize) -> String {
    match split {
        Split::Seen => format!("seen_{i:03}"),
        Split::Unseen => format!("unseen_{i:03}"),
    }
}

/// Builds a world deterministically from `spec.seed`.
pub fn generate_world(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let (l_count, d, k) = (spec.layers, spec.dim, spec.irrelevant_rank);

    let mut rng = SeededRng::derived(spec.seed, 0);
    let irrelevant = (0..l_count)
        .map(|_| random_orthonormal(&mut rng, d, k, None))
        .collect::<Result<Vec<_>>>()?;

    let relevant = if spec.relevant_rank > 0 {
        let mut rng = SeededRng::derived(spec.seed, 1);
        irrelevant
            .iter()
            .map(|u| random_orthonormal(&mut rng, d, spec.relevant_rank, Some(u)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let class_bases = draw_class_bases(spec, &irrelevant, &relevant)?;

    let mut generator = None;
    for attempt in 0..MAX_RETRIES {
        let mut rng = SeededRng::derived(spec.seed, 1000 + attempt as u64);
        let scale = 1.0 / (spec.image_dim as f64).sqrt();
        let g = Matrix::from_vec(
            spec.image_dim,
            spec.flat_dim(),
            (0..spec.image_dim * spec.flat_dim())
                .map(|_| scale * rng.normal())
                .collect(),
        )?;
        let smallest = *svd(&g)?.singular_values.last().unwrap_or(&0.0);
        if smallest > 1e-6 {
            generator = Some(g);
            break;
        }
    }
    let generator = generator
        .ok_or_else(|| AgeError::ConstructionFailed("generator map is rank-deficient".into()))?;
    let generator_pinv = pseudo_inverse(&generator)?;

    let category_names = (0..spec.seen_categories)
        .map(|i| category_name(Split::Seen, i))
        .chain((0..spec.unseen_categories).map(|i| category_name(Split::Unseen, i)))
        .collect();

    Ok(SyntheticWorld {
        spec: spec.clone(),
        category_names,
        class_bases,
        irrelevant,
        relevant,
        generator,
        generator_pinv,
    })
}

/// Seeded Gaussian `d × k` matrix, optionally projected off `exclude`, then
/// orthonormalized by modified Gram–Schmidt.
fn random_orthonormal(
    rng: &mut SeededRng,
    d: usize,
    k: usize,
    exclude: Option<&Matrix>,
) -> Result<Matrix> {
    for _ in 0..MAX_RETRIES {
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let g = rng.normal_vec(d);
                match exclude {
                    Some(u) => project_out(u, &g),
                    None => g,
                }
            })
            .collect();
        if let Ok(q) = modified_gram_schmidt(&Matrix::from_columns(&cols)?, 1e-8) {
            return Ok(q);
        }
    }
    Err(AgeError::ConstructionFailed("could not draw an orthonormal basis".into()))
}

/// `g − U Uᵀ g` for orthonormal `U`.
fn project_out(u: &Matrix, g: &[f64]) -> Vec<f64> {
    let coeffs = u.matvec_t(g).expect("dims checked by caller");
    let proj = u.matvec(&coeffs).expect("dims checked by caller");
    g.iter().zip(&proj).map(|(a, b)| a - b).collect()
}

/// `R Rᵀ g` for orthonormal `R`.
fn project_onto(r: &Matrix, g: &[f64]) -> Vec<f64> {
    let coeffs = r.matvec_t(g).expect("dims checked by caller");
    r.matvec(&coeffs).expect("dims checked by caller")
}

/// Draws class bases in the class-relevant subspace, keeps draws whose
/// closest pair is not degenerate, and rescales so the closest pair sits
/// exactly `class_separation` apart.
fn draw_class_bases(
    spec: &SyntheticWorldSpec,
    irrelevant: &[Matrix],
    relevant: &[Matrix],
) -> Result<Vec<LatentCode>> {
    let n_cat = spec.total_categories();
    for attempt in 0..MAX_RETRIES {
        let mut rng = SeededRng::derived(spec.seed, 100 + attempt as u64);
        let mut bases: Vec<Vec<f64>> = Vec::with_capacity(n_cat);
        for _ in 0..n_cat {
            let mut flat = Vec::with_capacity(spec.flat_dim());
            for l in 0..spec.layers {
                let g = rng.normal_vec(spec.dim);
                let b = if relevant.is_empty() {
                    project_out(&irrelevant[l], &g)
                } else {
                    project_onto(&relevant[l], &g)
                };
                flat.extend(b);
            }
            bases.push(flat);
        }
        let mut min_d = f64::INFINITY;
        let mut sum_d = 0.0;
        let mut pairs = 0usize;
        for i in 0..n_cat {
            for j in (i + 1)..n_cat {
                let dist = squared_distance(&bases[i], &bases[j]).sqrt();
                min_d = min_d.min(dist);
                sum_d += dist;
                pairs += 1;
            }
        }
        let mean_d = sum_d / pairs.max(1) as f64;
        if pairs == 0 || !(min_d > 0.0) || min_d < 0.25 * mean_d {
            continue;
        }
        let scale = spec.class_separation / min_d;
        return bases
            .into_iter()
            .map(|b| {
                LatentCode::new(
                    spec.layers,
                    spec.dim,
                    b.into_iter().map(|v| v * scale).collect(),
                )
            })
            .collect();
    }
    Err(AgeError::ConstructionFailed(format!(
        "could not separate {n_cat} class bases after {MAX_RETRIES} retries"
    )))
}

impl SyntheticWorld {
    /// Reassembles a world from stored parts (used by the checkpoint reader).
    pub fn from_parts(
        spec: SyntheticWorldSpec,
        class_bases: Vec<LatentCode>,
        irrelevant: Vec<Matrix>,
        relevant: Vec<Matrix>,
        generator: Matrix,
    ) -> Result<Self> {
        spec.validate()?;
        if class_bases.len() != spec.total_categories()
            || irrelevant.len() != spec.layers
            || generator.shape() != (spec.image_dim, spec.flat_dim())
        {
            return Err(shape_err("world parts do not match spec"));
        }
        let generator_pinv = pseudo_inverse(&generator)?;
        let category_names = (0..spec.seen_categories)
            .map(|i| category_name(Split::Seen, i))
            .chain((0..spec.unseen_categories).map(|i| category_name(Split::Unseen, i)))
            .collect();
        Ok(Self {
            spec,
            category_names,
            class_bases,
            irrelevant,
            relevant,
            generator,
            generator_pinv,
        })
    }

    pub fn spec(&self) -> &SyntheticWorldSpec {
        &self.spec
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// Names of the categories belonging to `split`.
    pub fn split_categories(&self, split: Split) -> &[String] {
        match split {
            Split::Seen => &self.category_names[..self.spec.seen_categories],
            Split::Unseen => &self.category_names[self.spec.seen_categories..],
        }
    }

    pub fn class_bases(&self) -> &[LatentCode] {
        &self.class_bases
    }

    pub fn class_base(&self, category: &str) -> Result<&LatentCode> {
        self.category_names
            .iter()
            .position(|c| c == category)
            .map(|i| &self.class_bases[i])
            .ok_or_else(|| AgeError::NotFound(category.to_string()))
    }

    /// Orthonormal `d × k` basis of the irrelevant subspace of layer `l`.
    pub fn irrelevant_basis(&self, l: usize) -> &Matrix {
        &self.irrelevant[l]
    }

    pub fn irrelevant_bases(&self) -> &[Matrix] {
        &self.irrelevant
    }

    /// Per-layer class-relevant bases (empty unless `relevant_rank > 0`).
    pub fn relevant_bases(&self) -> &[Matrix] {
        &self.relevant
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn generator_pinv(&self) -> &Matrix {
        &self.generator_pinv
    }

    /// `x = G · flatten(code)`.
    pub fn generate(&self, code: &LatentCode) -> Result<ImageVector> {
        code.check_shape((self.spec.layers, self.spec.dim))?;
        Ok(ImageVector(self.generator.matvec(code.as_slice())?))
    }

    /// Least-squares inversion through the pseudo-inverse of `G`.
    pub fn invert(&self, image: &ImageVector) -> Result<LatentCode> {
        if image.0.len() != self.spec.image_dim {
            return Err(shape_err(format!(
                "image of dim {} for world with p = {}",
                image.0.len(),
                self.spec.image_dim
            )));
        }
        LatentCode::new(
            self.spec.layers,
            self.spec.dim,
            self.generator_pinv.matvec(&image.0)?,
        )
    }

    /// Draws `n_per_category` codes for every category of `split`:
    /// `w = b_c + U s + ε` per layer, with `s` sparse Gaussian.
    pub fn sample_dataset(&self, n_per_category: usize, split: Split, seed: u64) -> Result<LatentDataset> {
        if n_per_category == 0 {
            return Err(AgeError::Range("n_per_category must be positive".into()));
        }
        let spec = &self.spec;
        let stream = match split {
            Split::Seen => 1,
            Split::Unseen => 2,
        };
        let mut rng = SeededRng::derived(seed, stream);
        let mut ds = LatentDataset::new(spec.layers, spec.dim, split);
        let offset = match split {
            Split::Seen => 0,
            Split::Unseen => spec.seen_categories,
        };
        for (ci, name) in self.split_categories(split).iter().enumerate() {
            ds.register_category(name);
            let base = &self.class_bases[offset + ci];
            for _ in 0..n_per_category {
                let mut values = Vec::with_capacity(spec.flat_dim());
                for l in 0..spec.layers {
                    let s: Vec<f64> = (0..spec.irrelevant_rank)
                        .map(|_| {
                            if rng.bernoulli(spec.code_sparsity) {
                                rng.normal()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let along = self.irrelevant[l].matvec(&s)?;
                    let mut layer: Vec<f64> = base
                        .layer(l)
                        .iter()
                        .zip(&along)
                        .map(|(b, a)| b + a)
                        .collect();
                    if split == Split::Seen && spec.seen_relevant_sigma > 0.0 {
                        let g = rng.normal_vec(spec.dim);
                        let rel = if self.relevant.is_empty() {
                            project_out(&self.irrelevant[l], &g)
                        } else {
                            project_onto(&self.relevant[l], &g)
                        };
                        for (x, r) in layer.iter_mut().zip(&rel) {
                            *x += spec.seen_relevant_sigma * r;
                        }
                    }
                    if spec.noise_sigma > 0.0 {
                        for x in layer.iter_mut() {
                            *x += spec.noise_sigma * rng.normal();
                        }
                    }
                    values.extend(layer);
                }
                ds.push(name, LatentCode::new(spec.layers, spec.dim, values)?)?;
            }
        }
        Ok(ds)
    }
}

/// Free-function form of [`SyntheticWorld::generate`].
pub fn synth_generate(world: &SyntheticWorld, code: &LatentCode) -> Result<ImageVector> {
    world.generate(code)
}

/// Free-function form of [`SyntheticWorld::invert`].
pub fn synth_invert(world: &SyntheticWorld, image: &ImageVector) -> Result<LatentCode> {
    world.invert(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{build_embedding_bank, compute_class_embedding, nearest_class};
    use crate::linalg::dot;

    fn small_spec(seed: u64) -> SyntheticWorldSpec {
        SyntheticWorldSpec {
            layers: 2,
            dim: 8,
            image_dim: 20,
            seen_categories: 4,
            unseen_categories: 2,
            irrelevant_rank: 3,
            class_separation: 5.0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&small_spec(1)).unwrap();
        let b = generate_world(&small_spec(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_world(&small_spec(2)).unwrap());
    }

    #[test]
    fn one_dim_irrelevant_basis_is_unit() {
        let spec = SyntheticWorldSpec {
            layers: 1,
            dim: 2,
            image_dim: 2,
            irrelevant_rank: 1,
            seen_categories: 2,
            unseen_categories: 0,
            ..Default::default()
        };
        let w = generate_world(&spec).unwrap();
        let u = w.irrelevant_basis(0).column(0);
        assert!((dot(&u, &u).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_bases_are_orthogonal_to_irrelevant_subspace() {
        let spec = SyntheticWorldSpec {
            layers: 2,
            dim: 8,
            image_dim: 16,
            irrelevant_rank: 3,
            seen_categories: 4,
            unseen_categories: 0,
            seed: 5,
            ..Default::default()
        };
        let w = generate_world(&spec).unwrap();
        for l in 0..2 {
            let u = w.irrelevant_basis(l);
            let utu = u.transpose().matmul(u).unwrap();
            assert!(utu.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-10);
            let mean: Vec<f64> = (0..8)
                .map(|i| w.class_bases().iter().map(|b| b.layer(l)[i]).sum::<f64>() / 4.0)
                .collect();
            for b in w.class_bases() {
                let centered: Vec<f64> = b.layer(l).iter().zip(&mean).map(|(x, m)| x - m).collect();
                // direct multiplication: each column of U against the centered base
                for j in 0..3 {
                    let c: f64 = (0..8).map(|i| u[(i, j)] * centered[i]).sum();
                    assert!(c.abs() <= 1e-10, "{c}");
                }
            }
        }
        let mut min_gap = f64::INFINITY;
        for i in 0..4 {
            for j in (i + 1)..4 {
                min_gap = min_gap.min(
                    squared_distance(w.class_bases()[i].as_slice(), w.class_bases()[j].as_slice()).sqrt(),
                );
            }
        }
        assert!(min_gap >= spec.class_separation * (1.0 - 1e-12));
    }

    #[test]
    fn generator_has_full_column_rank() {
        let w = generate_world(&small_spec(3)).unwrap();
        let s = svd(w.generator()).unwrap();
        assert!(*s.singular_values.last().unwrap() > 1e-6);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small_spec(1);
        s.irrelevant_rank = s.dim;
        assert!(matches!(generate_world(&s), Err(AgeError::Config(_))));
        let mut s = small_spec(1);
        s.image_dim = 3;
        assert!(generate_world(&s).is_err());
        let mut s = small_spec(1);
        s.seen_categories = 1;
        assert!(generate_world(&s).is_err());
    }

    #[test]
    fn noiseless_sparse_free_samples_equal_bases() {
        let mut spec = small_spec(4);
        spec.noise_sigma = 0.0;
        spec.code_sparsity = 0.0;
        let w = generate_world(&spec).unwrap();
        let ds = w.sample_dataset(3, Split::Seen, 1).unwrap();
        for (code, &label) in ds.codes().iter().zip(ds.labels()) {
            assert_eq!(code, &w.class_bases()[label]);
        }
        let one = w.sample_dataset(1, Split::Unseen, 2).unwrap();
        let name = &one.categories()[0];
        assert_eq!(compute_class_embedding(&one, name).unwrap().code, one.codes()[0]);
    }

    #[test]
    fn empirical_means_track_class_bases() {
        // kept small: an entrywise 3σ bound over hundreds of entries fails by chance alone
        let spec = SyntheticWorldSpec {
            layers: 1,
            dim: 4,
            image_dim: 8,
            irrelevant_rank: 2,
            seen_categories: 8,
            unseen_categories: 0,
            seed: 9,
            ..Default::default()
        };
        let w = generate_world(&spec).unwrap();
        let ds = w.sample_dataset(50, Split::Seen, 9).unwrap();
        for (c, name) in ds.categories().iter().enumerate() {
            let idx = ds.indices_of(c);
            let mean = compute_class_embedding(&ds, name).unwrap();
            for j in 0..4 {
                let xs: Vec<f64> = idx.iter().map(|&i| ds.codes()[i].as_slice()[j]).collect();
                let m = xs.iter().sum::<f64>() / 50.0;
                let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0).sqrt();
                let err = (mean.code.as_slice()[j] - w.class_bases()[c].as_slice()[j]).abs();
                assert!(err <= 3.0 * sd / 50f64.sqrt() + 1e-12 || sd == 0.0, "entry {j}: {err} vs sd {sd}");
            }
        }
    }

    #[test]
    fn generate_and_invert() {
        let w = generate_world(&small_spec(13)).unwrap();
        let (l, d) = (2, 8);
        assert!(w.generate(&LatentCode::zeros(l, d)).unwrap().0.iter().all(|&v| v == 0.0));
        let mut e = vec![0.0; l * d];
        e[5] = 1.0;
        let x = w.generate(&LatentCode::new(l, d, e).unwrap()).unwrap();
        assert_eq!(x.0, w.generator().column(5));

        let mut rng = SeededRng::new(13);
        let code = LatentCode::new(l, d, rng.normal_vec(l * d)).unwrap();
        let x = w.generate(&code).unwrap();
        for (i, xi) in x.0.iter().enumerate() {
            let naive: f64 = (0..l * d).map(|j| w.generator()[(i, j)] * code.as_slice()[j]).sum();
            assert!((xi - naive).abs() <= 1e-12 * naive.abs().max(1.0));
        }
        let back = w.invert(&x).unwrap();
        let err = squared_distance(back.as_slice(), code.as_slice()).sqrt();
        assert!(err <= 1e-8 * crate::linalg::norm(code.as_slice()));
        assert!(w.invert(&ImageVector(vec![0.0; 20])).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(w.invert(&ImageVector(vec![0.0; 3])).is_err());
        assert!(w.generate(&LatentCode::zeros(1, 8)).is_err());
    }

    #[test]
    fn out_of_range_image_component_is_ignored() {
        let w = generate_world(&small_spec(21)).unwrap();
        let g = w.generator();
        // v = (I − G G⁺) r lies in the orthogonal complement of range(G)
        let mut rng = SeededRng::new(21);
        let r = rng.normal_vec(20);
        let proj = g.matvec(&w.generator_pinv().matvec(&r).unwrap()).unwrap();
        let v: Vec<f64> = r.iter().zip(&proj).map(|(a, b)| a - b).collect();
        assert!(g.matvec_t(&v).unwrap().iter().all(|x| x.abs() < 1e-10));
        let code = LatentCode::new(2, 8, rng.normal_vec(16)).unwrap();
        let x = w.generate(&code).unwrap();
        let xv = ImageVector(x.0.iter().zip(&v).map(|(a, b)| a + b).collect());
        let a = w.invert(&x).unwrap();
        let b = w.invert(&xv).unwrap();
        assert!(squared_distance(a.as_slice(), b.as_slice()).sqrt() < 1e-9);
    }

    #[test]
    fn noiseless_samples_classify_to_their_category() {
        let spec = SyntheticWorldSpec {
            noise_sigma: 0.0,
            class_separation: 60.0,
            ..Default::default()
        };
        let w = generate_world(&spec).unwrap();
        let ds = w.sample_dataset(10, Split::Seen, 3).unwrap();
        let bank = crate::latent::ClassEmbeddingBank::from_embeddings(
            w.split_categories(Split::Seen)
                .iter()
                .zip(w.class_bases())
                .map(|(n, b)| crate::latent::ClassEmbedding { category: n.clone(), code: b.clone() })
                .collect(),
        )
        .unwrap();
        for (code, &label) in ds.codes().iter().zip(ds.labels()) {
            assert_eq!(nearest_class(code, &bank).unwrap(), ds.categories()[label]);
        }
        assert_eq!(build_embedding_bank(&ds).unwrap().len(), 8);
    }
}
