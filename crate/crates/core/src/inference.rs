//! Post-training pipeline: back-projection onto the dictionary, direction
//! selection, the code distribution, and sampled edits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{shape_err, AgeError, Result};
use crate::latent::{compute_delta, ClassEmbedding, ClassEmbeddingBank, DeltaCode, LatentCode, LatentDataset};
use crate::linalg::{squared_distance, Matrix};
use crate::rng::SeededRng;
use crate::trainer::{DirectionDictionary, LayerGrouping};

pub use crate::spectral::pseudo_inverse;

/// Where a [`SparseCode`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Encoded,
    BackProjected,
    Sampled,
}

/// One signed vector per layer group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub kind: CodeKind,
    groups: Vec<Vec<f64>>,
}

impl SparseCode {
    pub fn new(kind: CodeKind, groups: Vec<Vec<f64>>) -> Result<Self> {
        if groups.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AgeError::InvalidValue("non-finite sparse code entry".into()));
        }
        Ok(Self { kind, groups })
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[f64] {
        &self.groups[g]
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Precomputed per-layer pseudo-inverses of a dictionary.
#[derive(Debug, Clone)]
pub struct BackProjector {
    pinvs: Vec<Matrix>,
    grouping: LayerGrouping,
    dim: usize,
}

impl BackProjector {
    pub fn new(dictionary: &DirectionDictionary, grouping: &LayerGrouping) -> Result<Self> {
        grouping.check_layers(dictionary.layer_count())?;
        Ok(Self {
            pinvs: dictionary.layers().iter().map(pseudo_inverse).collect::<Result<_>>()?,
            grouping: grouping.clone(),
            dim: dictionary.dim(),
        })
    }

    /// `n̂_ℓ = A_ℓ⁺ Δw_ℓ` for every layer.
    pub fn layers(&self, delta: &DeltaCode) -> Result<Vec<Vec<f64>>> {
        if delta.shape() != (self.pinvs.len(), self.dim) {
            return Err(shape_err(format!(
                "delta {:?} for a dictionary over {} layers of dim {}",
                delta.shape(),
                self.pinvs.len(),
                self.dim
            )));
        }
        self.pinvs
            .iter()
            .enumerate()
            .map(|(l, p)| p.matvec(delta.layer(l)))
            .collect()
    }

    /// Per-group code: the mean of the group's layer codes.
    pub fn project(&self, delta: &DeltaCode) -> Result<SparseCode> {
        let per_layer = self.layers(delta)?;
        let groups = self
            .grouping
            .groups()
            .iter()
            .map(|r| {
                let mut acc = vec![0.0; per_layer[r.start].len()];
                for l in r.clone() {
                    for (a, v) in acc.iter_mut().zip(&per_layer[l]) {
                        *a += v;
                    }
                }
                let k = r.len() as f64;
                acc.iter_mut().for_each(|a| *a /= k);
                acc
            })
            .collect();
        SparseCode::new(CodeKind::BackProjected, groups)
    }
}

/// Back-projection of `delta` onto `dictionary`, averaged within groups.
pub fn back_project(
    dictionary: &DirectionDictionary,
    grouping: &LayerGrouping,
    delta: &DeltaCode,
) -> Result<SparseCode> {
    BackProjector::new(dictionary, grouping)?.project(delta)
}

/// Per-layer back-projections without group averaging.
pub fn back_project_layers(dictionary: &DirectionDictionary, delta: &DeltaCode) -> Result<Vec<Vec<f64>>> {
    BackProjector::new(dictionary, &LayerGrouping::per_layer(dictionary.layer_count()))?.layers(delta)
}

/// Mean absolute back-projected code per layer, balanced over categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonalityProfile {
    pub layers: Vec<Vec<f64>>,
}

/// `(1/M) Σ_m (1/N_m) Σ_i |n̂_i|` per layer. Categories are looked up in
/// `bank` by name; categories without samples are skipped.
pub fn commonality_profile(
    dataset: &LatentDataset,
    dictionary: &DirectionDictionary,
    bank: &ClassEmbeddingBank,
) -> Result<CommonalityProfile> {
    if dataset.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    let proj = BackProjector::new(dictionary, &LayerGrouping::per_layer(dictionary.layer_count()))?;
    let (layers, l) = (dictionary.layer_count(), dictionary.directions());
    let mut profile = vec![vec![0.0; l]; layers];
    let mut used = 0usize;
    for (m, name) in dataset.categories().iter().enumerate() {
        let idx = dataset.indices_of(m);
        if idx.is_empty() {
            continue;
        }
        let emb = bank.embedding(name)?;
        let mut cat = vec![vec![0.0; l]; layers];
        for &i in &idx {
            let codes = proj.layers(&compute_delta(&dataset.codes()[i], emb)?)?;
            for (acc, code) in cat.iter_mut().zip(&codes) {
                for (a, v) in acc.iter_mut().zip(code) {
                    *a += v.abs();
                }
            }
        }
        let n = idx.len() as f64;
        for (p, c) in profile.iter_mut().zip(&cat) {
            for (pv, cv) in p.iter_mut().zip(c) {
                *pv += cv / n;
            }
        }
        used += 1;
    }
    let m = used as f64;
    profile.iter_mut().flatten().for_each(|v| *v /= m);
    Ok(CommonalityProfile { layers: profile })
}

/// Per-layer `d × t` selection of dictionary columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedDictionary {
    layers: Vec<Matrix>,
    indices: Vec<Vec<usize>>,
    grouping: LayerGrouping,
}

impl RefinedDictionary {
    /// Selects `indices[ℓ]` from each layer of `dictionary`.
    pub fn from_indices(
        dictionary: &DirectionDictionary,
        indices: Vec<Vec<usize>>,
        grouping: &LayerGrouping,
    ) -> Result<Self> {
        grouping.check_layers(dictionary.layer_count())?;
        if indices.len() != dictionary.layer_count() {
            return Err(shape_err("one index list per layer required"));
        }
        let t = indices[0].len();
        for idx in &indices {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if idx.len() != t || sorted.len() != t || idx.iter().any(|&i| i >= dictionary.directions()) {
                return Err(AgeError::Range("refined indices must be distinct, valid and equally many per layer".into()));
            }
        }
        if t == 0 {
            return Err(AgeError::Range("t must be at least 1".into()));
        }
        let layers = dictionary
            .layers()
            .iter()
            .zip(&indices)
            .map(|(a, idx)| a.select_columns(idx))
            .collect();
        Ok(Self {
            layers,
            indices,
            grouping: grouping.clone(),
        })
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn grouping(&self) -> &LayerGrouping {
        &self.grouping
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn t(&self) -> usize {
        self.indices[0].len()
    }
}

/// Keeps the `t` columns with the largest profile values per layer, ties going
/// to the lower column index. Index maps are ordered by descending profile.
pub fn refine_dictionary(
    dictionary: &DirectionDictionary,
    profile: &CommonalityProfile,
    t: usize,
    grouping: &LayerGrouping,
) -> Result<RefinedDictionary> {
    let l = dictionary.directions();
    if t == 0 || t > l {
        return Err(AgeError::Range(format!("t = {t} outside 1..={l}")));
    }
    if profile.layers.len() != dictionary.layer_count() || profile.layers.iter().any(|p| p.len() != l) {
        return Err(shape_err("profile does not match dictionary"));
    }
    let indices = profile
        .layers
        .iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            order.truncate(t);
            order
        })
        .collect();
    RefinedDictionary::from_indices(dictionary, indices, grouping)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Covariance together with its symmetric square root.
    Full { cov: Matrix, root: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupGaussian {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

/// Per-group Gaussian over the selected code coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDistribution {
    pub groups: Vec<GroupGaussian>,
}

/// Selected coordinates of a sample's per-layer codes, averaged over each
/// group's layers: entry `k` of group `g` is the mean of `n_ℓ[idx_ℓ[k]]` for
/// `ℓ ∈ g`.
pub fn select_group_code(per_layer: &[Vec<f64>], refined: &RefinedDictionary) -> Vec<Vec<f64>> {
    refined
        .grouping
        .groups()
        .iter()
        .map(|r| {
            let mut acc = vec![0.0; refined.t()];
            for l in r.clone() {
                for (a, &i) in acc.iter_mut().zip(&refined.indices[l]) {
                    *a += per_layer[l][i];
                }
            }
            let k = r.len() as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            acc
        })
        .collect()
}

/// Source of the codes the distribution is fit on.
#[derive(Debug, Clone, Copy)]
pub enum CodeSource<'a> {
    BackProjected,
    /// Encoder output per group, used for every layer of the group.
    Encoder(&'a EncoderParams),
}

/// Per-layer codes of every sample of `dataset`.
pub fn collect_layer_codes(
    dataset: &LatentDataset,
    dictionary: &DirectionDictionary,
    bank: &ClassEmbeddingBank,
    source: CodeSource<'_>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let proj = BackProjector::new(dictionary, &LayerGrouping::per_layer(dictionary.layer_count()))?;
    dataset
        .codes()
        .iter()
        .zip(dataset.labels())
        .map(|(code, &label)| {
            let delta = compute_delta(code, bank.embedding(&dataset.categories()[label])?)?;
            match source {
                CodeSource::BackProjected => proj.layers(&delta),
                CodeSource::Encoder(enc) => {
                    let mut out = vec![Vec::new(); dictionary.layer_count()];
                    for (g, r) in enc.grouping.groups().iter().enumerate() {
                        let (n, _) = crate::encoder::mlp_forward(enc, &delta, g)?;
                        for l in r.clone() {
                            out[l] = n.clone();
                        }
                    }
                    Ok(out)
                }
            }
        })
        .collect()
}

/// Sample mean and covariance (divisor `N − 1`) of the selected coordinates.
pub fn fit_code_distribution(
    layer_codes: &[Vec<Vec<f64>>],
    refined: &RefinedDictionary,
    form: CovarianceForm,
) -> Result<CodeDistribution> {
    if layer_codes.len() < 2 {
        return Err(AgeError::InsufficientData(format!(
            "code distribution needs at least 2 samples, got {}",
            layer_codes.len()
        )));
    }
    let selected: Vec<Vec<Vec<f64>>> = layer_codes
        .iter()
        .map(|c| {
            if c.len() != refined.layer_count() {
                return Err(shape_err("layer code count"));
            }
            Ok(select_group_code(c, refined))
        })
        .collect::<Result<_>>()?;
    let n = selected.len() as f64;
    let t = refined.t();
    let groups = (0..refined.grouping.len())
        .map(|g| {
            let mut mean = vec![0.0; t];
            for s in &selected {
                for (m, v) in mean.iter_mut().zip(&s[g]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let covariance = match form {
                CovarianceForm::Diagonal => {
                    let mut var = vec![0.0; t];
                    for s in &selected {
                        for k in 0..t {
                            let c = s[g][k] - mean[k];
                            var[k] += c * c;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n - 1.0);
                    Covariance::Diagonal(var)
                }
                CovarianceForm::Full => {
                    let mut cov = Matrix::zeros(t, t);
                    for s in &selected {
                        let c: Vec<f64> = s[g].iter().zip(&mean).map(|(a, b)| a - b).collect();
                        cov.add_outer(1.0 / (n - 1.0), &c, &c);
                    }
                    let root = symmetric_sqrt(&cov)?;
                    Covariance::Full { cov, root }
                }
            };
            Ok(GroupGaussian { mean, covariance })
        })
        .collect::<Result<_>>()?;
    Ok(CodeDistribution { groups })
}

/// `U·diag(√s)·Uᵀ` of a symmetric positive semidefinite matrix.
fn symmetric_sqrt(m: &Matrix) -> Result<Matrix> {
    let dec = crate::spectral::svd(m)?;
    let n = m.rows();
    let mut root = Matrix::zeros(n, n);
    for (k, &s) in dec.singular_values.iter().enumerate() {
        let u = dec.u.column(k);
        root.add_outer(s.sqrt(), &u, &u);
    }
    Ok(root)
}

/// `μ + Σ^{1/2}·g` per group with standard-normal `g`.
pub fn sample_code(dist: &CodeDistribution, seed: u64) -> Result<SparseCode> {
    let mut rng = SeededRng::new(seed);
    let groups = dist
        .groups
        .iter()
        .map(|gg| {
            let z = rng.normal_vec(gg.mean.len());
            match &gg.covariance {
                Covariance::Diagonal(var) => gg
                    .mean
                    .iter()
                    .zip(var)
                    .zip(&z)
                    .map(|((m, v), g)| m + v.sqrt() * g)
                    .collect(),
                Covariance::Full { root, .. } => {
                    let shift = root.matvec(&z).expect("square root sized by construction");
                    gg.mean.iter().zip(&shift).map(|(m, s)| m + s).collect()
                }
            }
        })
        .collect();
    SparseCode::new(CodeKind::Sampled, groups)
}

/// `w'_ℓ = w_ℓ + α·A_f,ℓ·ñ_{group(ℓ)}`
pub fn edit(code: &LatentCode, refined: &RefinedDictionary, n_tilde: &SparseCode, alpha: f64) -> Result<LatentCode> {
    code.check_shape((refined.layer_count(), refined.dim()))?;
    if n_tilde.len() != refined.grouping.len() || n_tilde.groups.iter().any(|g| g.len() != refined.t()) {
        return Err(shape_err(format!(
            "sparse code needs {} groups of length {}",
            refined.grouping.len(),
            refined.t()
        )));
    }
    let mut out = code.clone();
    for (l, a) in refined.layers.iter().enumerate() {
        let shift = a.matvec(n_tilde.group(refined.grouping.group_of(l)))?;
        for (w, s) in out.layer_mut(l).iter_mut().zip(&shift) {
            *w += alpha * s;
        }
    }
    Ok(out)
}

/// `w − w̄_src + w̄_dst`
pub fn category_transfer(code: &LatentCode, src: &ClassEmbedding, dst: &ClassEmbedding) -> Result<LatentCode> {
    src.code.check_shape(code.shape())?;
    dst.code.check_shape(code.shape())?;
    let values = code
        .as_slice()
        .iter()
        .zip(src.code.as_slice())
        .zip(dst.code.as_slice())
        .map(|((w, s), d)| w + (d - s))
        .collect();
    LatentCode::new(code.layers(), code.dim(), values)
}

/// Index drawn by the Sample-Train baseline: `ChaCha8Rng::seed_from_u64(seed)`
/// followed by one `gen_range(0..n)`.
pub fn baseline_index(seed: u64, n: usize) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..n)
}

/// Adds the delta of a uniformly drawn seen sample to `code`.
pub fn baseline_sample_train_edit(
    code: &LatentCode,
    dataset: &LatentDataset,
    bank: &ClassEmbeddingBank,
    seed: u64,
) -> Result<LatentCode> {
    if dataset.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    let i = baseline_index(seed, dataset.len());
    let emb = bank.embedding(&dataset.categories()[dataset.labels()[i]])?;
    let delta = compute_delta(&dataset.codes()[i], emb)?;
    code.add_delta(&delta)
}

/// Mean Euclidean distance over all unordered pairs; 0 for fewer than two codes.
pub fn mean_pairwise_distance(codes: &[LatentCode]) -> f64 {
    let k = codes.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += squared_distance(codes[i].as_slice(), codes[j].as_slice()).sqrt();
        }
    }
    total / (k * (k - 1) / 2) as f64
}

/// Fraction of `codes` whose nearest class embedding is `category`.
pub fn preservation_rate(codes: &[LatentCode], category: &str, bank: &ClassEmbeddingBank) -> Result<f64> {
    if codes.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    let mut hits = 0usize;
    for c in codes {
        if crate::latent::nearest_class(c, bank)? == category {
            hits += 1;
        }
    }
    Ok(hits as f64 / codes.len() as f64)
}

/// Settings for building an [`EditModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditOptions {
    pub t: usize,
    pub covariance: CovarianceForm,
    /// Fit the distribution on encoder codes instead of back-projections.
    pub fit_on_encoder_codes: bool,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self {
            t: 20,
            covariance: CovarianceForm::Diagonal,
            fit_on_encoder_codes: false,
        }
    }
}

/// Refined dictionary and code distribution fit on a seen dataset.
#[derive(Debug, Clone)]
pub struct EditModel {
    pub profile: CommonalityProfile,
    pub refined: RefinedDictionary,
    pub distribution: CodeDistribution,
}

impl EditModel {
    pub fn fit(
        dataset: &LatentDataset,
        dictionary: &DirectionDictionary,
        grouping: &LayerGrouping,
        bank: &ClassEmbeddingBank,
        encoder: Option<&EncoderParams>,
        options: &EditOptions,
    ) -> Result<Self> {
        let profile = commonality_profile(dataset, dictionary, bank)?;
        let refined = refine_dictionary(dictionary, &profile, options.t, grouping)?;
        let source = match (options.fit_on_encoder_codes, encoder) {
            (false, _) => CodeSource::BackProjected,
            (true, Some(e)) => CodeSource::Encoder(e),
            (true, None) => return Err(AgeError::Config("encoder codes requested without an encoder".into())),
        };
        let codes = collect_layer_codes(dataset, dictionary, bank, source)?;
        let distribution = fit_code_distribution(&codes, &refined, options.covariance)?;
        Ok(Self {
            profile,
            refined,
            distribution,
        })
    }

    /// Edit of `code` with the sample drawn from `seed`.
    pub fn sample_edit(&self, code: &LatentCode, alpha: f64, seed: u64) -> Result<(SparseCode, LatentCode)> {
        let n = sample_code(&self.distribution, seed)?;
        let e = edit(code, &self.refined, &n, alpha)?;
        Ok((n, e))
    }
}
