//! Latent codes, labelled datasets, class embeddings and delta codes.
//!
//! A [`LatentCode`] is an `L × d` point of the layered latent space (one
//! `d`-dimensional style vector per generator layer). A category's class
//! embedding is the mean of its codes; subtracting it leaves a [`DeltaCode`]
//! that carries only the category-irrelevant part of a sample.

use std::collections::HashMap;

use crate::error::{shape_err, AgeError, Result};
use crate::linalg::{squared_distance, Matrix};

/// One `layers × dim` latent code, stored row-major (layer-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    layers: usize,
    dim: usize,
    values: Vec<f64>,
}

impl LatentCode {
    pub fn new(layers: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(shape_err("latent code needs at least one layer and one dim"));
        }
        if values.len() != layers * dim {
            return Err(shape_err(format!(
                "{} values for a {layers}x{dim} latent code",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AgeError::InvalidValue(format!("non-finite latent entry at {i}")));
        }
        Ok(Self { layers, dim, values })
    }

    pub fn zeros(layers: usize, dim: usize) -> Self {
        Self {
            layers,
            dim,
            values: vec![0.0; layers * dim],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    /// Flattened view, layer-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim..(l + 1) * self.dim]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.values[l * self.dim..(l + 1) * self.dim]
    }

    /// Contiguous slice covering layers `range`.
    pub fn layers_slice(&self, range: std::ops::Range<usize>) -> &[f64] {
        &self.values[range.start * self.dim..range.end * self.dim]
    }

    pub(crate) fn check_shape(&self, other: (usize, usize)) -> Result<()> {
        if self.shape() != other {
            return Err(shape_err(format!(
                "latent code {:?} vs {:?}",
                self.shape(),
                other
            )));
        }
        Ok(())
    }

    pub fn add_delta(&self, delta: &DeltaCode) -> Result<LatentCode> {
        self.check_shape(delta.shape())?;
        let values = self
            .values
            .iter()
            .zip(delta.as_slice())
            .map(|(a, b)| a + b)
            .collect();
        Ok(LatentCode { values, ..*self })
    }
}

/// Entrywise difference of two latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCode(LatentCode);

impl DeltaCode {
    pub fn from_code(code: LatentCode) -> Self {
        DeltaCode(code)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        self.0.layer(l)
    }

    pub fn layers_slice(&self, range: std::ops::Range<usize>) -> &[f64] {
        self.0.layers_slice(range)
    }

    pub fn as_code(&self) -> &LatentCode {
        &self.0
    }
}

/// Which side of the seen/unseen category split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

/// Labelled latent codes with categories registered in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    layers: usize,
    dim: usize,
    categories: Vec<String>,
    codes: Vec<LatentCode>,
    labels: Vec<usize>,
    split: Split,
}

impl LatentDataset {
    pub fn new(layers: usize, dim: usize, split: Split) -> Self {
        Self {
            layers,
            dim,
            categories: Vec::new(),
            codes: Vec::new(),
            labels: Vec::new(),
            split,
        }
    }

    /// Registers a category and returns its index; re-registering is a no-op.
    pub fn register_category(&mut self, name: &str) -> usize {
        if let Some(i) = self.category_position(name) {
            return i;
        }
        self.categories.push(name.to_string());
        self.categories.len() - 1
    }

    pub fn push(&mut self, category: &str, code: LatentCode) -> Result<()> {
        code.check_shape((self.layers, self.dim))?;
        let idx = self
            .category_position(category)
            .ok_or_else(|| AgeError::NotFound(category.to_string()))?;
        self.codes.push(code);
        self.labels.push(idx);
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn codes(&self) -> &[LatentCode] {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn category_position(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Sample indices of a category, ascending.
    pub fn indices_of(&self, category: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == category)
            .map(|(i, _)| i)
            .collect()
    }

    /// Category → ascending sample indices.
    pub fn category_index(&self) -> HashMap<String, Vec<usize>> {
        self.categories
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), self.indices_of(c)))
            .collect()
    }

    /// Checks that every registered category has at least `min` samples.
    pub fn require_per_category(&self, min: usize) -> Result<()> {
        for (c, name) in self.categories.iter().enumerate() {
            let n = self.labels.iter().filter(|&&l| l == c).count();
            if n == 0 {
                return Err(AgeError::EmptyCategory(name.clone()));
            }
            if n < min {
                return Err(AgeError::InsufficientData(format!(
                    "category {name} has {n} samples, need {min}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean latent code of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbedding {
    pub category: String,
    pub code: LatentCode,
}

/// Per-layer `d × M` matrices whose columns are the class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingBank {
    categories: Vec<String>,
    embeddings: Vec<ClassEmbedding>,
    layers: Vec<Matrix>,
}

impl ClassEmbeddingBank {
    pub fn from_embeddings(embeddings: Vec<ClassEmbedding>) -> Result<Self> {
        let first = embeddings.first().ok_or(AgeError::EmptyDataset)?;
        let (n_layers, dim) = first.code.shape();
        let mut layers = vec![Matrix::zeros(dim, embeddings.len()); n_layers];
        for (m, e) in embeddings.iter().enumerate() {
            e.code.check_shape((n_layers, dim))?;
            for (l, mat) in layers.iter_mut().enumerate() {
                mat.set_column(m, e.code.layer(l));
            }
        }
        Ok(Self {
            categories: embeddings.iter().map(|e| e.category.clone()).collect(),
            embeddings,
            layers,
        })
    }

    /// Bank holding the embeddings of `self` followed by those of `other`.
    pub fn concat(&self, other: &ClassEmbeddingBank) -> Result<Self> {
        let mut all = self.embeddings.clone();
        all.extend(other.embeddings.iter().cloned());
        Self::from_embeddings(all)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn embeddings(&self) -> &[ClassEmbedding] {
        &self.embeddings
    }

    pub fn embedding(&self, category: &str) -> Result<&ClassEmbedding> {
        self.embeddings
            .iter()
            .find(|e| e.category == category)
            .ok_or_else(|| AgeError::NotFound(category.to_string()))
    }

    /// The `d × M` matrix of layer `l`.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn code_shape(&self) -> (usize, usize) {
        self.embeddings[0].code.shape()
    }
}

/// Per-entry mean of a category's codes, summed in ascending index order.
pub fn compute_class_embedding(dataset: &LatentDataset, category: &str) -> Result<ClassEmbedding> {
    let c = dataset
        .category_position(category)
        .ok_or_else(|| AgeError::NotFound(category.to_string()))?;
    let members = dataset.indices_of(c);
    if members.is_empty() {
        return Err(AgeError::EmptyCategory(category.to_string()));
    }
    let mut acc = vec![0.0; dataset.layers() * dataset.dim()];
    for &i in &members {
        for (a, v) in acc.iter_mut().zip(dataset.codes()[i].as_slice()) {
            *a += v;
        }
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ClassEmbedding {
        category: category.to_string(),
        code: LatentCode::new(dataset.layers(), dataset.dim(), acc)?,
    })
}

/// `code − embedding`, entrywise.
pub fn compute_delta(code: &LatentCode, embedding: &ClassEmbedding) -> Result<DeltaCode> {
    code.check_shape(embedding.code.shape())?;
    let values = code
        .as_slice()
        .iter()
        .zip(embedding.code.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(DeltaCode(LatentCode {
        values,
        ..*code
    }))
}

/// Class embeddings of every registered category, in registration order.
pub fn build_embedding_bank(dataset: &LatentDataset) -> Result<ClassEmbeddingBank> {
    if dataset.categories().is_empty() || dataset.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    let embeddings = dataset
        .categories()
        .iter()
        .map(|c| compute_class_embedding(dataset, c))
        .collect::<Result<Vec<_>>>()?;
    ClassEmbeddingBank::from_embeddings(embeddings)
}

/// Index (in bank order) of the class embedding closest to `code` in flattened
/// Euclidean distance; ties go to the lower index.
pub fn nearest_class_index(code: &LatentCode, bank: &ClassEmbeddingBank) -> Result<usize> {
    if bank.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    code.check_shape(bank.code_shape())?;
    let mut best = (0, f64::INFINITY);
    for (m, e) in bank.embeddings().iter().enumerate() {
        let d = squared_distance(code.as_slice(), e.code.as_slice());
        if d < best.1 {
            best = (m, d);
        }
    }
    Ok(best.0)
}

/// Category name of the nearest class embedding.
pub fn nearest_class<'a>(code: &LatentCode, bank: &'a ClassEmbeddingBank) -> Result<&'a str> {
    let i = nearest_class_index(code, bank)?;
    Ok(&bank.categories()[i])
}
