use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{AgeError, Result};

/// Contiguous layer groups that share one sparse code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[usize; 2]>", into = "Vec<[usize; 2]>")]
pub struct LayerGrouping {
    groups: Vec<Range<usize>>,
}

impl LayerGrouping {
    /// Groups given as half-open `[start, end)` ranges; they must tile
    /// `0..layers` in order.
    pub fn new(groups: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for g in &groups {
            if g.start != next || g.end <= g.start {
                return Err(AgeError::Config(format!(
                    "layer groups must be contiguous and non-empty, got {g:?} after {next}"
                )));
            }
            next = g.end;
        }
        if groups.is_empty() {
            return Err(AgeError::Config("at least one layer group is required".into()));
        }
        Ok(Self { groups })
    }

    /// One group per layer.
    pub fn per_layer(layers: usize) -> Self {
        Self {
            groups: (0..layers).map(|l| l..l + 1).collect(),
        }
    }

    /// A single group spanning every layer.
    pub fn single(layers: usize) -> Self {
        Self {
            groups: vec![0..layers],
        }
    }

    /// Bottom/middle/top split of an 18-layer style space: 0-2, 3-6, 7-17.
    pub fn stylegan18() -> Self {
        Self {
            groups: vec![0..3, 3..7, 7..18],
        }
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn range(&self, group: usize) -> Range<usize> {
        self.groups[group].clone()
    }

    /// Group index that owns `layer`.
    pub fn group_of(&self, layer: usize) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(&layer))
            .expect("layer inside grouping")
    }

    pub fn check_layers(&self, layers: usize) -> Result<()> {
        if self.layer_count() != layers {
            return Err(AgeError::Config(format!(
                "grouping covers {} layers, data has {layers}",
                self.layer_count()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<[usize; 2]>> for LayerGrouping {
    type Error = AgeError;
    fn try_from(v: Vec<[usize; 2]>) -> Result<Self> {
        Self::new(v.into_iter().map(|[a, b]| a..b).collect())
    }
}

impl From<LayerGrouping> for Vec<[usize; 2]> {
    fn from(g: LayerGrouping) -> Self {
        g.groups.iter().map(|r| [r.start, r.end]).collect()
    }
}

/// Where the reconstruction loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionSpace {
    /// `‖G(ŵ) − x‖²` through the world's generator.
    Image,
    /// `‖ŵ − w‖²` directly in latent space.
    Latent,
}

/// Which sparsity surrogate to apply to code entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityForm {
    /// `σ(θ0·|n| − θ1)`
    Magnitude,
    /// `σ(θ0·n − θ1)`
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the orthogonality loss.
    pub lambda1: f64,
    /// Weight of the sparsity loss.
    pub lambda2: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Dictionary size `l`.
    pub directions: usize,
    pub hidden: usize,
    pub leak: f64,
    /// `None` means one group per layer.
    pub grouping: Option<LayerGrouping>,
    pub reconstruction_space: ReconstructionSpace,
    pub sparsity_form: SparsityForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 1e-3,
            theta0: 10.0,
            theta1: 3.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            directions: 100,
            hidden: 256,
            leak: 0.2,
            grouping: None,
            reconstruction_space: ReconstructionSpace::Image,
            sparsity_form: SparsityForm::Magnitude,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AgeError::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return fail("lambda1 and lambda2 must be non-negative");
        }
        if !(self.theta0 > 0.0) || !self.theta1.is_finite() {
            return fail("theta0 must be positive and theta1 finite");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("adam epsilon must be positive");
        }
        if self.batch_size == 0 || self.directions == 0 || self.hidden == 0 {
            return fail("batch_size, directions and hidden must be positive");
        }
        if !(self.leak >= 0.0 && self.leak.is_finite()) {
            return fail("leak must be non-negative");
        }
        Ok(())
    }

    pub fn grouping_for(&self, layers: usize) -> Result<LayerGrouping> {
        let g = self
            .grouping
            .clone()
            .unwrap_or_else(|| LayerGrouping::per_layer(layers));
        g.check_layers(layers)?;
        Ok(g)
    }
}
