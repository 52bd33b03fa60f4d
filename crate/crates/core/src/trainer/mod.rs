//! Joint fitting of the direction dictionary and the sparse-code encoder.
//!
//! Each sample's delta `Δw = w − w̄` is encoded per group, decoded as
//! `ŵ = w̄ + A·n`, and scored by
//! `L = L_rec + λ1·L_orth + λ2·L_sparse`. The class-embedding bank `B` is
//! computed once from the data and held fixed.

mod adam;
mod config;
mod losses;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use config::{LayerGrouping, ReconstructionSpace, SparsityForm, TrainConfig};
pub use losses::{
    loss_orth, loss_rec, loss_sparse, orthogonality_residual, sigmoid, total_loss,
    DirectionDictionary, RecLoss, RecTarget,
};

use crate::encoder::{init_params, EncoderDims, EncoderParams, ForwardCache};
use crate::error::{AgeError, Result};
use crate::latent::{build_embedding_bank, compute_delta, ClassEmbeddingBank, DeltaCode, LatentCode, LatentDataset, Split};
use crate::linalg::axpy;
use crate::rng::SeededRng;
use crate::world::{ImageVector, SyntheticWorld};

/// Dictionary and encoder trained together; also used as the gradient layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dictionary: DirectionDictionary,
    pub encoder: EncoderParams,
}

impl Model {
    pub fn init(layers: usize, dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let grouping = config.grouping_for(layers)?;
        let dims = EncoderDims {
            dim,
            grouping,
            hidden: config.hidden,
            directions: config.directions,
            leak: config.leak,
        };
        Ok(Self {
            dictionary: DirectionDictionary::init(layers, dim, config.directions, config.seed),
            encoder: init_params(&dims, config.seed),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dictionary: self.dictionary.zeros_like(),
            encoder: self.encoder.zeros_like(),
        }
    }

    pub fn grouping(&self) -> &LayerGrouping {
        &self.encoder.grouping
    }

    /// Dictionary layers first, then encoder parameters.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.dictionary.layers().iter().map(|m| m.as_slice()).collect();
        v.extend(self.encoder.param_slices());
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self
            .dictionary
            .layers_mut()
            .iter_mut()
            .map(|m| m.as_mut_slice())
            .collect();
        v.extend(self.encoder.param_slices_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.dictionary.is_finite() && self.encoder.is_finite()
    }

    /// Per-group codes for `delta`.
    pub fn encode(&self, delta: &DeltaCode) -> Result<Vec<Vec<f64>>> {
        (0..self.encoder.groups.len())
            .map(|g| crate::encoder::mlp_forward(&self.encoder, delta, g).map(|(n, _)| n))
            .collect()
    }
}


/// A training sample with its delta and reconstruction target precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// Index of the sample's category in the bank.
    pub category: usize,
    pub delta: DeltaCode,
    pub code: LatentCode,
    pub image: Option<ImageVector>,
}

impl PreparedSample {
    pub fn target(&self) -> RecTarget<'_> {
        match &self.image {
            Some(x) => RecTarget::Image(x),
            None => RecTarget::Latent(&self.code),
        }
    }
}

/// Samples of a seen dataset prepared against a fixed embedding bank.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub bank: ClassEmbeddingBank,
    pub samples: Vec<PreparedSample>,
}

/// Prepares `dataset` against its own class embeddings.
pub fn prepare(dataset: &LatentDataset, world: &SyntheticWorld, space: ReconstructionSpace) -> Result<TrainingSet> {
    let bank = build_embedding_bank(dataset)?;
    prepare_with_bank(dataset, bank, world, space)
}

/// Prepares `dataset` against an existing bank (looked up by category name),
/// e.g. held-out samples of seen categories.
pub fn prepare_with_bank(
    dataset: &LatentDataset,
    bank: ClassEmbeddingBank,
    world: &SyntheticWorld,
    space: ReconstructionSpace,
) -> Result<TrainingSet> {
    let mut samples = Vec::with_capacity(dataset.len());
    for (code, &label) in dataset.codes().iter().zip(dataset.labels()) {
        let name = &dataset.categories()[label];
        let category = bank
            .categories()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| AgeError::NotFound(name.clone()))?;
        let delta = compute_delta(code, &bank.embeddings()[category])?;
        let image = match space {
            ReconstructionSpace::Image => Some(world.generate(code)?),
            ReconstructionSpace::Latent => None,
        };
        samples.push(PreparedSample {
            category,
            delta,
            code: code.clone(),
            image,
        });
    }
    Ok(TrainingSet { bank, samples })
}

/// Summed per-sample loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchTerms {
    pub rec_sum: f64,
    pub sparse_sum: f64,
    pub orth: f64,
    pub count: usize,
}

impl BatchTerms {
    /// `(1/|batch|)·Σ (rec + λ2·sparse) + λ1·orth`
    pub fn objective(&self, lambda1: f64, lambda2: f64) -> f64 {
        let n = self.count.max(1) as f64;
        total_loss(self.rec_sum / n, self.orth, self.sparse_sum / n, lambda1, lambda2)
    }
}

/// Batch objective and its exact gradient with respect to every parameter.
///
/// Groups are processed in parallel when `threads > 1`; per-group
/// accumulation runs in batch order so the result does not depend on the
/// thread count.
pub fn batch_gradient(
    model: &Model,
    set: &TrainingSet,
    indices: &[usize],
    world: &SyntheticWorld,
    config: &TrainConfig,
    threads: usize,
) -> Result<(BatchTerms, Model)> {
    let enc = &model.encoder;
    let grouping = enc.grouping.clone();
    let n_groups = enc.groups.len();
    let scale = 1.0 / indices.len().max(1) as f64;

    let forward_group = |g: usize| -> Result<Vec<(Vec<f64>, ForwardCache)>> {
        indices
            .iter()
            .map(|&i| crate::encoder::mlp_forward(enc, &set.samples[i].delta, g))
            .collect()
    };
    let forwards: Vec<Vec<(Vec<f64>, ForwardCache)>> =
        run_groups(threads, n_groups, forward_group)?;

    let mut grads = model.zeros_like();
    let mut terms = BatchTerms {
        count: indices.len(),
        ..Default::default()
    };
    // grad_codes[g][b]
    let mut grad_codes: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(indices.len()); n_groups];
    for (b, &i) in indices.iter().enumerate() {
        let sample = &set.samples[i];
        let codes: Vec<Vec<f64>> = (0..n_groups).map(|g| forwards[g][b].0.clone()).collect();
        let rec = loss_rec(
            world,
            &set.bank.embeddings()[sample.category],
            &model.dictionary,
            &codes,
            &grouping,
            sample.target(),
        )?;
        let (sparse, sparse_grad) = loss_sparse(&codes, config.theta0, config.theta1, config.sparsity_form);
        terms.rec_sum += rec.value;
        terms.sparse_sum += sparse;
        for (l, ga) in rec.grad_dictionary.iter().enumerate() {
            axpy(scale, ga.as_slice(), grads.dictionary.layer_mut(l).as_mut_slice());
        }
        for g in 0..n_groups {
            let gn: Vec<f64> = rec.grad_codes[g]
                .iter()
                .zip(&sparse_grad[g])
                .map(|(r, s)| scale * (r + config.lambda2 * s))
                .collect();
            grad_codes[g].push(gn);
        }
    }

    let (orth, orth_grad) = loss_orth(&model.dictionary, &set.bank)?;
    terms.orth = orth;
    for (l, g) in orth_grad.iter().enumerate() {
        axpy(config.lambda1, g.as_slice(), grads.dictionary.layer_mut(l).as_mut_slice());
    }

    let backward_group = |g: usize| -> Result<crate::encoder::Mlp> {
        let mlp = &enc.groups[g];
        let mut acc = mlp.zeros_like();
        for (b, (_, cache)) in forwards[g].iter().enumerate() {
            mlp.backward_into(cache, &grad_codes[g][b], enc.leak, &mut acc)?;
        }
        Ok(acc)
    };
    grads.encoder.groups = run_groups(threads, n_groups, backward_group)?;
    Ok((terms, grads))
}

fn run_groups<T: Send>(
    threads: usize,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AgeError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Loss summary of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean reconstruction loss over the epoch's samples.
    pub rec: f64,
    /// Mean sparsity loss over the epoch's samples.
    pub sparse: f64,
    /// Orthogonality loss after the epoch's last update.
    pub orth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_losses(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub records: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let lengths: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Self {
            model,
            adam: AdamState::for_shapes(&lengths),
            epochs_done: 0,
            records: Vec::new(),
        }
    }
}

/// Threads requested through `AGE_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    parse_threads(std::env::var("AGE_THREADS").ok().as_deref())
}

pub fn parse_threads(value: Option<&str>) -> Result<usize> {
    match value {
        None => Ok(1),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(AgeError::Config(format!("AGE_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Fresh state for `dataset` under `config`.
pub fn init_state(dataset: &LatentDataset, config: &TrainConfig) -> Result<TrainState> {
    Ok(TrainState::new(Model::init(dataset.layers(), dataset.dim(), config)?))
}

/// Runs epochs `state.epochs_done + 1 ..= config.epochs`.
pub fn run_epochs(
    state: &mut TrainState,
    dataset: &LatentDataset,
    world: &SyntheticWorld,
    config: &TrainConfig,
    threads: usize,
) -> Result<()> {
    config.validate()?;
    if dataset.split() != Split::Seen {
        return Err(AgeError::Config("training requires the seen split".into()));
    }
    dataset.require_per_category(2)?;
    state.model.grouping().check_layers(dataset.layers())?;
    if state.epochs_done >= config.epochs {
        return Ok(());
    }
    let set = prepare(dataset, world, config.reconstruction_space)?;
    let hyper = AdamHyper {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    for epoch in (state.epochs_done + 1)..=config.epochs {
        let mut order: Vec<usize> = (0..set.samples.len()).collect();
        SeededRng::derived(config.seed, 0x5348_0000 + epoch as u64).shuffle(&mut order);
        let (mut rec, mut sparse) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let (terms, grads) = batch_gradient(&state.model, &set, batch, world, config, threads)?;
            if !terms.objective(config.lambda1, config.lambda2).is_finite() {
                return Err(AgeError::Divergence {
                    epoch,
                    what: "non-finite loss".into(),
                });
            }
            rec += terms.rec_sum;
            sparse += terms.sparse_sum;
            let g = grads.param_slices();
            let mut p = state.model.param_slices_mut();
            adam_step(&mut p, &g, &mut state.adam, &hyper);
        }
        if !state.model.is_finite() {
            return Err(AgeError::Divergence {
                epoch,
                what: "non-finite parameters".into(),
            });
        }
        let n = set.samples.len() as f64;
        let (orth, _) = loss_orth(&state.model.dictionary, &set.bank)?;
        let record = EpochRecord {
            epoch,
            rec: rec / n,
            sparse: sparse / n,
            orth,
            total: total_loss(rec / n, orth, sparse / n, config.lambda1, config.lambda2),
        };
        if ![record.rec, record.sparse, record.orth, record.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(AgeError::Divergence {
                epoch,
                what: "non-finite loss".into(),
            });
        }
        state.records.push(record);
        state.epochs_done = epoch;
    }
    Ok(())
}

/// Trains from scratch; parallelism follows `AGE_THREADS`.
pub fn train(
    dataset: &LatentDataset,
    world: &SyntheticWorld,
    config: &TrainConfig,
) -> Result<(DirectionDictionary, EncoderParams, TrainReport)> {
    train_with_threads(dataset, world, config, threads_from_env()?)
}

pub fn train_with_threads(
    dataset: &LatentDataset,
    world: &SyntheticWorld,
    config: &TrainConfig,
    threads: usize,
) -> Result<(DirectionDictionary, EncoderParams, TrainReport)> {
    let start = Instant::now();
    let mut state = init_state(dataset, config)?;
    run_epochs(&mut state, dataset, world, config, threads)?;
    let report = TrainReport {
        seed: config.seed,
        epochs: state.records,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((state.model.dictionary, state.model.encoder, report))
}

/// Mean reconstruction loss of a trained model on `set` next to the loss of
/// reconstructing every sample by its class embedding alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionEval {
    pub rec: f64,
    pub embedding_only: f64,
}

pub fn evaluate_reconstruction(model: &Model, set: &TrainingSet, world: &SyntheticWorld) -> Result<ReconstructionEval> {
    if set.samples.is_empty() {
        return Err(AgeError::EmptyDataset);
    }
    let grouping = model.grouping();
    let zero = vec![vec![0.0; model.dictionary.directions()]; grouping.len()];
    let (mut rec, mut base) = (0.0, 0.0);
    for s in &set.samples {
        let emb = &set.bank.embeddings()[s.category];
        let codes = model.encode(&s.delta)?;
        rec += loss_rec(world, emb, &model.dictionary, &codes, grouping, s.target())?.value;
        base += loss_rec(world, emb, &model.dictionary, &zero, grouping, s.target())?.value;
    }
    let n = set.samples.len() as f64;
    Ok(ReconstructionEval {
        rec: rec / n,
        embedding_only: base / n,
    })
}

/// Batch objective without gradients.
pub fn batch_objective(
    model: &Model,
    set: &TrainingSet,
    indices: &[usize],
    world: &SyntheticWorld,
    config: &TrainConfig,
) -> Result<f64> {
    let grouping = model.grouping();
    let mut terms = BatchTerms {
        count: indices.len(),
        ..Default::default()
    };
    for &i in indices {
        let s = &set.samples[i];
        let codes = model.encode(&s.delta)?;
        terms.rec_sum += loss_rec(world, &set.bank.embeddings()[s.category], &model.dictionary, &codes, grouping, s.target())?.value;
        terms.sparse_sum += loss_sparse(&codes, config.theta0, config.theta1, config.sparsity_form).0;
    }
    terms.orth = loss_orth(&model.dictionary, &set.bank)?.0;
    Ok(terms.objective(config.lambda1, config.lambda2))
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation crossed an activation kink or a code zero.
    pub skipped: usize,
}

// Signs of every hidden pre-activation and every code entry over the batch.
fn kink_pattern(model: &Model, set: &TrainingSet, indices: &[usize]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for &i in indices {
        for g in 0..model.encoder.groups.len() {
            let (n, cache) = crate::encoder::mlp_forward(&model.encoder, &set.samples[i].delta, g)?;
            for pre in &cache.pre[..cache.pre.len() - 1] {
                out.extend(pre.iter().map(|&v| v > 0.0));
            }
            out.extend(n.iter().map(|&v| v > 0.0));
        }
    }
    Ok(out)
}

/// Central differences of the batch objective over every parameter of the
/// dictionary and the encoder. Relative errors use a denominator floor of
/// [`crate::encoder::GRAD_CHECK_FLOOR`] times `max(1, |objective|)`.
pub fn gradient_check(
    model: &Model,
    set: &TrainingSet,
    indices: &[usize],
    world: &SyntheticWorld,
    config: &TrainConfig,
    eps: f64,
) -> Result<GradientCheck> {
    let (_, grads) = batch_gradient(model, set, indices, world, config, 1)?;
    let analytic: Vec<f64> = grads.param_slices().concat();
    let center = kink_pattern(model, set, indices)?;
    // rounding in the objective limits central differences to about ε·|f|/h
    let floor = crate::encoder::GRAD_CHECK_FLOOR * batch_objective(model, set, indices, world, config)?.abs().max(1.0);
    let mut work = model.clone();
    let mut check = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut k = 0;
    let lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    for (si, &len) in lens.iter().enumerate() {
        for j in 0..len {
            let orig = work.param_slices()[si][j];
            work.param_slices_mut()[si][j] = orig + eps;
            let plus = batch_objective(&work, set, indices, world, config)?;
            let crossed_plus = kink_pattern(&work, set, indices)? != center;
            work.param_slices_mut()[si][j] = orig - eps;
            let minus = batch_objective(&work, set, indices, world, config)?;
            let crossed_minus = kink_pattern(&work, set, indices)? != center;
            work.param_slices_mut()[si][j] = orig;
            if crossed_plus || crossed_minus {
                check.skipped += 1;
            } else {
                let numeric = (plus - minus) / (2.0 * eps);
                let diff = (analytic[k] - numeric).abs();
                let err = if diff == 0.0 { 0.0 } else { diff / analytic[k].abs().max(numeric.abs()).max(floor) };
                check.max_relative_error = check.max_relative_error.max(err);
                check.checked += 1;
            }
            k += 1;
        }
    }
    Ok(check)
}
