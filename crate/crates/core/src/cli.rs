//! Command-line driver: `synth`, `train`, `edit` and `analyze` over a run
//! directory.
//!
//! Artifacts inside the run directory:
//!
//! ```text
//! world.agew  seen.agel  unseen.agel  heldout.agel
//! dictionary.aged  encoder.agee  state.ages  train_report.jsonl
//! refined.aged  edits.agel  provenance.jsonl
//! metrics.jsonl  diversity.csv  diversity.svg
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AgeError, Result};
use crate::inference::{
    baseline_index, baseline_sample_train_edit, mean_pairwise_distance, preservation_rate, EditModel,
    EditOptions, RefinedDictionary, SparseCode,
};
use crate::io;
use crate::latent::{build_embedding_bank, ClassEmbeddingBank, LatentCode, LatentDataset, Split};
use crate::rng::mix_seed;
use crate::spectral::{subspace_recovery_score, svd};
use crate::trainer::{
    self, orthogonality_residual, run_epochs, threads_from_env, DirectionDictionary, Model, TrainConfig,
    TrainState,
};
use crate::world::{generate_world, SyntheticWorld, SyntheticWorldSpec};

pub const WORLD_FILE: &str = "world.agew";
pub const SEEN_FILE: &str = "seen.agel";
pub const UNSEEN_FILE: &str = "unseen.agel";
pub const HELDOUT_FILE: &str = "heldout.agel";
pub const DICTIONARY_FILE: &str = "dictionary.aged";
pub const ENCODER_FILE: &str = "encoder.agee";
pub const STATE_FILE: &str = "state.ages";
pub const REPORT_FILE: &str = "train_report.jsonl";
pub const REFINED_FILE: &str = "refined.aged";
pub const EDITS_FILE: &str = "edits.agel";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CURVE_CSV: &str = "diversity.csv";
pub const CURVE_SVG: &str = "diversity.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub per_category: usize,
    /// Extra seen samples drawn with a different seed for evaluation; 0 skips the file.
    pub heldout_per_category: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            per_category: 50,
            heldout_per_category: 0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    #[serde(flatten)]
    pub options: EditOptions,
    pub alpha: f64,
    /// Edits per source code.
    pub count: usize,
    /// Source codes taken from the front of each unseen category.
    pub shots: usize,
    pub baseline: bool,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            options: EditOptions::default(),
            alpha: 1.0,
            count: 128,
            shots: 1,
            baseline: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub alphas: Vec<f64>,
    pub edits_per_alpha: usize,
    pub curves: bool,
    pub svg: bool,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.3, 0.5, 1.0, 1.5, 2.0],
            edits_per_alpha: 32,
            curves: true,
            svg: true,
            seed: 0,
        }
    }
}

/// Every parameter a command can read. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: SyntheticWorldSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub analyze: AnalyzeConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AgeError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        if self.data.per_category == 0 {
            return Err(AgeError::Config("data.per_category must be positive".into()));
        }
        if !self.edit.alpha.is_finite() || self.analyze.alphas.iter().any(|a| !a.is_finite()) {
            return Err(AgeError::Config("alpha values must be finite".into()));
        }
        if self.edit.shots == 0 {
            return Err(AgeError::Config("edit.shots must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (keys sorted), hex encoded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

/// JSON text with object keys in sorted order at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<&String, String> = map.iter().map(|(k, v)| (k, canonical_json(v))).collect();
            let body: Vec<String> = sorted
                .iter()
                .map(|(k, v)| format!("{}:{v}", serde_json::to_string(k).expect("string key")))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl MetricsRecord {
    fn new(command: &str, config: &RunConfig, metrics: BTreeMap<String, f64>, started: u128) -> Self {
        let config_hash = config.hash();
        Self {
            run_id: format!("{command}-{}", &config_hash[..12]),
            command: command.to_string(),
            config_hash,
            metrics,
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn append_metrics(out: &Path, record: &MetricsRecord) -> Result<()> {
    append_line(&out.join(METRICS_FILE), &serde_json::to_string(record).expect("record serializes"))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(AgeError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing artifact {}", path.display()),
        )))
    }
}

// ---- synth ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub seen_categories: usize,
    pub unseen_categories: usize,
    pub per_category: usize,
    pub layers: usize,
    pub dim: usize,
    pub image_dim: usize,
    pub wrote_unseen: bool,
}

pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<SynthSummary> {
    config.validate()?;
    let started = now_ms();
    fs::create_dir_all(out)?;
    let world = generate_world(&config.world)?;
    let n = config.data.per_category;
    io::write_world(&out.join(WORLD_FILE), &world)?;
    // Later commands read the stored world, so sample from the stored copy.
    let world = io::read_world(&out.join(WORLD_FILE))?;
    let seen = world.sample_dataset(n, Split::Seen, config.data.seed)?;
    io::write_dataset(&out.join(SEEN_FILE), &seen)?;
    let wrote_unseen = config.world.unseen_categories > 0;
    if wrote_unseen {
        let unseen = world.sample_dataset(n, Split::Unseen, config.data.seed)?;
        io::write_dataset(&out.join(UNSEEN_FILE), &unseen)?;
    }
    if config.data.heldout_per_category > 0 {
        let held = world.sample_dataset(
            config.data.heldout_per_category,
            Split::Seen,
            mix_seed(config.data.seed, 0x4845_4c44),
        )?;
        io::write_dataset(&out.join(HELDOUT_FILE), &held)?;
    }
    let s = &config.world;
    let summary = SynthSummary {
        seen_categories: s.seen_categories,
        unseen_categories: s.unseen_categories,
        per_category: n,
        layers: s.layers,
        dim: s.dim,
        image_dim: s.image_dim,
        wrote_unseen,
    };
    let metrics = BTreeMap::from([
        ("seen_categories".to_string(), s.seen_categories as f64),
        ("unseen_categories".to_string(), s.unseen_categories as f64),
        ("per_category".to_string(), n as f64),
    ]);
    append_metrics(out, &MetricsRecord::new("synth", config, metrics, started))?;
    Ok(summary)
}

// ---- train ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_done: usize,
    pub final_rec: Option<f64>,
    pub final_sparse: Option<f64>,
    pub final_orth: Option<f64>,
    pub final_total: Option<f64>,
    pub initial_orth_residual: f64,
    pub orth_residual: f64,
}

/// Trains on the stored seen dataset. With `resume`, continues from
/// `state.ages` up to `config.train.epochs`.
pub fn cmd_train(config: &RunConfig, out: &Path, resume: bool) -> Result<TrainSummary> {
    config.validate()?;
    let started = now_ms();
    let world = io::read_world(&require(out.join(WORLD_FILE))?)?;
    let seen = io::read_dataset(&require(out.join(SEEN_FILE))?, Split::Seen)?;
    let mut state = if resume {
        io::read_train_state(&require(out.join(STATE_FILE))?)?
    } else {
        trainer::init_state(&seen, &config.train)?
    };
    let bank = build_embedding_bank(&seen)?;
    let initial_orth_residual = if resume {
        trainer::init_state(&seen, &config.train)
            .and_then(|s| orthogonality_residual(&s.model.dictionary, &bank))?
    } else {
        orthogonality_residual(&state.model.dictionary, &bank)?
    };
    let threads = threads_from_env()?;
    let result = run_epochs(&mut state, &seen, &world, &config.train, threads);
    // Keep whatever finished before a failure out of the checkpoint.
    result?;
    save_model(out, &state)?;
    let report_path = out.join(REPORT_FILE);
    let mut report = String::new();
    for r in &state.records {
        report.push_str(&serde_json::to_string(r).expect("record serializes"));
        report.push('\n');
    }
    fs::write(&report_path, report)?;
    let last = state.records.last();
    let summary = TrainSummary {
        epochs_done: state.epochs_done,
        final_rec: last.map(|r| r.rec),
        final_sparse: last.map(|r| r.sparse),
        final_orth: last.map(|r| r.orth),
        final_total: last.map(|r| r.total),
        initial_orth_residual,
        orth_residual: orthogonality_residual(&state.model.dictionary, &bank)?,
    };
    let mut metrics = BTreeMap::from([
        ("epochs_done".to_string(), summary.epochs_done as f64),
        ("orth_residual".to_string(), summary.orth_residual),
        ("initial_orth_residual".to_string(), initial_orth_residual),
    ]);
    if let Some(r) = last {
        metrics.insert("final_rec".into(), r.rec);
        metrics.insert("final_sparse".into(), r.sparse);
        metrics.insert("final_orth".into(), r.orth);
        metrics.insert("final_total".into(), r.total);
    }
    append_metrics(out, &MetricsRecord::new("train", config, metrics, started))?;
    Ok(summary)
}

fn save_model(out: &Path, state: &TrainState) -> Result<()> {
    io::write_dictionary(&out.join(DICTIONARY_FILE), &state.model.dictionary, None)?;
    io::write_encoder(&out.join(ENCODER_FILE), &state.model.encoder)?;
    io::write_train_state(&out.join(STATE_FILE), state)
}

/// Trained model as stored in the run directory.
pub fn load_model(out: &Path) -> Result<Model> {
    let dictionary = io::read_dictionary(&require(out.join(DICTIONARY_FILE))?)?.dictionary;
    let encoder = io::read_encoder(&require(out.join(ENCODER_FILE))?)?;
    Ok(Model { dictionary, encoder })
}

// ---- edit ----------------------------------------------------------------

/// One line of `provenance.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub category: String,
    pub source_index: usize,
    pub edit_index: usize,
    pub seed: u64,
    pub alpha: f64,
    pub mode: String,
    /// Sampled code for dictionary edits.
    pub n_tilde: Option<SparseCode>,
    /// Seen sample index drawn by the baseline.
    pub baseline_sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditSummary {
    pub sources: usize,
    pub edits: usize,
    pub t: usize,
    pub alpha: f64,
    pub baseline: bool,
}

/// Seed of the `j`-th edit of source `s`.
pub fn edit_seed(base: u64, source: usize, j: usize) -> u64 {
    mix_seed(mix_seed(base, source as u64), j as u64)
}

fn fit_edit_model(out: &Path, config: &RunConfig, seen: &LatentDataset, bank: &ClassEmbeddingBank) -> Result<EditModel> {
    let model = load_model(out)?;
    let grouping = model.encoder.grouping.clone();
    EditModel::fit(seen, &model.dictionary, &grouping, bank, Some(&model.encoder), &config.edit.options)
}

pub fn cmd_edit(config: &RunConfig, out: &Path) -> Result<EditSummary> {
    config.validate()?;
    let started = now_ms();
    require(out.join(WORLD_FILE))?;
    let seen = io::read_dataset(&require(out.join(SEEN_FILE))?, Split::Seen)?;
    let unseen = io::read_dataset(&require(out.join(UNSEEN_FILE))?, Split::Unseen)?;
    let bank = build_embedding_bank(&seen)?;
    let ec = &config.edit;
    let model = if ec.baseline {
        None
    } else {
        let m = fit_edit_model(out, config, &seen, &bank)?;
        let dict = io::read_dictionary(&out.join(DICTIONARY_FILE))?.dictionary;
        io::write_dictionary(&out.join(REFINED_FILE), &dict, Some(m.refined.indices()))?;
        Some(m)
    };
    let mut edits = LatentDataset::new(unseen.layers(), unseen.dim(), Split::Unseen);
    let mut provenance = String::new();
    let mut sources = 0;
    for (m, name) in unseen.categories().iter().enumerate() {
        edits.register_category(name);
        for (s, &i) in unseen.indices_of(m).iter().take(ec.shots).enumerate() {
            sources += 1;
            let code = &unseen.codes()[i];
            for j in 0..ec.count {
                let seed = edit_seed(ec.seed, sources - 1, j);
                let (edited, record) = match &model {
                    Some(em) => {
                        let (n, e) = em.sample_edit(code, ec.alpha, seed)?;
                        (e, Provenance {
                            category: name.clone(),
                            source_index: s,
                            edit_index: j,
                            seed,
                            alpha: ec.alpha,
                            mode: "age".into(),
                            n_tilde: Some(n),
                            baseline_sample: None,
                        })
                    }
                    None => {
                        let e = baseline_sample_train_edit(code, &seen, &bank, seed)?;
                        (e, Provenance {
                            category: name.clone(),
                            source_index: s,
                            edit_index: j,
                            seed,
                            alpha: 1.0,
                            mode: "sample_train".into(),
                            n_tilde: None,
                            baseline_sample: Some(baseline_index(seed, seen.len())),
                        })
                    }
                };
                edits.push(name, edited)?;
                provenance.push_str(&serde_json::to_string(&record).expect("provenance serializes"));
                provenance.push('\n');
            }
        }
    }
    io::write_dataset(&out.join(EDITS_FILE), &edits)?;
    fs::write(out.join(PROVENANCE_FILE), provenance)?;
    let summary = EditSummary {
        sources,
        edits: edits.len(),
        t: model.as_ref().map_or(0, |m| m.refined.t()),
        alpha: ec.alpha,
        baseline: ec.baseline,
    };
    let metrics = BTreeMap::from([
        ("sources".to_string(), sources as f64),
        ("edits".to_string(), edits.len() as f64),
    ]);
    append_metrics(out, &MetricsRecord::new("edit", config, metrics, started))?;
    Ok(summary)
}

// ---- analyze -------------------------------------------------------------

/// One point of the diversity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub diversity: f64,
    pub preservation: f64,
}

/// Seen and unseen class embeddings together, used to classify edits.
pub fn proxy_bank(seen: &LatentDataset, unseen: &LatentDataset) -> Result<ClassEmbeddingBank> {
    build_embedding_bank(seen)?.concat(&build_embedding_bank(unseen)?)
}

/// Mean diversity and category preservation of `per_alpha` edits of the
/// first code of every unseen category, for each `alpha`.
pub fn diversity_curve(
    model: &EditModel,
    unseen: &LatentDataset,
    bank: &ClassEmbeddingBank,
    alphas: &[f64],
    per_alpha: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (mut div, mut keep, mut n) = (0.0, 0.0, 0usize);
        for (m, name) in unseen.categories().iter().enumerate() {
            let Some(&i) = unseen.indices_of(m).first() else { continue };
            let code = &unseen.codes()[i];
            let edits = (0..per_alpha)
                .map(|j| model.sample_edit(code, alpha, edit_seed(seed, m, j)).map(|(_, e)| e))
                .collect::<Result<Vec<LatentCode>>>()?;
            div += mean_pairwise_distance(&edits);
            keep += if edits.is_empty() { 1.0 } else { preservation_rate(&edits, name, bank)? };
            n += 1;
        }
        if n == 0 {
            return Err(AgeError::EmptyDataset);
        }
        points.push(CurvePoint {
            alpha,
            diversity: div / n as f64,
            preservation: keep / n as f64,
        });
    }
    Ok(points)
}

fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("alpha,diversity,preservation\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.alpha, p.diversity, p.preservation);
    }
    s
}

/// Diversity against alpha as a bare polyline chart.
pub fn curve_svg(points: &[CurvePoint]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let max_a = points.iter().map(|p| p.alpha).fold(0.0f64, f64::max).max(1e-12);
    let max_d = points.iter().map(|p| p.diversity).fold(0.0f64, f64::max).max(1e-12);
    let coords: Vec<String> = points
        .iter()
        .map(|p| {
            let x = pad + (w - 2.0 * pad) * p.alpha / max_a;
            let y = h - pad - (h - 2.0 * pad) * p.diversity / max_d;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/>",
        y = h - pad,
        x = w - pad
    );
    let _ = writeln!(s, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y}\" stroke=\"black\"/>", y = h - pad);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">alpha</text>", w / 2.0, h - 8.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"20\">diversity</text>");
    let _ = writeln!(
        s,
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
        coords.join(" ")
    );
    for c in &coords {
        let (x, y) = c.split_once(',').expect("formatted pair");
        let _ = writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"steelblue\"/>");
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSummary {
    pub metrics: BTreeMap<String, f64>,
    pub curve: Vec<CurvePoint>,
}

/// Orthogonality residual, subspace recovery, singular spectra and the
/// diversity curve of a trained run.
pub fn cmd_analyze(config: &RunConfig, out: &Path) -> Result<AnalyzeSummary> {
    config.validate()?;
    let started = now_ms();
    let world = io::read_world(&require(out.join(WORLD_FILE))?)?;
    let seen = io::read_dataset(&require(out.join(SEEN_FILE))?, Split::Seen)?;
    let model = load_model(out)?;
    let bank = build_embedding_bank(&seen)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("orth_residual".to_string(), orthogonality_residual(&model.dictionary, &bank)?);
    let em = EditModel::fit(
        &seen,
        &model.dictionary,
        &model.encoder.grouping,
        &bank,
        Some(&model.encoder),
        &config.edit.options,
    )?;
    analyze_refined(&em.refined, &model.dictionary, &world, &mut metrics)?;
    let mut curve = Vec::new();
    let unseen_path = out.join(UNSEEN_FILE);
    if unseen_path.exists() {
        let unseen = io::read_dataset(&unseen_path, Split::Unseen)?;
        let proxy = proxy_bank(&seen, &unseen)?;
        let a = &config.analyze;
        curve = diversity_curve(&em, &unseen, &proxy, &a.alphas, a.edits_per_alpha, a.seed)?;
        for p in &curve {
            metrics.insert(format!("diversity.alpha_{}", p.alpha), p.diversity);
            metrics.insert(format!("preservation.alpha_{}", p.alpha), p.preservation);
        }
        if a.curves {
            fs::write(out.join(CURVE_CSV), curve_csv(&curve))?;
            if a.svg {
                fs::write(out.join(CURVE_SVG), curve_svg(&curve))?;
            }
        }
        let edits_path = out.join(EDITS_FILE);
        if edits_path.exists() {
            let edits = io::read_dataset(&edits_path, Split::Unseen)?;
            let mut keep = 0usize;
            for (code, &label) in edits.codes().iter().zip(edits.labels()) {
                if crate::latent::nearest_class(code, &proxy)? == edits.categories()[label] {
                    keep += 1;
                }
            }
            if !edits.is_empty() {
                metrics.insert("edits.preservation".into(), keep as f64 / edits.len() as f64);
            }
        }
    }
    append_metrics(out, &MetricsRecord::new("analyze", config, metrics.clone(), started))?;
    Ok(AnalyzeSummary { metrics, curve })
}

fn analyze_refined(
    refined: &RefinedDictionary,
    dictionary: &DirectionDictionary,
    world: &SyntheticWorld,
    metrics: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let scores = subspace_recovery_score(refined, world)?;
    for (l, s) in scores.iter().enumerate() {
        metrics.insert(format!("subspace.layer{l}.mean_cosine"), s.mean_cosine);
    }
    let mean = scores.iter().map(|s| s.mean_cosine).sum::<f64>() / scores.len() as f64;
    metrics.insert("subspace.mean_cosine".into(), mean);
    for l in 0..refined.layer_count() {
        for (k, s) in svd(refined.layer(l))?.singular_values.iter().enumerate() {
            metrics.insert(format!("svd.layer{l}.s{k:03}"), *s);
        }
    }
    metrics.insert("dictionary.directions".into(), dictionary.directions() as f64);
    metrics.insert("refined.t".into(), refined.t() as f64);
    Ok(())
}

// ---- argument parsing ----------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "age", about = "Attribute group editing on a synthetic latent world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and its seen/unseen datasets.
    Synth(Common),
    /// Fit the dictionary and encoder on the seen dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the stored training state.
        #[arg(long)]
        resume: bool,
    },
    /// Produce edited codes for unseen categories.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        /// Add random seen offsets instead of sampled dictionary edits.
        #[arg(long)]
        baseline: bool,
    },
    /// Report metrics and curves for a trained run.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Runs one parsed command and returns its JSON summary.
pub fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Synth(common) => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.world.seed = s;
            }
            let s = cmd_synth(&c, &common.out)?;
            if !s.wrote_unseen {
                eprintln!("note: no unseen categories, {UNSEEN_FILE} not written");
            }
            Ok(to_json(&s))
        }
        Command::Train { common, resume } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.train.seed = s;
            }
            Ok(to_json(&cmd_train(&c, &common.out, resume)?))
        }
        Command::Edit {
            common,
            alpha,
            t,
            count,
            baseline,
        } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.edit.seed = s;
            }
            if let Some(a) = alpha {
                c.edit.alpha = a;
            }
            if let Some(t) = t {
                c.edit.options.t = t;
            }
            if let Some(n) = count {
                c.edit.count = n;
            }
            c.edit.baseline |= baseline;
            Ok(to_json(&cmd_edit(&c, &common.out)?))
        }
        Command::Analyze { common, t } => {
            let mut c = load_config(&common)?;
            if let Some(s) = common.seed {
                c.analyze.seed = s;
            }
            if let Some(t) = t {
                c.edit.options.t = t;
            }
            Ok(to_json(&cmd_analyze(&c, &common.out)?))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summary serializes")
}

/// JSON error record printed after the one-line diagnostic.
pub fn error_record(err: &AgeError) -> serde_json::Value {
    serde_json::json!({ "error": err.kind(), "message": err.to_string() })
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", error_record(&e));
            match e {
                AgeError::Divergence { .. } => 3,
                AgeError::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
