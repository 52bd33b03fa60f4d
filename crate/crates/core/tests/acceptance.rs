//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use age_core::cli::{diversity_curve, edit_seed, proxy_bank};
use age_core::inference::{
    baseline_sample_train_edit, commonality_profile, preservation_rate, EditModel, EditOptions,
    RefinedDictionary, SparseCode, CodeKind,
};
use age_core::latent::{build_embedding_bank, nearest_class, ClassEmbeddingBank, LatentCode, LatentDataset, Split};
use age_core::linalg::Matrix;
use age_core::rng::SeededRng;
use age_core::spectral::{disentangled_directions, pseudo_inverse, subspace_recovery_score, svd, transferability_check};
use age_core::trainer::{
    evaluate_reconstruction, gradient_check, init_state, orthogonality_residual, prepare, prepare_with_bank,
    run_epochs, DirectionDictionary, EpochRecord, LayerGrouping, Model, ReconstructionSpace, SparsityForm, TrainConfig,
};
use age_core::world::{generate_world, SyntheticWorld, SyntheticWorldSpec};

const EDIT_T: usize = 4;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: String) -> Line {
    Line { pass, detail }
}

/// One training run on a world, with everything the later criteria read.
struct Run {
    world: SyntheticWorld,
    seen: LatentDataset,
    unseen: LatentDataset,
    bank: ClassEmbeddingBank,
    proxy: ClassEmbeddingBank,
    model: Model,
    records: Vec<EpochRecord>,
    orth_before: f64,
    orth_after: f64,
    secs: f64,
}

impl Run {
    fn train(spec: SyntheticWorldSpec) -> age_core::Result<Self> {
        let world = generate_world(&spec)?;
        let seen = world.sample_dataset(50, Split::Seen, 101)?;
        let unseen = world.sample_dataset(50, Split::Unseen, 102)?;
        let bank = build_embedding_bank(&seen)?;
        let proxy = proxy_bank(&seen, &unseen)?;
        let config = TrainConfig {
            directions: 16,
            seed: 101,
            ..Default::default()
        };
        let start = Instant::now();
        let mut state = init_state(&seen, &config)?;
        let orth_before = orthogonality_residual(&state.model.dictionary, &bank)?;
        run_epochs(&mut state, &seen, &world, &config, 1)?;
        let secs = start.elapsed().as_secs_f64();
        let orth_after = orthogonality_residual(&state.model.dictionary, &bank)?;
        Ok(Self {
            world,
            seen,
            unseen,
            bank,
            proxy,
            model: state.model,
            records: state.records,
            orth_before,
            orth_after,
            secs,
        })
    }

    fn edit_model(&self) -> age_core::Result<EditModel> {
        EditModel::fit(
            &self.seen,
            &self.model.dictionary,
            &self.model.encoder.grouping,
            &self.bank,
            None,
            &EditOptions {
                t: EDIT_T,
                ..Default::default()
            },
        )
    }

    /// First code of every unseen category.
    fn one_shot(&self) -> Vec<(String, LatentCode)> {
        self.unseen
            .categories()
            .iter()
            .enumerate()
            .map(|(m, name)| (name.clone(), self.unseen.codes()[self.unseen.indices_of(m)[0]].clone()))
            .collect()
    }
}

fn acceptance_spec() -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        layers: 3,
        dim: 32,
        irrelevant_rank: 4,
        seen_categories: 8,
        unseen_categories: 4,
        noise_sigma: 0.02,
        seed: 101,
        ..Default::default()
    }
}

/// Same world, but seen samples also vary inside a class-relevant subspace.
fn mismatched_spec() -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        relevant_rank: 4,
        seen_relevant_sigma: 3.0,
        ..acceptance_spec()
    }
}

fn c1_gradients() -> age_core::Result<Line> {
    let start = Instant::now();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for s in 0..20u64 {
        let world = generate_world(&SyntheticWorldSpec {
            layers: 2 + (s % 2) as usize,
            dim: 4,
            image_dim: 16,
            irrelevant_rank: 2,
            seen_categories: 3,
            unseen_categories: 0,
            noise_sigma: 0.05,
            seed: 1000 + s,
            ..Default::default()
        })?;
        let layers = world.spec().layers;
        let ds = world.sample_dataset(3, Split::Seen, 2000 + s)?;
        let config = TrainConfig {
            lambda1: 0.3,
            lambda2: 0.2,
            hidden: 6,
            directions: 3,
            seed: 3000 + s,
            grouping: Some(if s % 3 == 0 {
                LayerGrouping::single(layers)
            } else {
                LayerGrouping::per_layer(layers)
            }),
            reconstruction_space: if s % 4 == 1 {
                ReconstructionSpace::Latent
            } else {
                ReconstructionSpace::Image
            },
            sparsity_form: if s % 5 == 2 {
                SparsityForm::Signed
            } else {
                SparsityForm::Magnitude
            },
            ..Default::default()
        };
        let set = prepare(&ds, &world, config.reconstruction_space)?;
        let model = Model::init(layers, 4, &config)?;
        let check = gradient_check(&model, &set, &[0, 4, 8], &world, &config, 1e-5)?;
        worst = worst.max(check.max_relative_error);
        checked += check.checked;
        skipped += check.skipped;
    }
    Ok(line(
        worst <= 1e-4 && checked > 0,
        format!(
            "max relative error {worst:.2e} over {checked} parameters ({skipped} near kinks skipped), {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn c2_orthogonality(run: &Run) -> Line {
    let ratio = run.orth_before / run.orth_after;
    line(
        ratio >= 10.0,
        format!(
            "residual {:.4} -> {:.4} ({ratio:.1}x), trained in {:.1}s",
            run.orth_before, run.orth_after, run.secs
        ),
    )
}

fn c3_subspace(run: &Run, em: &EditModel) -> age_core::Result<Line> {
    let scores = subspace_recovery_score(&em.refined, &run.world)?;
    let per_layer: Vec<f64> = scores.iter().map(|s| s.mean_cosine).collect();
    let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
    Ok(line(
        mean >= 0.90,
        format!("mean principal-angle cosine {mean:.4}, per layer {per_layer:.4?}"),
    ))
}

fn age_rates(run: &Run, em: &EditModel, alpha: f64, count: usize) -> age_core::Result<Vec<f64>> {
    run.one_shot()
        .iter()
        .enumerate()
        .map(|(m, (name, code))| {
            let edits = (0..count)
                .map(|j| em.sample_edit(code, alpha, edit_seed(0, m, j)).map(|(_, e)| e))
                .collect::<age_core::Result<Vec<_>>>()?;
            preservation_rate(&edits, name, &run.proxy)
        })
        .collect()
}

fn baseline_rates(run: &Run, count: usize) -> age_core::Result<Vec<f64>> {
    run.one_shot()
        .iter()
        .enumerate()
        .map(|(m, (name, code))| {
            let edits = (0..count)
                .map(|j| baseline_sample_train_edit(code, &run.seen, &run.bank, edit_seed(0, m, j)))
                .collect::<age_core::Result<Vec<_>>>()?;
            preservation_rate(&edits, name, &run.proxy)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn c4_preservation(run: &Run, em: &EditModel, variant: &Run) -> age_core::Result<Line> {
    let rates = age_rates(run, em, 1.0, 128)?;
    let worst = rates.iter().copied().fold(1.0f64, f64::min);
    let variant_age = mean(&age_rates(variant, &variant.edit_model()?, 1.0, 128)?);
    let variant_baseline = mean(&baseline_rates(variant, 128)?);
    Ok(line(
        worst >= 0.95 && variant_baseline < variant_age,
        format!(
            "per-code preservation {rates:.4?}; mismatched world: sample-train {variant_baseline:.4} vs edits {variant_age:.4} (trained in {:.1}s)",
            variant.secs
        ),
    ))
}

fn c5_trend(run: &Run, em: &EditModel) -> age_core::Result<Line> {
    let alphas = [0.3, 0.5, 0.7, 1.0, 1.5, 2.0];
    let curve = diversity_curve(em, &run.unseen, &run.proxy, &alphas, 32, 0)?;
    let div: Vec<f64> = curve.iter().map(|p| p.diversity).collect();
    let keep: Vec<f64> = curve.iter().map(|p| p.preservation).collect();
    let div_ok = div.windows(2).all(|w| w[1] >= w[0]);
    let keep_ok = keep.windows(2).all(|w| w[1] <= w[0]);
    Ok(line(
        div_ok && keep_ok,
        format!("diversity {div:.4?}; preservation {keep:.4?}"),
    ))
}

fn c6_reconstruction(run: &Run) -> age_core::Result<Line> {
    let heldout = run.world.sample_dataset(50, Split::Seen, 103)?;
    let set = prepare_with_bank(&heldout, run.bank.clone(), &run.world, ReconstructionSpace::Image)?;
    let eval = evaluate_reconstruction(&run.model, &set, &run.world)?;
    Ok(line(
        eval.rec <= 0.1 * eval.embedding_only,
        format!(
            "held-out rec {:.5} vs embedding-only {:.5} (ratio {:.4})",
            eval.rec,
            eval.embedding_only,
            eval.rec / eval.embedding_only
        ),
    ))
}

// ---- independent linear-algebra oracles ---------------------------------

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols)).unwrap()
}

fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

/// Eigenvalues (ascending) of a symmetric matrix: Householder reduction to
/// tridiagonal form, then Sturm-sequence bisection.
fn symmetric_eigenvalues(s: &Matrix) -> Vec<f64> {
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| s.row(i).to_vec()).collect();
    for k in 0..n.saturating_sub(2) {
        let alpha_norm = ((k + 1)..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] > 0.0 { -alpha_norm } else { alpha_norm };
        let mut v = vec![0.0; n];
        v[k + 1] = a[k + 1][k] - alpha;
        for i in (k + 2)..n {
            v[i] = a[i][k];
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        // A ← H A H with H = I − 2vvᵀ/vᵀv
        let p: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * v[j]).sum::<f64>() * 2.0 / vv).collect();
        let kappa = v.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() / vv;
        let q: Vec<f64> = (0..n).map(|i| p[i] - kappa * v[i]).collect();
        for i in 0..n {
            for j in 0..n {
                a[i][j] -= v[i] * q[j] + q[i] * v[j];
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    let off: Vec<f64> = (1..n).map(|i| a[i][i - 1]).collect();
    let radius = (0..n)
        .map(|i| {
            let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
            let r = if i + 1 < n { off[i].abs() } else { 0.0 };
            diag[i].abs() + l + r
        })
        .fold(0.0f64, f64::max);
    let below = |x: f64| {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..n {
            let b2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
            q = diag[i] - x - if i > 0 { b2 / q } else { 0.0 };
            if q == 0.0 {
                q = -1e-300;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    (0..n)
        .map(|j| {
            let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if below(mid) > j {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Singular values (descending) from the eigenvalues of `[[0, A], [Aᵀ, 0]]`.
fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut s = Matrix::zeros(m + n, m + n);
    for i in 0..m {
        for j in 0..n {
            s[(i, m + j)] = a[(i, j)];
            s[(m + j, i)] = a[(i, j)];
        }
    }
    let mut eig = symmetric_eigenvalues(&s);
    eig.reverse();
    eig.truncate(m.min(n));
    eig.into_iter().map(|x| x.max(0.0)).collect()
}

fn c7_linear_algebra() -> age_core::Result<Line> {
    let mut rng = SeededRng::new(7007);
    let mut mp_worst = 0.0f64;
    for case in 0..100 {
        let rows = 1 + (rng.next_u64() % 64) as usize;
        let cols = 1 + (rng.next_u64() % 64) as usize;
        let a = if case % 4 == 3 {
            let r = 1 + (rng.next_u64() % rows.min(cols) as u64) as usize;
            random_matrix(&mut rng, rows, r).matmul(&random_matrix(&mut rng, r, cols))?
        } else {
            random_matrix(&mut rng, rows, cols)
        };
        let p = pseudo_inverse(&a)?;
        let ap = a.matmul(&p)?;
        let pa = p.matmul(&a)?;
        let errs = [
            rel_diff(&ap.matmul(&a)?, &a),
            rel_diff(&pa.matmul(&p)?, &p),
            rel_diff(&ap.transpose(), &ap),
            rel_diff(&pa.transpose(), &pa),
        ];
        mp_worst = errs.iter().copied().fold(mp_worst, f64::max);
    }
    let (mut rec_worst, mut sv_worst) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let rows = 1 + (rng.next_u64() % 64) as usize;
        let cols = 1 + (rng.next_u64() % 64) as usize;
        let a = random_matrix(&mut rng, rows, cols);
        let dec = svd(&a)?;
        rec_worst = rec_worst.max(rel_diff(&dec.reconstruct(), &a));
        for (x, y) in dec.singular_values.iter().zip(oracle_singular_values(&a)) {
            sv_worst = sv_worst.max((x - y).abs());
        }
    }
    Ok(line(
        mp_worst <= 1e-9 && rec_worst <= 1e-10 && sv_worst <= 1e-8,
        format!(
            "Moore-Penrose worst {mp_worst:.2e}; svd reconstruction {rec_worst:.2e}; singular values vs bisection {sv_worst:.2e}"
        ),
    ))
}

/// Full-column-rank pseudo-inverse through the normal equations, by
/// Gauss-Jordan elimination with partial pivoting.
fn normal_equations_pinv(a: &Matrix) -> Matrix {
    let (d, l) = a.shape();
    let mut g: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            let mut row: Vec<f64> = (0..l).map(|j| (0..d).map(|r| a[(r, i)] * a[(r, j)]).sum()).collect();
            row.extend((0..d).map(|r| a[(r, i)]));
            row
        })
        .collect();
    for c in 0..l {
        let piv = (c..l).max_by(|&x, &y| g[x][c].abs().total_cmp(&g[y][c].abs())).unwrap();
        g.swap(c, piv);
        let inv = 1.0 / g[c][c];
        for v in g[c].iter_mut() {
            *v *= inv;
        }
        for r in 0..l {
            if r != c {
                let f = g[r][c];
                let pivot_row = g[c].clone();
                for (v, p) in g[r].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    let mut out = Matrix::zeros(l, d);
    for i in 0..l {
        for r in 0..d {
            out[(i, r)] = g[i][l + r];
        }
    }
    out
}

fn c8_profile() -> age_core::Result<Line> {
    let (layers, d, l) = (2usize, 6usize, 3usize);
    let mut rng = SeededRng::new(808);
    let sizes = [("a", 2usize), ("b", 5), ("c", 9)];
    let mut ds = LatentDataset::new(layers, d, Split::Seen);
    for (name, n) in sizes {
        ds.register_category(name);
        let offset = rng.normal_vec(layers * d);
        for _ in 0..n {
            let v: Vec<f64> = rng.normal_vec(layers * d).iter().zip(&offset).map(|(x, o)| x + 3.0 * o).collect();
            ds.push(name, LatentCode::new(layers, d, v)?)?;
        }
    }
    let dict = DirectionDictionary::init(layers, d, l, 809);
    let bank = build_embedding_bank(&ds)?;
    let profile = commonality_profile(&ds, &dict, &bank)?;

    let mut worst = 0.0f64;
    for layer in 0..layers {
        let pinv = normal_equations_pinv(&dict.layers()[layer]);
        let mut literal = vec![0.0; l];
        for (c, (name, n)) in sizes.iter().enumerate() {
            let members: Vec<&LatentCode> = ds
                .codes()
                .iter()
                .zip(ds.labels())
                .filter(|(_, &lab)| lab == c)
                .map(|(x, _)| x)
                .collect();
            assert_eq!(members.len(), *n, "category {name}");
            let mut mean = vec![0.0; d];
            for w in &members {
                for (m, x) in mean.iter_mut().zip(w.layer(layer)) {
                    *m += x / *n as f64;
                }
            }
            for w in &members {
                for (k, acc) in literal.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in 0..d {
                        s += pinv[(k, r)] * (w.layer(layer)[r] - mean[r]);
                    }
                    *acc += s.abs() / (*n as f64 * sizes.len() as f64);
                }
            }
        }
        for (x, y) in profile.layers[layer].iter().zip(&literal) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(line(worst <= 1e-12, format!("max deviation from nested loops {worst:.2e}")))
}

fn run_pipeline(dir: &Path, config: &Path) -> Result<(), String> {
    let exe = env!("CARGO_BIN_EXE_age");
    for verb in ["synth", "train", "edit", "analyze"] {
        let out = Command::new(exe)
            .args([verb, "--config"])
            .arg(config)
            .arg("--out")
            .arg(dir)
            .env("AGE_THREADS", "1")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{verb}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

/// File contents with run timestamps removed from metric records.
fn comparable(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    if path.file_name().and_then(|n| n.to_str()) != Some("metrics.jsonl") {
        return bytes;
    }
    let text = String::from_utf8(bytes).unwrap();
    let mut out = String::new();
    for l in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("started_unix_ms");
        obj.remove("finished_unix_ms");
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

fn c9_determinism() -> age_core::Result<Line> {
    let root = tempfile::tempdir()?;
    let config = root.path().join("config.json");
    fs::write(
        &config,
        r#"{
  "world": {"layers": 2, "dim": 8, "image_dim": 24, "irrelevant_rank": 2,
            "seen_categories": 4, "unseen_categories": 2, "seed": 5},
  "data": {"per_category": 12, "heldout_per_category": 4, "seed": 6},
  "train": {"epochs": 5, "directions": 6, "hidden": 16, "seed": 7},
  "edit": {"t": 3, "count": 16},
  "analyze": {"alphas": [0.5, 1.0], "edits_per_alpha": 8}
}"#,
    )?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for dir in [&a, &b] {
        if let Err(e) = run_pipeline(dir, &config) {
            return Ok(line(false, format!("pipeline failed: {e}")));
        }
    }
    let names: BTreeMap<String, ()> = fs::read_dir(&a)?
        .chain(fs::read_dir(&b)?)
        .map(|e| (e.unwrap().file_name().to_string_lossy().into_owned(), ()))
        .collect();
    let mut differing = Vec::new();
    for name in names.keys() {
        let (pa, pb) = (a.join(name), b.join(name));
        if !pa.exists() || !pb.exists() || comparable(&pa) != comparable(&pb) {
            differing.push(name.clone());
        }
    }
    Ok(line(
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", names.len()),
    ))
}

fn c10_transfer(run: &Run, em: &EditModel) -> age_core::Result<Line> {
    let codes: Vec<LatentCode> = run
        .seen
        .categories()
        .iter()
        .enumerate()
        .map(|(c, _)| run.seen.codes()[run.seen.indices_of(c)[0]].clone())
        .chain(run.one_shot().into_iter().map(|(_, c)| c))
        .collect();
    let mut worst = 0.0f64;
    for (k, alpha) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let (n, _) = em.sample_edit(&codes[0], alpha, 900 + k as u64)?;
        let m = transferability_check(&codes, &em.refined, &n, alpha)?;
        worst = worst.max(m.as_slice().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max));
    }
    let unit = unit_code(&em.refined);
    let m = transferability_check(&codes, &em.refined, &unit, 1.0)?;
    worst = worst.max(m.as_slice().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max));
    Ok(line(
        worst <= 1e-12,
        format!("{} categories, max |cosine - 1| {worst:.2e}", codes.len()),
    ))
}

/// Supplementary: single-direction edits along the strongest SVD direction of
/// each layer rarely change the class.
fn top_direction_edits(run: &Run, em: &EditModel) -> age_core::Result<Line> {
    let heldout = run.world.sample_dataset(50, Split::Seen, 103)?;
    let directions = disentangled_directions(&em.refined)?;
    let (mut changed, mut total) = (0usize, 0usize);
    for ds in [&heldout, &run.unseen] {
        for code in ds.codes() {
            let before = nearest_class(code, &run.proxy)?;
            for dirs in &directions {
                let d = &dirs[0];
                let mut edited = code.clone();
                for (x, v) in edited.layer_mut(d.layer).iter_mut().zip(&d.vector) {
                    *x += v;
                }
                total += 1;
                if nearest_class(&edited, &run.proxy)? != before {
                    changed += 1;
                }
            }
        }
    }
    let rate = changed as f64 / total as f64;
    Ok(line(rate < 0.05, format!("top-direction edits change the class for {changed}/{total} ({rate:.4})")))
}

fn losses_recorded(run: &Run) -> Line {
    let ok = run.records.len() == 200
        && run
            .records
            .iter()
            .all(|r| [r.rec, r.sparse, r.orth, r.total].iter().all(|v| v.is_finite() && *v >= 0.0));
    let last = run.records.last();
    line(
        ok,
        format!(
            "{} epochs recorded, final rec {:.5} sparse {:.3} orth {:.3e}",
            run.records.len(),
            last.map_or(f64::NAN, |r| r.rec),
            last.map_or(f64::NAN, |r| r.sparse),
            last.map_or(f64::NAN, |r| r.orth)
        ),
    )
}

fn unit_code(refined: &RefinedDictionary) -> SparseCode {
    let groups = (0..refined.grouping().len()).map(|_| vec![1.0; refined.t()]).collect();
    SparseCode::new(CodeKind::Sampled, groups).unwrap()
}

fn supplementary(name: &str, result: age_core::Result<Line>, failures: &mut usize) {
    let l = result.unwrap_or_else(|e| line(false, format!("error: {e}")));
    if !l.pass {
        *failures += 1;
    }
    println!("supplementary {name}: {} {}", if l.pass { "PASS" } else { "FAIL" }, l.detail);
}

fn report(id: usize, result: age_core::Result<Line>, failures: &mut usize) {
    let l = result.unwrap_or_else(|e| line(false, format!("error: {e}")));
    if !l.pass {
        *failures += 1;
    }
    println!("criterion {id}: {} {}", if l.pass { "PASS" } else { "FAIL" }, l.detail);
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(1, c1_gradients(), &mut failures);

    let trained = Run::train(acceptance_spec());
    match &trained {
        Ok(run) => {
            report(2, Ok(c2_orthogonality(run)), &mut failures);
            let em = run.edit_model();
            let with_em = |f: &dyn Fn(&EditModel) -> age_core::Result<Line>| match &em {
                Ok(em) => f(em),
                Err(e) => Ok(line(false, format!("edit model: {e}"))),
            };
            report(3, with_em(&|em| c3_subspace(run, em)), &mut failures);
            let variant = Run::train(mismatched_spec());
            report(
                4,
                with_em(&|em| match &variant {
                    Ok(v) => c4_preservation(run, em, v),
                    Err(e) => Ok(line(false, format!("mismatched run: {e}"))),
                }),
                &mut failures,
            );
            report(5, with_em(&|em| c5_trend(run, em)), &mut failures);
            report(6, c6_reconstruction(run), &mut failures);
            report(7, c7_linear_algebra(), &mut failures);
            report(8, c8_profile(), &mut failures);
            report(9, c9_determinism(), &mut failures);
            report(10, with_em(&|em| c10_transfer(run, em)), &mut failures);
            supplementary("losses", Ok(losses_recorded(run)), &mut failures);
            supplementary("directions", with_em(&|em| top_direction_edits(run, em)), &mut failures);
        }
        Err(e) => {
            for id in 2..=10 {
                let result = match id {
                    7 => c7_linear_algebra(),
                    8 => c8_profile(),
                    9 => c9_determinism(),
                    _ => Ok(line(false, format!("training failed: {e}"))),
                };
                report(id, result, &mut failures);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
