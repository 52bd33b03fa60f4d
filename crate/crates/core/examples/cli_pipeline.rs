//! The synth, train, edit and analyze commands run in-process on a small
//! configuration, followed by a look at the artifacts they leave behind.
//!
//! cargo run --example cli_pipeline [OUT_DIR]

use std::path::PathBuf;

use age_core::cli::{cmd_analyze, cmd_edit, cmd_synth, cmd_train, RunConfig, DICTIONARY_FILE, EDITS_FILE};
use age_core::io;
use age_core::latent::Split;

const CONFIG: &str = r#"{
  "world": {"layers": 2, "dim": 8, "image_dim": 24, "irrelevant_rank": 2,
            "seen_categories": 4, "unseen_categories": 2, "seed": 3},
  "data": {"per_category": 20, "seed": 4},
  "train": {"epochs": 20, "directions": 6, "hidden": 32, "seed": 5},
  "edit": {"t": 2, "count": 16},
  "analyze": {"alphas": [0.5, 1.0, 2.0], "edits_per_alpha": 16}
}"#;

fn main() -> age_core::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("age-example-run"));
    let config = RunConfig::from_json(CONFIG)?;
    println!("config hash {}", config.hash());

    println!("synth   {}", serde_json::to_string(&cmd_synth(&config, &out)?).unwrap());
    println!("train   {}", serde_json::to_string(&cmd_train(&config, &out, false)?).unwrap());
    println!("edit    {}", serde_json::to_string(&cmd_edit(&config, &out)?).unwrap());
    let analysis = cmd_analyze(&config, &out)?;
    for (k, v) in analysis.metrics.iter().filter(|(k, _)| !k.starts_with("svd.")) {
        println!("analyze {k} = {v:.4}");
    }

    let dict = io::read_dictionary(&out.join(DICTIONARY_FILE))?;
    let edits = io::read_dataset(&out.join(EDITS_FILE), Split::Unseen)?;
    println!(
        "dictionary: {} layers x {} directions; {} edited codes in {}",
        dict.dictionary.layer_count(),
        dict.dictionary.directions(),
        edits.len(),
        out.display()
    );
    Ok(())
}
