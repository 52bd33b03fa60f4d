//! Dictionary edits against the Sample-Train baseline, which adds the offset
//! of a random seen sample to the source code. The world gives seen samples
//! extra variation inside the class-relevant subspace, which the baseline
//! copies and the dictionary does not.
//!
//! cargo run --release --example baseline_comparison

use age_core::inference::{baseline_sample_train_edit, preservation_rate, EditModel, EditOptions};
use age_core::latent::{build_embedding_bank, Split};
use age_core::trainer::{train_with_threads, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec {
        layers: 2,
        dim: 16,
        image_dim: 48,
        irrelevant_rank: 3,
        relevant_rank: 3,
        seen_relevant_sigma: 3.0,
        seen_categories: 6,
        unseen_categories: 3,
        seed: 12,
        ..Default::default()
    })?;
    let seen = world.sample_dataset(30, Split::Seen, 1)?;
    let unseen = world.sample_dataset(30, Split::Unseen, 2)?;
    let config = TrainConfig {
        directions: 8,
        hidden: 64,
        epochs: 60,
        seed: 13,
        ..Default::default()
    };
    let (dict, encoder, _) = train_with_threads(&seen, &world, &config, 1)?;
    let bank = build_embedding_bank(&seen)?;
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, None, &EditOptions { t: 3, ..Default::default() })?;
    let proxy = bank.concat(&build_embedding_bank(&unseen)?)?;

    println!("category   dictionary   sample-train");
    for (m, name) in unseen.categories().iter().enumerate() {
        let shot = &unseen.codes()[unseen.indices_of(m)[0]];
        let ours = (0..128)
            .map(|j| model.sample_edit(shot, 1.0, j).map(|(_, e)| e))
            .collect::<age_core::Result<Vec<_>>>()?;
        let theirs = (0..128)
            .map(|j| baseline_sample_train_edit(shot, &seen, &bank, j))
            .collect::<age_core::Result<Vec<_>>>()?;
        println!(
            "{name:<10} {:>10.3}   {:>12.3}",
            preservation_rate(&ours, name, &proxy)?,
            preservation_rate(&theirs, name, &proxy)?
        );
    }
    Ok(())
}
