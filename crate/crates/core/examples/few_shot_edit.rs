//! One-shot generation: train on seen categories, then sample edits of a
//! single code from each unseen category and classify them.
//!
//! cargo run --release --example few_shot_edit

use age_core::inference::{preservation_rate, EditModel, EditOptions};
use age_core::latent::{build_embedding_bank, Split};
use age_core::trainer::{train_with_threads, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec {
        layers: 2,
        dim: 16,
        image_dim: 48,
        irrelevant_rank: 3,
        seen_categories: 6,
        unseen_categories: 3,
        seed: 4,
        ..Default::default()
    })?;
    let seen = world.sample_dataset(30, Split::Seen, 1)?;
    let unseen = world.sample_dataset(30, Split::Unseen, 2)?;
    let config = TrainConfig {
        directions: 8,
        hidden: 64,
        epochs: 60,
        seed: 5,
        ..Default::default()
    };
    let (dict, encoder, _) = train_with_threads(&seen, &world, &config, 1)?;

    let bank = build_embedding_bank(&seen)?;
    let options = EditOptions { t: 3, ..Default::default() };
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, None, &options)?;
    println!("selected directions per layer: {:?}", model.refined.indices());

    let proxy = bank.concat(&build_embedding_bank(&unseen)?)?;
    for (m, name) in unseen.categories().iter().enumerate() {
        let shot = &unseen.codes()[unseen.indices_of(m)[0]];
        let edits = (0..64)
            .map(|j| model.sample_edit(shot, 1.0, j).map(|(_, e)| e))
            .collect::<age_core::Result<Vec<_>>>()?;
        println!("{name}: {} edits, category kept for {:.3}", edits.len(), preservation_rate(&edits, name, &proxy)?);
    }
    Ok(())
}
