//! Diversity and category preservation as the edit intensity grows.
//! Prints the curve as CSV.
//!
//! cargo run --release --example alpha_sweep

use age_core::cli::{diversity_curve, proxy_bank};
use age_core::inference::{EditModel, EditOptions};
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
        class_separation: 4.0,
        seed: 8,
        ..Default::default()
    })?;
    let seen = world.sample_dataset(30, Split::Seen, 1)?;
    let unseen = world.sample_dataset(30, Split::Unseen, 2)?;
    let config = TrainConfig {
        directions: 8,
        hidden: 64,
        epochs: 60,
        seed: 9,
        ..Default::default()
    };
    let (dict, encoder, _) = train_with_threads(&seen, &world, &config, 1)?;
    let bank = build_embedding_bank(&seen)?;
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, None, &EditOptions { t: 3, ..Default::default() })?;

    let alphas = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
    let curve = diversity_curve(&model, &unseen, &proxy_bank(&seen, &unseen)?, &alphas, 32, 0)?;
    println!("alpha,diversity,preservation");
    for p in curve {
        println!("{},{:.4},{:.4}", p.alpha, p.diversity, p.preservation);
    }
    Ok(())
}
