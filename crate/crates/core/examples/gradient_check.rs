//! Analytic gradients of the training objective against central differences.
//!
//! cargo run --example gradient_check

use age_core::latent::Split;
use age_core::trainer::{gradient_check, prepare, Model, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec {
        layers: 2,
        dim: 4,
        image_dim: 16,
        irrelevant_rank: 2,
        seen_categories: 3,
        unseen_categories: 0,
        seed: 1,
        ..Default::default()
    })?;
    let ds = world.sample_dataset(3, Split::Seen, 2)?;
    for seed in 0..5 {
        let config = TrainConfig {
            lambda1: 0.3,
            lambda2: 0.2,
            hidden: 6,
            directions: 3,
            seed,
            ..Default::default()
        };
        let set = prepare(&ds, &world, config.reconstruction_space)?;
        let model = Model::init(2, 4, &config)?;
        let c = gradient_check(&model, &set, &[0, 3, 6], &world, &config, 1e-5)?;
        println!(
            "seed {seed}: max relative error {:.2e} over {} parameters ({} skipped near kinks)",
            c.max_relative_error, c.checked, c.skipped
        );
    }
    Ok(())
}
