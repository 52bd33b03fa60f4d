//! Moving a code between categories by swapping class embeddings, and
//! applying one sampled edit to codes of every category.
//!
//! cargo run --release --example category_transfer

use age_core::inference::{category_transfer, EditModel, EditOptions};
use age_core::latent::{build_embedding_bank, nearest_class, Split};
use age_core::spectral::transferability_check;
use age_core::trainer::{train_with_threads, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec {
        layers: 2,
        dim: 16,
        image_dim: 48,
        irrelevant_rank: 3,
        seen_categories: 5,
        unseen_categories: 0,
        noise_sigma: 0.0,
        seed: 31,
        ..Default::default()
    })?;
    let seen = world.sample_dataset(30, Split::Seen, 1)?;
    let bank = build_embedding_bank(&seen)?;

    let code = &seen.codes()[0];
    let src = &bank.embeddings()[seen.labels()[0]];
    for dst in bank.embeddings() {
        let moved = category_transfer(code, src, dst)?;
        println!("{} -> {}: classified as {}", src.category, dst.category, nearest_class(&moved, &bank)?);
    }

    let config = TrainConfig {
        directions: 8,
        hidden: 32,
        epochs: 20,
        seed: 32,
        ..Default::default()
    };
    let (dict, encoder, _) = train_with_threads(&seen, &world, &config, 1)?;
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, None, &EditOptions { t: 3, ..Default::default() })?;
    let codes: Vec<_> = (0..bank.len()).map(|c| seen.codes()[seen.indices_of(c)[0]].clone()).collect();
    let (n, _) = model.sample_edit(&codes[0], 1.0, 7)?;
    let cos = transferability_check(&codes, &model.refined, &n, 1.0)?;
    let worst = cos.as_slice().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
    println!("same edit on {} categories: displacement cosines within {worst:.1e} of 1", codes.len());
    Ok(())
}
