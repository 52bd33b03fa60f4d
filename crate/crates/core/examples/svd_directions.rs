//! Per-layer SVD of the refined dictionary, and continuous edits along the
//! strongest direction of each layer.
//!
//! cargo run --release --example svd_directions

use age_core::inference::{EditModel, EditOptions};
use age_core::latent::{build_embedding_bank, nearest_class, Split};
use age_core::linalg::norm;
use age_core::spectral::{disentangled_directions, principal_angles};
use age_core::trainer::{train_with_threads, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec {
        layers: 2,
        dim: 16,
        image_dim: 48,
        irrelevant_rank: 3,
        seen_categories: 6,
        unseen_categories: 2,
        seed: 21,
        ..Default::default()
    })?;
    let seen = world.sample_dataset(30, Split::Seen, 1)?;
    let config = TrainConfig {
        directions: 8,
        hidden: 64,
        epochs: 60,
        seed: 22,
        ..Default::default()
    };
    let (dict, encoder, _) = train_with_threads(&seen, &world, &config, 1)?;
    let bank = build_embedding_bank(&seen)?;
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, None, &EditOptions { t: 3, ..Default::default() })?;

    let directions = disentangled_directions(&model.refined)?;
    for (l, dirs) in directions.iter().enumerate() {
        let s: Vec<String> = dirs.iter().map(|d| format!("{:.3}", d.singular_value)).collect();
        let top = age_core::linalg::Matrix::from_columns(&[dirs[0].vector.clone()])?;
        let cos = principal_angles(&top, world.irrelevant_basis(l))?.mean_cosine;
        println!("layer {l}: singular values [{}], top direction vs true subspace cosine {cos:.3}", s.join(", "));
    }

    let code = &seen.codes()[0];
    let label = nearest_class(code, &bank)?.to_string();
    for dirs in &directions {
        let d = &dirs[0];
        for step in [-2.0, -1.0, 1.0, 2.0] {
            let mut edited = code.clone();
            for (x, v) in edited.layer_mut(d.layer).iter_mut().zip(&d.vector) {
                *x += step * v;
            }
            let moved: Vec<f64> = edited.as_slice().iter().zip(code.as_slice()).map(|(a, b)| a - b).collect();
            println!(
                "layer {} step {step:+}: moved {:.3}, class {}",
                d.layer,
                norm(&moved),
                if nearest_class(&edited, &bank)? == label { "kept" } else { "changed" }
            );
        }
    }
    Ok(())
}
