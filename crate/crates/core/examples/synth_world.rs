//! Build a synthetic world, draw seen and unseen datasets, and check that
//! class embeddings classify noiseless-ish samples.
//!
//! cargo run --example synth_world

use age_core::latent::{build_embedding_bank, nearest_class, Split};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let spec = SyntheticWorldSpec::default();
    let world = generate_world(&spec)?;
    println!(
        "world: L={} d={} p={} seen={} unseen={} k_true={}",
        spec.layers, spec.dim, spec.image_dim, spec.seen_categories, spec.unseen_categories, spec.irrelevant_rank
    );

    let seen = world.sample_dataset(50, Split::Seen, 1)?;
    let unseen = world.sample_dataset(50, Split::Unseen, 2)?;
    let bank = build_embedding_bank(&seen)?.concat(&build_embedding_bank(&unseen)?)?;

    for ds in [&seen, &unseen] {
        let mut hits = 0;
        for (code, &label) in ds.codes().iter().zip(ds.labels()) {
            if nearest_class(code, &bank)? == ds.categories()[label] {
                hits += 1;
            }
        }
        println!("{:?}: {} codes, nearest-class accuracy {:.3}", ds.split(), ds.len(), hits as f64 / ds.len() as f64);
    }

    let code = &seen.codes()[0];
    let image = world.generate(code)?;
    let back = world.invert(&image)?;
    let err = back
        .as_slice()
        .iter()
        .zip(code.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("generate/invert round trip, max error {err:.2e}");
    Ok(())
}
