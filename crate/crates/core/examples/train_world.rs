//! Train a dictionary on a synthetic world and report how well it recovers
//! the world's irrelevant subspace.
//!
//! cargo run --release --example train_world

use age_core::inference::{EditModel, EditOptions};
use age_core::latent::{build_embedding_bank, Split};
use age_core::spectral::subspace_recovery_score;
use age_core::trainer::{orthogonality_residual, train_with_threads, DirectionDictionary, TrainConfig};
use age_core::world::{generate_world, SyntheticWorldSpec};

fn main() -> age_core::Result<()> {
    let world = generate_world(&SyntheticWorldSpec::default())?;
    let seen = world.sample_dataset(50, Split::Seen, 101)?;
    let bank = build_embedding_bank(&seen)?;
    let config = TrainConfig {
        directions: 16,
        seed: 101,
        ..Default::default()
    };
    let init = DirectionDictionary::init(3, 32, config.directions, config.seed);
    let before = orthogonality_residual(&init, &bank)?;

    let (dict, encoder, report) = train_with_threads(&seen, &world, &config, 1)?;
    for r in report.epochs.iter().step_by(20).chain(report.final_losses()) {
        println!(
            "epoch {:>4}  rec {:.5}  sparse {:.3}  orth {:.3e}",
            r.epoch, r.rec, r.sparse, r.orth
        );
    }
    let after = orthogonality_residual(&dict, &bank)?;
    println!("orthogonality residual {before:.4} -> {after:.4} ({:.1}x)", before / after);

    let options = EditOptions { t: 4, ..Default::default() };
    let model = EditModel::fit(&seen, &dict, &encoder.grouping, &bank, Some(&encoder), &options)?;
    for (l, s) in subspace_recovery_score(&model.refined, &world)?.iter().enumerate() {
        println!("layer {l}: principal-angle cosines {:?}", s.principal_angle_cosines);
    }
    println!("trained in {:.1}s", report.wall_clock_secs);
    Ok(())
}
