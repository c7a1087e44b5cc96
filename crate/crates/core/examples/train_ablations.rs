// Train every model variant on the same source tasks and compare their
// per-observation log likelihoods on held-out validation tasks.
//
//     cargo run --release --example train_ablations

use ngp::data::{generate_synthetic_with, split_tasks, SplitSpec, SyntheticConfig};
use ngp::model::{Ablation, NgpConfig};
use ngp::training::{train, TrainConfig};

pub fn run_example() -> ngp::Result<()> {
    let cfg = SyntheticConfig {
        grid_size: 40,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic_with(16, 1, &cfg)?;
    let split = split_tasks(
        &data,
        &SplitSpec {
            source: 12,
            validation: 4,
            target: 0,
            seed: 0,
        },
    )?;
    let tc = TrainConfig {
        max_epochs: 200,
        patience: 30,
        ..TrainConfig::default()
    };
    println!("{:<8} {:>7} {:>10} {:>10}", "variant", "epochs", "train", "validation");
    for ablation in [Ablation::RMK, Ablation::RM, Ablation::RK, Ablation::MK, Ablation::TGP] {
        let (_, history) = train(NgpConfig::new(ablation, 1, 1)?, &split.source, &split.validation, &tc)?;
        let best = history.best().expect("at least one epoch");
        println!(
            "{:<8} {:>7} {:>10.3} {:>10.3}",
            ablation.to_string(),
            history.epochs_run(),
            best.train_lml_per_obs,
            best.val_lml_per_obs
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
