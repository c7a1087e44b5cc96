// Transfer BO on one held-out task: an NGP trained on source tasks against
// a GP fit from scratch and random search.
//
//     cargo run --release --example transfer_bo

use ngp::bayesopt::{run_bo_with, BoOptions, CandidatePool, GpBaselineConfig, Strategy};
use ngp::data::{generate_synthetic, split_tasks, SplitSpec};
use ngp::model::{Ablation, NgpConfig};
use ngp::training::{train, TrainConfig};

pub fn run_example() -> ngp::Result<()> {
    let data = generate_synthetic(30, 1)?.subsample_tasks(60, 0)?;
    let split = split_tasks(
        &data,
        &SplitSpec {
            source: 20,
            validation: 5,
            target: 5,
            seed: 0,
        },
    )?;
    let tc = TrainConfig {
        max_epochs: 150,
        ..TrainConfig::default()
    };
    let (model, history) = train(
        NgpConfig::new(Ablation::RMK, 1, 1)?,
        &split.source,
        &split.validation,
        &tc,
    )?;
    println!(
        "trained NGP-RMK for {} epochs (best {}), noise variance {:.2e}",
        history.epochs_run(),
        history.best_epoch,
        model.noise_variance()
    );

    let opts = BoOptions { stop_at_max: true };
    for target in &split.target {
        let pool = CandidatePool::from_task(target);
        let mut line = format!("{}:", target.id);
        for strategy in [
            Strategy::Ngp(&model),
            Strategy::Gp(GpBaselineConfig::default()),
            Strategy::Random,
        ] {
            let trace = run_bo_with(&strategy, &pool, pool.len(), 0, &opts)?;
            let first_regret = trace.regret(pool.true_max())[0];
            line.push_str(&format!(
                "  {strategy} {:>2} evals (first-query regret {first_regret:.2})",
                trace.evals_to_max.expect("budget covers the pool")
            ));
        }
        println!("{line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
