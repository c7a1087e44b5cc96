// Benchmark harness end to end: two split seeds, one report each, merged
// into a single table with regret curves written as CSV.
//
// `NGP_WORKERS` sets the number of worker threads.
//
//     cargo run --release --example benchmark

use ngp::bayesopt::{nn_baseline_fit, CandidatePool, GpBaselineConfig, NnFitConfig, Strategy};
use ngp::bench::{run_benchmark, BenchConfig, BenchStrategy, BenchmarkReport};
use ngp::data::{generate_synthetic, split_tasks, SplitSpec};
use ngp::model::{Ablation, NgpConfig};
use ngp::training::{train, TrainConfig};

pub fn run_example() -> ngp::Result<()> {
    let data = generate_synthetic(24, 2)?.subsample_tasks(50, 0)?;
    let digest = data.digest()?;
    let tc = TrainConfig {
        max_epochs: 80,
        ..TrainConfig::default()
    };
    let mut reports = Vec::new();
    for split_seed in 0..2u64 {
        let split = split_tasks(
            &data,
            &SplitSpec {
                source: 16,
                validation: 4,
                target: 4,
                seed: split_seed,
            },
        )?;
        let (ngp, _) = train(
            NgpConfig::new(Ablation::RMK, 1, 1)?,
            &split.source,
            &split.validation,
            &tc,
        )?;
        let nn = nn_baseline_fit(&split.source, &split.validation, true, 0, &NnFitConfig::default())?;
        let strategies = [
            BenchStrategy::new(Strategy::Ngp(&ngp)),
            BenchStrategy::new(Strategy::Gp(GpBaselineConfig::default())),
            BenchStrategy::new(Strategy::NnR(&nn)),
            BenchStrategy::new(Strategy::Random),
        ];
        let pools: Vec<CandidatePool> = split.target.iter().map(CandidatePool::from_task).collect();
        let cfg = BenchConfig {
            budget: 50,
            seeds: vec![0, 1],
            stop_at_max: true,
            group: split_seed.to_string(),
        };
        reports.push(run_benchmark(
            &strategies,
            &pools,
            &cfg,
            &digest,
            serde_json::Value::Null,
            None,
        )?);
    }
    let merged = BenchmarkReport::merge(&reports)?;
    print!("{}", merged.text_table());

    let dir = std::env::temp_dir().join("ngp-benchmark-example");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("table.csv"), merged.table_csv())?;
    std::fs::write(dir.join("regret.csv"), merged.regret_csv())?;
    std::fs::write(dir.join("report.json"), merged.to_json()?)?;
    println!("wrote table.csv, regret.csv and report.json to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
