// Per-epoch training time as the number of source tasks grows. Each task
// costs one factorization, so time should roughly double with D.
//
//     cargo run --release --example scaling

use ngp::model::{Ablation, NgpConfig};
use ngp::training::complexity_probe;

pub fn run_example() -> ngp::Result<()> {
    let cfg = NgpConfig::new(Ablation::RMK, 1, 1)?;
    let rows = complexity_probe(&cfg, &[32, 64], &[5, 10, 20, 40], 3, 0)?;
    println!("{:>4} {:>4} {:>12}", "N", "D", "s/epoch");
    for r in &rows {
        println!("{:>4} {:>4} {:>12.5}", r.n_obs, r.n_tasks, r.seconds_per_epoch);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
