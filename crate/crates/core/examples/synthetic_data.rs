// Generate synthetic tasks, save them, reload them and carve out a split.
//
//     cargo run --release --example synthetic_data

use ngp::data::{generate_synthetic_with, split_tasks, Dataset, SplitSpec, SyntheticConfig};

pub fn run_example() -> ngp::Result<()> {
    let cfg = SyntheticConfig {
        grid_size: 100,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic_with(20, 7, &cfg)?;
    println!("{}", data.meta.generator);

    for task in data.tasks.iter().take(4) {
        let (argmax, ymax) =
            task.y.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &v)| if v > best.1 { (i, v) } else { best },
            );
        println!(
            "{}  r = {:+.3}  max y = {:+.3} at x = {:+.3}",
            task.id,
            task.r[0],
            ymax,
            task.x[(argmax, 0)]
        );
    }

    let dir = std::env::temp_dir().join("ngp-synthetic-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tasks.json");
    data.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back, data);
    println!(
        "round trip through {} ok, sha256 {}",
        path.display(),
        &data.digest()?[..16]
    );

    let split = split_tasks(
        &data,
        &SplitSpec {
            source: 12,
            validation: 4,
            target: 4,
            seed: 0,
        },
    )?;
    let ids: Vec<&str> = split.target.iter().map(|t| t.id.as_str()).collect();
    println!("target tasks: {}", ids.join(", "));
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
