// Condition a model on a handful of observations and rank the remaining
// candidates by expected improvement.
//
//     cargo run --release --example posterior_ei

use nalgebra::{DMatrix, DVector};
use ngp::bayesopt::{expected_improvement, select_next};
use ngp::kernels::KernelParams;
use ngp::model::{Ablation, NgpConfig, NgpModel};

pub fn run_example() -> ngp::Result<()> {
    // TGP variant: zero mean, RBF kernel directly on x
    let mut model = NgpModel::init(NgpConfig::new(Ablation::TGP, 1, 0)?, 0)?;
    model.kernel_params = KernelParams::rbf(1.0, 0.7);
    model.log_noise_variance = (1e-4f64).ln();

    let f = |x: f64| (2.0 * x).sin() * (-0.1 * x * x).exp();
    let grid: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
    let observed = [3usize, 12, 20, 31];
    let x_obs = DMatrix::from_fn(observed.len(), 1, |i, _| grid[observed[i]]);
    let y_obs = DVector::from_fn(observed.len(), |i, _| f(grid[observed[i]]));
    let x_all = DMatrix::from_column_slice(grid.len(), 1, &grid);

    let post = model.posterior(&[], &x_obs, &y_obs, &x_all)?;
    let y_best = y_obs.max();
    let sd = post.std_dev();
    let ei: Vec<f64> = post
        .mean
        .iter()
        .zip(&sd)
        .map(|(&m, &s)| expected_improvement(m, s, y_best))
        .collect::<ngp::Result<_>>()?;
    let mut evaluated = vec![false; grid.len()];
    for &i in &observed {
        evaluated[i] = true;
    }
    for i in (0..grid.len()).step_by(4) {
        println!(
            "x {:+.1}  mean {:+.3}  sd {:.3}  ei {:.4}{}",
            grid[i],
            post.mean[i],
            sd[i],
            ei[i],
            if evaluated[i] { "  (observed)" } else { "" }
        );
    }
    let next = select_next(&ei, &evaluated)?;
    println!(
        "best so far {y_best:+.3}; next query x = {:+.1} (true f = {:+.3})",
        grid[next],
        f(grid[next])
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
