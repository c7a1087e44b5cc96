// Fit a small tanh network to a 1-D curve with exact backprop and Adam.
//
//     cargo run --release --example mlp_adam

use ngp::nnet::{AdamConfig, AdamState, MlpArch, MlpParams, Parameterized};

pub fn run_example() -> ngp::Result<()> {
    let arch = MlpArch::tanh(&[1, 16, 16, 1])?;
    let mut net = MlpParams::init(&arch, 3)?;
    let xs: Vec<f64> = (0..40).map(|i| -3.0 + 6.0 * i as f64 / 39.0).collect();
    let target = |x: f64| (1.5 * x).sin() + 0.3 * x;

    let blocks = net.param_blocks();
    let mut adam = AdamState::new(net.n_flat(), AdamConfig::with_lr(1e-2));
    let mut params = net.to_flat();
    for step in 0..=1500 {
        let mut grads = MlpParams::zeros(&arch)?;
        let mut loss = 0.0;
        for &x in &xs {
            let (out, cache) = net.forward(&[x])?;
            let err = out[0] - target(x);
            loss += err * err / xs.len() as f64;
            net.backward_accumulate(&cache, &[2.0 * err / xs.len() as f64], &mut grads)?;
        }
        if step % 300 == 0 {
            println!("step {step:4}  mse {loss:.5}");
        }
        adam.step(&mut params, &grads.to_flat(), &blocks)?;
        net.set_flat(&params)?;
    }
    for x in [-2.0, 0.0, 2.0] {
        println!("f({x:+}) = {:+.3}, net {:+.3}", target(x), net.predict(&[x])?[0]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ngp::Result<()> {
    run_example()
}
