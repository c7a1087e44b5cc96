//! Every example runs to completion.

macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(synthetic_data, "synthetic_data.rs", synthetic_data_runs);
example!(mlp_adam, "mlp_adam.rs", mlp_adam_runs);
example!(train_ablations, "train_ablations.rs", train_ablations_runs);
example!(posterior_ei, "posterior_ei.rs", posterior_ei_runs);
example!(transfer_bo, "transfer_bo.rs", transfer_bo_runs);
example!(benchmark, "benchmark.rs", benchmark_runs);
example!(scaling, "scaling.rs", scaling_runs);
