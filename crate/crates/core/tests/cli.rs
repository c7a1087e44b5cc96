use std::path::Path;
use std::process::{Command, Output};

use ngp::bench::BenchmarkReport;
use ngp::data::Dataset;
use ngp::model::{Ablation, NgpCheckpoint};

fn ngp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngp"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

const DATA: [&str; 8] = [
    "--data",
    "d.json",
    "--split",
    "6,2,4",
    "--split-seed",
    "1",
    "--subsample",
    "30",
];

fn with_data<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(DATA);
    v.extend(rest);
    v
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = ngp(
        dir.path(),
        &[
            "generate", "--tasks", "12", "--seed", "2", "--points", "50", "--out", "d.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn generate_writes_requested_task_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = ngp(
        dir.path(),
        &[
            "generate", "--tasks", "140", "--seed", "1", "--points", "20", "--out", "d.json",
        ],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(Dataset::load(dir.path().join("d.json")).unwrap().tasks.len(), 140);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ngp(d, &["generate", "--tasks", "3"])), 2);
    assert_eq!(code(&ngp(d, &["generate", "--tasks", "x", "--out", "a.json"])), 2);
    assert_eq!(
        code(&ngp(
            d,
            &["train", "--data", "d.json", "--split", "1,2", "--out", "m.json"]
        )),
        2
    );
    // valid flags, unwritable destination
    assert_eq!(
        code(&ngp(
            d,
            &[
                "generate",
                "--tasks",
                "2",
                "--points",
                "5",
                "--out",
                "no/such/dir/a.json"
            ]
        )),
        1
    );
    // valid flags, missing input file
    assert_eq!(
        code(&ngp(d, &["train", "--data", "missing.json", "--out", "m.json"])),
        1
    );
}

#[test]
fn train_maps_ablation_flags_and_writes_history() {
    let dir = setup();
    let d = dir.path();
    let out = ngp(
        d,
        &with_data(
            "train",
            &[
                "--use-r",
                "--use-m",
                "--use-k",
                "--epochs",
                "6",
                "--out",
                "rmk.json",
                "--history",
                "h.csv",
            ],
        ),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rmk = NgpCheckpoint::from_json(&std::fs::read_to_string(d.join("rmk.json")).unwrap()).unwrap();
    assert_eq!(rmk.config.ablation, Ablation::RMK);
    let epochs = rmk.training_meta["epochs_run"].as_u64().unwrap() as usize;
    let history = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert_eq!(
        history.lines().next().unwrap(),
        "epoch,train_lml_per_obs,val_lml_per_obs,seconds"
    );
    assert_eq!(history.lines().count(), epochs + 1);

    assert_eq!(
        code(&ngp(d, &with_data("train", &["--epochs", "3", "--out", "tgp.json"]))),
        0
    );
    let tgp = NgpCheckpoint::from_json(&std::fs::read_to_string(d.join("tgp.json")).unwrap()).unwrap();
    assert_eq!(tgp.config.ablation, Ablation::TGP);
    assert!(tgp.mean_params.is_none() && tgp.embed_params.is_none());
}

#[test]
fn benchmark_checks_checkpoints_and_report_merges() {
    let dir = setup();
    let d = dir.path();
    let bench = |rest: &[&str]| ngp(d, &with_data("benchmark", rest));

    // model strategy without a checkpoint
    assert_eq!(code(&bench(&["--strategies", "NGP-RMK,GP", "--out", "r.json"])), 2);
    assert_eq!(code(&bench(&["--strategies", "Bogus", "--out", "r.json"])), 2);

    assert_eq!(
        code(&ngp(
            d,
            &with_data(
                "train",
                &["--use-r", "--use-m", "--use-k", "--epochs", "4", "--out", "rmk.json"]
            )
        )),
        0
    );
    // a checkpoint of the wrong variant
    assert_eq!(
        code(&bench(&[
            "--strategies",
            "NGP-RM",
            "--checkpoint",
            "NGP-RM=rmk.json",
            "--out",
            "r.json"
        ])),
        2
    );
    let common = ["--checkpoint", "NGP-RMK=rmk.json", "--budget", "30", "--seeds", "0,1"];
    let mut args = vec![
        "--strategies",
        "NGP-RMK,GP,Random",
        "--out",
        "r1.json",
        "--table",
        "t.csv",
        "--regret",
        "g.csv",
    ];
    args.extend(common);
    let out = bench(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let regret = std::fs::read_to_string(d.join("g.csv")).unwrap();
    assert_eq!(regret.lines().count(), 1 + 3 * 30);

    // a checkpoint trained on another split is refused
    let mut other = vec![
        "benchmark",
        "--data",
        "d.json",
        "--split",
        "6,2,4",
        "--split-seed",
        "2",
        "--subsample",
        "30",
    ];
    other.extend(["--strategies", "NGP-RMK", "--out", "x.json"]);
    other.extend(common);
    assert_eq!(code(&ngp(d, &other)), 2);

    // second split seed with its own checkpoint, then merge
    let data2 = [
        "--data",
        "d.json",
        "--split",
        "6,2,4",
        "--split-seed",
        "2",
        "--subsample",
        "30",
    ];
    let mut train2 = vec!["train"];
    train2.extend(data2);
    train2.extend(["--use-r", "--use-m", "--use-k", "--epochs", "4", "--out", "rmk2.json"]);
    assert_eq!(code(&ngp(d, &train2)), 0);
    let mut bench2 = vec!["benchmark"];
    bench2.extend(data2);
    bench2.extend(["--strategies", "NGP-RMK,GP,Random", "--checkpoint", "NGP-RMK=rmk2.json"]);
    bench2.extend(["--budget", "30", "--seeds", "0,1", "--out", "r2.json"]);
    assert_eq!(code(&ngp(d, &bench2)), 0);

    let single = ngp(d, &["report", "r1.json"]);
    assert_eq!(code(&single), 0);
    let text = String::from_utf8_lossy(&single.stdout);
    assert_eq!(text.lines().count(), 4, "{text}");

    assert_eq!(
        code(&ngp(
            d,
            &["report", "r1.json", "r2.json", "--out", "m.json", "--regret", "mg.csv"]
        )),
        0
    );
    let merged = BenchmarkReport::load(d.join("m.json")).unwrap();
    assert_eq!(merged.summary("GP").unwrap().n_tasks, 8);
    assert_eq!(merged.meta.groups, vec!["1".to_string(), "2".to_string()]);

    // a report on different data cannot be merged
    assert_eq!(
        code(&ngp(
            d,
            &["generate", "--tasks", "12", "--seed", "3", "--points", "50", "--out", "e.json"]
        )),
        0
    );
    let foreign = ngp(
        d,
        &[
            "benchmark",
            "--data",
            "e.json",
            "--split",
            "6,2,4",
            "--subsample",
            "30",
            "--strategies",
            "Random",
            "--budget",
            "30",
            "--out",
            "r3.json",
        ],
    );
    assert_eq!(code(&foreign), 0);
    assert_eq!(code(&ngp(d, &["report", "r1.json", "r3.json"])), 2);
}

#[test]
fn benchmark_resumes_from_partial_cells() {
    let dir = setup();
    let d = dir.path();
    let args = with_data(
        "benchmark",
        &[
            "--strategies",
            "GP,NN,Random",
            "--budget",
            "30",
            "--seeds",
            "0,1",
            "--resume",
            "cells",
            "--out",
            "a.json",
        ],
    );
    assert_eq!(code(&ngp(d, &args)), 0);
    let cells = d.join("cells/cells.jsonl");
    let full = std::fs::read_to_string(&cells).unwrap();
    assert_eq!(full.lines().count(), 3 * 4 * 2);
    let half: Vec<&str> = full.lines().take(7).collect();
    std::fs::write(&cells, half.join("\n") + "\n").unwrap();

    let mut again = args.clone();
    *again.last_mut().unwrap() = "b.json";
    assert_eq!(code(&ngp(d, &again)), 0);
    assert_eq!(
        BenchmarkReport::load(d.join("a.json")).unwrap(),
        BenchmarkReport::load(d.join("b.json")).unwrap()
    );
}
