//! End-to-end tests of the `arbor` binary: help text, exit codes,
//! artifact determinism, and the train/eval/stats pipeline.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn arbor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbor"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code_of(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

// ---------------------------------------------------------------------------
// help and usage errors
// ---------------------------------------------------------------------------

#[test]
fn help_matches_golden_file() {
    let dir = TempDir::new().unwrap();
    let out = arbor(dir.path(), &["--help"]);
    assert_eq!(code_of(&out), 0);
    let golden = include_str!("golden_help.txt");
    assert_eq!(stdout_of(&out), golden);
}

#[test]
fn usage_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["bench", "--bogus-flag"][..],
        &["no-such-command"][..],
        &["train", "--train", "a", "--dev", "b", "--plan", "lr=-1"][..],
        &["grad-check", "--task", "nonsense"][..],
        &["count-params", "--preset", "no-such-preset"][..],
    ] {
        let out = arbor(dir.path(), args);
        assert_eq!(code_of(&out), 1, "args {args:?}");
    }
}

#[test]
fn missing_or_malformed_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = arbor(dir.path(), &["tree-roundtrip", "--in", "missing.trees"]);
    assert_eq!(code_of(&out), 2);

    std::fs::write(dir.path().join("bad.trees"), "(S (NP x)\n").unwrap();
    let out = arbor(dir.path(), &["tree-roundtrip", "--in", "bad.trees"]);
    assert_eq!(code_of(&out), 2);

    // A bare token is a parseable line but not an encodable tree.
    std::fs::write(dir.path().join("bare.trees"), "x\n").unwrap();
    let out = arbor(dir.path(), &["tree-validate", "--in", "bare.trees"]);
    assert_eq!(code_of(&out), 2);
}

#[test]
fn impossible_threshold_exits_4() {
    let dir = TempDir::new().unwrap();
    let out = arbor(
        dir.path(),
        &["oracle-check", "--trees", "3", "--tol", "1e-30"],
    );
    assert_eq!(code_of(&out), 4);
}

// ---------------------------------------------------------------------------
// data tools
// ---------------------------------------------------------------------------

#[test]
fn roundtrip_and_validate_accept_well_formed_trees() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("ok.trees"),
        "(S (NP (DT the) (NN cat)) (VP (VBZ sat)))\n(S (NP x) (VP y z))\n",
    )
    .unwrap();
    let out = arbor(dir.path(), &["tree-roundtrip", "--in", "ok.trees"]);
    assert_eq!(code_of(&out), 0);
    assert!(stdout_of(&out).contains("2 trees round-tripped exactly"));

    let out = arbor(dir.path(), &["tree-validate", "--in", "ok.trees"]);
    assert_eq!(code_of(&out), 0);
    assert!(stdout_of(&out).contains("2 valid, 0 invalid"));
}

#[test]
fn bpe_split_rewrites_leaves() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("in.trees"), "(S (NP (NN catfish)))\n").unwrap();
    std::fs::write(dir.path().join("codes.txt"), "c a\nca t\nf i\nfi s\nfis h\n").unwrap();
    let out = arbor(
        dir.path(),
        &[
            "bpe-split",
            "--in",
            "in.trees",
            "--codes",
            "codes.txt",
            "--out",
            "out.trees",
        ],
    );
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out.trees")).unwrap();
    // The leaf splits into pieces grafted under a fresh node.
    assert!(text.contains("(NN-BPE"), "got {text}");
}

#[test]
fn make_synth_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    for (name, seed) in [("a.tsv", "9"), ("b.tsv", "9"), ("c.tsv", "10")] {
        let out = arbor(
            dir.path(),
            &[
                "make-synth", "--out", name, "--size", "30", "--depth", "2", "--seed", seed,
            ],
        );
        assert_eq!(code_of(&out), 0);
    }
    let a = std::fs::read(dir.path().join("a.tsv")).unwrap();
    let b = std::fs::read(dir.path().join("b.tsv")).unwrap();
    let c = std::fs::read(dir.path().join("c.tsv")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the corpus byte for byte");
    assert_ne!(a, c, "different seeds should differ");
}

// ---------------------------------------------------------------------------
// checks and counting
// ---------------------------------------------------------------------------

#[test]
fn oracle_check_passes_at_default_tolerance() {
    let dir = TempDir::new().unwrap();
    let out = arbor(dir.path(), &["oracle-check", "--trees", "25", "--seed", "3"]);
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("max |kernel - oracle|"));
}

#[test]
fn grad_check_reports_small_error() {
    let dir = TempDir::new().unwrap();
    let out = arbor(
        dir.path(),
        &["grad-check", "--d", "8", "--leaves", "5", "--seed", "2"],
    );
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("max relative error"));
}

#[test]
fn count_params_emits_breakdown_and_overhead() {
    let dir = TempDir::new().unwrap();
    let out = arbor(dir.path(), &["count-params", "--preset", "base-tree"]);
    assert_eq!(code_of(&out), 0);
    let text = stdout_of(&out);
    assert!(text.contains("hierarchy tables"));
    assert!(text.contains("61,804,544"));
    assert!(text.contains("0.0928% of total"));
}

#[test]
fn bench_writes_csv_with_fit_summary() {
    let dir = TempDir::new().unwrap();
    let out = arbor(
        dir.path(),
        &[
            "bench", "--lengths", "32,64", "--repeats", "1", "--d", "4", "--out", "bench.csv",
        ],
    );
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("n,accum_ops,accum_wall_s,layer_ops,layer_wall_s,parse_wall_s"));
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit: ops ~ c * n * log2(n)"));
}

// ---------------------------------------------------------------------------
// the training pipeline
// ---------------------------------------------------------------------------

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--train",
        "train.tsv",
        "--dev",
        "dev.tsv",
        "--set",
        "d=16",
        "--set",
        "d_ffn=32",
        "--set",
        "layers_enc=1",
        "--set",
        "heads=2",
        "--set",
        "table_rows=8",
        "--plan",
        "lr=2e-3",
        "--plan",
        "warmup=20",
        "--plan",
        "max_updates=80",
        "--plan",
        "batch_tokens=256",
        "--plan",
        "dropout=0.0",
        "--plan",
        "eval_every=40",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn train_eval_stats_pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for (name, seed) in [("train.tsv", "11"), ("dev.tsv", "12")] {
        let out = arbor(
            dir.path(),
            &[
                "make-synth", "--out", name, "--size", "60", "--depth", "2", "--seed", seed,
            ],
        );
        assert_eq!(code_of(&out), 0);
    }

    let out = arbor(
        dir.path(),
        &train_args(&["--out", "m1.ckpt", "--report-csv", "r1.csv", "--report-log", "r1.log"]),
    );
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    // The echoed config reflects every override.
    assert!(text.contains("d = 16"));
    assert!(text.contains("max_updates = 80"));
    assert!(text.contains("best_dev_accuracy"));

    let out2 = arbor(
        dir.path(),
        &train_args(&["--out", "m2.ckpt", "--report-csv", "r2.csv"]),
    );
    assert_eq!(code_of(&out2), 0);
    let c1 = std::fs::read(dir.path().join("m1.ckpt")).unwrap();
    let c2 = std::fs::read(dir.path().join("m2.ckpt")).unwrap();
    assert_eq!(c1, c2, "same seed must reproduce the checkpoint byte for byte");
    let r1 = std::fs::read(dir.path().join("r1.csv")).unwrap();
    let r2 = std::fs::read(dir.path().join("r2.csv")).unwrap();
    assert_eq!(r1, r2);

    // The run log exists and carries one record per line.
    let log = std::fs::read_to_string(dir.path().join("r1.log")).unwrap();
    assert!(log.lines().all(|l| l.starts_with('{')));

    // Evaluation reproduces the reported best accuracy from the checkpoint.
    let eval = arbor(dir.path(), &["eval", "--ckpt", "m1.ckpt", "--in", "dev.tsv"]);
    assert_eq!(code_of(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let eval_text = stdout_of(&eval);
    let reported: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("best_dev_accuracy = "))
        .unwrap()
        .parse()
        .unwrap();
    let measured: f64 = eval_text
        .lines()
        .find_map(|l| l.strip_prefix("accuracy = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((reported - measured).abs() < 1e-9);

    // Attention-mass stats run off the same artifacts.
    let stats = arbor(
        dir.path(),
        &["attn-stats", "--ckpt", "m1.ckpt", "--in", "dev.tsv", "--out", "mass.csv"],
    );
    assert_eq!(code_of(&stats), 0, "{}", String::from_utf8_lossy(&stats.stderr));
    let stats_text = stdout_of(&stats);
    let node: f64 = stats_text
        .lines()
        .find_map(|l| l.strip_prefix("node_mass = "))
        .unwrap()
        .parse()
        .unwrap();
    let leaf: f64 = stats_text
        .lines()
        .find_map(|l| l.strip_prefix("leaf_mass = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((node + leaf - 1.0).abs() < 1e-6);
    assert!(dir.path().join("mass.csv").exists());
}

#[test]
fn baseline_flag_turns_the_tree_path_off() {
    let dir = TempDir::new().unwrap();
    for (name, seed) in [("train.tsv", "21"), ("dev.tsv", "22")] {
        let out = arbor(
            dir.path(),
            &[
                "make-synth", "--out", name, "--size", "30", "--depth", "1", "--seed", seed,
            ],
        );
        assert_eq!(code_of(&out), 0);
    }
    // A later --plan wins, keeping this run quick.
    let args = train_args(&["--plan", "max_updates=20", "--baseline", "--out", "flat.ckpt"]);
    let out = arbor(dir.path(), &args);
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("tree_mode = false"));

    // A flat checkpoint refuses node/leaf mass statistics.
    let stats = arbor(
        dir.path(),
        &["attn-stats", "--ckpt", "flat.ckpt", "--in", "dev.tsv"],
    );
    assert_eq!(code_of(&stats), 1);
}
