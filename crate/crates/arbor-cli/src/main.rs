//! Command-line front end for the tree-attention toolkit.
//!
//! Each capability is a subcommand: corpus round-trips and validation,
//! subword splitting, kernel-vs-oracle spot checks, model-level gradient
//! checks, training, evaluation, attention-mass statistics, scaling
//! benchmarks, parameter counting, and synthetic-corpus generation.
//!
//! Conventions shared by every subcommand:
//!
//! * exit codes — 0 success, 1 usage error, 2 malformed data, 3 numeric
//!   failure (divergence, non-finite values), 4 a check ran cleanly but
//!   missed its threshold;
//! * the fully resolved configuration is echoed to stdout before any work;
//! * all randomness flows from the single global `--seed` flag;
//! * timings go to stderr so that primary artifacts stay deterministic.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use arbor_core::accum::{self, BranchSets};
use arbor_core::model::{
    count_parameters, load_checkpoint, save_checkpoint, CheckpointInfo, ModelConfig, ModelError,
    TaskKind, TreeModel,
};
use arbor_core::tensor::{Element, Tensor, TensorError};
use arbor_core::train::{
    attention_mass_stats, bench_accumulation, evaluate_accuracy, grad_check_model,
    make_synthetic_dataset, train_classifier, LabelMap, TrainError, TrainPlan,
};
use arbor_core::treebank::{
    apply_bpe_split, decode_tree, encode_tree, parse_bracketed, random_tree, read_labeled,
    read_trees, validate, write_labeled, write_trees, BpeCodes, GenConfig, LabeledTrees,
    ParseTree, TreeError,
};

// ---------------------------------------------------------------------------
// failure kinds and exit codes
// ---------------------------------------------------------------------------

/// What went wrong, bucketed by exit code.
enum Failure {
    /// Bad flags or an invalid configuration (exit 1).
    Usage(String),
    /// Unreadable or malformed input data (exit 2).
    Data(String),
    /// Divergence or non-finite numbers (exit 3).
    Numeric(String),
    /// A check completed but exceeded its threshold (exit 4).
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Check(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) | Failure::Check(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn map_tree(e: TreeError) -> Failure {
    Failure::Data(e.to_string())
}

fn map_tensor(e: TensorError) -> Failure {
    Failure::Numeric(e.to_string())
}

fn map_model(e: ModelError) -> Failure {
    match e {
        ModelError::Config(_) => Failure::Usage(e.to_string()),
        ModelError::Tensor(inner) => map_tensor(inner),
        _ => Failure::Data(e.to_string()),
    }
}

fn map_train(e: TrainError) -> Failure {
    match e {
        TrainError::Plan(_) => Failure::Usage(e.to_string()),
        TrainError::Data(_) => Failure::Data(e.to_string()),
        TrainError::Diverged { .. } => Failure::Numeric(e.to_string()),
        TrainError::GradCheck { .. } => Failure::Check(e.to_string()),
        TrainError::Model(inner) => map_model(inner),
        TrainError::Tensor(inner) => map_tensor(inner),
        TrainError::Tree(inner) => map_tree(inner),
    }
}

// ---------------------------------------------------------------------------
// argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "arbor",
    version,
    about = "Tree-structured attention: data tools, checks, training, and benchmarks",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify text and encoding round-trips for every tree in a file.
    TreeRoundtrip(TreeRoundtripArgs),
    /// Check the structural invariants of every tree in a file.
    TreeValidate(TreeValidateArgs),
    /// Split leaf tokens with BPE merge rules, grafting pieces into the tree.
    BpeSplit(BpeSplitArgs),
    /// Compare the accumulation kernel against its set-enumeration oracle.
    OracleCheck(OracleCheckArgs),
    /// Finite-difference gradient check through a small end-to-end model.
    GradCheck(GradCheckArgs),
    /// Train a tree classifier and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Attention-mass split between nodes and leaves for a checkpoint.
    AttnStats(AttnStatsArgs),
    /// Operation-count scaling benchmark on balanced binary trees.
    Bench(BenchArgs),
    /// Parameter-count breakdown for a model configuration.
    CountParams(CountParamsArgs),
    /// Generate the synthetic sign-of-extremum tree corpus.
    MakeSynth(MakeSynthArgs),
}

#[derive(Args)]
struct TreeRoundtripArgs {
    /// Bracketed-tree file, one tree per line.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
}

#[derive(Args)]
struct TreeValidateArgs {
    /// Bracketed-tree file, one tree per line.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
}

#[derive(Args)]
struct BpeSplitArgs {
    /// Bracketed-tree file, one tree per line.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Merge-rule file: one `left right` pair per line, best first.
    #[arg(long, value_name = "FILE")]
    codes: PathBuf,
    /// Destination for the rewritten trees.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Number of random trees to test.
    #[arg(long, default_value_t = 200)]
    trees: usize,
    /// Largest leaf count drawn for a test tree.
    #[arg(long, default_value_t = 12)]
    max_leaves: usize,
    /// Channel width of the random inputs (must be even).
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Rows in the random hierarchy tables.
    #[arg(long, default_value_t = 8)]
    table_rows: usize,
    /// Largest tolerated |kernel - oracle| before exit 4.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Model width.
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Leaf count of the fixture tree.
    #[arg(long, default_value_t = 5)]
    leaves: usize,
    /// Attention heads (must divide the width).
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Head to check: "classify" or "seq2seq".
    #[arg(long, default_value = "classify")]
    task: String,
    /// Disable the hierarchical position embeddings.
    #[arg(long)]
    no_hier: bool,
    /// Disable the subtree visibility mask.
    #[arg(long)]
    no_mask: bool,
    /// Drop the tree path entirely (plain sequence attention).
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Labelled training corpus (`label<TAB>tree[<TAB>tree...]` lines).
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Labelled development corpus, scored every eval interval.
    #[arg(long, value_name = "FILE")]
    dev: PathBuf,
    /// Write the best checkpoint here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Start from a named model preset instead of the default config.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Read the model configuration from a TOML file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one model-config key, e.g. `--set d=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from a named training-plan preset.
    #[arg(long, value_name = "NAME")]
    plan_preset: Option<String>,
    /// Override one training-plan key, e.g. `--plan lr=2e-3`; repeatable.
    #[arg(long = "plan", value_name = "KEY=VALUE")]
    plan: Vec<String>,
    /// Drop the tree path entirely (plain sequence attention).
    #[arg(long)]
    baseline: bool,
    /// Disable the hierarchical position embeddings.
    #[arg(long)]
    no_hier: bool,
    /// Disable the subtree visibility mask.
    #[arg(long)]
    no_mask: bool,
    /// Supervise every phrase node, not just the document root.
    #[arg(long)]
    phrase: bool,
    /// Write the loss/accuracy table as CSV.
    #[arg(long, value_name = "FILE")]
    report_csv: Option<PathBuf>,
    /// Write the run log as line-delimited records.
    #[arg(long, value_name = "FILE")]
    report_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Labelled corpus to score.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
}

#[derive(Args)]
struct AttnStatsArgs {
    /// Checkpoint produced by `train`.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Labelled corpus whose documents are pushed through the model.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Optional CSV destination for the mass table.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths (ascending powers of two).
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512])]
    lengths: Vec<usize>,
    /// Timing repetitions per length.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Channel width of the benchmark inputs.
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Optional CSV destination (defaults to stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountParamsArgs {
    /// Named preset, e.g. `base-tree` or `tiny-tree`.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Model configuration as a TOML file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one model-config key, e.g. `--set heads=8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct MakeSynthArgs {
    /// Destination for the labelled corpus.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Number of examples to generate.
    #[arg(long, default_value_t = 1000)]
    size: usize,
    /// Nesting depth of the generated expressions.
    #[arg(long, default_value_t = 2)]
    depth: usize,
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match cli.command {
        Cmd::TreeRoundtrip(a) => cmd_tree_roundtrip(&a),
        Cmd::TreeValidate(a) => cmd_tree_validate(&a),
        Cmd::BpeSplit(a) => cmd_bpe_split(&a),
        Cmd::OracleCheck(a) => cmd_oracle_check(&a, seed),
        Cmd::GradCheck(a) => cmd_grad_check(&a, seed),
        Cmd::Train(a) => cmd_train(&a, seed),
        Cmd::Eval(a) => cmd_eval(&a, seed),
        Cmd::AttnStats(a) => cmd_attn_stats(&a, seed),
        Cmd::Bench(a) => cmd_bench(&a, seed),
        Cmd::CountParams(a) => cmd_count_params(&a),
        Cmd::MakeSynth(a) => cmd_make_synth(&a, seed),
    }
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

/// Prints a `[section]` header followed by `key = value` lines.
fn echo_section(name: &str, pairs: &[(&str, String)]) {
    println!("[{name}]");
    for (key, value) in pairs {
        println!("{key} = {value}");
    }
}

fn show_path(p: &Path) -> String {
    format!("{:?}", p.display().to_string())
}

fn show_opt_path(p: &Option<PathBuf>) -> String {
    match p {
        Some(p) => show_path(p),
        None => "none".to_string(),
    }
}

/// Parses `--set`/`--plan` style overrides onto a serialisable config by
/// round-tripping through a TOML table, so values take the same syntax as
/// the config file. Bare words are retried as quoted strings, which lets
/// `--set task=seq2seq` work without shell quoting.
fn apply_config_overrides(cfg: &ModelConfig, sets: &[String]) -> Result<ModelConfig, Failure> {
    if sets.is_empty() {
        return Ok(cfg.clone());
    }
    let mut table = toml::Table::try_from(cfg)
        .map_err(|e| usage(format!("cannot serialise config: {e}")))?;
    for kv in sets {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got `{kv}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let current = table
            .get(key)
            .ok_or_else(|| usage(format!("unknown config key `{key}`")))?;
        let mut parsed = parse_toml_value(key, value)?;
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (current, &parsed) {
            parsed = toml::Value::Float(*i as f64);
        }
        table.insert(key.to_string(), parsed);
    }
    table
        .try_into()
        .map_err(|e| usage(format!("bad --set value: {e}")))
}

fn parse_toml_value(key: &str, value: &str) -> Result<toml::Value, Failure> {
    let bare = format!("v = {value}").parse::<toml::Table>();
    let table = match bare {
        Ok(t) => t,
        Err(_) => format!("v = {value:?}")
            .parse::<toml::Table>()
            .map_err(|e| usage(format!("cannot parse value for `{key}`: {e}")))?,
    };
    Ok(table["v"].clone())
}

/// A checkpoint deserialised at whichever float width it was written with.
enum AnyModel {
    F32(Box<TreeModel<f32>>, CheckpointInfo),
    F64(Box<TreeModel<f64>>, CheckpointInfo),
}

fn load_any_model(path: &Path) -> Result<AnyModel, Failure> {
    match load_checkpoint::<f32>(path) {
        Ok((m, info)) => Ok(AnyModel::F32(Box::new(m), info)),
        Err(first) => match load_checkpoint::<f64>(path) {
            Ok((m, info)) => Ok(AnyModel::F64(Box::new(m), info)),
            Err(_) => Err(map_model(first)),
        },
    }
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// data tools
// ---------------------------------------------------------------------------

fn cmd_tree_roundtrip(a: &TreeRoundtripArgs) -> Result<(), Failure> {
    echo_section("tree-roundtrip", &[("in", show_path(&a.input))]);
    let trees = read_trees(&a.input).map_err(map_tree)?;
    for (i, tree) in trees.iter().enumerate() {
        let line = tree.render();
        let reparsed = parse_bracketed(&line).map_err(map_tree)?;
        if reparsed != *tree {
            return Err(Failure::Check(format!(
                "tree {}: text round-trip changed the tree",
                i + 1
            )));
        }
        let enc = encode_tree(tree).map_err(map_tree)?;
        let decoded = decode_tree(&enc).map_err(map_tree)?;
        if decoded != *tree {
            return Err(Failure::Check(format!(
                "tree {}: encode/decode round-trip changed the tree",
                i + 1
            )));
        }
    }
    println!("{} trees round-tripped exactly", trees.len());
    Ok(())
}

fn cmd_tree_validate(a: &TreeValidateArgs) -> Result<(), Failure> {
    echo_section("tree-validate", &[("in", show_path(&a.input))]);
    let trees = read_trees(&a.input).map_err(map_tree)?;
    let mut invalid = 0usize;
    for (i, tree) in trees.iter().enumerate() {
        match encode_tree(tree) {
            Ok(enc) => {
                let diags = validate(&enc);
                if !diags.is_empty() {
                    invalid += 1;
                    for d in &diags.items {
                        println!("tree {}: {}", i + 1, d.message);
                    }
                }
            }
            Err(e) => {
                invalid += 1;
                println!("tree {}: {e}", i + 1);
            }
        }
    }
    println!(
        "checked {} trees: {} valid, {} invalid",
        trees.len(),
        trees.len() - invalid,
        invalid
    );
    if invalid > 0 {
        return Err(Failure::Data(format!("{invalid} invalid trees")));
    }
    Ok(())
}

fn cmd_bpe_split(a: &BpeSplitArgs) -> Result<(), Failure> {
    echo_section(
        "bpe-split",
        &[
            ("in", show_path(&a.input)),
            ("codes", show_path(&a.codes)),
            ("out", show_path(&a.out)),
        ],
    );
    let codes = BpeCodes::load(&a.codes).map_err(map_tree)?;
    let trees = read_trees(&a.input).map_err(map_tree)?;
    let split: Vec<ParseTree> = trees
        .iter()
        .map(|t| apply_bpe_split(t, &|tok| codes.split_token(tok)))
        .collect::<Result<_, _>>()
        .map_err(map_tree)?;
    write_trees(&a.out, &split).map_err(map_tree)?;
    println!(
        "split {} trees with {} merge rules",
        split.len(),
        codes.num_merges()
    );
    Ok(())
}

fn cmd_make_synth(a: &MakeSynthArgs, seed: u64) -> Result<(), Failure> {
    echo_section(
        "make-synth",
        &[
            ("out", show_path(&a.out)),
            ("size", a.size.to_string()),
            ("depth", a.depth.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let corpus = make_synthetic_dataset(seed, a.size, a.depth).map_err(map_train)?;
    write_labeled(&a.out, &corpus).map_err(map_tree)?;
    println!("wrote {} examples", corpus.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

fn cmd_oracle_check(a: &OracleCheckArgs, seed: u64) -> Result<(), Failure> {
    echo_section(
        "oracle-check",
        &[
            ("trees", a.trees.to_string()),
            ("max_leaves", a.max_leaves.to_string()),
            ("d", a.d.to_string()),
            ("table_rows", a.table_rows.to_string()),
            ("tol", format!("{:e}", a.tol)),
            ("seed", seed.to_string()),
        ],
    );
    if a.d == 0 || !a.d.is_multiple_of(2) {
        return Err(usage("--d must be even and positive"));
    }
    if a.trees == 0 || a.max_leaves == 0 || a.table_rows == 0 {
        return Err(usage("--trees, --max-leaves, and --table-rows must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = GenConfig {
        max_leaves: a.max_leaves,
        ..GenConfig::default()
    };
    let mut max_diff = 0.0f64;
    for _ in 0..a.trees {
        let tree = random_tree(&mut rng, &gen);
        let enc = encode_tree(&tree).map_err(map_tree)?;
        let branch = BranchSets::from_encoding(&enc).map_err(map_tree)?;
        let n = enc.n_leaves();
        let m = enc.n_nodes();
        let leaves = Tensor::<f64>::rand_uniform(&[n, a.d], -1.0, 1.0, &mut rng);
        let nodes = Tensor::<f64>::rand_uniform(&[m, a.d], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[n], 0.5, 1.5, &mut rng);
        let e_v = Tensor::<f64>::rand_uniform(&[a.table_rows, a.d / 2], -1.0, 1.0, &mut rng);
        let e_h = Tensor::<f64>::rand_uniform(&[a.table_rows, a.d / 2], -1.0, 1.0, &mut rng);
        for hier in [None, Some((&e_v, &e_h))] {
            let got = accum::accumulate(&leaves, &nodes, &branch, hier, &w).map_err(map_tensor)?;
            let want = accum::oracle::accumulate(&enc, &leaves, &nodes, hier, &w);
            max_diff = max_diff.max(max_abs_diff(&got, &want));
        }
    }
    println!(
        "max |kernel - oracle| over {} trees: {:.3e}",
        a.trees, max_diff
    );
    if max_diff >= a.tol {
        return Err(Failure::Check(format!(
            "kernel/oracle gap {max_diff:.3e} is not below {:e}",
            a.tol
        )));
    }
    Ok(())
}

/// Draws a random tree with an exact leaf count by rejection.
fn fixture_tree(seed: u64, leaves: usize) -> Result<ParseTree, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = GenConfig {
        max_leaves: leaves.max(1),
        ..GenConfig::default()
    };
    for _ in 0..100_000 {
        let t = random_tree(&mut rng, &gen);
        if t.num_leaves() == leaves {
            return Ok(t);
        }
    }
    Err(usage(format!("cannot draw a tree with exactly {leaves} leaves")))
}

fn cmd_grad_check(a: &GradCheckArgs, seed: u64) -> Result<(), Failure> {
    echo_section(
        "grad-check",
        &[
            ("d", a.d.to_string()),
            ("leaves", a.leaves.to_string()),
            ("heads", a.heads.to_string()),
            ("task", a.task.clone()),
            ("no_hier", a.no_hier.to_string()),
            ("no_mask", a.no_mask.to_string()),
            ("baseline", a.baseline.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let task = match a.task.as_str() {
        "classify" => TaskKind::Classify,
        "seq2seq" => TaskKind::Seq2seq,
        other => return Err(usage(format!("unknown task `{other}`"))),
    };
    let cfg = ModelConfig {
        task,
        d: a.d,
        d_ffn: 2 * a.d,
        layers_enc: 1,
        layers_dec: if task == TaskKind::Seq2seq { 1 } else { 0 },
        heads: a.heads,
        table_rows: 8,
        classes: 2,
        dropout: 0.0,
        attn_dropout: 0.0,
        use_hier_embeddings: !a.no_hier,
        use_subtree_mask: !a.no_mask,
        tree_mode: !a.baseline,
        seed,
        ..ModelConfig::default()
    };
    let fixture = fixture_tree(seed, a.leaves)?;
    println!("fixture = {}", fixture.render());
    let report = grad_check_model(&cfg, &fixture).map_err(map_train)?;
    println!(
        "max relative error over {} coordinates: {:.3e}",
        report.coords_checked, report.max_rel_err
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval / stats
// ---------------------------------------------------------------------------

fn resolve_model_config(
    preset: &Option<String>,
    config: &Option<PathBuf>,
    sets: &[String],
) -> Result<ModelConfig, Failure> {
    if preset.is_some() && config.is_some() {
        return Err(usage("--preset and --config are mutually exclusive"));
    }
    let base = if let Some(name) = preset {
        ModelConfig::preset(name).ok_or_else(|| usage(format!("unknown preset `{name}`")))?
    } else if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
        ModelConfig::from_toml_str(&text).map_err(map_model)?
    } else {
        ModelConfig::default()
    };
    apply_config_overrides(&base, sets)
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<(), Failure> {
    let mut cfg = resolve_model_config(&a.preset, &a.config, &a.set)?;
    if a.baseline {
        cfg.tree_mode = false;
    }
    if a.no_hier {
        cfg.use_hier_embeddings = false;
    }
    if a.no_mask {
        cfg.use_subtree_mask = false;
    }
    cfg.seed = seed;

    let mut plan = match &a.plan_preset {
        Some(name) => TrainPlan::preset(name)
            .ok_or_else(|| usage(format!("unknown plan preset `{name}`")))?,
        None => TrainPlan::default(),
    };
    for kv in &a.plan {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--plan expects key=value, got `{kv}`")))?;
        plan.apply_kv(key.trim(), value.trim()).map_err(map_train)?;
    }
    plan.phrase_supervision |= a.phrase;
    plan.seed = seed;
    plan.validate().map_err(map_train)?;
    // The trainer installs the plan's dropout rate; echo what will run.
    cfg.dropout = plan.dropout;

    echo_section(
        "train",
        &[
            ("train", show_path(&a.train)),
            ("dev", show_path(&a.dev)),
            ("out", show_opt_path(&a.out)),
            ("report_csv", show_opt_path(&a.report_csv)),
            ("report_log", show_opt_path(&a.report_log)),
            ("seed", seed.to_string()),
        ],
    );
    println!("[model-config]");
    print!("{}", cfg.to_toml_string().map_err(map_model)?);
    println!("[train-plan]");
    print!(
        "{}",
        toml::to_string(&plan).map_err(|e| usage(format!("cannot serialise plan: {e}")))?
    );

    let train_set = read_labeled(&a.train).map_err(map_tree)?;
    let dev_set = read_labeled(&a.dev).map_err(map_tree)?;

    match cfg.float_width {
        arbor_core::model::FloatWidth::F32 => run_train::<f32>(a, &cfg, &plan, &train_set, &dev_set, seed),
        arbor_core::model::FloatWidth::F64 => run_train::<f64>(a, &cfg, &plan, &train_set, &dev_set, seed),
    }
}

fn run_train<E: Element>(
    a: &TrainArgs,
    cfg: &ModelConfig,
    plan: &TrainPlan,
    train_set: &[LabeledTrees],
    dev_set: &[LabeledTrees],
    seed: u64,
) -> Result<(), Failure> {
    let started = Instant::now();
    let (model, labels, report) =
        train_classifier::<E>(cfg, plan, train_set, dev_set).map_err(map_train)?;
    eprintln!("wall {:.1}s", started.elapsed().as_secs_f64());

    let best = report
        .best_dev_accuracy
        .ok_or_else(|| Failure::Data("training produced no evaluation".to_string()))?;
    println!("classes = {}", labels.names().join(","));
    println!("updates = {}", report.losses.len());
    if let Some(loss) = report.losses.last() {
        println!("final_loss = {loss:.6}");
    }
    println!("best_dev_accuracy = {best:.4}");
    println!("best_update = {}", report.best_update);

    if let Some(path) = &a.report_csv {
        write_text(path, &report.to_csv())?;
    }
    if let Some(path) = &a.report_log {
        write_text(path, &report.to_records())?;
    }
    if let Some(path) = &a.out {
        let info = CheckpointInfo {
            step: report.best_update as u64,
            seed,
            metrics: vec![("best_dev_accuracy".to_string(), best)],
        };
        save_checkpoint(path, &model, &info).map_err(map_model)?;
        println!("checkpoint = {}", path.display());
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, _seed: u64) -> Result<(), Failure> {
    echo_section(
        "eval",
        &[("ckpt", show_path(&a.ckpt)), ("in", show_path(&a.input))],
    );
    let corpus = read_labeled(&a.input).map_err(map_tree)?;
    let (accuracy, info) = match load_any_model(&a.ckpt)? {
        AnyModel::F32(model, info) => (eval_model(&model, &corpus)?, info),
        AnyModel::F64(model, info) => (eval_model(&model, &corpus)?, info),
    };
    println!("checkpoint_step = {}", info.step);
    for (name, value) in &info.metrics {
        println!("checkpoint_metric {name} = {value:.4}");
    }
    println!("examples = {}", corpus.len());
    println!("accuracy = {accuracy:.4}");
    Ok(())
}

fn eval_model<E: Element>(
    model: &TreeModel<E>,
    corpus: &[LabeledTrees],
) -> Result<f64, Failure> {
    let labels = LabelMap::from_class_vocab(&model.vocabs.targets).map_err(map_train)?;
    evaluate_accuracy(model, &labels, corpus).map_err(map_train)
}

fn cmd_attn_stats(a: &AttnStatsArgs, _seed: u64) -> Result<(), Failure> {
    echo_section(
        "attn-stats",
        &[
            ("ckpt", show_path(&a.ckpt)),
            ("in", show_path(&a.input)),
            ("out", show_opt_path(&a.out)),
        ],
    );
    let corpus = read_labeled(&a.input).map_err(map_tree)?;
    let mass = match load_any_model(&a.ckpt)? {
        AnyModel::F32(model, _) => attention_mass_stats(&model, &corpus).map_err(map_train)?,
        AnyModel::F64(model, _) => attention_mass_stats(&model, &corpus).map_err(map_train)?,
    };
    println!("query_rows = {}", mass.query_rows);
    println!("node_mass = {:.6}", mass.node_mass);
    println!("leaf_mass = {:.6}", mass.leaf_mass);
    println!("node_count_share = {:.6}", mass.node_count_share);
    println!("leaf_count_share = {:.6}", mass.leaf_count_share);
    if let Some(path) = &a.out {
        let mut csv = String::new();
        let _ = writeln!(
            csv,
            "query_rows,node_mass,leaf_mass,node_count_share,leaf_count_share"
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            mass.query_rows, mass.node_mass, mass.leaf_mass, mass.node_count_share,
            mass.leaf_count_share
        );
        write_text(path, &csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmarks and counting
// ---------------------------------------------------------------------------

fn cmd_bench(a: &BenchArgs, _seed: u64) -> Result<(), Failure> {
    echo_section(
        "bench",
        &[
            (
                "lengths",
                a.lengths
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("repeats", a.repeats.to_string()),
            ("d", a.d.to_string()),
            ("out", show_opt_path(&a.out)),
        ],
    );
    let report = bench_accumulation(&a.lengths, a.repeats, a.d).map_err(map_train)?;
    let csv = report.to_csv();
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!(
        "fit: ops ~ c * n * log2(n) with c = {:.2}, max relative residual = {:.4}",
        report.c_fit, report.max_residual
    );
    Ok(())
}

fn cmd_count_params(a: &CountParamsArgs) -> Result<(), Failure> {
    echo_section(
        "count-params",
        &[
            (
                "preset",
                a.preset.clone().unwrap_or_else(|| "none".to_string()),
            ),
            ("config", show_opt_path(&a.config)),
        ],
    );
    let cfg = resolve_model_config(&a.preset, &a.config, &a.set)?;
    let count = count_parameters(&cfg).map_err(map_model)?;
    print!("{}", count.render());
    Ok(())
}
