//! Cross-checks the accumulation kernels against set-enumeration oracles,
//! verifies their gradients by central differences, and pins down their
//! analytic operation counts.

use arbor_core::accum::{self, oracle, BranchSets};
use arbor_core::tensor::{counters, FdConfig, ParamStore, Tensor};
use arbor_core::treebank::{balanced_binary_tree, encode_tree, random_tree, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

struct Fixture {
    enc: arbor_core::treebank::TreeEncoding,
    branch: BranchSets,
    lv: Tensor<f64>,
    nv: Tensor<f64>,
    ev: Tensor<f64>,
    eh: Tensor<f64>,
    w: Tensor<f64>,
}

/// Random tree plus random inputs, fully determined by `seed`.
fn fixture(seed: u64, d: usize, table_rows: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = random_tree(&mut rng, &GenConfig::default());
    let enc = encode_tree(&tree).unwrap();
    let branch = BranchSets::from_encoding(&enc).unwrap();
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    Fixture {
        lv: Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng),
        nv: Tensor::rand_uniform(&[m, d], -1.0, 1.0, &mut rng),
        ev: Tensor::rand_uniform(&[table_rows, d / 2], -1.0, 1.0, &mut rng),
        eh: Tensor::rand_uniform(&[table_rows, d / 2], -1.0, 1.0, &mut rng),
        w: Tensor::rand_uniform(&[n], 0.1, 1.0, &mut rng),
        enc,
        branch,
    }
}

// ---------------------------------------------------------------------------
// kernels agree with the set-enumeration oracles
// ---------------------------------------------------------------------------

#[test]
fn every_stage_matches_its_oracle_on_random_trees() {
    for seed in 0..200u64 {
        let f = fixture(seed, 6, 4);

        let interp = accum::interpolate(&f.lv, &f.nv, &f.branch).unwrap();
        let o_interp = oracle::interpolate(&f.enc, &f.lv, &f.nv);
        assert_eq!(
            interp.values.max_abs_diff(&o_interp).unwrap(),
            0.0,
            "interpolation placement differs (seed {seed})"
        );

        let hier = accum::build_hier_embeddings(&f.branch, &f.ev, &f.eh).unwrap();
        let o_hier = oracle::hier_embeddings(&f.enc, &f.ev, &f.eh);
        assert_eq!(
            hier.max_abs_diff(&o_hier).unwrap(),
            0.0,
            "hierarchical embedding placement differs (seed {seed})"
        );

        let fused = accum::add_hier_embeddings(&interp, &f.branch, &f.ev, &f.eh).unwrap();
        let s_hat = accum::upward_cumavg(&fused, &f.branch).unwrap();
        let o_dense = o_interp.add(&o_hier).unwrap();
        let o_s_hat = oracle::upward_cumavg(&f.enc, &o_dense);
        let diff = s_hat.max_abs_diff(&o_s_hat).unwrap();
        assert!(diff < 1e-12, "cumulative averages differ by {diff} (seed {seed})");

        let agg = accum::weighted_aggregate(&s_hat, &f.w, &f.branch).unwrap();
        let o_agg = oracle::weighted_aggregate(&f.enc, &o_s_hat, &f.w);
        let diff = agg.max_abs_diff(&o_agg).unwrap();
        assert!(diff < 1e-12, "aggregates differ by {diff} (seed {seed})");
    }
}

#[test]
fn full_accumulation_matches_oracle_with_and_without_embeddings() {
    for seed in 200..260u64 {
        let f = fixture(seed, 8, 3);

        let with = accum::accumulate(&f.lv, &f.nv, &f.branch, Some((&f.ev, &f.eh)), &f.w).unwrap();
        let o_with = oracle::accumulate(&f.enc, &f.lv, &f.nv, Some((&f.ev, &f.eh)), &f.w);
        let diff = with.max_abs_diff(&o_with).unwrap();
        assert!(diff < 1e-12, "accumulation differs by {diff} (seed {seed})");

        let without = accum::accumulate(&f.lv, &f.nv, &f.branch, None, &f.w).unwrap();
        let o_without = oracle::accumulate(&f.enc, &f.lv, &f.nv, None, &f.w);
        let diff = without.max_abs_diff(&o_without).unwrap();
        assert!(diff < 1e-12, "plain accumulation differs by {diff} (seed {seed})");
    }
}

// ---------------------------------------------------------------------------
// gradients agree with central differences
// ---------------------------------------------------------------------------

/// Loss shaped to break every symmetry: a fixed random projection of the
/// accumulated values plus a quadratic term.
fn accumulation_loss(
    params: &ParamStore<f64>,
    branch: &BranchSets,
    probe: &Tensor<f64>,
) -> arbor_core::tensor::Result<Tensor<f64>> {
    let out = accum::accumulate(
        params.require("leaves")?,
        params.require("nodes")?,
        branch,
        Some((params.require("table.v")?, params.require("table.h")?)),
        params.require("weights")?,
    )?;
    let linear = out.mul(probe)?.sum_all();
    let quadratic = out.mul(&out)?.sum_all().scale(0.5);
    linear.add(&quadratic)
}

#[test]
fn accumulation_gradients_match_finite_differences() {
    let f = fixture(77, 6, 4);
    let mut params = ParamStore::new();
    params.insert("leaves", f.lv.clone()).unwrap();
    params.insert("nodes", f.nv.clone()).unwrap();
    params.insert("table.v", f.ev.clone()).unwrap();
    params.insert("table.h", f.eh.clone()).unwrap();
    params.insert("weights", f.w.clone()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let probe = Tensor::rand_uniform(&[f.branch.n_nodes(), 6], -1.0, 1.0, &mut rng);

    let report = arbor_core::tensor::finite_diff_check(
        &params,
        |p| accumulation_loss(p, &f.branch, &probe),
        &FdConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "finite differences disagree:\n{report}");
}

#[test]
fn standalone_embedding_builder_gradients_match_finite_differences() {
    let f = fixture(78, 4, 3);
    let mut params = ParamStore::new();
    params.insert("table.v", f.ev.clone()).unwrap();
    params.insert("table.h", f.eh.clone()).unwrap();

    let rows = f.branch.n_nodes() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(4321);
    let probe = Tensor::rand_uniform(&[rows, f.branch.n_leaves(), 4], -1.0, 1.0, &mut rng);

    let report = arbor_core::tensor::finite_diff_check(
        &params,
        |p| -> Result<_, arbor_core::tensor::TensorError> {
            let e =
                accum::build_hier_embeddings(&f.branch, p.require("table.v")?, p.require("table.h")?)?;
            Ok(e.mul(&probe)?.sum_all())
        },
        &FdConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "finite differences disagree:\n{report}");
}

// ---------------------------------------------------------------------------
// operation counts are exactly the analytic formulas
// ---------------------------------------------------------------------------

#[test]
fn forward_accumulation_cost_is_linear_in_occupied_cells() {
    // A balanced binary tree over n leaves occupies exactly n·log2(n)
    // cells (each leaf sits under log2(n) nodes) and has n-1 nodes.
    let n = 16usize;
    let d = 6usize;
    let tree = balanced_binary_tree(n).unwrap();
    let enc = encode_tree(&tree).unwrap();
    let branch = BranchSets::from_encoding(&enc).unwrap();
    let occupied = n * 4;
    assert_eq!(branch.occupied_cells(), occupied);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lv = Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let nv = Tensor::rand_uniform(&[n - 1, d], -1.0, 1.0, &mut rng);
    let ev = Tensor::rand_uniform(&[4, d / 2], -1.0, 1.0, &mut rng);
    let eh = Tensor::rand_uniform(&[4, d / 2], -1.0, 1.0, &mut rng);
    let w = Tensor::full(&[n], 1.0);

    // Placement alone is free: interpolation moves values, it computes
    // nothing.
    counters::reset();
    let interp = accum::interpolate(&lv, &nv, &branch).unwrap();
    assert_eq!(counters::snapshot().total(), 0);

    // Embedding add: 1 op per occupied coordinate. Averaging: 2 (sum and
    // divide). Aggregation: 2 per occupied coordinate plus the final 1/|span|
    // scale per node coordinate.
    counters::reset();
    let fused = accum::add_hier_embeddings(&interp, &branch, &ev, &eh).unwrap();
    assert_eq!(counters::snapshot().macs as usize, occupied * d);

    counters::reset();
    let s_hat = accum::upward_cumavg(&fused, &branch).unwrap();
    assert_eq!(counters::snapshot().macs as usize, 2 * occupied * d);

    counters::reset();
    let _ = accum::weighted_aggregate(&s_hat, &w, &branch).unwrap();
    assert_eq!(
        counters::snapshot().macs as usize,
        2 * occupied * d + (n - 1) * d
    );
}

#[test]
fn doubling_the_leaves_of_a_balanced_tree_scales_cost_by_n_log_n() {
    let d = 8usize;
    let cost = |n: usize| -> u64 {
        let tree = balanced_binary_tree(n).unwrap();
        let enc = encode_tree(&tree).unwrap();
        let branch = BranchSets::from_encoding(&enc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lv = Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
        let nv = Tensor::rand_uniform(&[n - 1, d], -1.0, 1.0, &mut rng);
        let ev = Tensor::rand_uniform(&[8, d / 2], -1.0, 1.0, &mut rng);
        let eh = Tensor::rand_uniform(&[8, d / 2], -1.0, 1.0, &mut rng);
        let w = Tensor::full(&[n], 1.0);
        counters::reset();
        let _ = accum::accumulate(&lv, &nv, &branch, Some((&ev, &eh)), &w).unwrap();
        counters::snapshot().total()
    };

    // Op totals grow as n·log2(n), so doubling n multiplies cost by
    // 2·(lg n + 1)/lg n — strictly between 2 and 2.5 for n >= 256.
    for n in [256usize, 512] {
        let ratio = cost(2 * n) as f64 / cost(n) as f64;
        assert!(
            (2.0..=2.5).contains(&ratio),
            "cost ratio {ratio} for n {n} outside [2.0, 2.5]"
        );
    }
}
