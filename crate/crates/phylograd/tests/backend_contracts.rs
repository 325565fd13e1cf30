//! Backend execution contracts: worker-count determinism, plan-shape and
//! staging laws, transpose correctness, and scratch budgeting.

use phylograd::backend::{
    plan_launch, reduce_deterministic, run_transpose_all, Backend, BackendConfig, Grid, KernelKind,
    LaunchDims, PlanError,
};
use phylograd::core::{full_gradient, EvalOptions};
use phylograd::model::{discrete_gamma, ModelInstance, RateCategories, TransitionMatrixSet};
use phylograd::sim;
use phylograd::treedata::compress_patterns;

fn codon_fixture(
    seed: u64,
    tips: usize,
    sites: usize,
) -> (phylograd::Phylogeny, ModelInstance, phylograd::PatternizedAlignment) {
    let mut rng = sim::seeded_rng(seed);
    let tree = sim::random_tree(&mut rng, tips, (0.05, 0.4));
    let model = ModelInstance::new(sim::random_codon_m0(&mut rng), discrete_gamma(0.7, 2).unwrap());
    let alignment = compress_patterns(&sim::simulate_alignment(&mut rng, &tree, &model, sites)).unwrap();
    (tree, model, alignment)
}

#[test]
fn serial_and_parallel_backends_agree_bitwise() {
    let (tree, model, alignment) = codon_fixture(7, 6, 40);
    let serial = Backend::serial();
    let baseline = full_gradient(&tree, &model, &alignment, &serial, EvalOptions::default()).unwrap();
    for workers in [1, 2, 4, 8] {
        let parallel = Backend::parallel(workers).unwrap();
        let got = full_gradient(&tree, &model, &alignment, &parallel, EvalOptions::default()).unwrap();
        assert_eq!(
            got.log_likelihood.to_bits(),
            baseline.log_likelihood.to_bits(),
            "log-likelihood differs at {workers} workers"
        );
        for (i, (a, b)) in got.per_branch.iter().zip(&baseline.per_branch).enumerate() {
            assert_eq!(a.to_bits(), b.to_bits(), "branch {i} differs at {workers} workers");
        }
    }
}

#[test]
fn repeated_serial_runs_are_bit_identical() {
    let (tree, model, alignment) = codon_fixture(8, 5, 30);
    let backend = Backend::serial();
    let first = full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
    for _ in 0..4 {
        let again =
            full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
        assert_eq!(first.log_likelihood.to_bits(), again.log_likelihood.to_bits());
        for (a, b) in first.per_branch.iter().zip(&again.per_branch) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn single_column_degenerate_grid_is_correct() {
    // C = 1 with S = 61: one block per (rate, node); results must still
    // match the quadratic oracle.
    let (tree, model, alignment) = {
        let mut rng = sim::seeded_rng(9);
        let tree = sim::random_tree(&mut rng, 4, (0.1, 0.3));
        let model = ModelInstance::new(sim::random_codon_m0(&mut rng), RateCategories::single());
        let alignment =
            compress_patterns(&sim::simulate_alignment(&mut rng, &tree, &model, 1)).unwrap();
        (tree, model, alignment)
    };
    assert_eq!(alignment.pattern_count(), 1);
    let backend = Backend::parallel(4).unwrap();
    let report = full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
    let oracle = phylograd::core::oracle_gradient_quadratic(&tree, &model, &alignment).unwrap();
    for (a, b) in report.per_branch.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    }
}

#[test]
fn transpose_involution_and_identity() {
    let mut rng = sim::seeded_rng(15);
    let model = ModelInstance::new(sim::random_codon_m0(&mut rng), RateCategories::single());
    let tree = sim::random_tree(&mut rng, 3, (0.1, 0.5));
    let matrices = TransitionMatrixSet::build(&model, &tree.effective_lengths()).unwrap();
    let backend = Backend::serial();
    let dims = LaunchDims {
        state_count: 61,
        s_pad: 64,
        patterns: 1,
        rates: 1,
        branch_nodes: tree.branch_count(),
    };
    let plan = backend.plan(KernelKind::MatrixTranspose, &dims).unwrap();

    let mut once = TransitionMatrixSet::zeroed(61, 64, tree.branch_count(), 1);
    run_transpose_all(&backend, &plan, 64, matrices.data(), once.data_mut());
    // Serial element-swap oracle.
    for b in 0..tree.branch_count() {
        let src = matrices.matrix(b, 0);
        let dst = once.matrix(b, 0);
        for col in 0..64 {
            for row in 0..64 {
                assert_eq!(dst[col * 64 + row], src[row * 64 + col]);
            }
        }
    }
    // Involution: transposing twice restores the input exactly.
    let mut twice = TransitionMatrixSet::zeroed(61, 64, tree.branch_count(), 1);
    run_transpose_all(&backend, &plan, 64, once.data(), twice.data_mut());
    assert_eq!(twice.data(), matrices.data());

    // Identity matrix stays the identity.
    let mut ident = TransitionMatrixSet::zeroed(61, 64, 1, 1);
    for i in 0..61 {
        ident.data_mut()[i * 64 + i] = 1.0;
    }
    let mut out = TransitionMatrixSet::zeroed(61, 64, 1, 1);
    let dims1 = LaunchDims { branch_nodes: 1, ..dims };
    let plan1 = backend.plan(KernelKind::MatrixTranspose, &dims1).unwrap();
    run_transpose_all(&backend, &plan1, 64, ident.data(), out.data_mut());
    assert_eq!(out.data(), ident.data());
}

#[test]
fn plan_shape_laws() {
    let config = BackendConfig::serial();
    let dims = LaunchDims { state_count: 61, s_pad: 64, patterns: 777, rates: 4, branch_nodes: 30 };
    let constants = config.constants_for(61);
    assert_eq!(constants.cbs, 8);
    let pre = plan_launch(KernelKind::PreOrderPartials, &dims, constants, 48 * 1024).unwrap();
    let col_blocks = 777usize.div_ceil(8);
    assert_eq!(pre.grid, Grid::RateColumns { rates: 4, col_blocks });
    assert_eq!(pre.simulated_threads(), 4 * col_blocks * 64 * 8);
    let gradient = plan_launch(KernelKind::Gradient, &dims, constants, 48 * 1024).unwrap();
    assert_eq!(gradient.simulated_threads(), 30 * col_blocks * 64 * 8);
    // Nucleotide constants: CBS 16, 4 x 16 block threads.
    let nuc_dims = LaunchDims { state_count: 4, s_pad: 4, patterns: 100, rates: 1, branch_nodes: 6 };
    let nuc = plan_launch(
        KernelKind::PostOrderPartials,
        &nuc_dims,
        config.constants_for(4),
        48 * 1024,
    )
    .unwrap();
    assert_eq!(nuc.block_shape, (4, 16));
}

#[test]
fn staging_law_counts_matrix_entries_per_inner_chunk() {
    // Per inner PBS iteration a block stages exactly s_pad x PBS matrix
    // entries; cumulative counters must match the closed form.
    let (tree, model, alignment) = codon_fixture(22, 4, 20);
    let backend = Backend::serial();
    backend.reset_instrumentation();
    let _ = full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
    let stats = backend.staging_stats(KernelKind::PreOrderPartials);
    let s_pad = model.padded_state_count() as u64;
    let pbs = backend.config().pbs as u64;
    // Every staged chunk in the pre-order kernel covers at most PBS states;
    // with S = 61 and PBS = 8, chunks are 8,8,...,8,5 per phase. The exact
    // law: staged matrix entries = s_pad * (sum of chunk lengths); chunk
    // count * PBS bounds it from above.
    assert!(stats.inner_chunks > 0);
    assert!(stats.staged_matrix_entries <= stats.inner_chunks * s_pad * pbs);
    // Chunk lengths never exceed PBS and fill full PBS except the tail.
    let full_chunks_entries = stats.inner_chunks * s_pad * pbs;
    let slack = full_chunks_entries - stats.staged_matrix_entries;
    // The tail chunk of 61 states staged 5 of 8 columns: slack is a
    // multiple of s_pad * 3 per two-phase node visit.
    assert_eq!(slack % (s_pad * 3), 0, "unexpected staging slack {slack}");

    // With a state count that divides PBS exactly, the law is exact.
    let mut rng = sim::seeded_rng(23);
    let tree = sim::random_tree(&mut rng, 4, (0.1, 0.3));
    let gtr = ModelInstance::new(sim::random_gtr(&mut rng), RateCategories::single());
    let alignment = compress_patterns(&sim::simulate_alignment(&mut rng, &tree, &gtr, 32)).unwrap();
    backend.reset_instrumentation();
    let _ = full_gradient(&tree, &gtr, &alignment, &backend, EvalOptions::default()).unwrap();
    let stats = backend.staging_stats(KernelKind::PostOrderPartials);
    // S = s_pad = 4 < PBS: each phase is one chunk of 4 columns.
    assert_eq!(stats.staged_matrix_entries, stats.inner_chunks * 4 * 4);
}

#[test]
fn staging_budget_violations_fail_at_plan_time() {
    let mut config = BackendConfig::serial();
    config.staging_budget = 2048;
    let backend = Backend::new(config).unwrap();
    let dims = LaunchDims { state_count: 61, s_pad: 64, patterns: 100, rates: 1, branch_nodes: 6 };
    match backend.plan(KernelKind::PreOrderPartials, &dims) {
        Err(PlanError::StagingBudget { needed, budget, .. }) => {
            assert!(needed > budget);
        }
        other => panic!("expected staging budget error, got {other:?}"),
    }
}

#[test]
fn budget_is_enforced_for_defaults() {
    // Default 48 KB covers the reference block shapes: codon (64 x 8 tiles)
    // and nucleotide (4 x 16).
    let config = BackendConfig::serial();
    let backend = Backend::new(config).unwrap();
    for (s, s_pad) in [(4usize, 4usize), (61, 64), (122, 128)] {
        let dims = LaunchDims { state_count: s, s_pad, patterns: 500, rates: 4, branch_nodes: 20 };
        for kernel in [
            KernelKind::PostOrderPartials,
            KernelKind::PreOrderPartials,
            KernelKind::Gradient,
            KernelKind::MatrixTranspose,
            KernelKind::NodeSiteReduction,
        ] {
            let plan = backend.plan(kernel, &dims).unwrap();
            assert!(plan.staged_bytes <= plan.staging_budget);
        }
    }
}

#[test]
fn reduce_deterministic_contract() {
    assert_eq!(reduce_deterministic(&[3.25]), 3.25);
    assert_eq!(reduce_deterministic(&vec![1.0; 128]), 128.0);
    // Padding with zeros keeps block shape stable under any K.
    let values: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
    let a = reduce_deterministic(&values);
    let serial: f64 = values.iter().sum();
    assert!((a - serial).abs() < 1e-12 * serial.abs().max(1.0));
}

#[test]
fn timing_rows_track_kernel_launches() {
    let (tree, model, alignment) = codon_fixture(31, 5, 25);
    let backend = Backend::serial();
    let report = full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
    for name in [
        "postOrderPartials",
        "preOrderPartials",
        "gradient",
        "matrixTranspose",
        "nodeSiteReduction",
    ] {
        let row = report.timings.kernel(name).unwrap_or_else(|| panic!("missing row {name}"));
        assert!(row.calls > 0, "kernel {name} has zero calls");
    }
    // Pre-order visits every non-root node; post-order only internals.
    let pre = report.timings.kernel("preOrderPartials").unwrap();
    let post = report.timings.kernel("postOrderPartials").unwrap();
    assert_eq!(pre.calls, tree.branch_count() as u64);
    assert_eq!(post.calls, (tree.tip_count() - 1) as u64);

    // Nucleotide models use the in-register transpose: no transpose rows.
    let mut rng = sim::seeded_rng(32);
    let tree = sim::random_tree(&mut rng, 5, (0.1, 0.4));
    let gtr = ModelInstance::new(sim::random_gtr(&mut rng), RateCategories::single());
    let alignment = compress_patterns(&sim::simulate_alignment(&mut rng, &tree, &gtr, 20)).unwrap();
    let report = full_gradient(&tree, &gtr, &alignment, &backend, EvalOptions::default()).unwrap();
    assert!(report.timings.kernel("matrixTranspose").is_none());
}

#[test]
fn layout_round_trip_is_identity() {
    // Pack a padded column-major slab and unpack it: the identity, with
    // the state index fastest within each pattern lane.
    let (s, s_pad, patterns, rates) = (61usize, 64usize, 7usize, 2usize);
    let mut rng = sim::seeded_rng(44);
    use rand::Rng as _;
    let reference: Vec<f64> =
        (0..rates * patterns * s).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut slab = vec![0.0; rates * patterns * s_pad];
    for r in 0..rates {
        for c in 0..patterns {
            for state in 0..s {
                slab[(r * patterns + c) * s_pad + state] =
                    reference[(r * patterns + c) * s + state];
            }
        }
    }
    let mut unpacked = vec![0.0; rates * patterns * s];
    for r in 0..rates {
        for c in 0..patterns {
            for state in 0..s {
                unpacked[(r * patterns + c) * s + state] =
                    slab[(r * patterns + c) * s_pad + state];
            }
        }
    }
    assert_eq!(unpacked, reference);
    // Padded lanes are untouched zeros.
    for r in 0..rates {
        for c in 0..patterns {
            for state in s..s_pad {
                assert_eq!(slab[(r * patterns + c) * s_pad + state], 0.0);
            }
        }
    }
}

#[test]
fn padded_partial_lanes_stay_zero_through_traversals() {
    let (tree, model, alignment) = codon_fixture(55, 5, 12);
    let backend = Backend::serial();
    let mut ev = phylograd::Evaluator::new(
        &tree,
        &model,
        &alignment,
        &backend,
        EvalOptions::default(),
    )
    .unwrap();
    ev.update_matrices().unwrap();
    ev.postorder().unwrap();
    ev.preorder().unwrap();
    let (s, s_pad) = (model.state_count(), model.padded_state_count());
    for node in tree.postorder_internals() {
        for r in 0..2 {
            for c in 0..alignment.pattern_count() {
                for lane in s..s_pad {
                    assert_eq!(ev.buffers().post_entry(node, r, c, lane), 0.0);
                }
            }
        }
    }
    for node in 0..tree.node_count() {
        for r in 0..2 {
            for c in 0..alignment.pattern_count() {
                for lane in s..s_pad {
                    assert_eq!(ev.buffers().pre_entry(node, r, c, lane), 0.0);
                }
            }
        }
    }
}

#[test]
fn tile_constants_default_to_reference_values() {
    let config = BackendConfig::default();
    assert_eq!(config.cbs_nucleotide, 16);
    assert_eq!(config.cbs_large_state, 8);
    assert_eq!(config.pbs, 8);
    assert_eq!(config.mbs, 16);
    assert_eq!(config.columns_per_thread_nucleotide, 4);
    assert_eq!(config.staging_budget, 48 * 1024);
    let t = config.constants_for(61);
    assert_eq!((t.cbs, t.pbs, t.mbs), (8, 8, 16));
    assert_eq!(config.constants_for(4).cbs, 16);
}

#[test]
fn tile_sizes_do_not_change_results() {
    // CBS/PBS choices move block boundaries but never the accumulation
    // order, so results are bit-identical across tile shapes.
    let (tree, model, alignment) = codon_fixture(77, 5, 33);
    let reference = {
        let backend = Backend::serial();
        full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap()
    };
    for (cbs, pbs) in [(2usize, 3usize), (5, 8), (8, 16), (3, 61)] {
        let mut config = BackendConfig::serial();
        config.cbs_nucleotide = cbs;
        config.cbs_large_state = cbs;
        config.pbs = pbs;
        let backend = Backend::new(config).unwrap();
        let run = full_gradient(&tree, &model, &alignment, &backend, EvalOptions::default()).unwrap();
        assert_eq!(
            run.log_likelihood.to_bits(),
            reference.log_likelihood.to_bits(),
            "cbs={cbs} pbs={pbs}"
        );
        for (a, b) in run.per_branch.iter().zip(&reference.per_branch) {
            assert_eq!(a.to_bits(), b.to_bits(), "cbs={cbs} pbs={pbs}");
        }
    }
}
