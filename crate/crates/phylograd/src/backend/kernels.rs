//! Block-tiled kernel bodies.
//!
//! Every kernel follows the same discipline: a block stages the partial
//! tiles and matrix columns it needs into workspace scratch, computes over
//! (state, column) lanes, and writes one disjoint output slice. Matrix
//! reads stage whole columns, which the column-major flattening makes
//! contiguous.

use crate::treedata::TipCode;

use super::plan::{ExecutionPlan, LaunchDims, REDUCTION_BLOCK};
use super::reduce::{block_tree_sum, pairwise_tree_sum};
use super::workspace::{
    stage_matrix_columns, stage_partials_from_slab, stage_partials_from_tips,
};
use super::{Backend, KernelKind};

/// Where a node's post-order partials come from: a computed slab for
/// internal nodes, or compressed tip codes expanded on the fly.
#[derive(Clone, Copy)]
pub enum NodeSource<'a> {
    Slab(&'a [f64]),
    Tips(&'a [TipCode]),
}

impl<'a> NodeSource<'a> {
    fn stage(
        &self,
        tile: &mut Vec<f64>,
        ws_stats: &mut super::workspace::StagingStats,
        dims: &LaunchDims,
        rate: usize,
        col_start: usize,
        col_count: usize,
    ) {
        match self {
            NodeSource::Slab(slab) => stage_partials_from_slab(
                tile,
                ws_stats,
                slab,
                dims.s_pad,
                dims.patterns,
                rate,
                col_start,
                col_count,
            ),
            NodeSource::Tips(codes) => {
                stage_partials_from_tips(tile, ws_stats, codes, dims.s_pad, col_start, col_count)
            }
        }
    }
}

/// The transition matrix feeding the second pre-order phase: an explicitly
/// transposed matrix for large state spaces, or the original matrix read
/// with swapped indices when it fits in registers (S <= 4).
#[derive(Clone, Copy)]
pub enum MatrixView<'a> {
    Transposed(&'a [f64]),
    InRegister(&'a [f64]),
}

fn for_each_block_of_slab<'a>(
    out: &'a mut [f64],
    dims: &LaunchDims,
    cbs: usize,
) -> Vec<(usize, usize, &'a mut [f64])> {
    // Rate slabs are contiguous, and column blocks are contiguous within
    // them, so the whole launch is a flat partition of `out`.
    let mut tasks = Vec::new();
    for (rate, rate_slab) in out.chunks_exact_mut(dims.patterns * dims.s_pad).enumerate() {
        let mut col_start = 0;
        for chunk in rate_slab.chunks_mut(cbs * dims.s_pad) {
            let cols = chunk.len() / dims.s_pad;
            tasks.push((rate, col_start, chunk));
            col_start += cols;
        }
    }
    tasks
}

/// phi[c*s_pad + s] += sum over staged columns t of M[s, t] * p[c*s_pad + t].
fn accumulate_matrix_product(
    phi: &mut [f64],
    matrix_tile: &[f64],
    partial_tile: &[f64],
    s_pad: usize,
    cols: usize,
    t0: usize,
    t_len: usize,
) {
    for c in 0..cols {
        let lane = &mut phi[c * s_pad..(c + 1) * s_pad];
        let p = &partial_tile[c * s_pad..(c + 1) * s_pad];
        for tt in 0..t_len {
            let v = p[t0 + tt];
            if v == 0.0 {
                continue;
            }
            let col = &matrix_tile[tt * s_pad..(tt + 1) * s_pad];
            for (acc, &m) in lane.iter_mut().zip(col) {
                *acc += m * v;
            }
        }
    }
}

/// Post-order pruning step for one internal node: combines the two child
/// partials through their branch matrices,
/// out[c, s] = (sum_t P_left[s,t] p_left[c,t]) * (sum_t P_right[s,t] p_right[c,t]).
#[allow(clippy::too_many_arguments)]
pub fn run_post_order(
    backend: &Backend,
    plan: &ExecutionPlan,
    dims: &LaunchDims,
    left: NodeSource<'_>,
    left_matrices: &[f64],
    right: NodeSource<'_>,
    right_matrices: &[f64],
    out: &mut [f64],
) {
    let s_pad = dims.s_pad;
    let s = dims.state_count;
    let pbs = plan.constants.pbs;
    let mat_len = s_pad * s_pad;
    let tasks = for_each_block_of_slab(out, dims, plan.constants.cbs);
    backend.run_tasks(KernelKind::PostOrderPartials, tasks, |ws, (rate, col_start, chunk)| {
        let cols = chunk.len() / s_pad;
        left.stage(&mut ws.partial_tile_a, &mut ws.stats, dims, rate, col_start, cols);
        right.stage(&mut ws.partial_tile_b, &mut ws.stats, dims, rate, col_start, cols);
        let left_matrix = &left_matrices[rate * mat_len..(rate + 1) * mat_len];
        let right_matrix = &right_matrices[rate * mat_len..(rate + 1) * mat_len];

        ws.phi.clear();
        ws.phi.resize(cols * s_pad, 0.0);
        ws.omega.clear();
        ws.omega.resize(cols * s_pad, 0.0);
        // Two serial matrix phases share one staged tile.
        let mut t0 = 0;
        while t0 < s {
            let t_len = pbs.min(s - t0);
            stage_matrix_columns(&mut ws.matrix_tile, &mut ws.stats, left_matrix, s_pad, t0, t_len);
            accumulate_matrix_product(&mut ws.phi, &ws.matrix_tile, &ws.partial_tile_a, s_pad, cols, t0, t_len);
            t0 += t_len;
        }
        let mut t0 = 0;
        while t0 < s {
            let t_len = pbs.min(s - t0);
            stage_matrix_columns(&mut ws.matrix_tile, &mut ws.stats, right_matrix, s_pad, t0, t_len);
            accumulate_matrix_product(&mut ws.omega, &ws.matrix_tile, &ws.partial_tile_b, s_pad, cols, t0, t_len);
            t0 += t_len;
        }
        for ((dst, &a), &b) in chunk.iter_mut().zip(&ws.phi).zip(&ws.omega) {
            *dst = a * b;
        }
    });
}

/// Pre-order step for one non-root node i with parent k and sibling j:
/// out = P(b_i)' { q_k o [P(b_j) p_j] }, split into two serial phases.
#[allow(clippy::too_many_arguments)]
pub fn run_pre_order(
    backend: &Backend,
    plan: &ExecutionPlan,
    dims: &LaunchDims,
    parent_q: &[f64],
    sibling: NodeSource<'_>,
    sibling_matrices: &[f64],
    self_matrices: MatrixView<'_>,
    out: &mut [f64],
) {
    let s_pad = dims.s_pad;
    let s = dims.state_count;
    let pbs = plan.constants.pbs;
    let mat_len = s_pad * s_pad;
    let tasks = for_each_block_of_slab(out, dims, plan.constants.cbs);
    backend.run_tasks(KernelKind::PreOrderPartials, tasks, |ws, (rate, col_start, chunk)| {
        let cols = chunk.len() / s_pad;
        // tile_a <- q_k, tile_b <- p_j for this column block.
        stage_partials_from_slab(
            &mut ws.partial_tile_a,
            &mut ws.stats,
            parent_q,
            s_pad,
            dims.patterns,
            rate,
            col_start,
            cols,
        );
        sibling.stage(&mut ws.partial_tile_b, &mut ws.stats, dims, rate, col_start, cols);

        // Phase 1: phi <- P(b_j) p_j, then the component-wise product with q_k.
        ws.phi.clear();
        ws.phi.resize(cols * s_pad, 0.0);
        let sibling_matrix = &sibling_matrices[rate * mat_len..(rate + 1) * mat_len];
        let mut t0 = 0;
        while t0 < s {
            let t_len = pbs.min(s - t0);
            stage_matrix_columns(&mut ws.matrix_tile, &mut ws.stats, sibling_matrix, s_pad, t0, t_len);
            accumulate_matrix_product(&mut ws.phi, &ws.matrix_tile, &ws.partial_tile_b, s_pad, cols, t0, t_len);
            t0 += t_len;
        }
        for (u, &qk) in ws.phi.iter_mut().zip(ws.partial_tile_a.iter()) {
            *u *= qk;
        }

        // Phase 2: out <- P(b_i)' u.
        ws.omega.clear();
        ws.omega.resize(cols * s_pad, 0.0);
        match self_matrices {
            MatrixView::Transposed(t_mats) => {
                let t_matrix = &t_mats[rate * mat_len..(rate + 1) * mat_len];
                let mut t0 = 0;
                while t0 < s {
                    let t_len = pbs.min(s - t0);
                    stage_matrix_columns(&mut ws.matrix_tile, &mut ws.stats, t_matrix, s_pad, t0, t_len);
                    accumulate_matrix_product(&mut ws.omega, &ws.matrix_tile, &ws.phi, s_pad, cols, t0, t_len);
                    t0 += t_len;
                }
            }
            MatrixView::InRegister(mats) => {
                // Small state space: transpose while reading, no staged tile.
                let matrix = &mats[rate * mat_len..(rate + 1) * mat_len];
                for c in 0..cols {
                    let u = &ws.phi[c * s_pad..(c + 1) * s_pad];
                    let lane = &mut ws.omega[c * s_pad..(c + 1) * s_pad];
                    for (state, acc) in lane.iter_mut().take(s).enumerate() {
                        // Column `state` of P holds P[t, state] contiguously.
                        let col = &matrix[state * s_pad..state * s_pad + s];
                        *acc = col.iter().zip(u).map(|(&m, &uv)| m * uv).sum();
                    }
                }
            }
        }
        chunk.copy_from_slice(&ws.omega);
    });
}

/// Inputs of the fused gradient launch covering all branch nodes.
pub struct GradientInputs<'a> {
    /// Post-order source per branch node (tips expand on the fly).
    pub post_sources: Vec<NodeSource<'a>>,
    /// Pre-order slab per branch node.
    pub pre_slabs: Vec<&'a [f64]>,
    /// Transposed generator Q', padded column-major, shared by all rates.
    pub rate_matrix_transposed: &'a [f64],
    pub gamma_rates: &'a [f64],
    pub gamma_weights: &'a [f64],
}

/// Column-specific gradient contributions for every branch node:
/// out[i*C + c] = phi_c / omega_c with
/// phi_c  = sum_r gamma_r [p' Q' q] P(gamma_r) and
/// omega_c = sum_r [p' q] P(gamma_r).
/// A zero omega_c marks an impossible pattern; the first one per block is
/// reported through `degenerate`, scanned in fixed block order.
pub fn run_gradient(
    backend: &Backend,
    plan: &ExecutionPlan,
    dims: &LaunchDims,
    inputs: &GradientInputs<'_>,
    out: &mut [f64],
    degenerate: &mut Vec<Option<usize>>,
) {
    let s_pad = dims.s_pad;
    let s = dims.state_count;
    let pbs = plan.constants.pbs;
    let cbs = plan.constants.cbs;
    let rates = dims.rates;
    // Rate categories run serially in chunks no larger than the block
    // thread count, so arbitrarily large R stays within the weight cache.
    let rate_chunk = (s_pad * cbs).max(1);

    let mut tasks = Vec::new();
    let mut degenerate_slots = std::mem::take(degenerate);
    degenerate_slots.clear();
    degenerate_slots.resize(dims.branch_nodes * dims.patterns.div_ceil(cbs), None);
    let mut slot_iter = degenerate_slots.iter_mut();
    for (node, node_row) in out.chunks_exact_mut(dims.patterns).enumerate() {
        let mut col_start = 0;
        for chunk in node_row.chunks_mut(cbs) {
            let slot = slot_iter.next().expect("degenerate slot per block");
            tasks.push((node, col_start, chunk, slot));
            col_start += cbs;
        }
    }

    backend.run_tasks(KernelKind::Gradient, tasks, |ws, (node, col_start, chunk, slot)| {
        let cols = chunk.len();
        ws.phi.clear();
        ws.phi.resize(cols * s_pad, 0.0);
        ws.omega.clear();
        ws.omega.resize(cols * s_pad, 0.0);
        let mut r0 = 0;
        while r0 < rates {
            let r_len = rate_chunk.min(rates - r0);
            ws.weights_cache.clear();
            ws.weights_cache.extend_from_slice(&inputs.gamma_weights[r0..r0 + r_len]);
            for rr in 0..r_len {
                let rate = r0 + rr;
                let weight = ws.weights_cache[rr];
                inputs.post_sources[node].stage(
                    &mut ws.partial_tile_a,
                    &mut ws.stats,
                    dims,
                    rate,
                    col_start,
                    cols,
                );
                stage_partials_from_slab(
                    &mut ws.partial_tile_b,
                    &mut ws.stats,
                    inputs.pre_slabs[node],
                    s_pad,
                    dims.patterns,
                    rate,
                    col_start,
                    cols,
                );
                for ((acc, &p), &q) in
                    ws.omega.iter_mut().zip(&ws.partial_tile_a).zip(&ws.partial_tile_b)
                {
                    *acc += p * q * weight;
                }
                // delta <- Q' q, staged in PBS-sized column chunks of Q'.
                ws.delta.clear();
                ws.delta.resize(cols * s_pad, 0.0);
                let mut t0 = 0;
                while t0 < s {
                    let t_len = pbs.min(s - t0);
                    stage_matrix_columns(
                        &mut ws.matrix_tile,
                        &mut ws.stats,
                        inputs.rate_matrix_transposed,
                        s_pad,
                        t0,
                        t_len,
                    );
                    accumulate_matrix_product(
                        &mut ws.delta,
                        &ws.matrix_tile,
                        &ws.partial_tile_b,
                        s_pad,
                        cols,
                        t0,
                        t_len,
                    );
                    t0 += t_len;
                }
                let scaled_weight = inputs.gamma_rates[rate] * weight;
                for ((acc, &p), &d) in
                    ws.phi.iter_mut().zip(&ws.partial_tile_a).zip(&ws.delta)
                {
                    *acc += p * d * scaled_weight;
                }
            }
            r0 += r_len;
        }
        // Parallelized-in-design reduction over states, fixed pairwise shape.
        for c in 0..cols {
            let phi_c = pairwise_tree_sum(&ws.phi[c * s_pad..(c + 1) * s_pad]);
            let omega_c = pairwise_tree_sum(&ws.omega[c * s_pad..(c + 1) * s_pad]);
            if omega_c == 0.0 {
                if slot.is_none() {
                    *slot = Some(col_start + c);
                }
                chunk[c] = 0.0;
            } else {
                chunk[c] = phi_c / omega_c;
            }
        }
    });
    *degenerate = degenerate_slots;
}

/// Transposes every padded matrix of a set in one batch launch, tile by
/// MBS x MBS tile.
pub fn run_transpose_all(
    backend: &Backend,
    plan: &ExecutionPlan,
    s_pad: usize,
    input: &[f64],
    out: &mut [f64],
) {
    let mbs = plan.constants.mbs;
    let mat_len = s_pad * s_pad;
    let tiles_per_side = s_pad.div_ceil(mbs);
    let tasks: Vec<(usize, &mut [f64])> =
        out.chunks_exact_mut(mat_len).enumerate().collect();
    backend.run_tasks(KernelKind::MatrixTranspose, tasks, |ws, (m, dst)| {
        let src = &input[m * mat_len..(m + 1) * mat_len];
        for tile_row in 0..tiles_per_side {
            for tile_col in 0..tiles_per_side {
                let rows = mbs.min(s_pad - tile_row * mbs);
                let cols = mbs.min(s_pad - tile_col * mbs);
                // Stage the source tile: A[i][j] = P[row0 + i, col0 + j].
                ws.matrix_tile.clear();
                ws.matrix_tile.resize(mbs * mbs, 0.0);
                for j in 0..cols {
                    let col0 = (tile_col * mbs + j) * s_pad + tile_row * mbs;
                    for i in 0..rows {
                        ws.matrix_tile[i * mbs + j] = src[col0 + i];
                    }
                }
                ws.stats.staged_matrix_entries += (mbs * mbs) as u64;
                ws.stats.inner_chunks += 1;
                // Write A[j][i]: tile (row, col) lands transposed at (col, row).
                for i in 0..rows {
                    let dst_col0 = (tile_row * mbs + i) * s_pad + tile_col * mbs;
                    for j in 0..cols {
                        dst[dst_col0 + j] = ws.matrix_tile[i * mbs + j];
                    }
                }
            }
        }
    });
}

/// Rescales one node slab per pattern: divides all (rate, state) lanes of a
/// pattern by their maximum and records cumulative log-scale factors,
/// `scale_out[c] = base0[c] + base1[c] + log(max)`.
pub fn run_rescale(
    backend: &Backend,
    plan: &ExecutionPlan,
    dims: &LaunchDims,
    slab: &mut [f64],
    scale_out: &mut [f64],
    bases: [Option<&[f64]>; 2],
) {
    let s_pad = dims.s_pad;
    let cbs = plan.constants.cbs;
    let chunk_elems = cbs * s_pad;
    // One task covers a column block across all rate slabs.
    let mut rate_chunk_iters: Vec<_> = slab
        .chunks_exact_mut(dims.patterns * s_pad)
        .map(|rate_slab| rate_slab.chunks_mut(chunk_elems))
        .collect();
    let mut tasks = Vec::new();
    let mut col_start = 0;
    for scale_chunk in scale_out.chunks_mut(cbs) {
        let slices: Vec<&mut [f64]> = rate_chunk_iters
            .iter_mut()
            .map(|it| it.next().expect("rate slab shorter than scale vector"))
            .collect();
        tasks.push((col_start, slices, scale_chunk));
        col_start += cbs;
    }
    backend.run_tasks(KernelKind::RescalePartials, tasks, |_ws, (c0, mut slices, scales)| {
        for c in 0..scales.len() {
            let mut max = 0.0f64;
            for slice in slices.iter() {
                for &v in &slice[c * s_pad..(c + 1) * s_pad] {
                    if v > max {
                        max = v;
                    }
                }
            }
            let log_max = if max > 0.0 && max.is_finite() {
                for slice in slices.iter_mut() {
                    for v in &mut slice[c * s_pad..(c + 1) * s_pad] {
                        *v /= max;
                    }
                }
                max.ln()
            } else {
                0.0
            };
            let mut scale = log_max;
            for base in bases.iter().flatten() {
                scale += base[c0 + c];
            }
            scales[c] = scale;
        }
    });
}

/// Reduces weighted column contributions to per-branch totals:
/// per_branch[i] = sum_c weight_c * per_column[i*C + c], consumed in
/// 128-wide blocks with fixed-shape trees.
pub fn run_node_site_reduction(
    backend: &Backend,
    plan: &ExecutionPlan,
    dims: &LaunchDims,
    weights: &[f64],
    per_column: &[f64],
    per_branch: &mut [f64],
) {
    let patterns = dims.patterns;
    let chunks = match plan.grid {
        super::plan::Grid::ReduceChunks { chunks, .. } => chunks,
        _ => patterns.div_ceil(REDUCTION_BLOCK),
    };
    let mut chunk_sums = vec![0.0f64; dims.branch_nodes * chunks];
    {
        let tasks: Vec<(usize, &mut f64)> = chunk_sums.iter_mut().enumerate().collect();
        backend.run_tasks(KernelKind::NodeSiteReduction, tasks, |_ws, (flat, slot)| {
            let node = flat / chunks;
            let chunk = flat % chunks;
            let c0 = chunk * REDUCTION_BLOCK;
            let len = REDUCTION_BLOCK.min(patterns - c0);
            let mut block = [0.0f64; REDUCTION_BLOCK];
            for i in 0..len {
                block[i] = weights[c0 + i] * per_column[node * patterns + c0 + i];
            }
            *slot = block_tree_sum(&mut block);
        });
    }
    for (node, dst) in per_branch.iter_mut().enumerate() {
        *dst = pairwise_tree_sum(&chunk_sums[node * chunks..(node + 1) * chunks]);
    }
}
