//! Deterministic reductions built from fixed-shape pairwise trees.

use super::plan::REDUCTION_BLOCK;

/// Sums one zero-padded 128-wide block with the stride-halving tree used
/// inside a reduction block.
pub(crate) fn block_tree_sum(block: &mut [f64; REDUCTION_BLOCK]) -> f64 {
    let mut stride = REDUCTION_BLOCK / 2;
    while stride > 0 {
        for i in 0..stride {
            block[i] += block[i + stride];
        }
        stride /= 2;
    }
    block[0]
}

/// Fixed-shape pairwise tree sum over arbitrarily many values. The shape
/// depends only on the length, never on worker count or chunking.
pub fn pairwise_tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        _ => {
            let mut level: Vec<f64> = values.to_vec();
            while level.len() > 1 {
                let mut next = Vec::with_capacity(level.len().div_ceil(2));
                for pair in level.chunks(2) {
                    next.push(if pair.len() == 2 { pair[0] + pair[1] } else { pair[0] });
                }
                level = next;
            }
            level[0]
        }
    }
}

/// Deterministic reduction: values are consumed in 128-wide zero-padded
/// blocks, each summed by a fixed binary tree, and the block sums combined
/// pairwise. Identical output regardless of worker count.
pub fn reduce_deterministic(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut block_sums = Vec::with_capacity(values.len().div_ceil(REDUCTION_BLOCK));
    for chunk in values.chunks(REDUCTION_BLOCK) {
        let mut block = [0.0f64; REDUCTION_BLOCK];
        block[..chunk.len()].copy_from_slice(chunk);
        block_sums.push(block_tree_sum(&mut block));
    }
    pairwise_tree_sum(&block_sums)
}
