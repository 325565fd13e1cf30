//! Per-worker kernel workspace.
//!
//! `partial_tile_*`, `matrix_tile`, and `weights_cache` emulate the staged
//! shared tile of a block; `phi`, `omega`, and `delta` are the per-thread
//! accumulator lanes. Contents never survive past one block execution.

use crate::treedata::TipCode;

#[derive(Debug, Default, Clone, Copy)]
pub struct StagingStats {
    pub staged_matrix_entries: u64,
    pub staged_partial_entries: u64,
    pub inner_chunks: u64,
}

impl StagingStats {
    pub fn absorb(&mut self, other: StagingStats) {
        self.staged_matrix_entries += other.staged_matrix_entries;
        self.staged_partial_entries += other.staged_partial_entries;
        self.inner_chunks += other.inner_chunks;
    }
}

#[derive(Debug, Default)]
pub struct Workspace {
    /// Staged partial-likelihood tiles (shared-memory emulation).
    pub partial_tile_a: Vec<f64>,
    pub partial_tile_b: Vec<f64>,
    /// Staged matrix columns (shared-memory emulation).
    pub matrix_tile: Vec<f64>,
    /// Staged category weights (shared-memory emulation).
    pub weights_cache: Vec<f64>,
    /// Per-lane accumulators (register emulation).
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta: Vec<f64>,
    pub stats: StagingStats,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace::default()
    }

    pub fn take_stats(&mut self) -> StagingStats {
        std::mem::take(&mut self.stats)
    }
}

/// Copies `count` matrix columns starting at `first_col` into a tile.
/// Column-major inputs make each staged column one contiguous read.
pub fn stage_matrix_columns(
    tile: &mut Vec<f64>,
    stats: &mut StagingStats,
    matrix: &[f64],
    s_pad: usize,
    first_col: usize,
    count: usize,
) {
    let start = first_col * s_pad;
    let len = count * s_pad;
    tile.clear();
    tile.extend_from_slice(&matrix[start..start + len]);
    stats.staged_matrix_entries += len as u64;
    stats.inner_chunks += 1;
}

/// Stages a pattern-range tile of partials from a node slab.
#[allow(clippy::too_many_arguments)]
pub fn stage_partials_from_slab(
    tile: &mut Vec<f64>,
    stats: &mut StagingStats,
    slab: &[f64],
    s_pad: usize,
    patterns: usize,
    rate: usize,
    col_start: usize,
    col_count: usize,
) {
    let base = rate * patterns * s_pad + col_start * s_pad;
    let len = col_count * s_pad;
    tile.clear();
    tile.extend_from_slice(&slab[base..base + len]);
    stats.staged_partial_entries += len as u64;
}

/// Expands compressed tip codes into indicator/mask partials on the fly,
/// so tip slabs are never materialized.
pub fn stage_partials_from_tips(
    tile: &mut Vec<f64>,
    stats: &mut StagingStats,
    codes: &[TipCode],
    s_pad: usize,
    col_start: usize,
    col_count: usize,
) {
    tile.clear();
    tile.resize(col_count * s_pad, 0.0);
    for (c, code) in codes[col_start..col_start + col_count].iter().enumerate() {
        let lane = &mut tile[c * s_pad..(c + 1) * s_pad];
        match code {
            TipCode::State(s) => lane[*s as usize] = 1.0,
            TipCode::Mask(mask) => {
                for (s, &allowed) in mask.iter().enumerate() {
                    if allowed {
                        lane[s] = 1.0;
                    }
                }
            }
        }
    }
    stats.staged_partial_entries += (col_count * s_pad) as u64;
}
