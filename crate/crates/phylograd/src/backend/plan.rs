//! Launch planning: block grids, tile constants, and plan-time scratch
//! budgeting.

use thiserror::Error;

use super::KernelKind;

/// Hard ceiling on simulated threads per block.
pub const MAX_BLOCK_THREADS: usize = 512;

/// Column contributions consumed per reduction block.
pub const REDUCTION_BLOCK: usize = 128;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(
        "staging budget exceeded at plan time: {kernel} needs {needed} bytes of \
         per-block scratch, budget is {budget}"
    )]
    StagingBudget { kernel: &'static str, needed: usize, budget: usize },
    #[error("unsupported launch shape: {0}")]
    Shape(String),
    #[error("worker pool construction failed: {0}")]
    Pool(String),
}

/// Tiling constants governing how many columns and states a block stages
/// per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConstants {
    /// Column-block size: patterns processed per block.
    pub cbs: usize,
    /// Peeling-block size: states staged per inner iteration.
    pub pbs: usize,
    /// Multiply-block size: transpose tile edge.
    pub mbs: usize,
}

/// Problem dimensions a launch is planned against.
#[derive(Debug, Clone, Copy)]
pub struct LaunchDims {
    pub state_count: usize,
    pub s_pad: usize,
    pub patterns: usize,
    pub rates: usize,
    /// Branch nodes (2N-2); only the gradient and reduction grids use it.
    pub branch_nodes: usize,
}

/// The set of block coordinates of a launch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// One block per (rate category, column block).
    RateColumns { rates: usize, col_blocks: usize },
    /// One block per (branch node, column block).
    NodeColumns { nodes: usize, col_blocks: usize },
    /// One block per (matrix, tile-row, tile-col).
    Tiles { matrices: usize, tiles_per_side: usize },
    /// One block per (branch node, 128-wide column chunk).
    ReduceChunks { nodes: usize, chunks: usize },
    /// One block per column block, spanning all rates.
    Columns { col_blocks: usize },
}

impl Grid {
    pub fn block_count(&self) -> usize {
        match *self {
            Grid::RateColumns { rates, col_blocks } => rates * col_blocks,
            Grid::NodeColumns { nodes, col_blocks } => nodes * col_blocks,
            Grid::Tiles { matrices, tiles_per_side } => matrices * tiles_per_side * tiles_per_side,
            Grid::ReduceChunks { nodes, chunks } => nodes * chunks,
            Grid::Columns { col_blocks } => col_blocks,
        }
    }
}

/// A planned launch: kernel, grid, block shape, constants, and the scratch
/// ceiling every block must respect.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub kernel: KernelKind,
    pub grid: Grid,
    /// (states per block, columns per block).
    pub block_shape: (usize, usize),
    pub constants: TileConstants,
    /// Per-block scratch ceiling in bytes.
    pub staging_budget: usize,
    /// Scratch bytes the planned block shape will actually stage.
    pub staged_bytes: usize,
}

impl ExecutionPlan {
    pub fn block_count(&self) -> usize {
        self.grid.block_count()
    }

    /// Total simulated threads in the launch: blocks times block shape.
    pub fn simulated_threads(&self) -> usize {
        self.block_count() * self.block_shape.0 * self.block_shape.1
    }
}

/// Plans a launch for `kernel` against `dims`, checking the block-size
/// ceiling and the staging budget. Budget violations surface here, never
/// at run time.
pub fn plan_launch(
    kernel: KernelKind,
    dims: &LaunchDims,
    constants: TileConstants,
    staging_budget: usize,
) -> Result<ExecutionPlan, PlanError> {
    let s_pad = dims.s_pad;
    if s_pad == 0 || dims.patterns == 0 || dims.rates == 0 {
        return Err(PlanError::Shape(format!(
            "degenerate dims: s_pad={s_pad} patterns={} rates={}",
            dims.patterns, dims.rates
        )));
    }
    if s_pad > MAX_BLOCK_THREADS {
        return Err(PlanError::Shape(format!(
            "padded state count {s_pad} exceeds the {MAX_BLOCK_THREADS}-thread block ceiling"
        )));
    }
    // Clamp the column block so s_pad * cbs stays within the thread ceiling.
    let cbs = constants.cbs.min(MAX_BLOCK_THREADS / s_pad).max(1);
    let constants = TileConstants { cbs, ..constants };
    let col_blocks = dims.patterns.div_ceil(cbs);

    let (grid, block_shape, staged_floats) = match kernel {
        KernelKind::PostOrderPartials | KernelKind::PreOrderPartials => (
            Grid::RateColumns { rates: dims.rates, col_blocks },
            (s_pad, cbs),
            // Two staged partial tiles plus one matrix tile.
            2 * s_pad * cbs + s_pad * constants.pbs,
        ),
        KernelKind::Gradient => (
            Grid::NodeColumns { nodes: dims.branch_nodes, col_blocks },
            (s_pad, cbs),
            // Two staged partial tiles, one rate-matrix tile, and the
            // category-weight cache (chunked at the block thread count).
            2 * s_pad * cbs + s_pad * constants.pbs + dims.rates.min(s_pad * cbs),
        ),
        KernelKind::MatrixTranspose => {
            let tiles_per_side = s_pad.div_ceil(constants.mbs);
            (
                Grid::Tiles { matrices: dims.branch_nodes * dims.rates, tiles_per_side },
                (constants.mbs, constants.mbs),
                constants.mbs * constants.mbs,
            )
        }
        KernelKind::NodeSiteReduction => (
            Grid::ReduceChunks {
                nodes: dims.branch_nodes,
                chunks: dims.patterns.div_ceil(REDUCTION_BLOCK),
            },
            (REDUCTION_BLOCK, 1),
            REDUCTION_BLOCK,
        ),
        KernelKind::RescalePartials => (
            Grid::Columns { col_blocks },
            (s_pad, cbs),
            0,
        ),
    };
    let staged_bytes = staged_floats * std::mem::size_of::<f64>();
    if staged_bytes > staging_budget {
        return Err(PlanError::StagingBudget {
            kernel: kernel.name(),
            needed: staged_bytes,
            budget: staging_budget,
        });
    }
    Ok(ExecutionPlan { kernel, grid, block_shape, constants, staging_budget, staged_bytes })
}
