//! Portable data-parallel execution engine.
//!
//! Kernels are decomposed into blocks per their execution plan; blocks run
//! either serially or on a work-stealing worker pool. Every block writes a
//! disjoint output slice and all reductions use fixed-shape pairwise trees,
//! so outputs are identical for any worker count.

mod kernels;
mod plan;
mod reduce;
mod timing;
mod workspace;

pub use kernels::{
    run_gradient, run_node_site_reduction, run_post_order, run_pre_order, run_rescale,
    run_transpose_all, GradientInputs, MatrixView, NodeSource,
};
pub use plan::{
    plan_launch, ExecutionPlan, Grid, LaunchDims, PlanError, TileConstants, MAX_BLOCK_THREADS,
    REDUCTION_BLOCK,
};
pub use reduce::{pairwise_tree_sum, reduce_deterministic};
pub use timing::{KernelTiming, TimingReport};
pub use workspace::{StagingStats, Workspace};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Kernel identities; names match the timing-table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    PostOrderPartials,
    PreOrderPartials,
    Gradient,
    MatrixTranspose,
    NodeSiteReduction,
    RescalePartials,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::PostOrderPartials => "postOrderPartials",
            KernelKind::PreOrderPartials => "preOrderPartials",
            KernelKind::Gradient => "gradient",
            KernelKind::MatrixTranspose => "matrixTranspose",
            KernelKind::NodeSiteReduction => "nodeSiteReduction",
            KernelKind::RescalePartials => "rescalePartials",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Serial,
    Parallel,
}

/// Backend configuration; the defaults reproduce the reference design
/// constants (CBS 16 for nucleotide models with 4 columns per thread,
/// CBS 8 and PBS 8 for large state spaces, MBS 16 tiles, 48 KB scratch).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub worker_count: usize,
    pub cbs_nucleotide: usize,
    pub cbs_large_state: usize,
    pub pbs: usize,
    pub mbs: usize,
    pub columns_per_thread_nucleotide: usize,
    /// Per-block scratch ceiling in bytes.
    pub staging_budget: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Serial,
            worker_count: 1,
            cbs_nucleotide: 16,
            cbs_large_state: 8,
            pbs: 8,
            mbs: 16,
            columns_per_thread_nucleotide: 4,
            staging_budget: 48 * 1024,
        }
    }
}

impl BackendConfig {
    pub fn serial() -> Self {
        BackendConfig::default()
    }

    pub fn parallel(worker_count: usize) -> Self {
        BackendConfig {
            kind: BackendKind::Parallel,
            worker_count: worker_count.max(1),
            ..BackendConfig::default()
        }
    }

    /// Column-block size by state-space size.
    pub fn cbs_for(&self, state_count: usize) -> usize {
        if state_count <= 4 {
            self.cbs_nucleotide
        } else {
            self.cbs_large_state
        }
    }

    pub fn constants_for(&self, state_count: usize) -> TileConstants {
        TileConstants { cbs: self.cbs_for(state_count), pbs: self.pbs, mbs: self.mbs }
    }
}

#[derive(Debug, Default)]
struct KernelCounters {
    calls: u64,
    nanos: u64,
}

/// The execution backend: dispatches planned launches onto a worker pool
/// (or runs them serially) and accumulates per-kernel timings.
pub struct Backend {
    config: BackendConfig,
    pool: Option<rayon::ThreadPool>,
    timings: Mutex<HashMap<KernelKind, KernelCounters>>,
    stats: Mutex<HashMap<KernelKind, StagingStats>>,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, PlanError> {
        let pool = match config.kind {
            BackendKind::Serial => None,
            BackendKind::Parallel => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.worker_count)
                    .build()
                    .map_err(|e| PlanError::Pool(e.to_string()))?,
            ),
        };
        Ok(Backend {
            config,
            pool,
            timings: Mutex::new(HashMap::new()),
            stats: Mutex::new(HashMap::new()),
        })
    }

    pub fn serial() -> Self {
        Backend::new(BackendConfig::serial()).expect("serial backend never fails")
    }

    pub fn parallel(workers: usize) -> Result<Self, PlanError> {
        Backend::new(BackendConfig::parallel(workers))
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Plans one launch of `kernel` against `dims` under this backend's
    /// constants and scratch budget.
    pub fn plan(&self, kernel: KernelKind, dims: &LaunchDims) -> Result<ExecutionPlan, PlanError> {
        plan_launch(
            kernel,
            dims,
            self.config.constants_for(dims.state_count),
            self.config.staging_budget,
        )
    }

    /// Runs every block task exactly once, serially or on the pool. Block
    /// outputs live in disjoint slices owned by the tasks, so scheduling
    /// order cannot influence results.
    pub(crate) fn run_tasks<T, F>(&self, kernel: KernelKind, tasks: Vec<T>, body: F)
    where
        T: Send,
        F: Fn(&mut Workspace, T) + Sync,
    {
        let start = Instant::now();
        let staged_matrix = AtomicU64::new(0);
        let staged_partials = AtomicU64::new(0);
        let inner_chunks = AtomicU64::new(0);
        let run_one = |ws: &mut Workspace, task: T| {
            body(ws, task);
            let stats = ws.take_stats();
            staged_matrix.fetch_add(stats.staged_matrix_entries, Ordering::Relaxed);
            staged_partials.fetch_add(stats.staged_partial_entries, Ordering::Relaxed);
            inner_chunks.fetch_add(stats.inner_chunks, Ordering::Relaxed);
        };
        match &self.pool {
            None => {
                let mut ws = Workspace::new();
                for task in tasks {
                    run_one(&mut ws, task);
                }
            }
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                tasks
                    .into_par_iter()
                    .for_each_init(Workspace::new, |ws, task| run_one(ws, task));
            }),
        }
        let elapsed = start.elapsed().as_nanos() as u64;
        {
            let mut timings = self.timings.lock().unwrap();
            let entry = timings.entry(kernel).or_default();
            entry.calls += 1;
            entry.nanos += elapsed;
        }
        {
            let mut stats = self.stats.lock().unwrap();
            let entry = stats.entry(kernel).or_default();
            entry.absorb(StagingStats {
                staged_matrix_entries: staged_matrix.into_inner(),
                staged_partial_entries: staged_partials.into_inner(),
                inner_chunks: inner_chunks.into_inner(),
            });
        }
    }

    pub fn reset_instrumentation(&self) {
        self.timings.lock().unwrap().clear();
        self.stats.lock().unwrap().clear();
    }

    /// Accumulated staging counters for one kernel since the last reset.
    pub fn staging_stats(&self, kernel: KernelKind) -> StagingStats {
        self.stats.lock().unwrap().get(&kernel).copied().unwrap_or_default()
    }

    /// Per-kernel timing rows sorted by share of `wall_total_ns`.
    pub fn timing_report(&self, wall_total_ns: u64) -> TimingReport {
        let timings = self.timings.lock().unwrap();
        let mut kernels: Vec<KernelTiming> = timings
            .iter()
            .map(|(kind, c)| KernelTiming {
                name: kind.name().to_string(),
                calls: c.calls,
                ns_total: c.nanos,
                ns_per_call: if c.calls > 0 { c.nanos / c.calls } else { 0 },
                percent: if wall_total_ns > 0 {
                    100.0 * c.nanos as f64 / wall_total_ns as f64
                } else {
                    0.0
                },
            })
            .collect();
        kernels.sort_by(|a, b| b.ns_total.cmp(&a.ns_total).then(a.name.cmp(&b.name)));
        TimingReport { kernels }
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("config", &self.config).finish_non_exhaustive()
    }
}
