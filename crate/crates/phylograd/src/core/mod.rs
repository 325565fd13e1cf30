//! Likelihood and gradient engine: paired post-order/pre-order traversals,
//! per-column gradients, deterministic reductions, and the verification
//! oracles.

mod buffers;
mod oracles;

pub use buffers::PartialBuffers;
pub use oracles::{finite_difference_gradient, oracle_gradient_quadratic};

use thiserror::Error;

use crate::backend::{
    run_gradient, run_node_site_reduction, run_post_order, run_pre_order, run_rescale,
    run_transpose_all, Backend, ExecutionPlan, GradientInputs, KernelKind, LaunchDims, MatrixView,
    NodeSource, PlanError, TimingReport,
};
use crate::model::{ModelError, ModelInstance, TransitionMatrixSet};
use crate::treedata::{PatternizedAlignment, Phylogeny};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error(
        "impossible pattern {pattern}: site likelihood is exactly zero, \
         log-likelihood is -infinity"
    )]
    ImpossiblePattern { pattern: usize },
    #[error("input mismatch: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Evaluation options.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Per-node, per-pattern rescaling of partials (on by default).
    pub scaling: bool,
    /// Retain the (2N-2) x C column-contribution matrix in the report.
    pub keep_per_column: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { scaling: true, keep_per_column: false }
    }
}

/// Gradient of the log-likelihood with respect to all branch-length
/// parameters, plus per-kernel timings.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub log_likelihood: f64,
    /// d log P(Y) / d b_i, indexed by child node.
    pub per_branch: Vec<f64>,
    /// Column contributions, row-major (2N-2) x C; present when requested.
    pub per_column: Option<Vec<f64>>,
    pub timings: TimingReport,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Fresh,
    MatricesReady,
    PostDone,
    PreDone,
    GradientDone,
}

/// One likelihood/gradient computation bound to a tree, model, alignment,
/// and backend. Buffers and plans are allocated once and reused across
/// repeated evaluations (branch lengths may change between runs).
pub struct Evaluator<'a> {
    tree: &'a Phylogeny,
    model: &'a ModelInstance,
    alignment: &'a PatternizedAlignment,
    backend: &'a Backend,
    options: EvalOptions,
    dims: LaunchDims,
    effective_lengths: Vec<f64>,
    matrices: TransitionMatrixSet,
    transposed: Option<TransitionMatrixSet>,
    /// Q' padded column-major, shared across rate categories.
    rate_matrix_transposed: Vec<f64>,
    buffers: PartialBuffers,
    weights_f64: Vec<f64>,
    per_column: Vec<f64>,
    per_branch_effective: Vec<f64>,
    pattern_log_likelihoods: Vec<f64>,
    post_plan: ExecutionPlan,
    pre_plan: ExecutionPlan,
    gradient_plan: ExecutionPlan,
    rescale_plan: ExecutionPlan,
    reduce_plan: ExecutionPlan,
    transpose_plan: Option<ExecutionPlan>,
    stage: Stage,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        tree: &'a Phylogeny,
        model: &'a ModelInstance,
        alignment: &'a PatternizedAlignment,
        backend: &'a Backend,
        options: EvalOptions,
    ) -> Result<Self, EvalError> {
        if alignment.tip_count() != tree.tip_count() {
            return Err(EvalError::Validation(format!(
                "alignment has {} tips, tree has {}",
                alignment.tip_count(),
                tree.tip_count()
            )));
        }
        if alignment.state_count() != model.state_count() {
            return Err(EvalError::Validation(format!(
                "alignment encodes {} states, model has {}",
                alignment.state_count(),
                model.state_count()
            )));
        }
        if !alignment.tip_names().is_empty()
            && !tree.tip_names().is_empty()
            && alignment.tip_names() != tree.tip_names()
        {
            return Err(EvalError::Validation(
                "alignment tip order does not match the tree; reorder the alignment first"
                    .to_string(),
            ));
        }
        let dims = LaunchDims {
            state_count: model.state_count(),
            s_pad: model.padded_state_count(),
            patterns: alignment.pattern_count(),
            rates: model.rate_categories().count(),
            branch_nodes: tree.branch_count(),
        };
        let post_plan = backend.plan(KernelKind::PostOrderPartials, &dims)?;
        let pre_plan = backend.plan(KernelKind::PreOrderPartials, &dims)?;
        let gradient_plan = backend.plan(KernelKind::Gradient, &dims)?;
        let rescale_plan = backend.plan(KernelKind::RescalePartials, &dims)?;
        let reduce_plan = backend.plan(KernelKind::NodeSiteReduction, &dims)?;
        let transpose_plan = (model.state_count() > 4)
            .then(|| backend.plan(KernelKind::MatrixTranspose, &dims))
            .transpose()?;

        let s_pad = dims.s_pad;
        let mut rate_matrix_transposed = vec![0.0; s_pad * s_pad];
        for t in 0..dims.state_count {
            for s in 0..dims.state_count {
                rate_matrix_transposed[t * s_pad + s] = model.rate_matrix().entry(t, s);
            }
        }
        let matrices = TransitionMatrixSet::zeroed(
            dims.state_count,
            s_pad,
            tree.branch_count(),
            dims.rates,
        );
        let transposed = transpose_plan.is_some().then(|| {
            TransitionMatrixSet::zeroed(dims.state_count, s_pad, tree.branch_count(), dims.rates)
        });
        Ok(Evaluator {
            tree,
            model,
            alignment,
            backend,
            options,
            dims,
            effective_lengths: tree.effective_lengths(),
            matrices,
            transposed,
            rate_matrix_transposed,
            buffers: PartialBuffers::allocate(
                tree.tip_count(),
                dims.patterns,
                dims.rates,
                s_pad,
            ),
            weights_f64: alignment.weights().iter().map(|&w| w as f64).collect(),
            per_column: vec![0.0; tree.branch_count() * dims.patterns],
            per_branch_effective: vec![0.0; tree.branch_count()],
            pattern_log_likelihoods: vec![0.0; dims.patterns],
            post_plan,
            pre_plan,
            gradient_plan,
            rescale_plan,
            reduce_plan,
            transpose_plan,
            stage: Stage::Fresh,
        })
    }

    pub fn options(&self) -> &EvalOptions {
        &self.options
    }

    pub fn buffers(&self) -> &PartialBuffers {
        &self.buffers
    }

    pub fn dims(&self) -> &LaunchDims {
        &self.dims
    }

    /// (Re)builds the transition matrices for every branch, then the batch
    /// transpose when the state space is too large for in-register reads.
    pub fn update_matrices(&mut self) -> Result<(), EvalError> {
        for branch in 0..self.tree.branch_count() {
            self.matrices.update_branch(self.model, branch, self.effective_lengths[branch])?;
        }
        self.transpose_matrices();
        self.stage = Stage::MatricesReady;
        Ok(())
    }

    fn transpose_matrices(&mut self) {
        if let (Some(plan), Some(transposed)) = (&self.transpose_plan, &mut self.transposed) {
            run_transpose_all(
                self.backend,
                plan,
                self.dims.s_pad,
                self.matrices.data(),
                transposed.data_mut(),
            );
        }
    }

    /// Updates one branch length and refreshes that branch's matrices.
    pub fn set_branch_length(&mut self, branch: usize, length: f64) -> Result<(), EvalError> {
        if self.stage < Stage::MatricesReady {
            return Err(EvalError::Sequencing(
                "set_branch_length requires update_matrices first".to_string(),
            ));
        }
        let effective = length * self.tree.branch_rate_scalars()[branch];
        self.effective_lengths[branch] = effective;
        self.matrices.update_branch(self.model, branch, effective)?;
        if let Some(transposed) = &mut self.transposed {
            transpose_branch_host(&self.matrices, transposed, branch);
        }
        self.stage = Stage::MatricesReady;
        Ok(())
    }

    /// Replaces all branch lengths (keeping rate scalars) and rebuilds
    /// matrices.
    pub fn set_all_branch_lengths(&mut self, lengths: &[f64]) -> Result<(), EvalError> {
        if lengths.len() != self.tree.branch_count() {
            return Err(EvalError::Validation(format!(
                "expected {} branch lengths, got {}",
                self.tree.branch_count(),
                lengths.len()
            )));
        }
        for (branch, (&len, &scalar)) in
            lengths.iter().zip(self.tree.branch_rate_scalars()).enumerate()
        {
            self.effective_lengths[branch] = len * scalar;
            self.matrices.update_branch(self.model, branch, self.effective_lengths[branch])?;
        }
        self.transpose_matrices();
        self.stage = Stage::MatricesReady;
        Ok(())
    }

    pub fn effective_lengths(&self) -> &[f64] {
        &self.effective_lengths
    }

    fn post_source(&self, node: usize) -> NodeSource<'_> {
        if self.tree.is_tip(node) {
            NodeSource::Tips(self.alignment.tip_row(node))
        } else {
            NodeSource::Slab(self.buffers.post_slab(node))
        }
    }

    /// Felsenstein pruning: fills post-order partials for every internal
    /// node and the root, updating scaling accumulators.
    pub fn postorder(&mut self) -> Result<(), EvalError> {
        if self.stage < Stage::MatricesReady {
            return Err(EvalError::Sequencing(
                "post-order traversal requires transition matrices; call update_matrices"
                    .to_string(),
            ));
        }
        let tip_count = self.tree.tip_count();
        let slab_len = self.buffers.slab_len();
        let alignment = self.alignment;
        for node in self.tree.postorder_internals() {
            let (left, right) = self.tree.children_of(node);
            let left_mats = self.matrices.branch_matrices(left);
            let right_mats = self.matrices.branch_matrices(right);
            {
                let (out, lower) = self.buffers.post_slab_mut_with_lower(node);
                let slab_of = |child: usize| -> NodeSource<'_> {
                    if child < tip_count {
                        NodeSource::Tips(alignment.tip_row(child))
                    } else {
                        let start = (child - tip_count) * slab_len;
                        NodeSource::Slab(&lower[start..start + slab_len])
                    }
                };
                run_post_order(
                    self.backend,
                    &self.post_plan,
                    &self.dims,
                    slab_of(left),
                    left_mats,
                    slab_of(right),
                    right_mats,
                    out,
                );
            }
            if self.options.scaling {
                let patterns = self.dims.patterns;
                let (slab, scale_out, lower_scale) = self.buffers.post_rescale_parts(node);
                let base_of = |child: usize| -> Option<&[f64]> {
                    (child >= tip_count).then(|| {
                        let start = (child - tip_count) * patterns;
                        &lower_scale[start..start + patterns]
                    })
                };
                let bases = [base_of(left), base_of(right)];
                run_rescale(self.backend, &self.rescale_plan, &self.dims, slab, scale_out, bases);
            }
        }
        self.stage = Stage::PostDone;
        Ok(())
    }

    /// Weighted total log-likelihood from the root partials, with
    /// per-pattern scaling reinstated.
    pub fn log_likelihood(&mut self) -> Result<f64, EvalError> {
        if self.stage < Stage::PostDone {
            return Err(EvalError::Sequencing(
                "log-likelihood requires a completed post-order traversal".to_string(),
            ));
        }
        let root = self.tree.root();
        let slab = self.buffers.post_slab(root);
        let pi = self.model.root_distribution();
        let weights = self.model.rate_categories().weights();
        let (s_pad, patterns) = (self.dims.s_pad, self.dims.patterns);
        let scale = if self.options.scaling {
            Some(self.buffers.post_scale_row(root))
        } else {
            None
        };
        for c in 0..patterns {
            let mut mix = 0.0;
            for (r, &w) in weights.iter().enumerate() {
                let lane = &slab[(r * patterns + c) * s_pad..(r * patterns + c) * s_pad + pi.len()];
                let dot: f64 = lane.iter().zip(pi).map(|(&p, &f)| p * f).sum();
                mix += dot * w;
            }
            if mix <= 0.0 {
                return Err(EvalError::ImpossiblePattern { pattern: c });
            }
            self.pattern_log_likelihoods[c] =
                mix.ln() + scale.map_or(0.0, |rows| rows[c]);
        }
        let weighted: Vec<f64> = self
            .pattern_log_likelihoods
            .iter()
            .zip(&self.weights_f64)
            .map(|(&l, &w)| l * w)
            .collect();
        Ok(crate::backend::reduce_deterministic(&weighted))
    }

    /// Per-pattern log-likelihoods from the last `log_likelihood` call.
    pub fn pattern_log_likelihoods(&self) -> &[f64] {
        &self.pattern_log_likelihoods
    }

    /// Fills pre-order partials for every non-root node (tips included),
    /// parent before child, using transposed matrices for large state
    /// spaces.
    pub fn preorder(&mut self) -> Result<(), EvalError> {
        if self.stage < Stage::PostDone {
            return Err(EvalError::Sequencing(
                "pre-order traversal requires a completed post-order traversal".to_string(),
            ));
        }
        // Root pre-order partials are the prior state distribution.
        let root = self.tree.root();
        let pi = self.model.root_distribution();
        let (s_pad, patterns) = (self.dims.s_pad, self.dims.patterns);
        {
            let slab = self.buffers.pre_slab_mut(root);
            slab.fill(0.0);
            for rc in 0..self.dims.rates * patterns {
                slab[rc * s_pad..rc * s_pad + pi.len()].copy_from_slice(pi);
            }
        }
        let tip_count = self.tree.tip_count();
        let alignment = self.alignment;
        for node in self.tree.preorder_nodes() {
            let parent = self.tree.parent(node).expect("non-root node");
            let sibling = self.tree.sibling(node);
            let sibling_internal = (sibling >= tip_count).then_some(sibling);
            let sibling_mats = self.matrices.branch_matrices(sibling);
            let self_view = match &self.transposed {
                Some(t) => MatrixView::Transposed(t.branch_matrices(node)),
                None => MatrixView::InRegister(self.matrices.branch_matrices(node)),
            };
            {
                let (out, parent_q, sibling_post) =
                    self.buffers.pre_step_parts(node, parent, sibling_internal);
                let sibling_source = match sibling_post {
                    Some(slab) => NodeSource::Slab(slab),
                    None => NodeSource::Tips(alignment.tip_row(sibling)),
                };
                run_pre_order(
                    self.backend,
                    &self.pre_plan,
                    &self.dims,
                    parent_q,
                    sibling_source,
                    sibling_mats,
                    self_view,
                    out,
                );
            }
            if self.options.scaling {
                let (slab, scale_out, parent_scale, sibling_scale) =
                    self.buffers.pre_rescale_parts(node, parent, sibling_internal);
                let bases = [Some(parent_scale), sibling_scale];
                run_rescale(self.backend, &self.rescale_plan, &self.dims, slab, scale_out, bases);
            }
        }
        self.stage = Stage::PreDone;
        Ok(())
    }

    /// Scaling-adjusted per-pattern log-likelihood evaluated at any node
    /// (the node-invariant identity).
    pub fn node_log_likelihood(&self, node: usize, pattern: usize) -> Result<f64, EvalError> {
        if self.stage < Stage::PreDone {
            return Err(EvalError::Sequencing(
                "node likelihood requires both traversals".to_string(),
            ));
        }
        let (s_pad, patterns) = (self.dims.s_pad, self.dims.patterns);
        let s = self.dims.state_count;
        let weights = self.model.rate_categories().weights();
        let q_slab = self.buffers.pre_slab(node);
        let mut mix = 0.0;
        for (r, &w) in weights.iter().enumerate() {
            let lane = (r * patterns + pattern) * s_pad;
            let q = &q_slab[lane..lane + s];
            let dot: f64 = if self.tree.is_tip(node) {
                let code = self.alignment.code(node, pattern);
                (0..s).filter(|&st| code.allows(st)).map(|st| q[st]).sum()
            } else {
                let p = &self.buffers.post_slab(node)[lane..lane + s];
                p.iter().zip(q).map(|(&a, &b)| a * b).sum()
            };
            mix += dot * w;
        }
        if mix <= 0.0 {
            return Err(EvalError::ImpossiblePattern { pattern });
        }
        let mut scale = 0.0;
        if self.options.scaling {
            if !self.tree.is_tip(node) {
                scale += self.buffers.post_scale_row(node)[pattern];
            }
            if node != self.tree.root() {
                scale += self.buffers.pre_scale_row(node)[pattern];
            }
        }
        Ok(mix.ln() + scale)
    }

    /// Column-specific gradient contributions for every branch,
    /// d log P(Y_c) / d b_i, as a row-major (2N-2) x C matrix.
    pub fn gradient_columns(&mut self) -> Result<&[f64], EvalError> {
        if self.stage < Stage::PreDone {
            return Err(EvalError::Sequencing(
                "gradient requires both traversals".to_string(),
            ));
        }
        let branch_nodes = self.tree.branch_count();
        let mut per_column = std::mem::take(&mut self.per_column);
        let inputs = GradientInputs {
            post_sources: (0..branch_nodes).map(|n| self.post_source(n)).collect(),
            pre_slabs: (0..branch_nodes).map(|n| self.buffers.pre_slab(n)).collect(),
            rate_matrix_transposed: &self.rate_matrix_transposed,
            gamma_rates: self.model.rate_categories().rates(),
            gamma_weights: self.model.rate_categories().weights(),
        };
        let mut degenerate = Vec::new();
        run_gradient(
            self.backend,
            &self.gradient_plan,
            &self.dims,
            &inputs,
            &mut per_column,
            &mut degenerate,
        );
        self.per_column = per_column;
        if let Some(pattern) = degenerate.iter().flatten().next() {
            return Err(EvalError::ImpossiblePattern { pattern: *pattern });
        }
        // Chain rule: kernel contributions are derivatives in the effective
        // length; branch-length derivatives pick up the rate scalar.
        let patterns = self.dims.patterns;
        for (branch, &scalar) in self.tree.branch_rate_scalars().iter().enumerate() {
            if scalar != 1.0 {
                for v in &mut self.per_column[branch * patterns..(branch + 1) * patterns] {
                    *v *= scalar;
                }
            }
        }
        self.stage = Stage::GradientDone;
        Ok(&self.per_column)
    }

    /// Reduces column contributions into the per-branch gradient.
    pub fn reduce_columns(&mut self) -> Result<Vec<f64>, EvalError> {
        if self.stage < Stage::GradientDone {
            return Err(EvalError::Sequencing(
                "reduction requires gradient columns".to_string(),
            ));
        }
        let mut per_branch = vec![0.0; self.tree.branch_count()];
        run_node_site_reduction(
            self.backend,
            &self.reduce_plan,
            &self.dims,
            &self.weights_f64,
            &self.per_column,
            &mut per_branch,
        );
        for (dst, (&g, &scalar)) in self
            .per_branch_effective
            .iter_mut()
            .zip(per_branch.iter().zip(self.tree.branch_rate_scalars()))
        {
            *dst = g / scalar;
        }
        Ok(per_branch)
    }

    /// Per-branch gradient in the effective-length parameterization from
    /// the last reduction (branch-length derivatives divided by the rate
    /// scalars).
    pub fn per_branch_effective(&self) -> &[f64] {
        &self.per_branch_effective
    }

    /// Aggregates per-branch gradient entries over a named branch set
    /// (host-side, so any set of branches can be used).
    pub fn reduce_branch_set(per_branch: &[f64], branches: &[usize]) -> f64 {
        let values: Vec<f64> = branches.iter().map(|&b| per_branch[b]).collect();
        crate::backend::reduce_deterministic(&values)
    }

    /// Runs the full pipeline: matrices, transpose, post-order,
    /// log-likelihood, pre-order, gradient, reduction.
    pub fn run_full(&mut self) -> Result<GradientReport, EvalError> {
        let start = std::time::Instant::now();
        self.update_matrices()?;
        self.postorder()?;
        let log_likelihood = self.log_likelihood()?;
        self.preorder()?;
        self.gradient_columns()?;
        let per_branch = self.reduce_columns()?;
        let wall_ns = start.elapsed().as_nanos() as u64;
        Ok(GradientReport {
            log_likelihood,
            per_branch,
            per_column: self.options.keep_per_column.then(|| self.per_column.clone()),
            timings: self.backend.timing_report(wall_ns),
            wall_ns,
        })
    }
}

/// Host-side transpose refresh for a single branch after a length update.
fn transpose_branch_host(
    matrices: &TransitionMatrixSet,
    transposed: &mut TransitionMatrixSet,
    branch: usize,
) {
    let s_pad = matrices.padded_state_count();
    let rates = matrices.rate_count();
    let mat_len = s_pad * s_pad;
    for r in 0..rates {
        let src = matrices.matrix(branch, r).to_vec();
        let base = (branch * rates + r) * mat_len;
        let dst = &mut transposed.data_mut()[base..base + mat_len];
        for col in 0..s_pad {
            for row in 0..s_pad {
                dst[row * s_pad + col] = src[col * s_pad + row];
            }
        }
    }
}

/// One-shot full gradient: builds an evaluator, runs the whole pipeline,
/// and reports per-branch derivatives with per-kernel timings.
pub fn full_gradient(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
    backend: &Backend,
    options: EvalOptions,
) -> Result<GradientReport, EvalError> {
    backend.reset_instrumentation();
    let mut evaluator = Evaluator::new(tree, model, alignment, backend, options)?;
    evaluator.run_full()
}
