//! Post- and pre-order partial-likelihood storage.

/// Padded, column-major partial-likelihood buffers plus per-node scaling
/// accumulators.
///
/// A node slab holds `rates * patterns * s_pad` values, pattern-major
/// within each rate with the state index fastest. Post-order slabs exist
/// only for internal nodes (tip partials are expanded on the fly from
/// compressed codes); pre-order slabs exist for every node. Scale rows are
/// cumulative log factors shared across rate categories.
#[derive(Debug)]
pub struct PartialBuffers {
    tip_count: usize,
    s_pad: usize,
    patterns: usize,
    rates: usize,
    post: Vec<f64>,
    pre: Vec<f64>,
    post_scale: Vec<f64>,
    pre_scale: Vec<f64>,
}

impl PartialBuffers {
    pub fn allocate(tip_count: usize, patterns: usize, rates: usize, s_pad: usize) -> Self {
        let slab = rates * patterns * s_pad;
        let internal_nodes = tip_count - 1; // internals plus root
        let all_nodes = 2 * tip_count - 1;
        PartialBuffers {
            tip_count,
            s_pad,
            patterns,
            rates,
            post: vec![0.0; internal_nodes * slab],
            pre: vec![0.0; all_nodes * slab],
            post_scale: vec![0.0; internal_nodes * patterns],
            pre_scale: vec![0.0; all_nodes * patterns],
        }
    }

    pub fn slab_len(&self) -> usize {
        self.rates * self.patterns * self.s_pad
    }

    pub fn s_pad(&self) -> usize {
        self.s_pad
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn rates(&self) -> usize {
        self.rates
    }

    fn post_index(&self, node: usize) -> usize {
        debug_assert!(node >= self.tip_count, "tips have no post-order slab");
        (node - self.tip_count) * self.slab_len()
    }

    pub fn post_slab(&self, node: usize) -> &[f64] {
        let start = self.post_index(node);
        &self.post[start..start + self.slab_len()]
    }

    /// Mutable slab for `node` together with read access to every lower
    /// node's slab; valid because children precede parents.
    pub fn post_slab_mut_with_lower(&mut self, node: usize) -> (&mut [f64], &[f64]) {
        let start = self.post_index(node);
        let slab = self.slab_len();
        let (lower, rest) = self.post.split_at_mut(start);
        (&mut rest[..slab], lower)
    }

    pub fn pre_slab(&self, node: usize) -> &[f64] {
        let start = node * self.slab_len();
        &self.pre[start..start + self.slab_len()]
    }

    pub fn pre_slab_mut(&mut self, node: usize) -> &mut [f64] {
        let start = node * self.slab_len();
        let slab = self.slab_len();
        &mut self.pre[start..start + slab]
    }

    pub fn post_scale_row(&self, node: usize) -> &[f64] {
        let start = (node - self.tip_count) * self.patterns;
        &self.post_scale[start..start + self.patterns]
    }

    pub fn pre_scale_row(&self, node: usize) -> &[f64] {
        let start = node * self.patterns;
        &self.pre_scale[start..start + self.patterns]
    }

    /// All pieces of a post-order rescale step in one borrow: the node's
    /// slab (mutable), its scale row (mutable), and the scale rows of all
    /// lower internal nodes, indexable at `(child - tip_count) * patterns`.
    pub fn post_rescale_parts(&mut self, node: usize) -> (&mut [f64], &mut [f64], &[f64]) {
        let slab_len = self.slab_len();
        let patterns = self.patterns;
        let idx = node - self.tip_count;
        let slab = &mut self.post[idx * slab_len..(idx + 1) * slab_len];
        let (lower, rest) = self.post_scale.split_at_mut(idx * patterns);
        (slab, &mut rest[..patterns], lower)
    }

    /// All pieces of a pre-order step in one borrow: the node's pre slab
    /// (mutable), the parent's pre slab, and optionally an internal
    /// sibling's post slab.
    pub fn pre_step_parts(
        &mut self,
        node: usize,
        parent: usize,
        sibling_internal: Option<usize>,
    ) -> (&mut [f64], &[f64], Option<&[f64]>) {
        debug_assert!(node < parent);
        let slab = self.slab_len();
        let (front, back) = self.pre.split_at_mut(parent * slab);
        let out = &mut front[node * slab..(node + 1) * slab];
        let parent_q = &back[..slab];
        let sibling_post = sibling_internal.map(|j| {
            let start = (j - self.tip_count) * slab;
            &self.post[start..start + slab]
        });
        (out, parent_q, sibling_post)
    }

    /// All pieces of a pre-order rescale step in one borrow: the node's
    /// pre slab (mutable), its pre-scale row (mutable), the parent's
    /// pre-scale row, and optionally an internal sibling's post-scale row.
    pub fn pre_rescale_parts(
        &mut self,
        node: usize,
        parent: usize,
        sibling_internal: Option<usize>,
    ) -> (&mut [f64], &mut [f64], &[f64], Option<&[f64]>) {
        debug_assert!(node < parent);
        let slab = self.slab_len();
        let patterns = self.patterns;
        let out_slab = &mut self.pre[node * slab..(node + 1) * slab];
        let (front, back) = self.pre_scale.split_at_mut(parent * patterns);
        let scale_out = &mut front[node * patterns..(node + 1) * patterns];
        let parent_scale = &back[..patterns];
        let sibling_scale = sibling_internal.map(|j| {
            let start = (j - self.tip_count) * patterns;
            &self.post_scale[start..start + patterns]
        });
        (out_slab, scale_out, parent_scale, sibling_scale)
    }

    pub fn reset(&mut self) {
        self.post.fill(0.0);
        self.pre.fill(0.0);
        self.post_scale.fill(0.0);
        self.pre_scale.fill(0.0);
    }

    /// Entry accessors used by invariant checks and tests.
    pub fn post_entry(&self, node: usize, rate: usize, pattern: usize, state: usize) -> f64 {
        self.post_slab(node)[(rate * self.patterns + pattern) * self.s_pad + state]
    }

    pub fn pre_entry(&self, node: usize, rate: usize, pattern: usize, state: usize) -> f64 {
        self.pre_slab(node)[(rate * self.patterns + pattern) * self.s_pad + state]
    }
}
