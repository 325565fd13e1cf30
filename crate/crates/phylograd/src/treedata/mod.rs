//! Trees, alignments, and site-pattern compression.

mod fasta;
mod newick;
mod patterns;

pub use fasta::{parse_fasta, Alphabet, RawAlignment};
pub use newick::parse_newick;
pub use patterns::uncompressed_patterns;
pub use patterns::{compress_patterns, PatternizedAlignment};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("newick parse error at byte {offset}: {message}")]
    Newick { offset: usize, message: String },
    #[error("fasta parse error: {0}")]
    Fasta(String),
    #[error("alignment validation error: {0}")]
    Alignment(String),
    #[error("tree validation error: {0}")]
    Tree(String),
}

/// Observation at one tip for one site: either a single character state or
/// an ambiguity mask over states (all-true for total ambiguity).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TipCode {
    State(u16),
    Mask(Box<[bool]>),
}

impl TipCode {
    pub fn full_ambiguity(state_count: usize) -> Self {
        TipCode::Mask(vec![true; state_count].into_boxed_slice())
    }

    pub fn allows(&self, state: usize) -> bool {
        match self {
            TipCode::State(s) => *s as usize == state,
            TipCode::Mask(mask) => mask[state],
        }
    }
}

/// A rooted bifurcating phylogeny.
///
/// Nodes are indexed 0-based: tips `0..N`, internal nodes `N..2N-2` in
/// post-order, root `2N-2`. Externally reported labels are 1-based (tips
/// `1..=N`, internals `N+1..=2N-2`, root `2N-1`). Branches are indexed by
/// their child node, so there are `2N-2` branch-length parameters.
#[derive(Debug, Clone)]
pub struct Phylogeny {
    tip_count: usize,
    tip_names: Vec<String>,
    /// Parent of every non-root node.
    parents: Vec<usize>,
    /// Children of internal nodes `N..=2N-2`, in node order.
    children: Vec<(usize, usize)>,
    branch_lengths: Vec<f64>,
    branch_rate_scalars: Vec<f64>,
}

impl Phylogeny {
    /// Builds a tree from tip names, internal-node children (for nodes
    /// `N..2N-1` in order, root last), and per-child-node branch lengths.
    pub fn new(
        tip_names: Vec<String>,
        children: Vec<(usize, usize)>,
        branch_lengths: Vec<f64>,
    ) -> Result<Self, ParseError> {
        let n = tip_names.len();
        if n < 2 {
            return Err(ParseError::Tree("a tree needs at least 2 tips".to_string()));
        }
        if children.len() != n - 1 {
            return Err(ParseError::Tree(format!(
                "expected {} internal nodes (including root), got {}",
                n - 1,
                children.len()
            )));
        }
        if branch_lengths.len() != 2 * n - 2 {
            return Err(ParseError::Tree(format!(
                "expected {} branch lengths, got {}",
                2 * n - 2,
                branch_lengths.len()
            )));
        }
        if let Some(&bad) = branch_lengths.iter().find(|&&b| b < 0.0 || !b.is_finite()) {
            return Err(ParseError::Tree(format!("branch length {bad} must be non-negative")));
        }
        let node_count = 2 * n - 1;
        let mut parents = vec![usize::MAX; node_count - 1];
        for (k, &(a, b)) in children.iter().enumerate() {
            let node = n + k;
            for child in [a, b] {
                if child >= node {
                    return Err(ParseError::Tree(format!(
                        "internal node {node} lists child {child}; children must be \
                         numbered before their parent (post-order)"
                    )));
                }
                if parents[child] != usize::MAX {
                    return Err(ParseError::Tree(format!("node {child} has two parents")));
                }
                parents[child] = node;
            }
            if a == b {
                return Err(ParseError::Tree(format!("node {node} lists child {a} twice")));
            }
        }
        if parents.iter().any(|&p| p == usize::MAX) {
            return Err(ParseError::Tree("tree is not connected".to_string()));
        }
        Ok(Phylogeny {
            tip_count: n,
            tip_names,
            parents,
            children,
            branch_lengths,
            branch_rate_scalars: vec![1.0; 2 * n - 2],
        })
    }

    pub fn tip_count(&self) -> usize {
        self.tip_count
    }

    pub fn node_count(&self) -> usize {
        2 * self.tip_count - 1
    }

    pub fn branch_count(&self) -> usize {
        2 * self.tip_count - 2
    }

    pub fn root(&self) -> usize {
        2 * self.tip_count - 2
    }

    pub fn is_tip(&self, node: usize) -> bool {
        node < self.tip_count
    }

    pub fn tip_names(&self) -> &[String] {
        &self.tip_names
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        (node != self.root()).then(|| self.parents[node])
    }

    pub fn children_of(&self, node: usize) -> (usize, usize) {
        self.children[node - self.tip_count]
    }

    /// The other child of this node's parent.
    pub fn sibling(&self, node: usize) -> usize {
        let (a, b) = self.children_of(self.parents[node]);
        if a == node {
            b
        } else {
            a
        }
    }

    pub fn branch_lengths(&self) -> &[f64] {
        &self.branch_lengths
    }

    pub fn set_branch_length(&mut self, branch: usize, length: f64) {
        self.branch_lengths[branch] = length;
    }

    pub fn branch_rate_scalars(&self) -> &[f64] {
        &self.branch_rate_scalars
    }

    pub fn set_branch_rate_scalars(&mut self, scalars: Vec<f64>) -> Result<(), ParseError> {
        if scalars.len() != self.branch_count() {
            return Err(ParseError::Tree(format!(
                "expected {} rate scalars, got {}",
                self.branch_count(),
                scalars.len()
            )));
        }
        if scalars.iter().any(|&s| !(s > 0.0)) {
            return Err(ParseError::Tree("rate scalars must be positive".to_string()));
        }
        self.branch_rate_scalars = scalars;
        Ok(())
    }

    /// Branch length times its rate scalar, per branch; this is the time
    /// argument of the transition matrices.
    pub fn effective_lengths(&self) -> Vec<f64> {
        self.branch_lengths
            .iter()
            .zip(&self.branch_rate_scalars)
            .map(|(&b, &s)| b * s)
            .collect()
    }

    /// Internal nodes (root included) in dependency order: every child
    /// precedes its parent. With post-order numbering this is just
    /// ascending node order.
    pub fn postorder_internals(&self) -> impl Iterator<Item = usize> + '_ {
        self.tip_count..self.node_count()
    }

    /// Non-root nodes in parent-before-child order.
    pub fn preorder_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.branch_count()).rev()
    }

    /// 1-based node label used in external reports.
    pub fn label(&self, node: usize) -> usize {
        node + 1
    }

    /// Resolves a branch reference from an external label or tip name.
    pub fn branch_by_reference(&self, reference: &str) -> Result<usize, ParseError> {
        if let Ok(label) = reference.parse::<usize>() {
            if label >= 1 && label <= self.branch_count() {
                return Ok(label - 1);
            }
            return Err(ParseError::Tree(format!(
                "branch label {label} out of range 1..={}",
                self.branch_count()
            )));
        }
        self.tip_names
            .iter()
            .position(|n| n == reference)
            .ok_or_else(|| ParseError::Tree(format!("unknown tip name `{reference}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_pre_order_numbering() {
        // Internal node 2 (with 2 tips this is the root) must not list
        // itself or later nodes.
        let err = Phylogeny::new(
            vec!["A".into(), "B".into()],
            vec![(0, 2)],
            vec![1.0, 1.0],
        )
        .unwrap_err();
        assert!(err.to_string().contains("post-order"));
    }

    #[test]
    fn smallest_tree_shape() {
        let tree = Phylogeny::new(
            vec!["A".into(), "B".into()],
            vec![(0, 1)],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(tree.tip_count(), 2);
        assert_eq!(tree.root(), 2);
        assert_eq!(tree.branch_count(), 2);
        assert_eq!(tree.sibling(0), 1);
        assert_eq!(tree.label(tree.root()), 3);
    }

    #[test]
    fn schedules_respect_dependencies() {
        let tree = Phylogeny::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![(0, 1), (3, 2)],
            vec![1.0, 1.0, 2.0, 0.5],
        )
        .unwrap();
        let post: Vec<usize> = tree.postorder_internals().collect();
        assert_eq!(post, vec![3, 4]);
        let pre: Vec<usize> = tree.preorder_nodes().collect();
        assert_eq!(pre, vec![3, 2, 1, 0]);
        for node in tree.preorder_nodes() {
            assert!(tree.parent(node).unwrap() > node);
        }
    }
}
