//! Verification oracles for the gradient engine.
//!
//! The quadratic-time oracle reruns plain serial pruning once per branch
//! with that branch's transition matrix replaced by its derivative; it
//! shares nothing with the block-tiled kernels. The finite-difference
//! oracle takes central (or one-sided, near zero) differences of the
//! engine's own log-likelihood.

use crate::backend::Backend;
use crate::model::ModelInstance;
use crate::treedata::{PatternizedAlignment, Phylogeny, TipCode};

use super::{EvalError, EvalOptions, Evaluator};

/// Plain serial pruning over unpadded row-major matrices, with per-node
/// abs-max rescaling so deep trees stay in range.
struct SerialPruner<'a> {
    tree: &'a Phylogeny,
    model: &'a ModelInstance,
    alignment: &'a PatternizedAlignment,
    /// Row-major S x S matrices indexed by branch * rates + rate.
    matrices: Vec<Vec<f64>>,
    /// Scratch partials for internal nodes: (node - N) slabs of R*C*S.
    partials: Vec<f64>,
    scales: Vec<f64>,
}

impl<'a> SerialPruner<'a> {
    fn new(
        tree: &'a Phylogeny,
        model: &'a ModelInstance,
        alignment: &'a PatternizedAlignment,
    ) -> Result<Self, EvalError> {
        let rates = model.rate_categories().rates();
        let mut matrices = Vec::with_capacity(tree.branch_count() * rates.len());
        for &len in &tree.effective_lengths() {
            for &rate in rates {
                matrices.push(row_major(&model.transition_matrix(rate, len)?));
            }
        }
        let s = model.state_count();
        let (c, r) = (alignment.pattern_count(), rates.len());
        Ok(SerialPruner {
            tree,
            model,
            alignment,
            matrices,
            partials: vec![0.0; (tree.tip_count() - 1) * r * c * s],
            scales: vec![0.0; (tree.tip_count() - 1) * c],
        })
    }

    /// Per-pattern root mixture and cumulative log scale, optionally with
    /// one branch's matrices substituted (e.g. by derivative matrices, in
    /// which case values may be negative).
    fn prune(&mut self, substitute: Option<(usize, &[Vec<f64>])>) -> Vec<(f64, f64)> {
        let tree = self.tree;
        let s = self.model.state_count();
        let r_count = self.model.rate_categories().count();
        let c_count = self.alignment.pattern_count();
        let n = tree.tip_count();
        let slab = r_count * c_count * s;
        self.partials.fill(0.0);
        self.scales.fill(0.0);
        for node in tree.postorder_internals() {
            let (left, right) = tree.children_of(node);
            for c in 0..c_count {
                let mut max_abs = 0.0f64;
                for r in 0..r_count {
                    for state in 0..s {
                        let a = self.half_product(substitute, left, r, c, state);
                        let b = self.half_product(substitute, right, r, c, state);
                        let idx = (node - n) * slab + (r * c_count + c) * s + state;
                        self.partials[idx] = a * b;
                        max_abs = max_abs.max((a * b).abs());
                    }
                }
                let mut scale = 0.0;
                for child in [left, right] {
                    if child >= n {
                        scale += self.scales[(child - n) * c_count + c];
                    }
                }
                if max_abs > 0.0 && max_abs.is_finite() {
                    for r in 0..r_count {
                        let idx = (node - n) * slab + (r * c_count + c) * s;
                        for v in &mut self.partials[idx..idx + s] {
                            *v /= max_abs;
                        }
                    }
                    scale += max_abs.ln();
                }
                self.scales[(node - n) * c_count + c] = scale;
            }
        }
        let root = tree.root();
        let pi = self.model.root_distribution();
        let weights = self.model.rate_categories().weights();
        (0..c_count)
            .map(|c| {
                let mut mix = 0.0;
                for (r, &w) in weights.iter().enumerate() {
                    let idx = (root - n) * slab + (r * c_count + c) * s;
                    let dot: f64 =
                        self.partials[idx..idx + s].iter().zip(pi).map(|(&p, &f)| p * f).sum();
                    mix += w * dot;
                }
                (mix, self.scales[(root - n) * c_count + c])
            })
            .collect()
    }

    /// (P p_child)_state for one child, expanding tips on the fly.
    fn half_product(
        &self,
        substitute: Option<(usize, &[Vec<f64>])>,
        child: usize,
        r: usize,
        c: usize,
        state: usize,
    ) -> f64 {
        let s = self.model.state_count();
        let r_count = self.model.rate_categories().count();
        let c_count = self.alignment.pattern_count();
        let n = self.tree.tip_count();
        let matrix = match substitute {
            Some((branch, mats)) if branch == child => &mats[r],
            _ => &self.matrices[child * r_count + r],
        };
        let row = &matrix[state * s..(state + 1) * s];
        if child < n {
            match self.alignment.code(child, c) {
                TipCode::State(obs) => row[*obs as usize],
                TipCode::Mask(mask) => {
                    row.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(&p, _)| p).sum()
                }
            }
        } else {
            let idx = (child - n) * r_count * c_count * s + (r * c_count + c) * s;
            row.iter().zip(&self.partials[idx..idx + s]).map(|(&p, &v)| p * v).sum()
        }
    }
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * n];
    for s in 0..n {
        for t in 0..n {
            out[s * n + t] = m[(s, t)];
        }
    }
    out
}

/// Quadratic-time gradient oracle: for every branch, reruns pruning with
/// that branch's transition matrices replaced by their branch-length
/// derivatives. Exact same quantity as the linear-time engine, at
/// O(N^2) cost.
pub fn oracle_gradient_quadratic(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
) -> Result<Vec<f64>, EvalError> {
    let mut pruner = SerialPruner::new(tree, model, alignment)?;
    let base = pruner.prune(None);
    if let Some(c) = base.iter().position(|&(mix, _)| mix <= 0.0) {
        return Err(EvalError::ImpossiblePattern { pattern: c });
    }
    let weights: Vec<f64> = alignment.weights().iter().map(|&w| w as f64).collect();
    let rates = model.rate_categories().rates().to_vec();
    let effective = tree.effective_lengths();
    let mut gradient = vec![0.0; tree.branch_count()];
    for branch in 0..tree.branch_count() {
        let mut deriv_mats = Vec::with_capacity(rates.len());
        for &rate in &rates {
            deriv_mats.push(row_major(&model.transition_derivative(rate, effective[branch])?));
        }
        let substituted = pruner.prune(Some((branch, &deriv_mats)));
        let mut total = 0.0;
        for ((&w, &(num, num_scale)), &(den, den_scale)) in
            weights.iter().zip(&substituted).zip(&base)
        {
            total += w * (num / den) * (num_scale - den_scale).exp();
        }
        // The pruning derivative is in the effective length; branch-length
        // derivatives pick up the rate scalar.
        gradient[branch] = total * tree.branch_rate_scalars()[branch];
    }
    Ok(gradient)
}

/// Finite-difference gradient of the engine log-likelihood: central
/// differences of width `h`, switching to second-order one-sided stencils
/// when a branch is shorter than `h`.
pub fn finite_difference_gradient(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
    h: f64,
) -> Result<Vec<f64>, EvalError> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let backend = Backend::serial();
    let options = EvalOptions { scaling: true, keep_per_column: false };
    let mut evaluator = Evaluator::new(tree, model, alignment, &backend, options)?;
    evaluator.update_matrices()?;
    let log_likelihood_at = |ev: &mut Evaluator, branch: usize, x: f64| -> Result<f64, EvalError> {
        ev.set_branch_length(branch, x)?;
        ev.postorder()?;
        ev.log_likelihood()
    };
    let lengths = tree.branch_lengths().to_vec();
    let mut gradient = vec![0.0; tree.branch_count()];
    for (branch, &b) in lengths.iter().enumerate() {
        gradient[branch] = if b >= h {
            let hi = log_likelihood_at(&mut evaluator, branch, b + h)?;
            let lo = log_likelihood_at(&mut evaluator, branch, b - h)?;
            (hi - lo) / (2.0 * h)
        } else {
            let f0 = log_likelihood_at(&mut evaluator, branch, b)?;
            let f1 = log_likelihood_at(&mut evaluator, branch, b + h)?;
            let f2 = log_likelihood_at(&mut evaluator, branch, b + 2.0 * h)?;
            (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        };
        evaluator.set_branch_length(branch, b)?;
    }
    Ok(gradient)
}
