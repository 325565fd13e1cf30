//! Per-branch, per-rate transition probability matrices in the padded,
//! column-wise flattened layout consumed by the kernels.

use super::{ModelError, ModelInstance};

/// Finite-time transition matrices P(rate * length) for every branch and
/// rate category. Each matrix is `s_pad * s_pad`, column-major (entry
/// (row s, col t) lives at `t * s_pad + s`), with padded rows and columns
/// identically zero.
#[derive(Debug, Clone)]
pub struct TransitionMatrixSet {
    state_count: usize,
    s_pad: usize,
    branch_count: usize,
    rate_count: usize,
    data: Vec<f64>,
}

impl TransitionMatrixSet {
    /// Builds matrices for all branches from their effective lengths
    /// (branch length times any branch rate scalar).
    pub fn build(model: &ModelInstance, effective_lengths: &[f64]) -> Result<Self, ModelError> {
        let mut set = Self::zeroed(
            model.state_count(),
            model.padded_state_count(),
            effective_lengths.len(),
            model.rate_categories().count(),
        );
        for (branch, &len) in effective_lengths.iter().enumerate() {
            set.update_branch(model, branch, len)?;
        }
        Ok(set)
    }

    /// Same-shape all-zero set, the destination of transpose launches.
    pub fn zeroed(state_count: usize, s_pad: usize, branch_count: usize, rate_count: usize) -> Self {
        TransitionMatrixSet {
            state_count,
            s_pad,
            branch_count,
            rate_count,
            data: vec![0.0; branch_count * rate_count * s_pad * s_pad],
        }
    }

    /// Recomputes the matrices of one branch, for all rate categories.
    pub fn update_branch(
        &mut self,
        model: &ModelInstance,
        branch: usize,
        effective_length: f64,
    ) -> Result<(), ModelError> {
        let s = self.state_count;
        let s_pad = self.s_pad;
        for (r, &rate) in model.rate_categories().rates().iter().enumerate() {
            let p = model.transition_matrix(rate, effective_length)?;
            let dst = self.matrix_index(branch, r);
            let block = &mut self.data[dst..dst + s_pad * s_pad];
            block.fill(0.0);
            for t in 0..s {
                for row in 0..s {
                    block[t * s_pad + row] = p[(row, t)];
                }
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn padded_state_count(&self) -> usize {
        self.s_pad
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    pub fn rate_count(&self) -> usize {
        self.rate_count
    }

    pub fn matrix_count(&self) -> usize {
        self.branch_count * self.rate_count
    }

    fn matrix_index(&self, branch: usize, rate: usize) -> usize {
        (branch * self.rate_count + rate) * self.s_pad * self.s_pad
    }

    /// Padded column-major matrix for one branch and rate.
    pub fn matrix(&self, branch: usize, rate: usize) -> &[f64] {
        let start = self.matrix_index(branch, rate);
        &self.data[start..start + self.s_pad * self.s_pad]
    }

    /// All rate-category matrices of one branch, contiguous (rate-major).
    pub fn branch_matrices(&self, branch: usize) -> &[f64] {
        let mat_len = self.s_pad * self.s_pad;
        let start = branch * self.rate_count * mat_len;
        &self.data[start..start + self.rate_count * mat_len]
    }

    /// Flat matrix slab by linear (branch, rate) index.
    pub fn matrix_flat(&self, flat: usize) -> &[f64] {
        let start = flat * self.s_pad * self.s_pad;
        &self.data[start..start + self.s_pad * self.s_pad]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    /// Probability entry P_(s, t) of one branch/rate matrix (unpadded view).
    pub fn entry(&self, branch: usize, rate: usize, s: usize, t: usize) -> f64 {
        self.matrix(branch, rate)[t * self.s_pad + s]
    }

    /// Checks row stochasticity of the unpadded block and exact zeros in
    /// the padded lanes.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (s, s_pad) = (self.state_count, self.s_pad);
        for b in 0..self.branch_count {
            for r in 0..self.rate_count {
                let m = self.matrix(b, r);
                for row in 0..s {
                    let sum: f64 = (0..s).map(|t| m[t * s_pad + row]).sum();
                    if (sum - 1.0).abs() > 1e-10 {
                        return Err(ModelError::Validation(format!(
                            "branch {b} rate {r} row {row} sums to {sum}"
                        )));
                    }
                }
                for t in 0..s_pad {
                    for row in 0..s_pad {
                        let v = m[t * s_pad + row];
                        if (row >= s || t >= s) && v != 0.0 {
                            return Err(ModelError::Validation(format!(
                                "padded entry ({row},{t}) of branch {b} rate {r} is {v}"
                            )));
                        }
                        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                            return Err(ModelError::Validation(format!(
                                "entry ({row},{t}) of branch {b} rate {r} out of range: {v}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
