//! CTMC substitution models: rate matrices, rate-category mixtures, and
//! finite-time transition probability matrices with their branch-length
//! derivatives.

mod config;
mod expm;
pub mod gamma;
pub mod genetic_code;
mod matrices;

pub use config::{GammaConfig, ModelConfig};
pub use expm::{expm_pade, EigenSystem, Exponentiator};
pub use gamma::discrete_gamma;
pub use genetic_code::GeneticCode;
pub use matrices::TransitionMatrixSet;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("model validation failed: {0}")]
    Validation(String),
    #[error("unknown genetic code `{0}` (expected `universal` or `vertebrate-mito`)")]
    UnknownGeneticCode(String),
    #[error("branch length must be non-negative and finite, got {0}")]
    NegativeBranchLength(f64),
}

/// Pads state counts above 4 to the next multiple of 16 for aligned access.
pub fn padded_state_count(state_count: usize) -> usize {
    if state_count > 4 {
        state_count.div_ceil(16) * 16
    } else {
        state_count
    }
}

/// An infinitesimal CTMC generator normalized to one expected substitution
/// per unit branch length, with its stationary (root prior) distribution.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    state_count: usize,
    /// Row-major entries; row s holds the rates out of state s.
    entries: Vec<f64>,
    stationary: Vec<f64>,
}

impl RateMatrix {
    /// General time-reversible nucleotide model. Exchangeabilities are in
    /// (AC, AG, AT, CG, CT, GT) order over states A, C, G, T.
    pub fn gtr(exchangeabilities: &[f64; 6], frequencies: &[f64; 4]) -> Result<Self, ModelError> {
        if exchangeabilities.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(ModelError::ParameterDomain(
                "GTR exchangeabilities must all be positive".to_string(),
            ));
        }
        let freqs = validated_frequencies(frequencies, 1e-9)?;
        let mut sym = [[0.0f64; 4]; 4];
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for (&(s, t), &x) in pairs.iter().zip(exchangeabilities.iter()) {
            sym[s][t] = x;
            sym[t][s] = x;
        }
        let mut entries = vec![0.0; 16];
        for s in 0..4 {
            for t in 0..4 {
                if s != t {
                    entries[s * 4 + t] = sym[s][t] * freqs[t];
                }
            }
        }
        Self::from_off_diagonal(4, entries, freqs)
    }

    /// Goldman-Yang style codon model: single-nucleotide codon changes get a
    /// rate of pi_j times kappa for transitions and omega for nonsynonymous
    /// changes; multi-nucleotide changes are forbidden.
    pub fn codon_m0(params: &CodonModelParams) -> Result<Self, ModelError> {
        let code = &params.genetic_code;
        let n = code.state_count();
        if !(params.kappa > 0.0) || !(params.omega > 0.0) {
            return Err(ModelError::ParameterDomain(
                "kappa and omega must be positive".to_string(),
            ));
        }
        let freqs = match &params.codon_frequencies {
            Some(f) => {
                if f.len() != n {
                    return Err(ModelError::Validation(format!(
                        "codon frequencies must cover the {n} sense codons of the \
                         {} code (stop codons excluded), got {} entries",
                        code.name(),
                        f.len()
                    )));
                }
                validated_frequencies(f, 1e-9)?
            }
            None => vec![1.0 / n as f64; n],
        };
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if let Some(step) = code.single_step(i, j) {
                    let mut rate = freqs[j];
                    if step.is_transition {
                        rate *= params.kappa;
                    }
                    if !step.is_synonymous {
                        rate *= params.omega;
                    }
                    entries[i * n + j] = rate;
                }
            }
        }
        Self::from_off_diagonal(n, entries, freqs)
    }

    /// Generic entry point for user-supplied generators of any state count
    /// (for example Markov-modulated constructions). Diagonals are reset
    /// from the off-diagonal rows and the matrix is mean-one normalized.
    pub fn from_raw(
        state_count: usize,
        off_diagonal_row_major: Vec<f64>,
        stationary: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if state_count < 2 {
            return Err(ModelError::ParameterDomain(
                "state count must be at least 2".to_string(),
            ));
        }
        if off_diagonal_row_major.len() != state_count * state_count {
            return Err(ModelError::Validation(format!(
                "expected {} entries, got {}",
                state_count * state_count,
                off_diagonal_row_major.len()
            )));
        }
        let freqs = validated_frequencies(&stationary, 1e-9)?;
        Self::from_off_diagonal(state_count, off_diagonal_row_major, freqs)
    }

    fn from_off_diagonal(
        state_count: usize,
        mut entries: Vec<f64>,
        stationary: Vec<f64>,
    ) -> Result<Self, ModelError> {
        for s in 0..state_count {
            let mut row_sum = 0.0;
            for t in 0..state_count {
                if s != t {
                    let v = entries[s * state_count + t];
                    if v < 0.0 || !v.is_finite() {
                        return Err(ModelError::Validation(format!(
                            "off-diagonal rate ({s},{t}) = {v} must be non-negative"
                        )));
                    }
                    row_sum += v;
                }
            }
            entries[s * state_count + s] = -row_sum;
        }
        let mut matrix = RateMatrix { state_count, entries, stationary };
        let expected_rate = -(0..state_count)
            .map(|s| matrix.stationary[s] * matrix.entry(s, s))
            .sum::<f64>();
        if !(expected_rate > 0.0) {
            return Err(ModelError::Validation(
                "generator has zero expected substitution rate".to_string(),
            ));
        }
        for v in &mut matrix.entries {
            *v /= expected_rate;
        }
        Ok(matrix)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn entry(&self, s: usize, t: usize) -> f64 {
        self.entries[s * self.state_count + t]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.state_count, self.state_count, &self.entries)
    }

    /// Checks the construction invariants: zero row sums, unit expected
    /// rate, and (when reversible) stationarity of pi.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.state_count;
        for s in 0..n {
            let row_sum: f64 = (0..n).map(|t| self.entry(s, t)).sum();
            if row_sum.abs() > 1e-12 {
                return Err(ModelError::Validation(format!("row {s} sums to {row_sum}")));
            }
        }
        let pi_sum: f64 = self.stationary.iter().sum();
        if (pi_sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Validation(format!("stationary sums to {pi_sum}")));
        }
        let rate = -(0..n).map(|s| self.stationary[s] * self.entry(s, s)).sum::<f64>();
        if (rate - 1.0).abs() > 1e-12 {
            return Err(ModelError::Validation(format!("expected rate {rate} != 1")));
        }
        if self.is_reversible(1e-10) {
            for t in 0..n {
                let flow: f64 = (0..n).map(|s| self.stationary[s] * self.entry(s, t)).sum();
                if flow.abs() > 1e-10 {
                    return Err(ModelError::Validation(format!(
                        "pi is not stationary: (pi Q)_{t} = {flow}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_reversible(&self, tol: f64) -> bool {
        let n = self.state_count;
        for s in 0..n {
            for t in (s + 1)..n {
                let a = self.stationary[s] * self.entry(s, t);
                let b = self.stationary[t] * self.entry(t, s);
                if (a - b).abs() > tol * a.abs().max(b.abs()).max(1e-30) && (a - b).abs() > 1e-14 {
                    return false;
                }
            }
        }
        true
    }
}

fn validated_frequencies(freqs: &[f64], sum_tol: f64) -> Result<Vec<f64>, ModelError> {
    if freqs.iter().any(|&f| f < 0.0 || !f.is_finite()) {
        return Err(ModelError::Validation(
            "frequencies must be non-negative and finite".to_string(),
        ));
    }
    let sum: f64 = freqs.iter().sum();
    if (sum - 1.0).abs() > sum_tol {
        return Err(ModelError::Validation(format!(
            "frequencies sum to {sum}, expected 1 within {sum_tol}"
        )));
    }
    Ok(freqs.iter().map(|&f| f / sum).collect())
}

/// Discrete rate-variation mixture with weights summing to one and a
/// mean-one weighted rate.
#[derive(Debug, Clone)]
pub struct RateCategories {
    rates: Vec<f64>,
    weights: Vec<f64>,
}

impl RateCategories {
    pub fn new(rates: Vec<f64>, weights: Vec<f64>) -> Result<Self, ModelError> {
        if rates.is_empty() || rates.len() != weights.len() {
            return Err(ModelError::Validation(
                "rates and weights must be non-empty and equally long".to_string(),
            ));
        }
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(ModelError::Validation("category rates must be positive".to_string()));
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Validation(format!("weights sum to {wsum}")));
        }
        let mean: f64 = rates.iter().zip(&weights).map(|(r, w)| r * w).sum();
        if (mean - 1.0).abs() > 1e-9 {
            return Err(ModelError::Validation(format!("mean rate {mean} != 1")));
        }
        Ok(RateCategories { rates, weights })
    }

    /// The single unit-rate category.
    pub fn single() -> Self {
        RateCategories { rates: vec![1.0], weights: vec![1.0] }
    }

    pub fn count(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Parameters of the M0 codon model.
#[derive(Debug, Clone)]
pub struct CodonModelParams {
    pub kappa: f64,
    pub omega: f64,
    /// Sense-codon frequencies; `None` means uniform.
    pub codon_frequencies: Option<Vec<f64>>,
    pub genetic_code: GeneticCode,
}

/// A fully constructed substitution model: generator, exponentiation
/// strategy, rate mixture, and layout padding. Immutable after
/// construction and shareable across workers.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    rate_matrix: RateMatrix,
    exponentiator: Exponentiator,
    rate_categories: RateCategories,
    s_pad: usize,
}

impl ModelInstance {
    pub fn new(rate_matrix: RateMatrix, rate_categories: RateCategories) -> Self {
        let s_pad = padded_state_count(rate_matrix.state_count());
        Self::with_padding(rate_matrix, rate_categories, s_pad)
    }

    /// Builds with an explicit padded state count. The unpadded variant
    /// (`s_pad == state_count`) is the reference layout used by the padding
    /// invariance checks.
    pub fn with_padding(
        rate_matrix: RateMatrix,
        rate_categories: RateCategories,
        s_pad: usize,
    ) -> Self {
        assert!(s_pad >= rate_matrix.state_count());
        let exponentiator = Exponentiator::for_rate_matrix(&rate_matrix);
        ModelInstance { rate_matrix, exponentiator, rate_categories, s_pad }
    }

    pub fn state_count(&self) -> usize {
        self.rate_matrix.state_count()
    }

    pub fn padded_state_count(&self) -> usize {
        self.s_pad
    }

    pub fn rate_matrix(&self) -> &RateMatrix {
        &self.rate_matrix
    }

    pub fn rate_categories(&self) -> &RateCategories {
        &self.rate_categories
    }

    pub fn exponentiator(&self) -> &Exponentiator {
        &self.exponentiator
    }

    /// Root prior distribution (the stationary distribution of Q).
    pub fn root_distribution(&self) -> &[f64] {
        self.rate_matrix.stationary()
    }

    /// exp(rate * length * Q), unpadded and row-major.
    pub fn transition_matrix(&self, rate: f64, length: f64) -> Result<DMatrix<f64>, ModelError> {
        self.exponentiator.transition_matrix(rate, length)
    }

    /// d/d(length) exp(rate * length * Q), unpadded and row-major.
    pub fn transition_derivative(
        &self,
        rate: f64,
        length: f64,
    ) -> Result<DMatrix<f64>, ModelError> {
        self.exponentiator.transition_derivative(rate, length)
    }
}
