//! Matrix exponentials for CTMC generators.
//!
//! Reversible generators are symmetrized through the pi^(1/2) similarity
//! transform and exponentiated through a symmetric eigendecomposition.
//! When the eigen reconstruction is poor (or the generator is not
//! reversible) a scaling-and-squaring Pade-13 path takes over.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ModelError, RateMatrix};

/// Residual bound for accepting the eigendecomposition route.
const EIGEN_RESIDUAL_TOL: f64 = 1e-9;

/// Eigendecomposition of a rate matrix: Q = U diag(values) U^-1.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    pub right_vectors: DMatrix<f64>,
    pub inverse_right_vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// Max-abs error of U diag(values) U^-1 against `q`.
    pub fn reconstruction_residual(&self, q: &RateMatrix) -> f64 {
        let n = q.state_count();
        let recon = &self.right_vectors
            * DMatrix::from_diagonal(&self.eigenvalues)
            * &self.inverse_right_vectors;
        let mut worst = 0.0f64;
        for s in 0..n {
            for t in 0..n {
                worst = worst.max((recon[(s, t)] - q.entry(s, t)).abs());
            }
        }
        worst
    }
}

/// Strategy for computing exp(rate * length * Q) and its derivative.
#[derive(Debug, Clone)]
pub enum Exponentiator {
    Eigen(EigenSystem),
    ScalingSquaring { generator: DMatrix<f64> },
}

impl Exponentiator {
    pub fn for_rate_matrix(q: &RateMatrix) -> Self {
        if let Some(eigen) = try_symmetric_eigen(q) {
            if eigen.reconstruction_residual(q) <= EIGEN_RESIDUAL_TOL {
                return Exponentiator::Eigen(eigen);
            }
        }
        Exponentiator::ScalingSquaring { generator: q.to_dmatrix() }
    }

    pub fn eigen_system(&self) -> Option<&EigenSystem> {
        match self {
            Exponentiator::Eigen(e) => Some(e),
            Exponentiator::ScalingSquaring { .. } => None,
        }
    }

    /// Row-stochastic transition matrix exp(rate * length * Q).
    pub fn transition_matrix(&self, rate: f64, length: f64) -> Result<DMatrix<f64>, ModelError> {
        check_scale_args(rate, length)?;
        let t = rate * length;
        match self {
            Exponentiator::Eigen(e) => Ok(recombine(e, |lambda| (lambda * t).exp())),
            Exponentiator::ScalingSquaring { generator } => Ok(expm_pade(&(generator * t))),
        }
    }

    /// Derivative of the transition matrix with respect to branch length:
    /// rate * Q * exp(rate * length * Q). Rows sum to zero.
    pub fn transition_derivative(
        &self,
        rate: f64,
        length: f64,
    ) -> Result<DMatrix<f64>, ModelError> {
        check_scale_args(rate, length)?;
        let t = rate * length;
        match self {
            Exponentiator::Eigen(e) => {
                Ok(recombine(e, |lambda| rate * lambda * (lambda * t).exp()))
            }
            Exponentiator::ScalingSquaring { generator } => {
                Ok(generator * expm_pade(&(generator * t)) * rate)
            }
        }
    }
}

fn check_scale_args(rate: f64, length: f64) -> Result<(), ModelError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(ModelError::ParameterDomain(format!(
            "rate multiplier must be positive and finite, got {rate}"
        )));
    }
    if length < 0.0 || !length.is_finite() {
        return Err(ModelError::NegativeBranchLength(length));
    }
    Ok(())
}

fn recombine(eigen: &EigenSystem, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = eigen.eigenvalues.len();
    let mut scaled = eigen.right_vectors.clone();
    for j in 0..n {
        let w = f(eigen.eigenvalues[j]);
        for i in 0..n {
            scaled[(i, j)] *= w;
        }
    }
    scaled * &eigen.inverse_right_vectors
}

/// Symmetric eigendecomposition of D Q D^-1 with D = diag(sqrt(pi)),
/// mapped back to eigenvectors of Q. Returns `None` when pi has zeros or
/// the symmetrized matrix is visibly asymmetric (non-reversible Q).
fn try_symmetric_eigen(q: &RateMatrix) -> Option<EigenSystem> {
    let n = q.state_count();
    let pi = q.stationary();
    if pi.iter().any(|&p| p <= 0.0) {
        return None;
    }
    let sqrt_pi: Vec<f64> = pi.iter().map(|&p| p.sqrt()).collect();
    let mut sym = DMatrix::zeros(n, n);
    let mut asym = 0.0f64;
    for s in 0..n {
        for t in 0..n {
            sym[(s, t)] = q.entry(s, t) * sqrt_pi[s] / sqrt_pi[t];
        }
    }
    for s in 0..n {
        for t in (s + 1)..n {
            asym = asym.max((sym[(s, t)] - sym[(t, s)]).abs());
            let avg = 0.5 * (sym[(s, t)] + sym[(t, s)]);
            sym[(s, t)] = avg;
            sym[(t, s)] = avg;
        }
    }
    if asym > 1e-8 {
        return None;
    }
    let eigen = SymmetricEigen::new(sym);
    let mut right = DMatrix::zeros(n, n);
    let mut inverse = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            right[(i, j)] = eigen.eigenvectors[(i, j)] / sqrt_pi[i];
            inverse[(j, i)] = eigen.eigenvectors[(i, j)] * sqrt_pi[i];
        }
    }
    Some(EigenSystem {
        eigenvalues: eigen.eigenvalues,
        right_vectors: right,
        inverse_right_vectors: inverse,
    })
}

/// Pade-13 scaling-and-squaring matrix exponential.
pub fn expm_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    const THETA_13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let ident = DMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &ident;
    let u = &scaled * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &ident;
    let mut result = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Pade denominator is singular");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pade_matches_scalar_exponential() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -1.2, 2.5]));
        let e = expm_pade(&a);
        for i in 0..3 {
            assert_abs_diff_eq!(e[(i, i)], a[(i, i)].exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pade_handles_large_norm_via_squaring() {
        let a = DMatrix::from_row_slice(2, 2, &[-40.0, 40.0, 10.0, -10.0]);
        let e = expm_pade(&a);
        // Rows of exp(Q) for a generator stay stochastic.
        for i in 0..2 {
            assert_abs_diff_eq!(e.row(i).sum(), 1.0, epsilon = 1e-10);
        }
    }
}
