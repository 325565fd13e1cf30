//! Hamiltonian Monte Carlo over branch-length-specific parameters.
//!
//! A fixed-topology sampler: positions are log-transformed branch lengths
//! or branch rate scalars, the gradient comes from the linear-time engine,
//! and step sizes are tuned by dual averaging during warmup.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::backend::Backend;
use crate::core::{EvalError, EvalOptions, Evaluator};
use crate::model::ModelInstance;
use crate::treedata::{PatternizedAlignment, Phylogeny};

#[derive(Debug, Error)]
pub enum HmcError {
    #[error("hmc configuration error: {0}")]
    Config(String),
    #[error("initial state has non-finite posterior")]
    NonFiniteStart,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which branch-specific parameters the chain samples; both are kept
/// positive through a log transform with the Jacobian folded into the
/// posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    BranchLengths,
    RateScalars,
}

/// Prior over the sampled parameters.
#[derive(Debug, Clone, Copy)]
pub enum Prior {
    /// Independent exponential(rate) on branch lengths.
    ExponentialBranchLengths { rate: f64 },
    /// Independent lognormal(mu, sigma) on rate scalars.
    LogNormalRateScalars { mu: f64, sigma: f64 },
}

impl Prior {
    pub fn default_for(parameterization: Parameterization) -> Self {
        match parameterization {
            Parameterization::BranchLengths => Prior::ExponentialBranchLengths { rate: 1.0 },
            Parameterization::RateScalars => Prior::LogNormalRateScalars { mu: 0.0, sigma: 1.0 },
        }
    }

    /// Log prior density plus log |d(param)/dx| for x = ln(param), and its
    /// gradient in x.
    fn log_density_in_x(&self, x: &[f64], params: &[f64]) -> (f64, Vec<f64>) {
        match *self {
            Prior::ExponentialBranchLengths { rate } => {
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(x.len());
                for (&xi, &b) in x.iter().zip(params) {
                    value += rate.ln() - rate * b + xi;
                    grad.push(1.0 - rate * b);
                }
                (value, grad)
            }
            Prior::LogNormalRateScalars { mu, sigma } => {
                // In x-space the lognormal becomes a plain normal.
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(x.len());
                let norm = -(sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
                for &xi in x {
                    let z = (xi - mu) / sigma;
                    value += norm - 0.5 * z * z;
                    grad.push(-z / sigma);
                }
                (value, grad)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub iterations: usize,
    /// Warmup iterations with dual-averaging step-size tuning; discarded
    /// from the chain.
    pub warmup: usize,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Per-parameter mass-matrix diagonal; `None` means unit masses.
    pub mass_diagonal: Option<Vec<f64>>,
    pub parameterization: Parameterization,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 0.05,
            leapfrog_steps: 10,
            iterations: 1000,
            warmup: 0,
            target_acceptance: 0.8,
            seed: 42,
            mass_diagonal: None,
            parameterization: Parameterization::BranchLengths,
        }
    }
}

/// One recorded state of the chain.
#[derive(Debug, Clone)]
pub struct HmcSample {
    pub iteration: usize,
    pub log_posterior: f64,
    /// Parameters on their natural (positive) scale.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HmcDiagnostics {
    pub iterations: usize,
    pub warmup: usize,
    pub acceptance_rate: f64,
    /// Divergent trajectories after warmup, at the tuned step size.
    pub divergences: u64,
    /// Divergent trajectories during step-size tuning.
    pub warmup_divergences: u64,
    pub tuned_step_size: f64,
    pub leapfrog_steps: usize,
    pub gradient_evaluations: u64,
    pub mean_ns_per_iteration: u64,
    /// Effective sample size per parameter (post-warmup draws).
    pub ess: Vec<f64>,
}

#[derive(Debug)]
pub struct HmcRun {
    pub chain: Vec<HmcSample>,
    pub diagnostics: HmcDiagnostics,
}

/// A differentiable unnormalized log density over unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns `None` when the density or gradient is non-finite.
    fn value_and_gradient(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

/// Phylogenetic log posterior in log-parameter space.
pub struct PhyloPosterior<'a> {
    evaluator: Evaluator<'a>,
    prior: Prior,
    gradient_evaluations: u64,
}

impl<'a> PhyloPosterior<'a> {
    /// Builds the posterior. For rate-scalar sampling the tree is expected
    /// to carry the fixed times as rate scalars (see `hmc_sample`).
    pub fn new(
        tree: &'a Phylogeny,
        model: &'a ModelInstance,
        alignment: &'a PatternizedAlignment,
        backend: &'a Backend,
        prior: Prior,
    ) -> Result<Self, HmcError> {
        let options = EvalOptions { scaling: true, keep_per_column: false };
        let mut evaluator = Evaluator::new(tree, model, alignment, backend, options)?;
        evaluator.update_matrices()?;
        Ok(PhyloPosterior { evaluator, prior, gradient_evaluations: 0 })
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.gradient_evaluations
    }
}

impl LogDensity for PhyloPosterior<'_> {
    fn dim(&self) -> usize {
        self.evaluator.effective_lengths().len()
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let params: Vec<f64> = x.iter().map(|&v| v.exp()).collect();
        if params.iter().any(|p| !p.is_finite()) {
            return None;
        }
        self.gradient_evaluations += 1;
        let run = (|| -> Result<(f64, Vec<f64>), EvalError> {
            self.evaluator.set_all_branch_lengths(&params)?;
            self.evaluator.postorder()?;
            let log_likelihood = self.evaluator.log_likelihood()?;
            self.evaluator.preorder()?;
            self.evaluator.gradient_columns()?;
            let per_branch = self.evaluator.reduce_columns()?;
            Ok((log_likelihood, per_branch))
        })();
        let (log_likelihood, per_branch) = run.ok()?;
        let (prior_value, prior_grad) = self.prior.log_density_in_x(x, &params);
        let value = log_likelihood + prior_value;
        if !value.is_finite() {
            return None;
        }
        // d/dx_i = b_i * dlogP/db_i + prior term.
        let grad: Vec<f64> = per_branch
            .iter()
            .zip(&params)
            .zip(&prior_grad)
            .map(|((&g, &b), &pg)| g * b + pg)
            .collect();
        if grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((value, grad))
    }
}

/// One leapfrog trajectory; returns the end-state log density, or `None`
/// on a non-finite step. `grad` must hold the gradient at the entry
/// position and is left holding the exit gradient.
pub fn leapfrog<T: LogDensity>(
    target: &mut T,
    x: &mut [f64],
    p: &mut [f64],
    grad: &mut Vec<f64>,
    step_size: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Option<f64> {
    let mut value = f64::NAN;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * step_size * gi;
        }
        for ((xi, pi), &im) in x.iter_mut().zip(p.iter()).zip(inv_mass) {
            *xi += step_size * pi * im;
        }
        let (v, g) = target.value_and_gradient(x)?;
        value = v;
        *grad = g;
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * step_size * gi;
        }
    }
    Some(value)
}

fn kinetic_energy(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(&pi, &im)| pi * pi * im).sum::<f64>()
}

/// RNG and mass bookkeeping for one chain.
struct HmcDriver {
    step_size: f64,
    leapfrog_steps: usize,
    inv_mass: Vec<f64>,
    mass_std: Vec<f64>,
    rng: StdRng,
}

impl HmcDriver {
    fn new(config: &HmcConfig, dim: usize) -> Result<Self, HmcError> {
        if !(config.step_size > 0.0) || config.leapfrog_steps == 0 {
            return Err(HmcError::Config(
                "step size and leapfrog steps must be positive".to_string(),
            ));
        }
        let mass = match &config.mass_diagonal {
            Some(m) if m.len() != dim => {
                return Err(HmcError::Config(format!(
                    "mass diagonal has {} entries, expected {dim}",
                    m.len()
                )))
            }
            Some(m) if m.iter().any(|&v| !(v > 0.0)) => {
                return Err(HmcError::Config("mass entries must be positive".to_string()))
            }
            Some(m) => m.clone(),
            None => vec![1.0; dim],
        };
        Ok(HmcDriver {
            step_size: config.step_size,
            leapfrog_steps: config.leapfrog_steps,
            inv_mass: mass.iter().map(|&m| 1.0 / m).collect(),
            mass_std: mass.iter().map(|&m| m.sqrt()).collect(),
            rng: StdRng::seed_from_u64(config.seed),
        })
    }

    fn draw_momentum(&mut self) -> Vec<f64> {
        self.mass_std
            .iter()
            .map(|&s| s * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random_range(0.0..1.0)
    }
}

/// Samples the posterior over branch-specific parameters with
/// Metropolis-corrected leapfrog trajectories.
///
/// `Parameterization::RateScalars` samples per-branch rate multipliers of
/// fixed branch times; internally the roles of lengths and scalars are
/// swapped so the engine's chain rule yields d log P / d scalar directly.
pub fn hmc_sample(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
    prior: Prior,
    config: &HmcConfig,
    backend: &Backend,
) -> Result<HmcRun, HmcError> {
    let swapped;
    let (sample_tree, initial): (&Phylogeny, Vec<f64>) = match config.parameterization {
        Parameterization::BranchLengths => (tree, tree.branch_lengths().to_vec()),
        Parameterization::RateScalars => {
            let mut t = tree.clone();
            let times = tree.branch_lengths().to_vec();
            let scalars = tree.branch_rate_scalars().to_vec();
            for (b, &s) in scalars.iter().enumerate() {
                t.set_branch_length(b, s);
            }
            t.set_branch_rate_scalars(times).map_err(|e| HmcError::Config(e.to_string()))?;
            swapped = t;
            (&swapped, scalars)
        }
    };
    let mut posterior = PhyloPosterior::new(sample_tree, model, alignment, backend, prior)?;
    let dim = posterior.dim();
    let mut driver = HmcDriver::new(config, dim)?;

    let mut x: Vec<f64> = initial
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { (1e-6f64).ln() })
        .collect();
    let (mut value, mut grad) =
        posterior.value_and_gradient(&x).ok_or(HmcError::NonFiniteStart)?;

    // Dual-averaging state for warmup step-size tuning.
    let mu = (10.0 * config.step_size).ln();
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);
    let mut h_bar = 0.0;
    let mut log_eps_bar = config.step_size.ln();

    let total = config.warmup + config.iterations;
    let mut chain = Vec::with_capacity(config.iterations);
    let mut accepted = 0u64;
    let mut divergences = 0u64;
    let mut warmup_divergences = 0u64;
    let clock = std::time::Instant::now();
    for iteration in 0..total {
        let p0 = driver.draw_momentum();
        let h0 = -value + kinetic_energy(&p0, &driver.inv_mass);
        let mut x_new = x.clone();
        let mut p_new = p0.clone();
        let mut grad_new = grad.clone();
        let end = leapfrog(
            &mut posterior,
            &mut x_new,
            &mut p_new,
            &mut grad_new,
            driver.step_size,
            driver.leapfrog_steps,
            &driver.inv_mass,
        );
        let (alpha, divergent) = match end {
            Some(v) => {
                let h1 = -v + kinetic_energy(&p_new, &driver.inv_mass);
                if h1.is_finite() {
                    ((-(h1 - h0)).exp().min(1.0), false)
                } else {
                    (0.0, true)
                }
            }
            None => (0.0, true),
        };
        if divergent {
            if iteration < config.warmup {
                warmup_divergences += 1;
            } else {
                divergences += 1;
            }
        }
        if !divergent && driver.uniform() < alpha {
            x = x_new;
            grad = grad_new;
            value = end.expect("accepted trajectory has a value");
            if iteration >= config.warmup {
                accepted += 1;
            }
        }
        if iteration < config.warmup {
            // Dual averaging toward the target acceptance probability.
            let t = (iteration + 1) as f64;
            h_bar = (1.0 - 1.0 / (t + t0)) * h_bar
                + (config.target_acceptance - alpha) / (t + t0);
            let log_eps = mu - t.sqrt() / gamma * h_bar;
            let w = t.powf(-kappa);
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
            driver.step_size = log_eps.exp();
            if iteration + 1 == config.warmup {
                driver.step_size = log_eps_bar.exp();
            }
        } else {
            chain.push(HmcSample {
                iteration: iteration - config.warmup,
                log_posterior: value,
                params: x.iter().map(|&v| v.exp()).collect(),
            });
        }
    }
    let elapsed = clock.elapsed().as_nanos() as u64;
    let ess = (0..dim)
        .map(|d| {
            let series: Vec<f64> = chain.iter().map(|s| s.params[d]).collect();
            effective_sample_size(&series)
        })
        .collect();
    let diagnostics = HmcDiagnostics {
        iterations: config.iterations,
        warmup: config.warmup,
        acceptance_rate: accepted as f64 / config.iterations.max(1) as f64,
        divergences,
        warmup_divergences,
        tuned_step_size: driver.step_size,
        leapfrog_steps: driver.leapfrog_steps,
        gradient_evaluations: posterior.gradient_evaluations(),
        mean_ns_per_iteration: elapsed / total.max(1) as u64,
        ess,
    };
    Ok(HmcRun { chain, diagnostics })
}

/// Effective sample size via the initial-positive-sequence estimator on
/// paired autocorrelations.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let max_lag = (n / 2).min(2000);
    let rho = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += (series[i] - mean) * (series[i + lag] - mean);
        }
        acc / (n as f64 * var)
    };
    let mut sum_pairs = 0.0;
    let mut lag = 1;
    while lag + 1 <= max_lag {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        lag += 2;
    }
    n as f64 / (1.0 + 2.0 * sum_pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard normal in d dimensions.
    struct Gaussian {
        dim: usize,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn value_and_gradient(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
            let v = -0.5 * x.iter().map(|&v| v * v).sum::<f64>();
            Some((v, x.iter().map(|&v| -v).collect()))
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mut target = Gaussian { dim: 3 };
        let mut x = vec![0.3, -1.2, 0.7];
        let (_, mut grad) = target.value_and_gradient(&x).unwrap();
        let mut p = vec![0.5, 0.1, -0.8];
        let inv_mass = vec![1.0; 3];
        let x0 = x.clone();
        let p0 = p.clone();
        leapfrog(&mut target, &mut x, &mut p, &mut grad, 0.05, 25, &inv_mass).unwrap();
        // Negate momentum and integrate back.
        for pi in &mut p {
            *pi = -*pi;
        }
        let (_, mut grad_back) = target.value_and_gradient(&x).unwrap();
        leapfrog(&mut target, &mut x, &mut p, &mut grad_back, 0.05, 25, &inv_mass).unwrap();
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-8, "position not recovered: {a} vs {b}");
        }
        for (a, b) in p.iter().zip(&p0) {
            assert!((-a - b).abs() < 1e-8, "momentum not recovered");
        }
    }

    #[test]
    fn energy_error_shrinks_quadratically() {
        let mut target = Gaussian { dim: 2 };
        let x0 = vec![1.0, -0.5];
        let p0 = vec![-0.3, 0.9];
        let inv_mass = vec![1.0; 2];
        let trajectory_time = 1.6f64;
        let mut errors = Vec::new();
        for &eps in &[0.2, 0.1, 0.05] {
            let steps = (trajectory_time / eps).round() as usize;
            let mut x = x0.clone();
            let mut p = p0.clone();
            let (v0, mut grad) = target.value_and_gradient(&x).unwrap();
            let h0 = -v0 + kinetic_energy(&p, &inv_mass);
            let v1 =
                leapfrog(&mut target, &mut x, &mut p, &mut grad, eps, steps, &inv_mass).unwrap();
            let h1 = -v1 + kinetic_energy(&p, &inv_mass);
            errors.push((h1 - h0).abs());
        }
        let order1 = (errors[0] / errors[1]).log2();
        let order2 = (errors[1] / errors[2]).log2();
        assert!(order1 >= 1.8, "observed order {order1}");
        assert!(order2 >= 1.8, "observed order {order2}");
    }

    #[test]
    fn ess_distinguishes_iid_from_trending_series() {
        let mut rng = StdRng::seed_from_u64(3);
        let series: Vec<f64> = (0..4000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ess = effective_sample_size(&series);
        assert!(ess > 2000.0, "iid ess too small: {ess}");
        let trending: Vec<f64> = (0..4000).map(|i| i as f64).collect();
        assert!(effective_sample_size(&trending) < 100.0);
    }
}
