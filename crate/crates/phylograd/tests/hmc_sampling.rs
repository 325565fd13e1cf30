//! HMC sampler checks on the phylogenetic posterior.

use phylograd::backend::Backend;
use phylograd::hmc::{
    hmc_sample, leapfrog, HmcConfig, LogDensity, Parameterization, PhyloPosterior, Prior,
};
use phylograd::model::{ModelInstance, RateCategories, RateMatrix};
use phylograd::sim;
use phylograd::treedata::compress_patterns;
use phylograd::PatternizedAlignment;
use phylograd::Phylogeny;

fn fixture(seed: u64, tips: usize, sites: usize) -> (Phylogeny, ModelInstance, PatternizedAlignment) {
    let mut rng = sim::seeded_rng(seed);
    let tree = sim::random_tree(&mut rng, tips, (0.05, 0.4));
    let model = ModelInstance::new(
        RateMatrix::gtr(&[1.0; 6], &[0.25; 4]).unwrap(),
        RateCategories::single(),
    );
    let alignment = compress_patterns(&sim::simulate_alignment(&mut rng, &tree, &model, sites)).unwrap();
    (tree, model, alignment)
}

#[test]
fn tiny_steps_are_almost_always_accepted() {
    let (tree, model, alignment) = fixture(601, 5, 50);
    let backend = Backend::serial();
    let config = HmcConfig {
        step_size: 1e-6,
        leapfrog_steps: 1,
        iterations: 100,
        warmup: 0,
        seed: 5,
        ..HmcConfig::default()
    };
    let prior = Prior::default_for(Parameterization::BranchLengths);
    let run = hmc_sample(&tree, &model, &alignment, prior, &config, &backend).unwrap();
    assert!(
        run.diagnostics.acceptance_rate >= 0.999,
        "acceptance {}",
        run.diagnostics.acceptance_rate
    );
    assert_eq!(run.diagnostics.divergences, 0);
}

#[test]
fn chains_reproduce_across_runs_and_worker_counts() {
    let (tree, model, alignment) = fixture(602, 5, 40);
    let config = HmcConfig {
        step_size: 0.03,
        leapfrog_steps: 5,
        iterations: 50,
        warmup: 20,
        seed: 99,
        ..HmcConfig::default()
    };
    let prior = Prior::default_for(Parameterization::BranchLengths);
    let serial = Backend::serial();
    let first = hmc_sample(&tree, &model, &alignment, prior, &config, &serial).unwrap();
    let second = hmc_sample(&tree, &model, &alignment, prior, &config, &serial).unwrap();
    let parallel = Backend::parallel(4).unwrap();
    let third = hmc_sample(&tree, &model, &alignment, prior, &config, &parallel).unwrap();
    for (a, b) in first.chain.iter().zip(&second.chain) {
        assert_eq!(a.log_posterior.to_bits(), b.log_posterior.to_bits());
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    for (a, c) in first.chain.iter().zip(&third.chain) {
        assert_eq!(a.log_posterior.to_bits(), c.log_posterior.to_bits());
        for (x, y) in a.params.iter().zip(&c.params) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn phylo_trajectory_replays_backwards() {
    // Detailed-balance smoke test: negate the momentum at the end of a
    // trajectory and integrate back to the start.
    let (tree, model, alignment) = fixture(603, 5, 30);
    let backend = Backend::serial();
    let prior = Prior::default_for(Parameterization::BranchLengths);
    let mut posterior = PhyloPosterior::new(&tree, &model, &alignment, &backend, prior).unwrap();
    let x0: Vec<f64> = tree.branch_lengths().iter().map(|&b| b.ln()).collect();
    let p0: Vec<f64> = (0..x0.len()).map(|i| 0.3 * ((i as f64) + 1.0).sin()).collect();
    let inv_mass = vec![1.0; x0.len()];
    let (_, mut grad) = posterior.value_and_gradient(&x0).unwrap();
    let mut x = x0.clone();
    let mut p = p0.clone();
    leapfrog(&mut posterior, &mut x, &mut p, &mut grad, 0.02, 12, &inv_mass).unwrap();
    for pi in &mut p {
        *pi = -*pi;
    }
    let (_, mut grad_back) = posterior.value_and_gradient(&x).unwrap();
    leapfrog(&mut posterior, &mut x, &mut p, &mut grad_back, 0.02, 12, &inv_mass).unwrap();
    for (a, b) in x.iter().zip(&x0) {
        assert!((a - b).abs() < 1e-8, "trajectory not reversible: {a} vs {b}");
    }
}

#[test]
fn warmup_tunes_step_size_into_target_band() {
    let (tree, model, alignment) = fixture(604, 5, 60);
    let backend = Backend::serial();
    let config = HmcConfig {
        step_size: 0.5, // deliberately too coarse
        leapfrog_steps: 8,
        iterations: 200,
        warmup: 300,
        target_acceptance: 0.8,
        seed: 17,
        ..HmcConfig::default()
    };
    let prior = Prior::default_for(Parameterization::BranchLengths);
    let run = hmc_sample(&tree, &model, &alignment, prior, &config, &backend).unwrap();
    assert!(
        (0.4..=0.95).contains(&run.diagnostics.acceptance_rate),
        "acceptance {} outside band",
        run.diagnostics.acceptance_rate
    );
    assert!(run.diagnostics.tuned_step_size < 0.5);
    assert!(run.diagnostics.gradient_evaluations > 0);
}

#[test]
fn rate_scalar_parameterization_samples_positive_scalars() {
    let (tree, model, alignment) = fixture(605, 4, 40);
    let backend = Backend::serial();
    let config = HmcConfig {
        step_size: 0.05,
        leapfrog_steps: 5,
        iterations: 100,
        warmup: 100,
        seed: 23,
        parameterization: Parameterization::RateScalars,
        ..HmcConfig::default()
    };
    let prior = Prior::default_for(Parameterization::RateScalars);
    let run = hmc_sample(&tree, &model, &alignment, prior, &config, &backend).unwrap();
    assert_eq!(run.chain.len(), 100);
    for sample in &run.chain {
        assert!(sample.params.iter().all(|&s| s > 0.0));
        assert!(sample.log_posterior.is_finite());
    }
    // The chain should actually move.
    let first = &run.chain[0].params;
    let last = &run.chain[99].params;
    assert!(first.iter().zip(last).any(|(a, b)| (a - b).abs() > 1e-12));
}
