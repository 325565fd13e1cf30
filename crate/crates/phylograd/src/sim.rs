//! Seeded fixture generation: random trees and alignments simulated under
//! a substitution model, so every test and benchmark runs without external
//! data.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::model::{CodonModelParams, GeneticCode, ModelInstance, RateMatrix};
use crate::treedata::{Phylogeny, RawAlignment, TipCode};

/// Random bifurcating tree over `tip_count` tips, built by repeatedly
/// joining two random subtree roots; internal nodes come out numbered in
/// creation (post-order-compatible) order. Branch lengths are uniform in
/// `length_range`.
pub fn random_tree(rng: &mut StdRng, tip_count: usize, length_range: (f64, f64)) -> Phylogeny {
    assert!(tip_count >= 2);
    let names = (0..tip_count).map(|i| format!("t{i}")).collect::<Vec<_>>();
    let mut active: Vec<usize> = (0..tip_count).collect();
    let mut children = Vec::with_capacity(tip_count - 1);
    let mut next_id = tip_count;
    while active.len() > 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        children.push((a, b));
        active.push(next_id);
        next_id += 1;
    }
    let branch_lengths = (0..2 * tip_count - 2)
        .map(|_| rng.random_range(length_range.0..length_range.1))
        .collect();
    Phylogeny::new(names, children, branch_lengths).expect("generated tree is valid")
}

/// Simulates an alignment of `sites` columns under the model: a rate
/// category per site, a root state from the prior, and child states drawn
/// through the branch transition matrices.
pub fn simulate_alignment(
    rng: &mut StdRng,
    tree: &Phylogeny,
    model: &ModelInstance,
    sites: usize,
) -> RawAlignment {
    let s = model.state_count();
    let rates = model.rate_categories().rates();
    let weights = model.rate_categories().weights();
    let effective = tree.effective_lengths();
    // Row-major transition matrices per (branch, rate).
    let mut mats = Vec::with_capacity(tree.branch_count() * rates.len());
    for &len in &effective {
        for &rate in rates {
            let m = model.transition_matrix(rate, len).expect("valid lengths");
            let mut rows = vec![0.0; s * s];
            for i in 0..s {
                for j in 0..s {
                    rows[i * s + j] = m[(i, j)];
                }
            }
            mats.push(rows);
        }
    }
    let pi = model.root_distribution();
    let mut rows = vec![Vec::with_capacity(sites); tree.tip_count()];
    let mut states = vec![0usize; tree.node_count()];
    for _ in 0..sites {
        let rate = sample_index(rng, weights);
        states[tree.root()] = sample_index(rng, pi);
        // Parent-before-child order assigns every node's state.
        for node in tree.preorder_nodes().collect::<Vec<_>>() {
            let parent_state = states[tree.parent(node).expect("non-root")];
            let row = &mats[node * rates.len() + rate][parent_state * s..(parent_state + 1) * s];
            states[node] = sample_index(rng, row);
        }
        for tip in 0..tree.tip_count() {
            rows[tip].push(TipCode::State(states[tip] as u16));
        }
    }
    RawAlignment { state_count: s, tip_names: tree.tip_names().to_vec(), rows }
}

fn sample_index(rng: &mut StdRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Random reversible GTR model with jittered frequencies.
pub fn random_gtr(rng: &mut StdRng) -> RateMatrix {
    let exch: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.3..3.0));
    let mut freqs: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..1.5));
    let total: f64 = freqs.iter().sum();
    for f in &mut freqs {
        *f /= total;
    }
    RateMatrix::gtr(&exch, &freqs).expect("random GTR parameters are valid")
}

/// Random codon M0 model under the universal code.
pub fn random_codon_m0(rng: &mut StdRng) -> RateMatrix {
    let code = GeneticCode::universal();
    let n = code.state_count();
    let mut freqs: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = freqs.iter().sum();
    for f in &mut freqs {
        *f /= total;
    }
    RateMatrix::codon_m0(&CodonModelParams {
        kappa: rng.random_range(1.0..4.0),
        omega: rng.random_range(0.1..1.5),
        codon_frequencies: Some(freqs),
        genetic_code: code,
    })
    .expect("random codon parameters are valid")
}

/// Deterministic RNG from a seed.
pub fn seeded_rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Renders an alignment of unambiguous states back to FASTA text.
pub fn alignment_to_fasta(alignment: &RawAlignment, code: Option<&GeneticCode>) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (name, row) in alignment.tip_names.iter().zip(&alignment.rows) {
        writeln!(out, ">{name}").unwrap();
        let mut line = String::new();
        for tip_code in row {
            match (tip_code, code) {
                (TipCode::State(s), Some(code)) => line.push_str(&code.codon_string(*s as usize)),
                (TipCode::State(s), None) => {
                    line.push(crate::model::genetic_code::BASES[*s as usize] as char)
                }
                (TipCode::Mask(_), Some(_)) => line.push_str("NNN"),
                (TipCode::Mask(_), None) => line.push('N'),
            }
        }
        writeln!(out, "{line}").unwrap();
    }
    out
}
