//! Genetic code tables mapping codons to amino-acid classes.
//!
//! Codons are indexed over the sense codons only (stop codons are excluded
//! from the state space), in lexicographic order of their bases with
//! A < C < G < T.

use super::ModelError;

/// Nucleotide bases in the fixed A, C, G, T order used throughout.
pub const BASES: [u8; 4] = [b'A', b'C', b'G', b'T'];

/// Amino-acid assignment strings in NCBI layout: first base cycles slowest
/// over T, C, A, G; third base fastest. `*` marks a stop codon.
const STANDARD_AA: &[u8; 64] = b"FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG";
const VERTEBRATE_MITO_AA: &[u8; 64] = b"FFLLSSSSYY**CCWWLLLLPPPPHHQQRRRRIIMMTTTTNNKKSS**VVVVAAAADDEEGGGG";

/// A genetic code restricted to its sense codons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneticCode {
    name: &'static str,
    /// Amino-acid letter per sense codon.
    amino_acids: Vec<u8>,
    /// Base triplet (values 0..4 in ACGT order) per sense codon.
    codons: Vec<[u8; 3]>,
    /// Map from the 64 possible triplets to a sense-codon index, `None` for stops.
    triplet_to_state: [Option<u16>; 64],
}

impl GeneticCode {
    pub fn universal() -> Self {
        Self::from_ncbi_table("universal", STANDARD_AA)
    }

    pub fn vertebrate_mito() -> Self {
        Self::from_ncbi_table("vertebrate-mito", VERTEBRATE_MITO_AA)
    }

    pub fn by_name(name: &str) -> Result<Self, ModelError> {
        match name {
            "universal" => Ok(Self::universal()),
            "vertebrate-mito" => Ok(Self::vertebrate_mito()),
            other => Err(ModelError::UnknownGeneticCode(other.to_string())),
        }
    }

    fn from_ncbi_table(name: &'static str, table: &[u8; 64]) -> Self {
        // NCBI tables order bases T, C, A, G; re-index into ACGT order.
        const NCBI_ORDER: [usize; 4] = [2, 1, 3, 0]; // A->2, C->1, G->3, T->0
        let mut amino_acids = Vec::new();
        let mut codons = Vec::new();
        let mut triplet_to_state = [None; 64];
        for b0 in 0..4u8 {
            for b1 in 0..4u8 {
                for b2 in 0..4u8 {
                    let ncbi = NCBI_ORDER[b0 as usize] * 16
                        + NCBI_ORDER[b1 as usize] * 4
                        + NCBI_ORDER[b2 as usize];
                    let aa = table[ncbi];
                    if aa != b'*' {
                        let state = codons.len() as u16;
                        triplet_to_state[(b0 as usize) * 16 + (b1 as usize) * 4 + b2 as usize] =
                            Some(state);
                        amino_acids.push(aa);
                        codons.push([b0, b1, b2]);
                    }
                }
            }
        }
        GeneticCode { name, amino_acids, codons, triplet_to_state }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Number of sense codons (the codon-model state count).
    pub fn state_count(&self) -> usize {
        self.codons.len()
    }

    /// Amino-acid letter for a sense-codon state.
    pub fn amino_acid(&self, state: usize) -> u8 {
        self.amino_acids[state]
    }

    /// Base triplet (0..4 each, ACGT order) for a sense-codon state.
    pub fn codon_bases(&self, state: usize) -> [u8; 3] {
        self.codons[state]
    }

    /// Codon string such as "ATG" for a sense-codon state.
    pub fn codon_string(&self, state: usize) -> String {
        self.codons[state].iter().map(|&b| BASES[b as usize] as char).collect()
    }

    /// Sense-codon index for a base triplet, `None` for stop codons.
    pub fn state_of_triplet(&self, bases: [u8; 3]) -> Option<u16> {
        self.triplet_to_state
            [(bases[0] as usize) * 16 + (bases[1] as usize) * 4 + bases[2] as usize]
    }

    /// Classifies a pair of sense codons for the M0 rate pattern. Returns
    /// `None` when the codons differ at two or more positions.
    pub fn single_step(&self, from: usize, to: usize) -> Option<CodonStep> {
        let a = self.codons[from];
        let b = self.codons[to];
        let mut diff_pos = None;
        for p in 0..3 {
            if a[p] != b[p] {
                if diff_pos.is_some() {
                    return None;
                }
                diff_pos = Some(p);
            }
        }
        let p = diff_pos?;
        Some(CodonStep {
            is_transition: is_transition(a[p], b[p]),
            is_synonymous: self.amino_acids[from] == self.amino_acids[to],
        })
    }
}

/// Classification of a single-nucleotide codon change.
#[derive(Debug, Clone, Copy)]
pub struct CodonStep {
    pub is_transition: bool,
    pub is_synonymous: bool,
}

/// Transitions are A<->G and C<->T (base values in ACGT order).
pub fn is_transition(a: u8, b: u8) -> bool {
    matches!((a, b), (0, 2) | (2, 0) | (1, 3) | (3, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universal_has_61_sense_codons() {
        let code = GeneticCode::universal();
        assert_eq!(code.state_count(), 61);
        // The three stops never map to a state.
        for stop in ["TAA", "TAG", "TGA"] {
            let triplet = triplet_of(stop);
            assert!(code.state_of_triplet(triplet).is_none(), "{stop} should be a stop");
        }
        assert_eq!(code.amino_acid(code.state_of_triplet(triplet_of("ATG")).unwrap() as usize), b'M');
        assert_eq!(code.amino_acid(code.state_of_triplet(triplet_of("TGG")).unwrap() as usize), b'W');
    }

    #[test]
    fn vertebrate_mito_has_60_sense_codons() {
        let code = GeneticCode::vertebrate_mito();
        assert_eq!(code.state_count(), 60);
        for stop in ["TAA", "TAG", "AGA", "AGG"] {
            assert!(code.state_of_triplet(triplet_of(stop)).is_none(), "{stop} should be a stop");
        }
        // TGA codes tryptophan and ATA codes methionine in this table.
        let tga = code.state_of_triplet(triplet_of("TGA")).unwrap();
        assert_eq!(code.amino_acid(tga as usize), b'W');
        let ata = code.state_of_triplet(triplet_of("ATA")).unwrap();
        assert_eq!(code.amino_acid(ata as usize), b'M');
    }

    #[test]
    fn codon_strings_round_trip() {
        let code = GeneticCode::universal();
        for s in 0..code.state_count() {
            let bases = code.codon_bases(s);
            assert_eq!(code.state_of_triplet(bases), Some(s as u16));
        }
    }

    #[test]
    fn transition_classification() {
        assert!(is_transition(0, 2)); // A<->G
        assert!(is_transition(3, 1)); // T<->C
        assert!(!is_transition(0, 1)); // A<->C
        assert!(!is_transition(2, 3)); // G<->T
    }

    fn triplet_of(s: &str) -> [u8; 3] {
        let idx = |c: u8| BASES.iter().position(|&b| b == c).unwrap() as u8;
        let b = s.as_bytes();
        [idx(b[0]), idx(b[1]), idx(b[2])]
    }
}
