//! Site-pattern compression.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{ParseError, RawAlignment, TipCode};

/// Unique weighted site patterns in first-occurrence order.
#[derive(Debug, Clone)]
pub struct PatternizedAlignment {
    state_count: usize,
    tip_names: Vec<String>,
    /// `tip_codes[tip][pattern]`.
    tip_codes: Vec<Vec<TipCode>>,
    weights: Vec<u32>,
}

impl PatternizedAlignment {
    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn tip_count(&self) -> usize {
        self.tip_codes.len()
    }

    pub fn tip_names(&self) -> &[String] {
        &self.tip_names
    }

    pub fn pattern_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// Total column count of the original alignment.
    pub fn site_count(&self) -> u64 {
        self.weights.iter().map(|&w| w as u64).sum()
    }

    pub fn tip_row(&self, tip: usize) -> &[TipCode] {
        &self.tip_codes[tip]
    }

    pub fn code(&self, tip: usize, pattern: usize) -> &TipCode {
        &self.tip_codes[tip][pattern]
    }

    /// Expands patterns back into a column multiset (weights as repeats).
    pub fn decompress(&self) -> Vec<Vec<TipCode>> {
        let mut columns = Vec::with_capacity(self.site_count() as usize);
        for (pattern, &w) in self.weights.iter().enumerate() {
            for _ in 0..w {
                columns.push(
                    self.tip_codes.iter().map(|row| row[pattern].clone()).collect::<Vec<_>>(),
                );
            }
        }
        columns
    }

    /// Debug dump: `pattern_index\tweight\tcodes...`, one line per pattern.
    /// Unambiguous codes print as 1-based state labels; masks print the
    /// allowed states as `[s1|s2|...]`, abbreviated to `*` when total.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for pattern in 0..self.pattern_count() {
            write!(out, "{}\t{}", pattern, self.weights[pattern]).unwrap();
            for tip in 0..self.tip_count() {
                match &self.tip_codes[tip][pattern] {
                    TipCode::State(s) => write!(out, "\t{}", s + 1).unwrap(),
                    TipCode::Mask(mask) if mask.iter().all(|&b| b) => out.push_str("\t*"),
                    TipCode::Mask(mask) => {
                        let states: Vec<String> = mask
                            .iter()
                            .enumerate()
                            .filter(|(_, &b)| b)
                            .map(|(s, _)| (s + 1).to_string())
                            .collect();
                        write!(out, "\t[{}]", states.join("|")).unwrap();
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Compresses an alignment into unique weighted patterns, preserving
/// first-occurrence order.
pub fn compress_patterns(raw: &RawAlignment) -> Result<PatternizedAlignment, ParseError> {
    if raw.tip_count() == 0 || raw.column_count() == 0 {
        return Err(ParseError::Alignment("empty alignment".to_string()));
    }
    let tip_count = raw.tip_count();
    let mut seen: HashMap<Vec<TipCode>, usize> = HashMap::new();
    let mut tip_codes: Vec<Vec<TipCode>> = vec![Vec::new(); tip_count];
    let mut weights: Vec<u32> = Vec::new();
    for c in 0..raw.column_count() {
        let column = raw.column(c);
        match seen.get(&column) {
            Some(&idx) => weights[idx] += 1,
            None => {
                let idx = weights.len();
                seen.insert(column.clone(), idx);
                for (tip, code) in column.into_iter().enumerate() {
                    tip_codes[tip].push(code);
                }
                weights.push(1);
            }
        }
    }
    Ok(PatternizedAlignment {
        state_count: raw.state_count,
        tip_names: raw.tip_names.clone(),
        tip_codes,
        weights,
    })
}

/// Wraps an alignment as patterns without merging duplicates (weights all
/// one); the reference layout for compression-invariance checks.
pub fn uncompressed_patterns(raw: &RawAlignment) -> PatternizedAlignment {
    let tip_count = raw.tip_count();
    let mut tip_codes: Vec<Vec<TipCode>> = vec![Vec::new(); tip_count];
    for c in 0..raw.column_count() {
        for (tip, code) in raw.column(c).into_iter().enumerate() {
            tip_codes[tip].push(code);
        }
    }
    PatternizedAlignment {
        state_count: raw.state_count,
        tip_names: raw.tip_names.clone(),
        weights: vec![1; raw.column_count()],
        tip_codes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treedata::{parse_fasta, Alphabet};

    fn raw(fasta: &str) -> RawAlignment {
        parse_fasta(fasta, &Alphabet::Nucleotide).unwrap()
    }

    #[test]
    fn duplicate_columns_merge_with_weights() {
        // Columns: (A,A), (A,A), (C,G) -> 2 patterns with weights [2, 1].
        let aln = compress_patterns(&raw(">x\nAAC\n>y\nAAG\n")).unwrap();
        assert_eq!(aln.pattern_count(), 2);
        assert_eq!(aln.weights(), &[2, 1]);
        assert_eq!(aln.code(0, 0), &TipCode::State(0));
        assert_eq!(aln.code(1, 1), &TipCode::State(2));
    }

    #[test]
    fn identical_columns_collapse_to_one() {
        let aln = compress_patterns(&raw(">x\nAAAAA\n>y\nCCCCC\n")).unwrap();
        assert_eq!(aln.pattern_count(), 1);
        assert_eq!(aln.weights(), &[5]);
        assert_eq!(aln.site_count(), 5);
    }

    #[test]
    fn round_trip_preserves_column_multiset() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        let bases = [b'A', b'C', b'G', b'T', b'N'];
        let mut fasta = String::new();
        let columns = 120;
        let mut seqs = vec![String::new(); 6];
        for _ in 0..columns {
            for seq in &mut seqs {
                seq.push(bases[rng.random_range(0..bases.len())] as char);
            }
        }
        for (i, seq) in seqs.iter().enumerate() {
            fasta.push_str(&format!(">t{i}\n{seq}\n"));
        }
        let raw = raw(&fasta);
        let compressed = compress_patterns(&raw).unwrap();
        assert_eq!(compressed.site_count(), columns as u64);
        assert!(compressed.weights().iter().all(|&w| w >= 1));

        let mut original: Vec<Vec<TipCode>> = (0..raw.column_count()).map(|c| raw.column(c)).collect();
        let mut rebuilt = compressed.decompress();
        let key = |col: &Vec<TipCode>| format!("{col:?}");
        original.sort_by_key(key);
        rebuilt.sort_by_key(key);
        assert_eq!(original, rebuilt);
    }

    #[test]
    fn first_occurrence_order_is_stable() {
        let aln = compress_patterns(&raw(">x\nCAC\n>y\nGAG\n")).unwrap();
        // Pattern 0 is (C,G), pattern 1 is (A,A).
        assert_eq!(aln.code(0, 0), &TipCode::State(1));
        assert_eq!(aln.code(0, 1), &TipCode::State(0));
        assert_eq!(aln.weights(), &[2, 1]);
    }

    #[test]
    fn tsv_dump_shape() {
        let aln = compress_patterns(&raw(">x\nAN\n>y\nCR\n")).unwrap();
        let tsv = aln.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "0\t1\t1\t2");
        assert_eq!(lines[1], "1\t1\t*\t[1|3]");
    }
}
