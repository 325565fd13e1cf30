//! FASTA alignment parsing and tip-state encoding.

use crate::model::GeneticCode;

use super::{ParseError, TipCode};

/// Character alphabet of the alignment.
#[derive(Debug, Clone)]
pub enum Alphabet {
    Nucleotide,
    Codon(Box<GeneticCode>),
}

impl Alphabet {
    pub fn state_count(&self) -> usize {
        match self {
            Alphabet::Nucleotide => 4,
            Alphabet::Codon(code) => code.state_count(),
        }
    }
}

/// An uncompressed alignment: per-tip rows of encoded site observations.
#[derive(Debug, Clone)]
pub struct RawAlignment {
    pub state_count: usize,
    pub tip_names: Vec<String>,
    /// `rows[tip][column]`.
    pub rows: Vec<Vec<TipCode>>,
}

impl RawAlignment {
    pub fn tip_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// One alignment column across tips.
    pub fn column(&self, c: usize) -> Vec<TipCode> {
        self.rows.iter().map(|row| row[c].clone()).collect()
    }

    /// Reorders rows so that tip order matches `names`; fails on missing or
    /// duplicated names.
    pub fn reorder(&self, names: &[String]) -> Result<RawAlignment, ParseError> {
        let mut rows = Vec::with_capacity(names.len());
        let mut tip_names = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .tip_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ParseError::Alignment(format!("no sequence for tip `{name}`")))?;
            rows.push(self.rows[idx].clone());
            tip_names.push(name.clone());
        }
        if names.len() != self.tip_names.len() {
            return Err(ParseError::Alignment(format!(
                "alignment has {} sequences but the tree has {} tips",
                self.tip_names.len(),
                names.len()
            )));
        }
        Ok(RawAlignment { state_count: self.state_count, tip_names, rows })
    }
}

/// Parses FASTA text into encoded rows. Sequences must be equally long;
/// codon mode additionally requires a length divisible by 3 and maps stop
/// codons and gap-containing triplets to full ambiguity.
pub fn parse_fasta(text: &str, alphabet: &Alphabet) -> Result<RawAlignment, ParseError> {
    let mut names = Vec::new();
    let mut seqs: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return Err(ParseError::Fasta(format!("empty header on line {}", lineno + 1)));
            }
            names.push(name);
            seqs.push(String::new());
        } else {
            let seq = seqs
                .last_mut()
                .ok_or_else(|| ParseError::Fasta("sequence data before any header".to_string()))?;
            seq.push_str(line);
        }
    }
    if names.is_empty() {
        return Err(ParseError::Fasta("no sequences found".to_string()));
    }
    let len = seqs[0].len();
    for (name, seq) in names.iter().zip(&seqs) {
        if seq.len() != len {
            return Err(ParseError::Alignment(format!(
                "ragged alignment: `{}` has length {}, expected {len}",
                name,
                seq.len()
            )));
        }
    }
    let rows = match alphabet {
        Alphabet::Nucleotide => seqs
            .iter()
            .zip(&names)
            .map(|(seq, name)| encode_nucleotides(seq, name))
            .collect::<Result<Vec<_>, _>>()?,
        Alphabet::Codon(code) => {
            if len % 3 != 0 {
                return Err(ParseError::Alignment(format!(
                    "codon alignments need a length divisible by 3, got {len}"
                )));
            }
            seqs.iter()
                .zip(&names)
                .map(|(seq, name)| encode_codons(seq, name, code))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(RawAlignment { state_count: alphabet.state_count(), tip_names: names, rows })
}

/// IUPAC nucleotide mask over (A, C, G, T); gaps and `?` are fully ambiguous.
fn nucleotide_mask(ch: u8) -> Option<[bool; 4]> {
    let m = |s: &[usize]| {
        let mut mask = [false; 4];
        for &i in s {
            mask[i] = true;
        }
        mask
    };
    Some(match ch.to_ascii_uppercase() {
        b'A' => m(&[0]),
        b'C' => m(&[1]),
        b'G' => m(&[2]),
        b'T' | b'U' => m(&[3]),
        b'R' => m(&[0, 2]),
        b'Y' => m(&[1, 3]),
        b'S' => m(&[1, 2]),
        b'W' => m(&[0, 3]),
        b'K' => m(&[2, 3]),
        b'M' => m(&[0, 1]),
        b'B' => m(&[1, 2, 3]),
        b'D' => m(&[0, 2, 3]),
        b'H' => m(&[0, 1, 3]),
        b'V' => m(&[0, 1, 2]),
        b'N' | b'X' | b'?' | b'-' | b'.' => m(&[0, 1, 2, 3]),
        _ => return None,
    })
}

fn mask_to_code(mask: [bool; 4]) -> TipCode {
    let states: Vec<usize> = (0..4).filter(|&i| mask[i]).collect();
    if states.len() == 1 {
        TipCode::State(states[0] as u16)
    } else {
        TipCode::Mask(mask.to_vec().into_boxed_slice())
    }
}

fn encode_nucleotides(seq: &str, name: &str) -> Result<Vec<TipCode>, ParseError> {
    seq.bytes()
        .enumerate()
        .map(|(i, ch)| {
            nucleotide_mask(ch).map(mask_to_code).ok_or_else(|| {
                ParseError::Alignment(format!(
                    "unknown character `{}` at position {} of `{name}`",
                    ch as char, i
                ))
            })
        })
        .collect()
}

fn encode_codons(seq: &str, name: &str, code: &GeneticCode) -> Result<Vec<TipCode>, ParseError> {
    let bytes = seq.as_bytes();
    let mut out = Vec::with_capacity(bytes.len() / 3);
    for (i, triplet) in bytes.chunks_exact(3).enumerate() {
        let mut bases = [0u8; 3];
        let mut ambiguous = false;
        for (j, &ch) in triplet.iter().enumerate() {
            let mask = nucleotide_mask(ch).ok_or_else(|| {
                ParseError::Alignment(format!(
                    "unknown character `{}` in codon {} of `{name}`",
                    ch as char, i
                ))
            })?;
            match mask.iter().filter(|&&b| b).count() {
                1 => bases[j] = mask.iter().position(|&b| b).unwrap() as u8,
                _ => ambiguous = true,
            }
        }
        if ambiguous {
            out.push(TipCode::full_ambiguity(code.state_count()));
        } else {
            match code.state_of_triplet(bases) {
                Some(state) => out.push(TipCode::State(state)),
                // Stop codons carry no information under a sense-codon model.
                None => out.push(TipCode::full_ambiguity(code.state_count())),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_unambiguous_nucleotide_columns() {
        let aln = parse_fasta(">x\nAC\n>y\nAC\n", &Alphabet::Nucleotide).unwrap();
        assert_eq!(aln.column_count(), 2);
        assert_eq!(aln.rows[0], vec![TipCode::State(0), TipCode::State(1)]);
        assert_eq!(aln.rows[1], vec![TipCode::State(0), TipCode::State(1)]);
    }

    #[test]
    fn n_is_full_ambiguity() {
        let aln = parse_fasta(">x\nAN\n>y\nAA\n", &Alphabet::Nucleotide).unwrap();
        match &aln.rows[0][1] {
            TipCode::Mask(mask) => assert!(mask.iter().all(|&b| b)),
            other => panic!("expected mask, got {other:?}"),
        }
    }

    #[test]
    fn iupac_partial_ambiguity() {
        let aln = parse_fasta(">x\nR\n>y\nA\n", &Alphabet::Nucleotide).unwrap();
        match &aln.rows[0][0] {
            TipCode::Mask(mask) => assert_eq!(&mask[..], &[true, false, true, false]),
            other => panic!("expected mask, got {other:?}"),
        }
    }

    #[test]
    fn ragged_alignment_is_rejected() {
        let err = parse_fasta(">x\nACG\n>y\nAC\n", &Alphabet::Nucleotide).unwrap_err();
        assert!(err.to_string().contains("ragged"), "got: {err}");
    }

    #[test]
    fn unknown_character_is_rejected() {
        let err = parse_fasta(">x\nAZ\n>y\nAA\n", &Alphabet::Nucleotide).unwrap_err();
        assert!(err.to_string().contains("unknown character"), "got: {err}");
    }

    #[test]
    fn codon_stop_maps_to_full_ambiguity() {
        let code = GeneticCode::universal();
        let aln = parse_fasta(">x\nATGTAA\n>y\nATGATG\n", &Alphabet::Codon(Box::new(code.clone()))).unwrap();
        assert_eq!(aln.column_count(), 2);
        // First codon ATG is methionine; verify against an independent
        // translation of the triplet.
        let atg = code.state_of_triplet([0, 3, 2]).unwrap();
        assert_eq!(aln.rows[0][0], TipCode::State(atg));
        // TAA is a stop: fully ambiguous over the 61 sense codons.
        match &aln.rows[0][1] {
            TipCode::Mask(mask) => {
                assert_eq!(mask.len(), 61);
                assert!(mask.iter().all(|&b| b));
            }
            other => panic!("expected mask, got {other:?}"),
        }
    }

    #[test]
    fn codon_gap_maps_to_full_ambiguity() {
        let code = GeneticCode::universal();
        let aln = parse_fasta(">x\nAT-\n>y\nATG\n", &Alphabet::Codon(Box::new(code))).unwrap();
        match &aln.rows[0][0] {
            TipCode::Mask(mask) => assert!(mask.iter().all(|&b| b)),
            other => panic!("expected mask, got {other:?}"),
        }
    }

    #[test]
    fn codon_length_must_be_divisible_by_three() {
        let code = GeneticCode::universal();
        let err = parse_fasta(">x\nATGA\n>y\nATGA\n", &Alphabet::Codon(Box::new(code))).unwrap_err();
        assert!(err.to_string().contains("divisible by 3"), "got: {err}");
    }

    #[test]
    fn reorder_matches_tree_tip_names() {
        let aln = parse_fasta(">b\nAC\n>a\nGT\n", &Alphabet::Nucleotide).unwrap();
        let reordered = aln.reorder(&["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(reordered.rows[0][0], TipCode::State(2));
        assert!(aln.reorder(&["a".to_string(), "c".to_string()]).is_err());
    }
}
