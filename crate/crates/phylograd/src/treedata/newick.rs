//! Newick tree parser.
//!
//! Tips are numbered in order of first appearance, internal nodes in
//! post-order; errors carry the byte offset of the offending input.

use super::{ParseError, Phylogeny};

#[derive(Clone, Copy)]
enum ParsedChild {
    Tip(usize),
    Internal(usize),
}

struct Edge {
    child: ParsedChild,
    length: Option<f64>,
    /// Byte offset of the child clause, for error messages.
    offset: usize,
}

struct Internal {
    edges: Vec<Edge>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    tip_names: Vec<String>,
    /// Internal nodes in post-order (root last).
    internals: Vec<Internal>,
}

/// Parses a rooted bifurcating Newick string with branch lengths on all
/// non-root edges, e.g. `((A:1,B:1):0.5,C:2);`.
pub fn parse_newick(text: &str) -> Result<Phylogeny, ParseError> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        tip_names: Vec::new(),
        internals: Vec::new(),
    };
    parser.skip_ws();
    let top_offset = parser.pos;
    let (top, _root_length) = parser.subtree()?;
    parser.skip_ws();
    if !parser.eat(b';') {
        return Err(parser.error("expected `;` at end of tree"));
    }
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("trailing characters after `;`"));
    }
    if matches!(top, ParsedChild::Tip(_)) {
        return Err(ParseError::Newick {
            offset: top_offset,
            message: "a tree needs at least 2 tips".to_string(),
        });
    }

    let n = parser.tip_names.len();
    let node_id = |c: ParsedChild| match c {
        ParsedChild::Tip(t) => t,
        ParsedChild::Internal(i) => n + i,
    };
    let mut children = Vec::with_capacity(parser.internals.len());
    let mut branch_lengths = vec![0.0; 2 * n - 2];
    for internal in &parser.internals {
        if internal.edges.len() != 2 {
            return Err(ParseError::Newick {
                offset: internal.offset,
                message: format!(
                    "polytomy with {} children: only bifurcating trees are supported; \
                     resolve it explicitly (e.g. with zero-length branches) -- this is \
                     not done automatically",
                    internal.edges.len()
                ),
            });
        }
        for edge in &internal.edges {
            match edge.length {
                Some(len) if len >= 0.0 && len.is_finite() => {
                    branch_lengths[node_id(edge.child)] = len;
                }
                Some(len) => {
                    return Err(ParseError::Newick {
                        offset: edge.offset,
                        message: format!("branch length {len} must be non-negative and finite"),
                    })
                }
                None => {
                    return Err(ParseError::Newick {
                        offset: edge.offset,
                        message: "missing branch length on a non-root edge".to_string(),
                    })
                }
            }
        }
        children.push((node_id(internal.edges[0].child), node_id(internal.edges[1].child)));
    }
    Phylogeny::new(parser.tip_names, children, branch_lengths)
        .map_err(|e| ParseError::Newick { offset: 0, message: e.to_string() })
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ParseError {
        ParseError::Newick { offset: self.pos, message: message.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn subtree(&mut self) -> Result<(ParsedChild, Option<f64>), ParseError> {
        self.skip_ws();
        if self.eat(b'(') {
            let open_offset = self.pos - 1;
            let mut edges = Vec::new();
            loop {
                let child_offset = self.pos;
                let (child, length) = self.subtree()?;
                edges.push(Edge { child, length, offset: child_offset });
                self.skip_ws();
                if self.eat(b',') {
                    continue;
                }
                if self.eat(b')') {
                    break;
                }
                return Err(self.error("expected `,` or `)` (unbalanced parentheses?)"));
            }
            self.internals.push(Internal { edges, offset: open_offset });
            let node = ParsedChild::Internal(self.internals.len() - 1);
            self.skip_ws();
            let _label = self.name(); // internal labels are allowed and ignored
            let length = self.length()?;
            Ok((node, length))
        } else {
            let name = self.name().ok_or_else(|| self.error("expected a tip name or `(`"))?;
            let tip = self.tip_names.len();
            self.tip_names.push(name);
            let length = self.length()?;
            Ok((ParsedChild::Tip(tip), length))
        }
    }

    fn name(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b',' | b':' | b';') {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start)
            .then(|| String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn length(&mut self) -> Result<Option<f64>, ParseError> {
        self.skip_ws();
        if !self.eat(b':') {
            return Ok(None);
        }
        self.skip_ws();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Some).map_err(|_| ParseError::Newick {
            offset: start,
            message: format!("invalid branch length `{text}`"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_taxon_tree() {
        let tree = parse_newick("(A:1.0,B:2.0);").unwrap();
        assert_eq!(tree.tip_count(), 2);
        assert_eq!(tree.branch_lengths(), &[1.0, 2.0]);
        assert_eq!(tree.root(), 2);
        assert_eq!(tree.tip_names(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn nested_tree_numbering() {
        let tree = parse_newick("((A:1,B:1):0.5,C:2);").unwrap();
        assert_eq!(tree.tip_count(), 3);
        // Internal node holding A,B is node 3 (label 4); root is node 4 (label 5).
        assert_eq!(tree.children_of(3), (0, 1));
        assert_eq!(tree.children_of(4), (3, 2));
        assert_eq!(tree.branch_lengths(), &[1.0, 1.0, 2.0, 0.5]);
        assert_eq!(tree.label(4), 5);
    }

    #[test]
    fn polytomy_is_rejected_with_hint() {
        let err = parse_newick("(A:1,B:1,C:1);").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("polytomy"), "got: {msg}");
        assert!(msg.contains("not done automatically"), "got: {msg}");
        assert!(msg.contains("byte 0"), "got: {msg}");
    }

    #[test]
    fn unbalanced_parentheses_name_the_offset() {
        let err = parse_newick("((A:1,B:1):0.5;").unwrap_err();
        match err {
            ParseError::Newick { offset, message } => {
                assert_eq!(offset, 14);
                assert!(message.contains("unbalanced"), "got: {message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_length_is_rejected() {
        let err = parse_newick("(A,B:1);").unwrap_err();
        assert!(err.to_string().contains("missing branch length"), "got: {err}");
    }

    #[test]
    fn deeper_tree_uses_post_order_internals() {
        let tree = parse_newick("(((A:1,B:2):3,C:4):5,(D:6,E:7):8);").unwrap();
        assert_eq!(tree.tip_count(), 5);
        // Post-order internals: (A,B) -> 5, ((A,B),C) -> 6, (D,E) -> 7, root 8.
        assert_eq!(tree.children_of(5), (0, 1));
        assert_eq!(tree.children_of(6), (5, 2));
        assert_eq!(tree.children_of(7), (3, 4));
        assert_eq!(tree.children_of(8), (6, 7));
        assert_eq!(tree.branch_lengths(), &[1.0, 2.0, 4.0, 6.0, 7.0, 3.0, 5.0, 8.0]);
    }

    #[test]
    fn unrooted_convention_zero_length_root_child() {
        // An unrooted tree is represented by a zero-length branch at the root.
        let tree = parse_newick("((A:1,B:1):0.0,C:2);").unwrap();
        assert_eq!(tree.branch_lengths()[3], 0.0);
    }

    #[test]
    fn internal_labels_are_tolerated() {
        let tree = parse_newick("((A:1,B:1)anc:0.5,C:2)root;").unwrap();
        assert_eq!(tree.tip_count(), 3);
    }
}
