//! Bracketed-text parser and symbol escaping.
//!
//! Grammar (whitespace separates everything):
//!
//! ```text
//! tree   := '(' label item+ ')'
//! item   := tree | token
//! label, token := one or more non-space characters; '\' escapes the next
//!                 character, so '\(' '\)' '\\' and '\ ' occur inside symbols
//! ```
//!
//! Errors carry the byte offset of the offending character.

use super::{ParseTree, Result, TreeError};

/// Escapes a symbol so the parser reads it back verbatim.
pub(super) fn escape_symbol(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch == '(' || ch == ')' || ch == '\\' || ch.is_whitespace() {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if (b as char).is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(TreeError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    /// Reads a symbol (label or token), handling `\`-escapes.
    fn symbol(&mut self) -> Result<String> {
        let start = self.pos;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => break,
                Some(b'(') | Some(b')') => break,
                Some(b) if (b as char).is_ascii_whitespace() => break,
                Some(b'\\') => {
                    self.pos += 1;
                    // The escape takes the next character whole (may be
                    // multi-byte); decode it from the remaining input.
                    let rest = &self.bytes[self.pos..];
                    let s = std::str::from_utf8(rest)
                        .map_err(|_| TreeError::Parse {
                            offset: self.pos,
                            message: "invalid utf-8 after escape".to_string(),
                        })?;
                    let Some(ch) = s.chars().next() else {
                        return self.err("escape at end of input");
                    };
                    out.push(ch);
                    self.pos += ch.len_utf8();
                }
                Some(_) => {
                    let rest = &self.bytes[self.pos..];
                    let s = std::str::from_utf8(rest).map_err(|_| TreeError::Parse {
                        offset: self.pos,
                        message: "invalid utf-8".to_string(),
                    })?;
                    let ch = s.chars().next().expect("peeked byte exists");
                    out.push(ch);
                    self.pos += ch.len_utf8();
                }
            }
        }
        if out.is_empty() {
            return Err(TreeError::Parse {
                offset: start,
                message: "expected a symbol".to_string(),
            });
        }
        Ok(out)
    }

    fn tree(&mut self) -> Result<ParseTree> {
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return self.err("expected '('");
        }
        self.pos += 1;
        self.skip_ws();
        if matches!(self.peek(), Some(b')') | Some(b'(') | None) {
            return self.err("missing node label");
        }
        let label = self.symbol()?;

        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.err("unbalanced '(': input ended inside a node"),
                Some(b')') => {
                    if children.is_empty() {
                        return self.err(format!("node ({label} …) has no children"));
                    }
                    self.pos += 1;
                    return Ok(ParseTree::Node { label, children });
                }
                Some(b'(') => children.push(self.tree()?),
                Some(_) => children.push(ParseTree::Leaf {
                    token: self.symbol()?,
                }),
            }
        }
    }
}

/// Parses one bracketed tree; the whole input must be consumed (trailing
/// whitespace aside).
///
/// # Errors
/// Parse error with a byte offset for unbalanced brackets, empty nodes,
/// missing labels, dangling escapes, or trailing garbage.
pub fn parse_bracketed(input: &str) -> Result<ParseTree> {
    let mut cur = Cursor {
        bytes: input.as_bytes(),
        pos: 0,
    };
    let tree = cur.tree()?;
    cur.skip_ws();
    if cur.peek().is_some() {
        return cur.err("trailing input after the tree");
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_tree() {
        let t = parse_bracketed("(S (NP (PRP He)) (VP (VBZ is)))").unwrap();
        assert_eq!(t.leaves(), vec!["He", "is"]);
        assert_eq!(t.num_nodes(), 5);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn roundtrips_through_render() {
        let src = "(S (NP (PRP He)) (VP (VBZ is) (ADJP fine)))";
        let t = parse_bracketed(src).unwrap();
        assert_eq!(t.render(), src);
        assert_eq!(parse_bracketed(&t.render()).unwrap(), t);
    }

    #[test]
    fn escaped_parens_stay_inside_tokens() {
        let t = parse_bracketed(r"(X (P \() (Q \)) (R a\\b))").unwrap();
        assert_eq!(t.leaves(), vec!["(", ")", r"a\b"]);
        // Re-rendering escapes them again.
        assert_eq!(parse_bracketed(&t.render()).unwrap(), t);
    }

    #[test]
    fn escaped_space_in_token() {
        let t = parse_bracketed(r"(X a\ b)").unwrap();
        assert_eq!(t.leaves(), vec!["a b"]);
        assert_eq!(parse_bracketed(&t.render()).unwrap(), t);
    }

    #[test]
    fn reports_offset_for_unbalanced_input() {
        let err = parse_bracketed("(S (NP He").unwrap_err();
        match err {
            TreeError::Parse { offset, message } => {
                assert_eq!(offset, 9);
                assert!(message.contains("unbalanced"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_childless_node() {
        let err = parse_bracketed("(S (X) y)").unwrap_err();
        assert!(err.to_string().contains("no children"), "{err}");
    }

    #[test]
    fn rejects_missing_label() {
        let err = parse_bracketed("(() a)").unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
    }

    #[test]
    fn rejects_trailing_garbage() {
        let err = parse_bracketed("(X a) (Y b)").unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn rejects_bare_token() {
        assert!(parse_bracketed("hello").is_err());
    }

    #[test]
    fn rejects_escape_at_eof() {
        let err = parse_bracketed(r"(X a\").unwrap_err();
        assert!(err.to_string().contains("escape"), "{err}");
    }
}
