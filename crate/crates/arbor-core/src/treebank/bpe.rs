//! Byte-pair-encoding subword splitting from a learned merge table.
//!
//! Code files follow the common text format: one merge per line, two
//! space-separated symbols, most frequent first; `#`-prefixed lines and
//! blanks are skipped. Splitting a word starts from its characters (the
//! last one carries an end-of-word marker), greedily applies the
//! best-ranked adjacent merge until none applies, and emits pieces where
//! every non-final piece gets an `@@` continuation marker.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{Result, TreeError};

const END_OF_WORD: &str = "</w>";

/// Continuation marker appended to non-final subword pieces.
pub const CONTINUATION_MARKER: &str = "@@";

/// Ranked merge table.
#[derive(Debug, Clone, Default)]
pub struct BpeCodes {
    ranks: HashMap<(String, String), usize>,
}

impl BpeCodes {
    /// Parses a merge table from a reader.
    ///
    /// # Errors
    /// Data error on a line that does not hold exactly two symbols.
    pub fn from_reader(r: impl Read) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| TreeError::Data(format!("line {}: {e}", lineno + 1)))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(TreeError::Data(format!(
                    "merge table line {}: expected two symbols, got {trimmed:?}",
                    lineno + 1
                )));
            };
            let rank = ranks.len();
            ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        Ok(BpeCodes { ranks })
    }

    /// Loads a merge table from a file.
    ///
    /// # Errors
    /// Io error on open, data error on a malformed line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| TreeError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_reader(f)
    }

    pub fn num_merges(&self) -> usize {
        self.ranks.len()
    }

    /// Splits one token into subword pieces.
    ///
    /// A token the table cannot merge back together comes out as its
    /// characters; a fully merged token comes out whole. Every piece except
    /// the last carries the `@@` marker.
    pub fn split_token(&self, token: &str) -> Vec<String> {
        if token.is_empty() {
            return vec![String::new()];
        }
        let mut symbols: Vec<String> = token.chars().map(|c| c.to_string()).collect();
        let last = symbols.len() - 1;
        symbols[last] = format!("{}{END_OF_WORD}", symbols[last]);

        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some(rank) = self
                    .ranks
                    .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                {
                    if best.map_or(true, |(r, _)| *rank < r) {
                        best = Some((*rank, i));
                    }
                }
            }
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols.splice(i..=i + 1, [merged]);
        }

        let n = symbols.len();
        symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let stripped = s.strip_suffix(END_OF_WORD).unwrap_or(&s).to_string();
                if i + 1 < n {
                    format!("{stripped}{CONTINUATION_MARKER}")
                } else {
                    stripped
                }
            })
            .collect()
    }
}

/// Inverse of piece-wise splitting over a whole sentence: pieces ending in
/// the continuation marker glue onto the next piece; others end a word.
pub fn join_pieces(pieces: &[String]) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for p in pieces {
        match p.strip_suffix(CONTINUATION_MARKER) {
            Some(stem) => current.push_str(stem),
            None => {
                current.push_str(p);
                words.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(lines: &str) -> BpeCodes {
        BpeCodes::from_reader(lines.as_bytes()).unwrap()
    }

    #[test]
    fn splits_with_learned_merges() {
        // Merges build "stu", "study", then glue "ing</w>".
        let c = codes(
            "#version: test\n\
             s t\nst u\nstu d\nstud y\ni n\nin g</w>\n",
        );
        assert_eq!(c.split_token("studying"), vec!["study@@", "ing"]);
        assert_eq!(join_pieces(&c.split_token("studying")), "studying");
    }

    #[test]
    fn fully_merged_token_stays_whole() {
        let c = codes("a b\nab c</w>\n");
        assert_eq!(c.split_token("abc"), vec!["abc"]);
    }

    #[test]
    fn unknown_token_falls_apart_into_characters() {
        let c = codes("a b\n");
        assert_eq!(c.split_token("xyz"), vec!["x@@", "y@@", "z"]);
    }

    #[test]
    fn single_character_token() {
        let c = codes("a b\n");
        assert_eq!(c.split_token("q"), vec!["q"]);
    }

    #[test]
    fn malformed_merge_line_is_a_data_error() {
        let err = BpeCodes::from_reader("a b c\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TreeError::Data(_)));
    }

    #[test]
    fn join_pieces_restores_sentence() {
        let pieces: Vec<String> = ["He", "is", "stu@@", "dy@@", "ing"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(join_pieces(&pieces), "He is studying");
    }
}
