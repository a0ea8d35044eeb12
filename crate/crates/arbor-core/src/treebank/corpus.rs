//! Line-oriented corpus files.
//!
//! Two layouts:
//! * plain: one bracketed tree per line,
//! * labeled: `label<TAB>tree(<TAB>tree)*` per line — a classification
//!   example whose input may span several sentence trees.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{parse_bracketed, ParseTree, Result, TreeError};

/// One labeled example: a class label over one or more sentence trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTrees {
    pub label: String,
    pub trees: Vec<ParseTree>,
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| TreeError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| TreeError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn data_at(path: &Path, lineno: usize, err: impl std::fmt::Display) -> TreeError {
    TreeError::Data(format!("{}:{}: {err}", path.display(), lineno))
}

/// Reads one tree per non-empty line.
///
/// # Errors
/// Io error on open/read; data error (with `path:line`) on parse failures.
pub fn read_trees(path: impl AsRef<Path>) -> Result<Vec<ParseTree>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| data_at(path, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_bracketed(&line).map_err(|e| data_at(path, i + 1, e))?);
    }
    Ok(out)
}

/// Writes one rendered tree per line.
///
/// # Errors
/// Io error on create/write.
pub fn write_trees(path: impl AsRef<Path>, trees: &[ParseTree]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for t in trees {
        writeln!(w, "{}", t.render()).map_err(|e| TreeError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// Reads `label<TAB>tree(<TAB>tree)*` lines.
///
/// # Errors
/// Io error on open/read; data error (with `path:line`) for an empty label,
/// a missing tree field, or a parse failure.
pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledTrees>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| data_at(path, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or_default().trim().to_string();
        if label.is_empty() {
            return Err(data_at(path, i + 1, "empty label field"));
        }
        let mut trees = Vec::new();
        for field in fields {
            trees.push(parse_bracketed(field).map_err(|e| data_at(path, i + 1, e))?);
        }
        if trees.is_empty() {
            return Err(data_at(path, i + 1, "label without any tree field"));
        }
        out.push(LabeledTrees { label, trees });
    }
    Ok(out)
}

/// Writes labeled examples in the tab-separated layout.
///
/// # Errors
/// Io error on create/write; data error for an example without trees.
pub fn write_labeled(path: impl AsRef<Path>, examples: &[LabeledTrees]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for ex in examples {
        if ex.trees.is_empty() {
            return Err(TreeError::Data(format!(
                "example with label {:?} has no trees",
                ex.label
            )));
        }
        let mut line = ex.label.clone();
        for t in &ex.trees {
            line.push('\t');
            line.push_str(&t.render());
        }
        writeln!(w, "{line}").map_err(|e| TreeError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}
