//! Ordered parameter store and the binary parameter-container format.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic   b"ARBC"
//! u32     format version (currently 1)
//! u8      float width in bytes (4 or 8)
//! [u8;3]  reserved, zero
//! u32     metadata entry count
//!   per entry: u32 key length, key (utf-8), u32 value length, value bytes
//! u32     parameter count
//!   per parameter: u32 name length, name (utf-8), u32 rank,
//!                  u64 × rank dims, dense little-endian float payload
//! ```
//!
//! Parameters serialise in store order and load back in file order, so a
//! save → load → save round trip is byte-identical.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{Element, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ARBC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Insertion-ordered map of named parameter tensors.
///
/// The order is load-bearing: initialisation draws, checkpoint layout, and
/// optimizer sweeps all follow it.
pub struct ParamStore<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
    index: HashMap<String, usize>,
}

impl<E: Element> std::fmt::Debug for ParamStore<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ParamStore({} params, {} elements)",
            self.entries.len(),
            self.total_elements()
        )
    }
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Clone for ParamStore<E> {
    fn clone(&self) -> Self {
        ParamStore {
            entries: self.entries.clone(),
            index: self.index.clone(),
        }
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a new parameter.
    ///
    /// # Errors
    /// Contract error when the name is already present.
    pub fn insert(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(TensorError::InvalidArgument {
                op: "param_store",
                detail: format!("duplicate parameter name {name:?}"),
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.index.get(name).map(|i| &self.entries[*i].1)
    }

    /// Fetches a parameter that must exist.
    ///
    /// # Errors
    /// Contract error naming the missing parameter.
    pub fn require(&self, name: &str) -> Result<&Tensor<E>> {
        self.get(name).ok_or_else(|| TensorError::InvalidArgument {
            op: "param_store",
            detail: format!("missing parameter {name:?}"),
        })
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    ///
    /// # Errors
    /// Contract error when the name is unknown or the shape changes.
    pub fn set(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        let Some(i) = self.index.get(name) else {
            return Err(TensorError::InvalidArgument {
                op: "param_store",
                detail: format!("cannot set unknown parameter {name:?}"),
            });
        };
        if self.entries[*i].1.shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "param_store",
                detail: format!(
                    "parameter {name:?}: {:?} -> {:?}",
                    self.entries[*i].1.shape(),
                    t.shape()
                ),
            });
        }
        self.entries[*i].1 = t;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Name/tensor pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Sum of element counts over all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of element counts over parameters whose name starts with `prefix`.
    pub fn elements_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Tracked copy of the whole store on `tape`; iteration order preserved.
    pub fn watch_all(&self, tape: &super::Tape<E>) -> ParamStore<E> {
        let mut out = ParamStore::new();
        for (name, t) in &self.entries {
            out.insert(name, tape.watch(t)).expect("names already unique");
        }
        out
    }

    /// Element-width conversion of every parameter (used by checkpoint
    /// width dispatch).
    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for (name, t) in &self.entries {
            out.insert(name, t.cast::<F>()).expect("names already unique");
        }
        out
    }
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(format!("io: {e}"))
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(u64::from_le_bytes(buf))
}

fn get_bytes(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    String::from_utf8(get_bytes(r, len)?)
        .map_err(|e| TensorError::Checkpoint(format!("non-utf8 string: {e}")))
}

/// Writes the parameter container: header, metadata entries, parameters.
///
/// # Errors
/// Propagates I/O failures as checkpoint errors.
pub fn save_params<E: Element>(
    w: &mut impl Write,
    store: &ParamStore<E>,
    meta: &[(String, Vec<u8>)],
) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    w.write_all(&[E::WIDTH, 0, 0, 0]).map_err(io_err)?;

    put_u32(w, meta.len() as u32)?;
    for (key, value) in meta {
        put_str(w, key)?;
        put_u32(w, value.len() as u32)?;
        w.write_all(value).map_err(io_err)?;
    }

    put_u32(w, store.len() as u32)?;
    for (name, t) in store.iter() {
        put_str(w, name)?;
        put_u32(w, t.rank() as u32)?;
        for dim in t.shape() {
            put_u64(w, *dim as u64)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes_vec()).map_err(io_err)?;
        }
    }
    Ok(())
}

/// Reads the container header, returning `(version, float_width_bytes)` and
/// leaving the reader positioned at the metadata section.
///
/// # Errors
/// Checkpoint error on bad magic or unsupported version.
pub fn read_header(r: &mut impl Read) -> Result<(u32, u8)> {
    let magic = get_bytes(r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let tail = get_bytes(r, 4)?;
    let width = tail[0];
    if width != 4 && width != 8 {
        return Err(TensorError::Checkpoint(format!(
            "unsupported float width {width}"
        )));
    }
    Ok((version, width))
}

/// Reads a parameter container written by [`save_params`].
///
/// # Errors
/// Checkpoint error on format violations, truncated data, or when the file's
/// float width differs from `E`.
pub fn load_params<E: Element>(
    r: &mut impl Read,
) -> Result<(ParamStore<E>, Vec<(String, Vec<u8>)>)> {
    let (_, width) = read_header(r)?;
    if width != E::WIDTH {
        return Err(TensorError::Checkpoint(format!(
            "container holds {width}-byte floats, caller expects {}-byte",
            E::WIDTH
        )));
    }

    let meta_count = get_u32(r)? as usize;
    let mut meta = Vec::with_capacity(meta_count);
    for _ in 0..meta_count {
        let key = get_str(r)?;
        let len = get_u32(r)? as usize;
        meta.push((key, get_bytes(r, len)?));
    }

    let param_count = get_u32(r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..param_count {
        let name = get_str(r)?;
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u64(r)? as usize);
        }
        let count = super::numel(&shape);
        let payload = get_bytes(r, count * E::WIDTH as usize)?;
        let mut data = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(E::WIDTH as usize) {
            data.push(E::from_le_slice(chunk));
        }
        store.insert(&name, Tensor::from_vec(&shape, data)?)?;
    }
    Ok((store, meta))
}
