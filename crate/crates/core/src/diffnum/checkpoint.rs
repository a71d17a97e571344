//! Text checkpoint format.
//!
//! ```text
//! brgcn-checkpoint 1
//! tensor <name> <ndim> <dim0> <dim1> ...
//! <value> <value> ...
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip `f64` formatting, so a
//! save/load cycle is exact. Names may not contain whitespace.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{DiffError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "brgcn-checkpoint";

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Extends with entries of `other`, prefixing each name.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet) {
        for (n, t) in other.entries {
            self.insert(format!("{}{}", prefix, n), t);
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect();
        ParamSet { entries }
    }
}

pub fn write_checkpoint(params: &ParamSet, mut out: impl Write) -> Result<(), DiffError> {
    writeln!(out, "{} {}", MAGIC, CHECKPOINT_VERSION)?;
    for (name, t) in params.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(DiffError::Checkpoint(format!("invalid tensor name {:?}", name)));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(out, "tensor {} {} {}", name, t.ndim(), dims.join(" "))?;
        let values: Vec<String> = t.data().iter().map(|v| format!("{:?}", v)).collect();
        writeln!(out, "{}", values.join(" "))?;
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<ParamSet, DiffError> {
    let bad = |line: usize, msg: &str| DiffError::Checkpoint(format!("line {}: {}", line, msg));
    let mut lines = BufReader::new(input).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    let header = header?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad(1, "missing checkpoint header"));
    }
    let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(1, "missing version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(1, &format!("unsupported version {}", version)));
    }

    let mut params = ParamSet::new();
    loop {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "missing end marker"))?;
        let line = line?;
        let ln = ln + 1;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("end") => break,
            Some("tensor") => {}
            _ => return Err(bad(ln, "expected `tensor` or `end`")),
        }
        let name = fields.next().ok_or_else(|| bad(ln, "missing tensor name"))?.to_string();
        let ndim: usize = fields.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(ln, "bad ndim"))?;
        let shape: Vec<usize> = fields.map(|d| d.parse().map_err(|_| bad(ln, "bad dim"))).collect::<Result<_, _>>()?;
        if shape.len() != ndim {
            return Err(bad(ln, "dimension count mismatch"));
        }
        let (vn, values) = lines.next().ok_or_else(|| bad(ln + 1, "missing values"))?;
        let values: Vec<f64> = values?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(vn + 1, "bad value")))
            .collect::<Result<_, _>>()?;
        let t = Tensor::new(shape, values).map_err(|e| bad(vn + 1, &e.to_string()))?;
        if params.get(&name).is_some() {
            return Err(bad(ln, &format!("duplicate tensor {}", name)));
        }
        params.insert(name, t);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<(), DiffError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet, DiffError> {
    read_checkpoint(std::fs::File::open(path)?)
}
