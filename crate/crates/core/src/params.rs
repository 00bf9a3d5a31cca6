//! Ordered collections of named parameter tensors and their binary encoding.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use crate::numerics::{Matrix, NumericsError, Tape, Var};

/// Named matrices in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Matrix)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<(), NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Entries whose names start with `prefix`, in order.
    pub fn filter_prefix(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, m) in &self.entries {
            if n.starts_with(prefix) {
                out.insert(n.clone(), m.clone()).expect("names already unique");
            }
        }
        out
    }

    /// Appends every entry of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamSet) -> Result<(), NumericsError> {
        for (n, m) in other.entries {
            self.insert(n, m)?;
        }
        Ok(())
    }

    /// Registers every entry as a trainable leaf, returning vars in order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<Vec<Var>, NumericsError> {
        self.entries.iter().map(|(n, m)| tape.param(n, m)).collect()
    }

    /// Registers every entry as a frozen leaf.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.entries.iter().map(|(_, m)| tape.frozen(m)).collect()
    }

    /// Writes `(u32 name length, name, u32 rows, u32 cols, f64 LE data)` per entry.
    pub fn write_tensors<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (name, m) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(m.len() * 8);
            for v in m.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads tensors until end of input.
    pub fn read_tensors<R: Read>(r: &mut R) -> io::Result<ParamSet> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut out = ParamSet::new();
        loop {
            let mut len = [0u8; 4];
            match r.read(&mut len[..1])? {
                0 => return Ok(out),
                _ => r.read_exact(&mut len[1..])?,
            }
            let name_len = u32::from_le_bytes(len) as usize;
            if name_len > 4096 {
                return Err(bad(format!("tensor name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
            let mut dims = [0u8; 8];
            r.read_exact(&mut dims)?;
            let rows = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
            let mut raw = vec![0u8; rows * cols * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = Matrix::new(rows, cols, data).map_err(|e| bad(format!("{name}: {e}")))?;
            out.insert(name, m).map_err(|e| bad(e.to_string()))?;
        }
    }
}
