use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RetrievalError;
use crate::teacher::{load_vectors, save_embeddings};

/// Immutable set of unit vectors keyed by unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    /// Row-major, `ids.len() * dim`.
    vectors: Vec<f64>,
}

fn normalized(id: &str, v: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(RetrievalError::ZeroVector(id.to_string()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Descending score, then ascending id.
fn rank_order(a: &(usize, f64), b: &(usize, f64), ids: &[String]) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

pub fn build_index(entries: Vec<(String, Vec<f64>)>) -> Result<VectorIndex, RetrievalError> {
    let dim = entries.first().ok_or(RetrievalError::Empty)?.1.len();
    if dim == 0 {
        return Err(RetrievalError::Dimension { expected: 1, got: 0 });
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(entries.len());
    let mut vectors = Vec::with_capacity(entries.len() * dim);
    for (id, v) in entries {
        if v.len() != dim {
            return Err(RetrievalError::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(RetrievalError::DuplicateId(id));
        }
        vectors.extend(normalized(&id, &v)?);
        ids.push(id);
    }
    Ok(VectorIndex { dim, ids, vectors })
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` against every entry, in insertion order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = normalized("query", query)?;
        Ok((0..self.len())
            .map(|i| self.vector(i).iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// The `k` best `(id, cosine)` pairs, descending, ties by ascending id.
    pub fn topk(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        if k > self.len() {
            return Err(RetrievalError::KTooLarge { k, count: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(usize, f64)> = self.scores(query)?.into_iter().enumerate().collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order(a, b, &self.ids);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect())
    }

    pub fn entries(&self) -> Vec<(String, Vec<f64>)> {
        (0..self.len()).map(|i| (self.ids[i].clone(), self.vector(i).to_vec())).collect()
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".reports.jsonl");
    PathBuf::from(s)
}

/// Writes vectors as an embedding file and `id -> report text` as a JSON-lines
/// sidecar next to it (`<path>.reports.jsonl`).
pub fn save_report_index(
    path: &Path,
    index: &VectorIndex,
    texts: &BTreeMap<String, String>,
) -> Result<(), RetrievalError> {
    for id in index.ids() {
        if !texts.contains_key(id) {
            return Err(RetrievalError::UnknownId(id.clone()));
        }
    }
    save_embeddings(path, index.dim(), &index.entries())?;
    let mut w = BufWriter::new(fs::File::create(sidecar_path(path))?);
    for id in index.ids() {
        let line = serde_json::json!({ "id": id, "report": texts[id] });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_report_index(path: &Path) -> Result<(VectorIndex, BTreeMap<String, String>), RetrievalError> {
    let index = build_index(load_vectors(path, None)?)?;
    let mut texts = BTreeMap::new();
    for line in BufReader::new(fs::File::open(sidecar_path(path))?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| RetrievalError::Sidecar(e.to_string()))?;
        match (v.get("id").and_then(|x| x.as_str()), v.get("report").and_then(|x| x.as_str())) {
            (Some(id), Some(r)) => {
                texts.insert(id.to_string(), r.to_string());
            }
            _ => return Err(RetrievalError::Sidecar(format!("bad line {line:?}"))),
        }
    }
    if let Some(id) = index.ids().iter().find(|id| !texts.contains_key(*id)) {
        return Err(RetrievalError::UnknownId(id.clone()));
    }
    Ok((index, texts))
}
