//! `ACEMB01` embedding files: magic, u32 dim, u32 count, then per record
//! (u32 id length, id bytes, dim × f32 LE).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{text_digest, EmbeddingSource, TeacherEmbedding, TeacherError, TextEmbedder};

const MAGIC: &[u8; 8] = b"ACEMB01\0";
/// Stored vectors are f32, so unit norm holds only to single precision.
const STORED_NORM_TOL: f64 = 1e-6;

pub fn write_embeddings<W: Write>(w: &mut W, dim: usize, entries: &[(String, Vec<f64>)]) -> Result<(), TeacherError> {
    w.write_all(MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    let mut seen = HashSet::new();
    for (id, v) in entries {
        if v.len() != dim {
            return Err(TeacherError::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(TeacherError::DuplicateId(id.clone()));
        }
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        let mut buf = Vec::with_capacity(dim * 4);
        for &x in v {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, dim: usize, entries: &[(String, Vec<f64>)]) -> Result<(), TeacherError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, dim, entries)?;
    w.flush()?;
    Ok(())
}

/// Reads every record. Vectors whose stored norm is off by more than single
/// precision allows are renormalized and logged.
pub fn read_embeddings<R: Read>(
    r: &mut R,
    expected_dim: Option<usize>,
) -> Result<Vec<(String, TeacherEmbedding)>, TeacherError> {
    Ok(read_records(r, expected_dim, true)?
        .into_iter()
        .map(|(id, vector)| {
            let emb = TeacherEmbedding {
                vector,
                source: EmbeddingSource::File,
                text_digest: id.clone(),
            };
            (id, emb)
        })
        .collect())
}

/// Reads every record as stored, without any norm check. Used for audio
/// embeddings, whose norms carry information.
pub fn read_vectors<R: Read>(r: &mut R, expected_dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>, TeacherError> {
    read_records(r, expected_dim, false)
}

pub fn load_vectors(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>, TeacherError> {
    read_vectors(&mut BufReader::new(File::open(path)?), expected_dim)
}

fn read_records<R: Read>(r: &mut R, expected_dim: Option<usize>, unit: bool) -> Result<Vec<(String, Vec<f64>)>, TeacherError> {
    let corrupt = |m: &str| TeacherError::Corrupt(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("missing header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| corrupt("missing dim"))?;
    let dim = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|_| corrupt("missing count"))?;
    let count = u32::from_le_bytes(word) as usize;
    if let Some(e) = expected_dim {
        if e != dim {
            return Err(TeacherError::Dimension { expected: e, got: dim });
        }
    }
    if dim == 0 {
        return Err(corrupt("zero dim"));
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    let mut raw = vec![0u8; dim * 4];
    for rec in 0..count {
        r.read_exact(&mut word)
            .map_err(|_| TeacherError::Corrupt(format!("truncated at record {rec}")))?;
        let len = u32::from_le_bytes(word) as usize;
        if len > 1 << 16 {
            return Err(TeacherError::Corrupt(format!("id length {len} at record {rec}")));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)
            .map_err(|_| TeacherError::Corrupt(format!("truncated id at record {rec}")))?;
        let id = String::from_utf8(id).map_err(|_| TeacherError::Corrupt(format!("non-UTF-8 id at record {rec}")))?;
        r.read_exact(&mut raw)
            .map_err(|_| TeacherError::Corrupt(format!("truncated vector for {id:?}")))?;
        let mut v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(TeacherError::Corrupt(format!("non-finite entry for {id:?}")));
        }
        if unit {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TeacherError::ZeroVector(id));
            }
            if (norm - 1.0).abs() > STORED_NORM_TOL {
                log::warn!("embedding {id:?} stored with norm {norm:.6}; renormalized");
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        if !seen.insert(id.clone()) {
            return Err(TeacherError::DuplicateId(id));
        }
        out.push((id, v));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(corrupt("trailing bytes after last record"));
    }
    Ok(out)
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<Vec<(String, TeacherEmbedding)>, TeacherError> {
    read_embeddings(&mut BufReader::new(File::open(path)?), expected_dim)
}

/// Serves vectors from a loaded file whose ids are [`text_digest`]s.
#[derive(Clone, Debug)]
pub struct PrecomputedEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbedder {
    pub fn new(dim: usize, entries: Vec<(String, TeacherEmbedding)>) -> Result<Self, TeacherError> {
        let mut table = HashMap::with_capacity(entries.len());
        for (id, e) in entries {
            if e.dim() != dim {
                return Err(TeacherError::Dimension {
                    expected: dim,
                    got: e.dim(),
                });
            }
            if table.insert(id.clone(), e.vector).is_some() {
                return Err(TeacherError::DuplicateId(id));
            }
        }
        Ok(Self { dim, table })
    }

    pub fn from_file(path: impl AsRef<Path>, dim: usize) -> Result<Self, TeacherError> {
        Self::new(dim, load_embeddings(path, Some(dim))?)
    }
}

impl TextEmbedder for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<TeacherEmbedding, TeacherError> {
        let digest = text_digest(text);
        let vector = self
            .table
            .get(&digest)
            .cloned()
            .ok_or_else(|| TeacherError::Missing(digest.clone()))?;
        Ok(TeacherEmbedding {
            vector,
            source: EmbeddingSource::File,
            text_digest: digest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::hash_embed;

    fn sample() -> Vec<(String, Vec<f64>)> {
        ["a b", "c d e", "wheezes present"]
            .iter()
            .map(|t| (text_digest(t), hash_embed(t, 16, 0).unwrap().vector))
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise_stable() {
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, 16, &sample()).unwrap();
        let loaded = read_embeddings(&mut bytes.as_slice(), Some(16)).unwrap();
        let again: Vec<(String, Vec<f64>)> = loaded.iter().map(|(i, e)| (i.clone(), e.vector.clone())).collect();
        let mut bytes2 = Vec::new();
        write_embeddings(&mut bytes2, 16, &again).unwrap();
        assert_eq!(bytes, bytes2);
        let reloaded = read_embeddings(&mut bytes2.as_slice(), Some(16)).unwrap();
        assert_eq!(loaded, reloaded);
    }

    #[test]
    fn duplicate_id_in_file() {
        // Hand-build a file with a repeated id, bypassing the writer's check.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.push(b'x');
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
            bytes.extend_from_slice(&0.0f32.to_le_bytes());
        }
        assert!(matches!(
            read_embeddings(&mut bytes.as_slice(), None),
            Err(TeacherError::DuplicateId(id)) if id == "x"
        ));
    }

    #[test]
    fn unnormalized_vector_is_renormalized() {
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, 2, &[("v".into(), vec![3.0, 4.0])]).unwrap();
        let loaded = read_embeddings(&mut bytes.as_slice(), None).unwrap();
        let v = &loaded[0].1.vector;
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_and_corruption() {
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, 16, &sample()).unwrap();
        assert!(matches!(
            read_embeddings(&mut bytes.as_slice(), Some(2048)),
            Err(TeacherError::Dimension { expected: 2048, got: 16 })
        ));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_embeddings(&mut &cut[..], None), Err(TeacherError::Corrupt(_))));
        assert!(matches!(read_embeddings(&mut &b"junk"[..], None), Err(TeacherError::Corrupt(_))));
    }

    #[test]
    fn precomputed_lookup_by_text() {
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, 16, &sample()).unwrap();
        let emb = PrecomputedEmbedder::new(16, read_embeddings(&mut bytes.as_slice(), Some(16)).unwrap()).unwrap();
        assert!(emb.embed("c  d e").is_ok());
        assert!(matches!(emb.embed("unseen"), Err(TeacherError::Missing(_))));
    }
}
