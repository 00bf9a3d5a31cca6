use super::{normalize_in_place, text_digest, EmbeddingSource, TeacherEmbedding, TeacherError, TextEmbedder};

/// Collapses runs of whitespace and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer to spread the low bits.
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of lowercase unigrams and bigrams, L2-normalized.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Result<TeacherEmbedding, TeacherError> {
    if dim == 0 {
        return Err(TeacherError::InvalidArgument("dim must be positive".into()));
    }
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Err(TeacherError::EmptyText);
    }
    let toks = tokens(&norm);
    if toks.is_empty() {
        return Err(TeacherError::EmptyText);
    }
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str| {
        let h = fnv1a(seed, feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    };
    for t in &toks {
        add(t);
    }
    for pair in toks.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    if normalize_in_place(&mut v) == 0.0 {
        return Err(TeacherError::ZeroVector(norm));
    }
    Ok(TeacherEmbedding {
        vector: v,
        source: EmbeddingSource::Hashed,
        text_digest: text_digest(text),
    })
}

/// The offline default teacher.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dim: super::DEFAULT_TEACHER_DIM,
            seed: 0,
        }
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<TeacherEmbedding, TeacherError> {
        hash_embed(text, self.dim, self.seed)
    }
}
