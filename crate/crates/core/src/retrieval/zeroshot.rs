use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{RetrievalError, VectorIndex};
use crate::teacher::{cosine, TextEmbedder};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average the retrieved report vectors, then match class names.
    #[default]
    MeanEmbedding,
    /// Classify each retrieved report; the most frequent class wins.
    MajorityVote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroShotConfig {
    pub k: usize,
    pub aggregation: Aggregation,
    pub class_names: Vec<String>,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            k: 5,
            aggregation: Aggregation::MeanEmbedding,
            class_names: Vec::new(),
        }
    }
}

impl ZeroShotConfig {
    fn check(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::Config("k must be at least 1".into()));
        }
        if self.class_names.len() < 2 {
            return Err(RetrievalError::Config("need at least two class names".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotResult {
    pub label: usize,
    /// Mean-embedding cosines, or vote shares under majority vote.
    pub scores: Vec<f64>,
    pub retrieved: Vec<(String, f64)>,
}

/// A classifier with class-name and report vectors embedded once.
pub struct ZeroShot<'a> {
    cfg: ZeroShotConfig,
    index: &'a VectorIndex,
    class_vectors: Vec<Vec<f64>>,
    report_vectors: HashMap<String, Vec<f64>>,
}

impl<'a> ZeroShot<'a> {
    /// Embeds the class names and every indexed report's text.
    pub fn new(
        cfg: ZeroShotConfig,
        index: &'a VectorIndex,
        report_texts: &BTreeMap<String, String>,
        embedder: &dyn TextEmbedder,
    ) -> Result<Self, RetrievalError> {
        cfg.check()?;
        if index.is_empty() {
            return Err(RetrievalError::Empty);
        }
        if cfg.k > index.len() {
            return Err(RetrievalError::KTooLarge {
                k: cfg.k,
                count: index.len(),
            });
        }
        let class_vectors = embedder
            .embed_batch(&cfg.class_names)?
            .into_iter()
            .map(|e| e.vector)
            .collect();
        let mut texts = Vec::with_capacity(index.len());
        for id in index.ids() {
            texts.push(
                report_texts
                    .get(id)
                    .ok_or_else(|| RetrievalError::UnknownId(id.clone()))?
                    .clone(),
            );
        }
        let mut distinct: Vec<String> = texts.clone();
        distinct.sort();
        distinct.dedup();
        let by_text: HashMap<String, Vec<f64>> = distinct
            .iter()
            .cloned()
            .zip(embedder.embed_batch(&distinct)?.into_iter().map(|e| e.vector))
            .collect();
        let report_vectors = index
            .ids()
            .iter()
            .zip(&texts)
            .map(|(id, t)| (id.clone(), by_text[t].clone()))
            .collect();
        Ok(Self {
            cfg,
            index,
            class_vectors,
            report_vectors,
        })
    }

    fn class_scores(&self, v: &[f64]) -> Vec<f64> {
        self.class_vectors.iter().map(|c| cosine(v, c)).collect()
    }

    fn argmax(scores: &[f64]) -> usize {
        // First index wins ties.
        scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
    }

    pub fn classify(&self, audio_embedding: &[f64]) -> Result<ZeroShotResult, RetrievalError> {
        let retrieved = self.index.topk(audio_embedding, self.cfg.k)?;
        let vectors: Vec<&Vec<f64>> = retrieved
            .iter()
            .map(|(id, _)| self.report_vectors.get(id).ok_or_else(|| RetrievalError::UnknownId(id.clone())))
            .collect::<Result<_, _>>()?;
        let dim = vectors[0].len();
        let mut mean = vec![0.0; dim];
        for v in &vectors {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x / vectors.len() as f64;
            }
        }
        let mean_scores = self.class_scores(&mean);
        let (label, scores) = match self.cfg.aggregation {
            Aggregation::MeanEmbedding => (Self::argmax(&mean_scores), mean_scores),
            Aggregation::MajorityVote => {
                let mut votes = vec![0usize; self.class_vectors.len()];
                for v in &vectors {
                    votes[Self::argmax(&self.class_scores(v))] += 1;
                }
                let top = *votes.iter().max().expect("at least two classes");
                let leaders: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == top).collect();
                let label = if leaders.len() == 1 {
                    leaders[0]
                } else {
                    Self::argmax(&mean_scores)
                };
                let shares = votes.iter().map(|&n| n as f64 / vectors.len() as f64).collect();
                (label, shares)
            }
        };
        Ok(ZeroShotResult {
            label,
            scores,
            retrieved,
        })
    }
}

/// One-shot form of [`ZeroShot::classify`].
pub fn zeroshot_classify(
    audio_embedding: &[f64],
    index: &VectorIndex,
    report_texts: &BTreeMap<String, String>,
    cfg: &ZeroShotConfig,
    embedder: &dyn TextEmbedder,
) -> Result<ZeroShotResult, RetrievalError> {
    ZeroShot::new(cfg.clone(), index, report_texts, embedder)?.classify(audio_embedding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::build_index;
    use crate::teacher::HashEmbedder;

    fn setup() -> (VectorIndex, BTreeMap<String, String>) {
        let idx = build_index(vec![
            ("r1".into(), vec![1.0, 0.0]),
            ("r2".into(), vec![0.9, 0.1]),
            ("r3".into(), vec![0.0, 1.0]),
        ])
        .unwrap();
        let texts = [
            ("r1".to_string(), "wheeze".to_string()),
            ("r2".into(), "wheeze".into()),
            ("r3".into(), "murmur".into()),
        ]
        .into();
        (idx, texts)
    }

    fn cfg(k: usize, aggregation: Aggregation) -> ZeroShotConfig {
        ZeroShotConfig {
            k,
            aggregation,
            class_names: vec!["murmur".into(), "wheeze".into()],
        }
    }

    #[test]
    fn nearest_report_equal_to_class_name_wins_with_score_one() {
        let (idx, texts) = setup();
        let e = HashEmbedder::default();
        let r = zeroshot_classify(&[0.0, 1.0], &idx, &texts, &cfg(1, Aggregation::MeanEmbedding), &e).unwrap();
        assert_eq!(r.label, 0);
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        let r = zeroshot_classify(&[1.0, 0.05], &idx, &texts, &cfg(3, Aggregation::MajorityVote), &e).unwrap();
        assert_eq!(r.label, 1);
        assert!((r.scores[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let (idx, mut texts) = setup();
        let e = HashEmbedder::default();
        assert!(matches!(
            zeroshot_classify(&[1.0, 0.0], &idx, &texts, &cfg(4, Aggregation::MeanEmbedding), &e),
            Err(RetrievalError::KTooLarge { .. })
        ));
        let mut one_class = cfg(1, Aggregation::MeanEmbedding);
        one_class.class_names.pop();
        assert!(matches!(
            zeroshot_classify(&[1.0, 0.0], &idx, &texts, &one_class, &e),
            Err(RetrievalError::Config(_))
        ));
        texts.remove("r3");
        assert!(matches!(
            zeroshot_classify(&[1.0, 0.0], &idx, &texts, &cfg(1, Aggregation::MeanEmbedding), &e),
            Err(RetrievalError::UnknownId(_))
        ));
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let (idx, texts) = setup();
        let mut entries = idx.entries();
        entries.reverse();
        let rev = build_index(entries).unwrap();
        let e = HashEmbedder::default();
        for q in [[1.0, 0.2], [0.3, 0.7], [0.5, 0.5]] {
            for agg in [Aggregation::MeanEmbedding, Aggregation::MajorityVote] {
                let a = zeroshot_classify(&q, &idx, &texts, &cfg(2, agg), &e).unwrap();
                let b = zeroshot_classify(&q, &rev, &texts, &cfg(2, agg), &e).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}
