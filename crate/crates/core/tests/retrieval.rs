use auscult_core::retrieval::build_index;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(entries: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let idx = build_index(entries.to_vec()).unwrap();
    let scores = idx.scores(q).unwrap();
    let mut all: Vec<(String, f64)> = idx.ids().iter().cloned().zip(scores).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn topk_matches_full_sort(n in 1usize..400, dim in 1usize..12, k_frac in 0.0f64..1.0, seed in any::<u64>(), coarse in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(String, Vec<f64>)> = (0..n)
            .map(|i| {
                let v = (0..dim)
                    .map(|_| if coarse { rng.gen_range(-2i32..=2) as f64 } else { rng.gen_range(-1.0..1.0) })
                    .collect::<Vec<f64>>();
                let v = if v.iter().all(|x| *x == 0.0) { vec![1.0; dim] } else { v };
                (format!("id{:05}", rng.gen_range(0..1_000_000) * 1000 + i), v)
            })
            .collect();
        let idx = build_index(entries.clone()).unwrap();
        let k = ((n as f64 * k_frac) as usize).clamp(1, n.min(50));
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        prop_assume!(q.iter().any(|x| *x != 0.0));
        prop_assert_eq!(idx.topk(&q, k).unwrap(), brute_force(&entries, &q, k));
    }
}

#[test]
fn full_ranking_when_k_is_count() {
    let entries: Vec<(String, Vec<f64>)> = (0..10).map(|i| (format!("{i}"), vec![i as f64 + 1.0, 1.0])).collect();
    let idx = build_index(entries.clone()).unwrap();
    assert_eq!(idx.topk(&[1.0, 0.0], 10).unwrap(), brute_force(&entries, &[1.0, 0.0], 10));
}

/// Two classes whose embeddings and report tokens both follow the label.
/// With noisy but class-structured embeddings the retrieval pipeline must
/// rank test clips well above chance; with permuted reports it must not.
#[test]
fn class_correlated_corpus_is_classified_above_chance() {
    use auscult_core::eval::auroc;
    use auscult_core::retrieval::{zeroshot_classify, Aggregation, ZeroShotConfig};
    use auscult_core::teacher::HashEmbedder;
    use rand::seq::SliceRandom;
    use std::collections::BTreeMap;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dim = 16;
    let mut point = |class: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|j| if j == class { 1.0 } else { 0.0 } + rng.gen_range(-0.6..0.6))
            .collect()
    };
    let filler = ["Breath sounds recorded.", "Patient seated.", "Recorded at the chest."];
    let mut entries = Vec::new();
    let mut texts = BTreeMap::new();
    for i in 0..200 {
        let class = i % 2;
        let id = format!("t{i:03}");
        entries.push((id.clone(), point(class, &mut rng)));
        let name = ["asthma", "pneumonia"][class];
        texts.insert(id, format!("{} Diagnosis {name}.", filler.choose(&mut rng).unwrap()));
    }
    let index = build_index(entries).unwrap();
    let cfg = ZeroShotConfig {
        k: 5,
        aggregation: Aggregation::MeanEmbedding,
        class_names: vec!["asthma".into(), "pneumonia".into()],
    };
    let embedder = HashEmbedder::default();
    let queries: Vec<(usize, Vec<f64>)> = (0..100).map(|i| (i % 2, point(i % 2, &mut rng))).collect();
    let score = |texts: &BTreeMap<String, String>| {
        let (scores, labels): (Vec<f64>, Vec<bool>) = queries
            .iter()
            .map(|(c, q)| {
                let r = zeroshot_classify(q, &index, texts, &cfg, &embedder).unwrap();
                (r.scores[1] - r.scores[0], *c == 1)
            })
            .unzip();
        auroc(&scores, &labels).unwrap()
    };
    let aligned = score(&texts);
    let mut values: Vec<String> = texts.values().cloned().collect();
    values.shuffle(&mut rng);
    let shuffled: BTreeMap<String, String> = texts.keys().cloned().zip(values).collect();
    let chance = score(&shuffled);
    assert!(aligned > 0.9, "aligned corpus AUROC {aligned}");
    assert!((chance - 0.5).abs() < 0.15, "shuffled corpus AUROC {chance}");
}
