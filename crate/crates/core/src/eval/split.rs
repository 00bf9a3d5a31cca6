use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Splits `indices` into (train, val) with about `val_fraction` of each class in
/// val. Classes with at least two members always keep one on each side.
pub fn stratified_split(
    indices: &[usize],
    labels: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(EvalError::InvalidInput(format!("val fraction {val_fraction} outside [0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let l = *labels
            .get(i)
            .ok_or_else(|| EvalError::InvalidInput(format!("index {i} has no label")))?;
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let mut n_val = (members.len() as f64 * val_fraction).round() as usize;
        if members.len() >= 2 && val_fraction > 0.0 {
            n_val = n_val.clamp(1, members.len() - 1);
        }
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Subject-disjoint (train, test) split: whole subjects go to test until it
/// holds about `test_fraction` of them.
pub fn subject_split(subjects: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let mut ids: Vec<&String> = subjects.iter().collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(EvalError::InvalidInput("need at least two subjects".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let test_ids: std::collections::HashSet<&String> = ids[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in subjects.iter().enumerate() {
        if test_ids.contains(s) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_keeps_class_proportions() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let idx: Vec<usize> = (0..100).collect();
        let (tr, va) = stratified_split(&idx, &labels, 0.2, 3).unwrap();
        assert_eq!(va.len(), 20);
        assert_eq!(tr.len() + va.len(), 100);
        for c in 0..4 {
            assert_eq!(va.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        assert_eq!(stratified_split(&idx, &labels, 0.2, 3).unwrap().1, va);
    }

    #[test]
    fn subject_split_is_disjoint() {
        let subjects: Vec<String> = (0..50).map(|i| format!("s{}", i % 10)).collect();
        let (tr, te) = subject_split(&subjects, 0.2, 1).unwrap();
        let test_subjects: std::collections::HashSet<_> = te.iter().map(|&i| &subjects[i]).collect();
        assert_eq!(test_subjects.len(), 2);
        assert!(tr.iter().all(|&i| !test_subjects.contains(&subjects[i])));
    }
}
