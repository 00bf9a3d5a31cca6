use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_probe, mae, EvalError, ProbeConfig, Targets};
use crate::numerics::Matrix;

/// One held-out subject and the rows used to fit without it.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject: String,
    pub n_test: usize,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoResult {
    pub folds: Vec<FoldResult>,
    /// Unweighted mean of per-subject MAE.
    pub mean_mae: f64,
}

/// One fold per distinct subject, in subject-id order.
pub fn loso_folds(subject_ids: &[String]) -> Result<Vec<Fold>, EvalError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subject_ids.iter().enumerate() {
        groups.entry(s.as_str()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "leave-one-subject-out needs at least two subjects, found {}",
            groups.len()
        )));
    }
    Ok(groups
        .iter()
        .map(|(subject, test)| Fold {
            subject: subject.to_string(),
            train: (0..subject_ids.len()).filter(|i| subject_ids[*i] != *subject).collect(),
            test: test.clone(),
        })
        .collect())
}

/// Runs `predict` on every fold; it receives the fold and must return one
/// prediction per test row.
pub fn loso_cv_with<F>(subject_ids: &[String], targets: &[f64], predict: F) -> Result<LosoResult, EvalError>
where
    F: Fn(&Fold) -> Result<Vec<f64>, EvalError> + Sync,
{
    if subject_ids.len() != targets.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} subject ids for {} targets",
            subject_ids.len(),
            targets.len()
        )));
    }
    let folds = loso_folds(subject_ids)?;
    let results = folds
        .par_iter()
        .map(|fold| {
            let preds = predict(fold)?;
            let truth: Vec<f64> = fold.test.iter().map(|&i| targets[i]).collect();
            Ok(FoldResult {
                subject: fold.subject.clone(),
                n_test: fold.test.len(),
                mae: mae(&preds, &truth)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mean_mae = results.iter().map(|r| r.mae).sum::<f64>() / results.len() as f64;
    Ok(LosoResult {
        folds: results,
        mean_mae,
    })
}

/// Leave-one-subject-out regression with an L1-trained probe per fold.
pub fn loso_cv(
    features: &Matrix,
    subject_ids: &[String],
    targets: &[f64],
    cfg: &ProbeConfig,
) -> Result<LosoResult, EvalError> {
    if features.rows() != targets.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} feature rows for {} targets",
            features.rows(),
            targets.len()
        )));
    }
    let t = Targets::Values(targets.to_vec());
    loso_cv_with(subject_ids, targets, |fold| {
        let fit = fit_probe(features, &t, &fold.train, cfg)?;
        let out = fit.probe.predict(&features.select_rows(&fold.test))?;
        Ok(out.data().to_vec())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_subjects_three_disjoint_folds() {
        let s = subjects(&["b", "a", "c", "a", "b"]);
        let folds = loso_folds(&s).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
            assert!(f.test.iter().all(|&i| s[i] == f.subject));
            assert_eq!(f.train.len() + f.test.len(), 5);
        }
        assert!(loso_folds(&subjects(&["a", "a"])).is_err());
    }

    #[test]
    fn constant_predictor_matches_mean_deviation() {
        let s = subjects(&["a", "a", "b", "b", "c"]);
        let y = [1.0, 3.0, 5.0, 9.0, 2.0];
        let r = loso_cv_with(&s, &y, |fold| {
            let m = fold.train.iter().map(|&i| y[i]).sum::<f64>() / fold.train.len() as f64;
            Ok(vec![m; fold.test.len()])
        })
        .unwrap();
        // Hand oracle: a -> mean(5,9,2)=16/3; b -> mean(1,3,2)=2; c -> mean(1,3,5,9)=4.5.
        let fa = ((16.0 / 3.0 - 1.0) + (16.0 / 3.0 - 3.0)) / 2.0;
        let fb = (3.0 + 7.0) / 2.0;
        let fc = 2.5;
        assert!((r.folds[0].mae - fa).abs() < 1e-12);
        assert!((r.folds[1].mae - fb).abs() < 1e-12);
        assert!((r.folds[2].mae - fc).abs() < 1e-12);
        assert!((r.mean_mae - (fa + fb + fc) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn subject_identity_feature_cannot_leak() {
        // Each subject has a private one-hot feature and a private target, so a
        // held-out subject's feature was never seen with a nonzero weight.
        let n_subj = 6;
        let mut rows = Vec::new();
        let mut s = Vec::new();
        let mut y = Vec::new();
        for k in 0..n_subj {
            for _ in 0..8 {
                let mut r = vec![0.0; n_subj];
                r[k] = 1.0;
                rows.push(r);
                s.push(format!("s{k}"));
                y.push(10.0 * k as f64);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = ProbeConfig {
            lr: 0.05,
            standardize: false,
            ..ProbeConfig::default()
        };
        let r = loso_cv(&x, &s, &y, &cfg).unwrap();
        assert_eq!(r.folds.len(), n_subj);
        assert!(r.mean_mae > 1.0, "held-out error {}", r.mean_mae);
    }
}
