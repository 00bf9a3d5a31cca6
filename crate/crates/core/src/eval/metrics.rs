use super::EvalError;
use crate::numerics::Matrix;

/// Mann-Whitney AUROC with ties credited one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass(format!("{pos} positives, {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the win count, so ties stay integral.
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / 2.0 / (pos * neg) as f64)
}

/// Unweighted mean of one-vs-rest AUROCs over classes present in `labels`.
/// `scores` is N x C.
pub fn auroc_macro(scores: &Matrix, labels: &[usize]) -> Result<f64, EvalError> {
    if scores.rows() != labels.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.cols()) {
        return Err(EvalError::InvalidInput(format!("label {bad} out of range for {} classes", scores.cols())));
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..scores.cols() {
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if !is_c.iter().any(|&b| b) {
            continue;
        }
        let col: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
        total += auroc(&col, &is_c)?;
        present += 1;
    }
    if present == 0 {
        return Err(EvalError::SingleClass("no labels".into()));
    }
    Ok(total / present as f64)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "mae needs equal non-empty inputs, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cases() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auroc(&[1.0, 2.0, 3.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass(_))));
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn macro_over_two_classes_matches_binary() {
        let s = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        let labels = [0, 1, 1, 0];
        let binary = auroc(&[0.1, 0.7, 0.4, 0.8], &[false, true, true, false]).unwrap();
        assert_eq!(auroc_macro(&s, &labels).unwrap(), binary);
    }
}
