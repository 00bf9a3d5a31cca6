use super::{AlignError, CkaMode, LossKind};
use crate::numerics::{Matrix, Tape, Var};

fn check_pair(ha: (usize, usize), hl: (usize, usize)) -> Result<(), AlignError> {
    check_shapes(ha, hl, CkaMode::Sample)
}

fn check_shapes(ha: (usize, usize), hl: (usize, usize), mode: CkaMode) -> Result<(), AlignError> {
    if mode == CkaMode::Feature && ha.1 != hl.1 {
        return Err(AlignError::Config(format!(
            "feature-Gram CKA needs equal widths, got {} and {}",
            ha.1, hl.1
        )));
    }
    if ha.0 != hl.0 {
        return Err(AlignError::DegenerateBatch(format!(
            "batch sizes differ: {} vs {}",
            ha.0, hl.0
        )));
    }
    if ha.0 < 2 {
        return Err(AlignError::DegenerateBatch(format!("need at least 2 samples, got {}", ha.0)));
    }
    Ok(())
}

/// Relative size below which a centered batch counts as constant.
const DEGENERATE_REL: f64 = 1e-12;

fn is_degenerate(centered_norm: f64, raw_norm: f64) -> bool {
    !(centered_norm > DEGENERATE_REL * raw_norm) || centered_norm == 0.0
}

fn gram(c: &Matrix, mode: CkaMode) -> Matrix {
    let t = c.transpose();
    match mode {
        CkaMode::Sample => c.matmul(&t),
        CkaMode::Feature => t.matmul(c),
    }
    .expect("conformable by construction")
}

/// Centered kernel alignment of two batches, clamped to `[0, 1]`.
pub fn cka(ha: &Matrix, hl: &Matrix, mode: CkaMode) -> Result<f64, AlignError> {
    check_shapes(ha.shape(), hl.shape(), mode)?;
    let (ca, cl) = (ha.center_columns(), hl.center_columns());
    if is_degenerate(ca.frobenius_norm(), ha.frobenius_norm()) || is_degenerate(cl.frobenius_norm(), hl.frobenius_norm()) {
        return Err(AlignError::DegenerateBatch("a side is constant across the batch".into()));
    }
    let (ka, kl) = (gram(&ca, mode), gram(&cl, mode));
    let den = ka.frobenius_norm() * kl.frobenius_norm();
    if !(den > 0.0) || !den.is_finite() {
        return Err(AlignError::DegenerateBatch("zero Gram norm".into()));
    }
    let v = ka.frobenius_inner(&kl).expect("same shape") / den;
    Ok(v.clamp(0.0, 1.0))
}

/// CKA recorded on a tape so gradients flow into both inputs.
pub fn cka_on_tape(tape: &mut Tape<'_>, a: Var, l: Var, mode: CkaMode) -> Result<Var, AlignError> {
    check_shapes(tape.value(a).shape(), tape.value(l).shape(), mode)?;
    let mut grams = Vec::with_capacity(2);
    for x in [a, l] {
        let raw = tape.value(x).frobenius_norm();
        let c = tape.row_mean_center(x);
        if is_degenerate(tape.value(c).frobenius_norm(), raw) {
            return Err(AlignError::DegenerateBatch("a side is constant across the batch".into()));
        }
        let ct = tape.transpose(c);
        grams.push(match mode {
            CkaMode::Sample => tape.matmul(c, ct)?,
            CkaMode::Feature => tape.matmul(ct, c)?,
        });
    }
    let num = tape.frobenius_inner(grams[0], grams[1])?;
    let na = tape.frobenius_norm(grams[0]);
    let nl = tape.frobenius_norm(grams[1]);
    let den = tape.elementwise_mul(na, nl)?;
    let q = tape.div_scalar(num, den)?;
    Ok(tape.clamp(q, 0.0, 1.0))
}

fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// `1 − cka` for the CKA kind; mean squared difference of row-normalized
/// batches for the MSE kind.
pub fn align_loss(ha: &Matrix, hl: &Matrix, mode: CkaMode, kind: LossKind) -> Result<f64, AlignError> {
    match kind {
        LossKind::Cka => Ok(1.0 - cka(ha, hl, mode)?),
        LossKind::Mse => {
            check_pair(ha.shape(), hl.shape())?;
            if ha.cols() != hl.cols() {
                return Err(AlignError::Config(format!(
                    "MSE alignment needs equal widths, got {} and {}",
                    ha.cols(),
                    hl.cols()
                )));
            }
            let (a, l) = (normalize_rows(ha), normalize_rows(hl));
            let s: f64 = a.data().iter().zip(l.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(s / a.len() as f64)
        }
    }
}

pub fn align_loss_on_tape(
    tape: &mut Tape<'_>,
    a: Var,
    l: Var,
    mode: CkaMode,
    kind: LossKind,
) -> Result<Var, AlignError> {
    match kind {
        LossKind::Cka => {
            let c = cka_on_tape(tape, a, l, mode)?;
            let neg = tape.scalar_mul(c, -1.0);
            let one = tape.constant(Matrix::scalar(1.0));
            Ok(tape.add(one, neg)?)
        }
        LossKind::Mse => {
            let (sa, sl) = (tape.value(a).shape(), tape.value(l).shape());
            check_pair(sa, sl)?;
            if sa.1 != sl.1 {
                return Err(AlignError::Config(format!(
                    "MSE alignment needs equal widths, got {} and {}",
                    sa.1, sl.1
                )));
            }
            let na = tape.l2_normalize_rows(a);
            let nl = tape.l2_normalize_rows(l);
            let d = tape.sub(na, nl)?;
            let sq = tape.elementwise_mul(d, d)?;
            Ok(tape.mean_all(sq)?)
        }
    }
}

/// `λa·align + λs·ssm`.
pub fn total_loss(align: f64, ssm: f64, lambda_align: f64, lambda_ssm: f64) -> Result<f64, AlignError> {
    if lambda_align < 0.0 || lambda_ssm < 0.0 {
        return Err(AlignError::Config(format!(
            "loss weights must be non-negative, got {lambda_align} and {lambda_ssm}"
        )));
    }
    Ok(lambda_align * align + lambda_ssm * ssm)
}
