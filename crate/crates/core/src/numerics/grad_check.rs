//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Matrix, NumericsError, Tape, Var};

/// Denominator floor of the per-coordinate relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Result of comparing autodiff gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Autodiff and finite-difference derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients of `f` with central differences of step `h`.
///
/// `f` receives a fresh tape and one registered [`Var`] per entry of `params`
/// and must return a scalar loss node. Parameters larger than `max_coords`
/// entries are checked on a seeded random subset of coordinates; all others
/// are checked exhaustively. The error per coordinate is
/// `|autodiff - fd| / max(|autodiff|, |fd|, REL_FLOOR)`; the floor keeps
/// round-off in the differences of near-zero derivatives from dominating.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Matrix)],
    h: f64,
    seed: u64,
    max_coords: usize,
) -> Result<GradCheckOutcome, NumericsError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let eval = |values: &[Matrix]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .zip(params)
            .map(|(v, (name, _))| tape.param(name, v))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "grad_check function value".into(),
            });
        }
        Ok(v)
    };

    let report = {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(name, v)| tape.param(name, v))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = f(&mut tape, &vars)?;
        if !tape.value(loss).item().is_finite() {
            return Err(NumericsError::NonFinite {
                context: "grad_check function value".into(),
            });
        }
        tape.backward(loss)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Matrix> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut outcome = GradCheckOutcome {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        coords_checked: 0,
    };
    for (p, (name, original)) in params.iter().enumerate() {
        let analytic = report.get(name).expect("every param is reported");
        let n = original.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let x0 = original.data()[idx];
            values[p].data_mut()[idx] = x0 + h;
            let plus = eval(&values)?;
            values[p].data_mut()[idx] = x0 - h;
            let minus = eval(&values)?;
            values[p].data_mut()[idx] = x0;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.data()[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
            outcome.coords_checked += 1;
            if rel > outcome.max_rel_error || outcome.worst.is_none() {
                outcome.max_rel_error = outcome.max_rel_error.max(rel);
                outcome.worst = Some((name.clone(), idx));
                outcome.worst_values = Some((analytic.data()[idx], fd));
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        Matrix::random_normal(r, c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn linear_function_is_exact() {
        let w = rand_matrix(3, 2, 1);
        let x = rand_matrix(4, 3, 2);
        let out = grad_check(
            |t, v| {
                let xc = t.constant(x.clone());
                let y = t.matmul(xc, v[0])?;
                t.mean_all(y)
            },
            &[("w".into(), w)],
            1e-5,
            0,
            100,
        )
        .unwrap();
        assert!(out.max_rel_error < 1e-10, "{out:?}");
    }

    #[test]
    fn every_op_passes_on_smooth_inputs() {
        let a = rand_matrix(4, 5, 11);
        let b = rand_matrix(4, 5, 12);
        let row = rand_matrix(1, 5, 13);
        let s = Matrix::scalar(1.7);
        let mask = Matrix::new(4, 5, (0..20).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect()).unwrap();
        let target = rand_matrix(3, 5, 14);
        let err = grad_check(
            |t, v| {
                let (a, b, row, s) = (v[0], v[1], v[2], v[3]);
                let x = t.add(a, b)?;
                let x = t.sub(x, b)?;
                let x = t.elementwise_mul(x, b)?;
                let x = t.add_row(x, row)?;
                let x = t.layer_norm_rows(x, 1e-5);
                let x = t.dropout_with_mask(x, mask.clone())?;
                let x = t.softmax_rows(x);
                let xt = t.transpose(x);
                let g = t.matmul(x, xt)?;
                let c = t.row_mean_center(a);
                let n = t.l2_normalize_rows(c);
                let pooled = t.mean_rows(n)?;
                let gathered = t.gather_rows(n, vec![2, 0, 2])?;
                let stacked = t.concat_rows(vec![gathered, pooled])?;
                let se = t.square_error_masked(stacked, Matrix::vstack(&[&target, &Matrix::zeros(1, 5)])?, Matrix::filled(4, 5, 1.0))?;
                let nrm = t.frobenius_norm(g);
                let ip = t.frobenius_inner(g, g)?;
                let q = t.div_scalar(ip, nrm)?;
                let q = t.div_scalar(q, s)?;
                let q = t.scalar_mul(q, 0.3);
                let sum = t.add(q, se)?;
                let ce_in = t.matmul(b, xt)?;
                let ce = t.cross_entropy_rows(ce_in, vec![0, 1, 3, 2])?;
                let total = t.add(sum, ce)?;
                let r = t.relu(a);
                let mr = t.mean_all(r)?;
                t.add(total, mr)
            },
            &[("a".into(), a), ("b".into(), b), ("row".into(), row), ("s".into(), s)],
            1e-5,
            3,
            1000,
        )
        .unwrap();
        assert!(err.max_rel_error < 1e-4, "{err:?}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let w = Matrix::scalar(1.0);
        let r = grad_check(|t, v| t.mean_all(v[0]), &[("w".into(), w)], 0.0, 0, 1);
        assert!(r.is_err());
    }
}
