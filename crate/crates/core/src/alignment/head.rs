use rand::Rng;

use super::AlignError;
use crate::numerics::{Matrix, Tape, Var};
use crate::params::ParamSet;

pub const HEAD_HIDDEN: usize = 1024;
pub const SHARED_DIM: usize = 512;

/// Two-layer MLP `in → hidden → out` with ReLU and dropout after the first layer.
///
/// Tensors are stored as `{prefix}.w1`, `{prefix}.b1`, `{prefix}.w2`, `{prefix}.b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub params: ParamSet,
}

impl ProjectionHead {
    /// Uniform ±1/√fan_in initialization.
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, AlignError> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(AlignError::Config("projection head dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(AlignError::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let b1 = 1.0 / (in_dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let mut params = ParamSet::new();
        params.insert(format!("{prefix}.w1"), Matrix::random_uniform(in_dim, hidden, b1, rng))?;
        params.insert(format!("{prefix}.b1"), Matrix::random_uniform(1, hidden, b1, rng))?;
        params.insert(format!("{prefix}.w2"), Matrix::random_uniform(hidden, out_dim, b2, rng))?;
        params.insert(format!("{prefix}.b2"), Matrix::random_uniform(1, out_dim, b2, rng))?;
        Ok(Self {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
            out_dim,
            dropout,
            params,
        })
    }

    /// Rebuilds a head from tensors stored under `prefix`.
    pub fn from_tensors(prefix: &str, tensors: &ParamSet, dropout: f64) -> Result<Self, AlignError> {
        let get = |s: &str| {
            tensors
                .get(&format!("{prefix}.{s}"))
                .cloned()
                .ok_or_else(|| AlignError::Config(format!("missing tensor {prefix}.{s}")))
        };
        let (w1, b1, w2, b2) = (get("w1")?, get("b1")?, get("w2")?, get("b2")?);
        if b1.shape() != (1, w1.cols()) || w2.rows() != w1.cols() || b2.shape() != (1, w2.cols()) {
            return Err(AlignError::Config(format!("inconsistent shapes for head {prefix}")));
        }
        let (in_dim, hidden, out_dim) = (w1.rows(), w1.cols(), w2.cols());
        let mut params = ParamSet::new();
        params.insert(format!("{prefix}.w1"), w1)?;
        params.insert(format!("{prefix}.b1"), b1)?;
        params.insert(format!("{prefix}.w2"), w2)?;
        params.insert(format!("{prefix}.b2"), b2)?;
        Ok(Self {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
            out_dim,
            dropout,
            params,
        })
    }

    pub fn names(&self) -> [String; 4] {
        let p = &self.prefix;
        [format!("{p}.w1"), format!("{p}.b1"), format!("{p}.w2"), format!("{p}.b2")]
    }

    /// Applies the head on a tape. `lookup` maps tensor names to registered vars;
    /// `mask` is an explicit `B × hidden` dropout mask, or `None` for eval.
    pub fn apply_on_tape(
        &self,
        tape: &mut Tape<'_>,
        lookup: &dyn Fn(&str) -> Var,
        x: Var,
        mask: Option<Matrix>,
    ) -> Result<Var, AlignError> {
        let [w1, b1, w2, b2] = self.names().map(|n| lookup(&n));
        let (rows, cols) = tape.value(x).shape();
        if cols != self.in_dim {
            return Err(AlignError::Config(format!(
                "head {} expects width {}, got {rows}x{cols}",
                self.prefix, self.in_dim
            )));
        }
        let h = tape.matmul(x, w1)?;
        let mut h = tape.add_row(h, b1)?;
        if let Some(m) = mask {
            h = tape.dropout_with_mask(h, m)?;
        }
        let h = tape.relu(h);
        let out = tape.matmul(h, w2)?;
        Ok(tape.add_row(out, b2)?)
    }

    /// `layer2(relu(dropout(layer1(x))))`. The mask is used only when `train`.
    pub fn project(&self, inputs: &Matrix, dropout_mask: Option<&Matrix>, train: bool) -> Result<Matrix, AlignError> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let lookup = |n: &str| vars[self.params.position(n).expect("head tensor")];
        let x = tape.constant(inputs.clone());
        let mask = if train { dropout_mask.cloned() } else { None };
        let out = self.apply_on_tape(&mut tape, &lookup, x, mask)?;
        Ok(tape.value(out).clone())
    }
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("mask shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = ProjectionHead::new("h", 384, HEAD_HIDDEN, SHARED_DIM, 0.2, &mut rng).unwrap();
        for name in ["h.b1", "h.b2"] {
            let b = head.params.get_mut(name).unwrap();
            *b = Matrix::zeros(b.rows(), b.cols());
        }
        let out = head.project(&Matrix::zeros(3, 384), None, false).unwrap();
        assert_eq!(out.shape(), (3, SHARED_DIM));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic_and_ignores_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ProjectionHead::new("h", 2048, HEAD_HIDDEN, SHARED_DIM, 0.2, &mut rng).unwrap();
        let x = Matrix::random_normal(4, 2048, &mut rng);
        let mask = dropout_mask(4, HEAD_HIDDEN, 0.2, &mut rng);
        let a = head.project(&x, Some(&mask), false).unwrap();
        let b = head.project(&x, None, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cols(), 512);
        let c = head.project(&x, Some(&mask), true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ProjectionHead::new("h", 8, 4, 2, 0.0, &mut rng).unwrap();
        assert!(head.project(&Matrix::zeros(2, 7), None, false).is_err());
    }

    #[test]
    fn mask_rate_is_close_to_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = dropout_mask(100, 1000, 0.2, &mut rng);
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.2).abs() < 0.01);
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    }
}
