use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::numerics::Matrix;
use crate::params::ParamSet;

/// Linear warmup from 0 to `base_lr`, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, base_lr: f64, warmup_steps: usize, total_steps: usize) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let left = total_steps.saturating_sub(step) as f64;
    base_lr * left / (total_steps - warmup_steps) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
    t: u64,
}

/// First/second moments per parameter name. A parameter's step count only
/// advances when it receives a gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.t)
    }
}

/// Decoupled weight decay followed by the bias-corrected Adam update, for
/// every `(name, gradient)` pair. Parameters without a gradient are untouched.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[(String, Matrix)],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), AlignError> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| AlignError::Config(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(AlignError::Config(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite(format!(
                "gradient of {name} at flat index {i} is {}",
                g.data()[i]
            )));
        }
    }
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let st = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Matrix::zeros(g.rows(), g.cols()),
            v: Matrix::zeros(g.rows(), g.cols()),
            t: 0,
        });
        st.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(st.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(st.t as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        let (m, v) = (st.m.data_mut(), st.v.data_mut());
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_points() {
        let total = 5000;
        assert_eq!(lr_at(0, 1e-5, 400, total), 0.0);
        assert!((lr_at(400, 1e-5, 400, total) - 1e-5).abs() < 1e-20);
        assert!((lr_at(200, 1e-5, 400, total) - 5e-6).abs() < 1e-20);
        assert_eq!(lr_at(total, 1e-5, 400, total), 0.0);
        assert!((lr_at(2700, 1e-5, 400, total) - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        p.insert("w", Matrix::random_normal(3, 3, &mut rng)).unwrap();
        let before = p.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = AdamState::new();
        for _ in 0..5 {
            adamw_step(&mut p, &[("w".into(), Matrix::zeros(3, 3))], &mut st, 1e-2, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_descends() {
        let mut p = ParamSet::new();
        p.insert("x", Matrix::scalar(1.0)).unwrap();
        let mut st = AdamState::new();
        let cfg = AdamWConfig::default();
        let mut last = 1.0f64;
        for _ in 0..100 {
            let x = p.get("x").unwrap().item();
            adamw_step(&mut p, &[("x".into(), Matrix::scalar(2.0 * x))], &mut st, 1e-3, &cfg).unwrap();
            let now = p.get("x").unwrap().item().abs();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = ParamSet::new();
        p.insert("a", Matrix::scalar(1.0)).unwrap();
        p.insert("b", Matrix::scalar(1.0)).unwrap();
        let before = p.clone();
        let err = adamw_step(
            &mut p,
            &[("a".into(), Matrix::scalar(1.0)), ("b".into(), Matrix::from_vec_unchecked(1, 1, vec![f64::NAN]))],
            &mut AdamState::new(),
            1e-3,
            &AdamWConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains('b'));
        assert_eq!(p, before);
    }
}
