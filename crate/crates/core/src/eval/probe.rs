use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auroc_macro, stratified_split, EvalError};
use crate::alignment::{adamw_step, AdamState, AdamWConfig};
use crate::numerics::{Matrix, Tape, Var};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub head: HeadKind,
    /// Hidden width of the MLP head.
    pub hidden: usize,
    pub lr: f64,
    /// Squared-norm penalty on weight matrices.
    pub l2: f64,
    /// Per-epoch learning-rate factor.
    pub lr_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// Z-score features with training-split statistics.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Linear,
            hidden: 128,
            lr: 1e-4,
            l2: 1e-4,
            lr_decay: 0.97,
            patience: 5,
            max_epochs: 300,
            batch_size: 32,
            val_fraction: 0.2,
            standardize: true,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn check(&self) -> Result<(), EvalError> {
        if self.patience == 0 || !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(EvalError::InvalidInput(
                "probe needs patience >= 1, lr > 0, batch size >= 1 and max epochs >= 1".into(),
            ));
        }
        if self.head == HeadKind::Mlp && self.hidden == 0 {
            return Err(EvalError::InvalidInput("MLP head needs a hidden width".into()));
        }
        Ok(())
    }
}

/// Learning rate used during epoch `epoch` (0-based).
pub fn probe_lr(cfg: &ProbeConfig, epoch: usize) -> f64 {
    cfg.lr * cfg.lr_decay.powi(epoch as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class index per sample and the number of classes.
    Classes { labels: Vec<usize>, n_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn out_dim(&self) -> usize {
        match self {
            Targets::Classes { n_classes, .. } => *n_classes,
            Targets::Values(_) => 1,
        }
    }
}

/// A trained probe with its input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub head: HeadKind,
    pub params: ParamSet,
    mean: Vec<f64>,
    scale: Vec<f64>,
    classification: bool,
}

impl Probe {
    fn prepare(&self, features: &Matrix) -> Matrix {
        let mut x = features.clone();
        for r in 0..x.rows() {
            for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) * self.scale[c];
            }
        }
        x
    }

    fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var) -> Result<Var, EvalError> {
        let h = tape.matmul(x, vars[0])?;
        let h = tape.add_row(h, vars[1])?;
        if self.head == HeadKind::Linear {
            return Ok(h);
        }
        let h = tape.relu(h);
        let h = tape.matmul(h, vars[2])?;
        Ok(tape.add_row(h, vars[3])?)
    }

    /// Class probabilities (N x C) or predicted values (N x 1).
    pub fn predict(&self, features: &Matrix) -> Result<Matrix, EvalError> {
        if features.cols() != self.mean.len() {
            return Err(EvalError::InvalidInput(format!(
                "probe expects {} features, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(self.prepare(features));
        let out = self.forward(&mut tape, &vars, x)?;
        let out = if self.classification { tape.softmax_rows(out) } else { out };
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct ProbeFit {
    /// Parameters from the epoch with the best validation loss.
    pub probe: Probe,
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn init_params(head: HeadKind, d: usize, hidden: usize, out: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut layer = |p: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        p.insert(format!("{name}.w"), Matrix::random_uniform(fan_in, fan_out, bound, &mut rng))
            .expect("fresh names");
        p.insert(format!("{name}.b"), Matrix::random_uniform(1, fan_out, bound, &mut rng))
            .expect("fresh names");
    };
    match head {
        HeadKind::Linear => layer(&mut p, "l1", d, out),
        HeadKind::Mlp => {
            layer(&mut p, "l1", d, hidden);
            layer(&mut p, "l2", hidden, out);
        }
    }
    p
}

fn loss_on(
    probe: &Probe,
    params: &ParamSet,
    x: &Matrix,
    targets: &Targets,
    rows: &[usize],
    l2: f64,
    train: bool,
) -> Result<(f64, Option<Vec<(String, Matrix)>>), EvalError> {
    let mut tape = Tape::new();
    let vars = if train {
        params.bind(&mut tape)?
    } else {
        params.bind_frozen(&mut tape)
    };
    let xb = tape.constant(x.select_rows(rows));
    let out = probe.forward(&mut tape, &vars, xb)?;
    let mut loss = match targets {
        Targets::Classes { labels, .. } => tape.cross_entropy_rows(out, rows.iter().map(|&r| labels[r]).collect())?,
        Targets::Values(v) => tape.mean_abs_error(out, Matrix::new(rows.len(), 1, rows.iter().map(|&r| v[r]).collect())?)?,
    };
    if !train {
        return Ok((tape.value(loss).item(), None));
    }
    if l2 > 0.0 {
        for (i, (name, _)) in params.iter().enumerate() {
            if name.ends_with(".w") {
                let sq = tape.frobenius_inner(vars[i], vars[i])?;
                let sq = tape.scalar_mul(sq, l2);
                loss = tape.add(loss, sq)?;
            }
        }
    }
    let report = tape.backward(loss)?;
    Ok((tape.value(loss).item(), Some(report.grads)))
}

/// Trains a probe on `train` rows of frozen `features`, early-stopping on the
/// loss over `val` rows, and returns the best-validation parameters.
pub fn train_probe(
    features: &Matrix,
    targets: &Targets,
    train: &[usize],
    val: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeFit, EvalError> {
    cfg.check()?;
    if targets.len() != features.rows() {
        return Err(EvalError::InvalidInput(format!(
            "{} targets for {} feature rows",
            targets.len(),
            features.rows()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(EvalError::InvalidInput("train and validation splits must be non-empty".into()));
    }
    if let Some(&i) = train.iter().chain(val).find(|&&i| i >= features.rows()) {
        return Err(EvalError::InvalidInput(format!("row index {i} out of range")));
    }
    let train_set: std::collections::HashSet<usize> = train.iter().copied().collect();
    if val.iter().any(|i| train_set.contains(i)) {
        return Err(EvalError::InvalidInput("train and validation splits overlap".into()));
    }
    if let Targets::Classes { labels, n_classes } = targets {
        if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
            return Err(EvalError::InvalidInput(format!("label {bad} out of range")));
        }
        let first = labels[train[0]];
        if train.iter().all(|&i| labels[i] == first) {
            return Err(EvalError::SingleClass("training split has a single class".into()));
        }
    }

    let d = features.cols();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    if cfg.standardize {
        for &i in train {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        let mut var = vec![0.0; d];
        for &i in train {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        for (s, v) in scale.iter_mut().zip(var) {
            let sd = (v / train.len() as f64).sqrt();
            *s = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        }
    }
    let mut probe = Probe {
        head: cfg.head,
        params: init_params(cfg.head, d, cfg.hidden, targets.out_dim(), cfg.seed),
        mean,
        scale,
        classification: matches!(targets, Targets::Classes { .. }),
    };
    let x = probe.prepare(features);
    let adam = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut state = AdamState::new();
    let mut params = probe.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_9e0b);
    let mut order = train.to_vec();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut val_curve = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = probe_lr(cfg, epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = loss_on(&probe, &params, &x, targets, batch, cfg.l2, true)?;
            adamw_step(&mut params, &grads.expect("training pass"), &mut state, lr, &adam)?;
        }
        let (v, _) = loss_on(&probe, &params, &x, targets, val, 0.0, false)?;
        val_curve.push(v);
        if v < best.0 {
            best = (v, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    probe.params = best.2;
    Ok(ProbeFit {
        probe,
        epochs_run: val_curve.len(),
        val_curve,
        best_epoch: best.1,
    })
}

/// Splits `train` into fit/validation parts (stratified for classes) and trains.
pub fn fit_probe(features: &Matrix, targets: &Targets, train: &[usize], cfg: &ProbeConfig) -> Result<ProbeFit, EvalError> {
    let (fit, val) = match targets {
        Targets::Classes { labels, .. } => stratified_split(train, labels, cfg.val_fraction, cfg.seed)?,
        Targets::Values(_) => {
            let zeros = vec![0; targets.len()];
            stratified_split(train, &zeros, cfg.val_fraction, cfg.seed)?
        }
    };
    train_probe(features, targets, &fit, &val, cfg)
}

/// Trains on `train`, returns macro AUROC on `test`.
pub fn probe_auroc(
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64, EvalError> {
    let targets = Targets::Classes {
        labels: labels.to_vec(),
        n_classes,
    };
    let fit = fit_probe(features, &targets, train, cfg)?;
    let scores = fit.probe.predict(&features.select_rows(test))?;
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    auroc_macro(&scores, &test_labels)
}
