use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adamw_step, align_loss_on_tape, cka, dropout_mask, lr_at, AdamState, AdamWConfig, AlignError, CkaMode, LossKind,
    ProjectionHead, HEAD_HIDDEN, SHARED_DIM,
};
use crate::encoder::{
    embed, prepare_patches, ssm_loss_on_tape, write_checkpoint, BoundEncoder, Checkpoint, EncoderOutput,
    EncoderParams, PatchMask,
};
use crate::numerics::{GradientReport, Matrix, Tape, Var};
use crate::params::ParamSet;
use crate::signal::{augment, LogMel, LogMelConfig, Spectrogram, Waveform};
use crate::teacher::TextEmbedder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_align: f64,
    pub lambda_ssm: f64,
    pub lr: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub batch: usize,
    pub grad_accum: usize,
    pub optimizer: AdamWConfig,
    /// 1-based encoder blocks whose pooled states are aligned; empty means the last block.
    pub align_layers: Vec<usize>,
    pub augment: bool,
    pub seed: u64,
    pub cka_mode: CkaMode,
    pub loss_kind: LossKind,
    pub head_dropout: f64,
    /// Dropout in both heads while the alignment loss is computed.
    pub head_dropout_in_training: bool,
    /// Take the aligned embedding from a separate full-visible pass instead of
    /// the masked pass used for reconstruction.
    pub pooled_from_full_pass: bool,
    pub mel: LogMelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_align: 1.0,
            lambda_ssm: 1.0,
            lr: 1e-5,
            epochs: 50,
            warmup_steps: 400,
            batch: 24,
            grad_accum: 2,
            optimizer: AdamWConfig::default(),
            align_layers: Vec::new(),
            augment: true,
            seed: 0,
            cka_mode: CkaMode::Sample,
            loss_kind: LossKind::Cka,
            head_dropout: 0.2,
            head_dropout_in_training: true,
            pooled_from_full_pass: false,
            mel: LogMelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, corpus_len: usize) -> usize {
        corpus_len / (self.batch * self.grad_accum).max(1)
    }

    pub fn total_steps(&self, corpus_len: usize) -> usize {
        self.epochs * self.steps_per_epoch(corpus_len)
    }

    /// Sorted, deduplicated 1-based layers, defaulting to the last block.
    pub fn resolved_layers(&self, blocks: usize) -> Vec<usize> {
        let mut l = if self.align_layers.is_empty() {
            vec![blocks]
        } else {
            self.align_layers.clone()
        };
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Every problem with the config for a corpus of `corpus_len` items.
    pub fn problems(&self, corpus_len: usize, blocks: usize) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lambda_align >= 0.0) || !(self.lambda_ssm >= 0.0) {
            p.push("loss weights must be non-negative".to_string());
        }
        if self.lambda_align == 0.0 && self.lambda_ssm == 0.0 {
            p.push("both loss weights are zero: empty objective".to_string());
        }
        if !(self.lr > 0.0) {
            p.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            p.push("epochs must be at least 1".to_string());
        }
        if self.batch < 2 {
            p.push(format!("batch must be at least 2 for CKA, got {}", self.batch));
        }
        if self.grad_accum == 0 {
            p.push("grad_accum must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            p.push(format!("head_dropout {} outside [0, 1)", self.head_dropout));
        }
        for &l in &self.align_layers {
            if l == 0 || l > blocks {
                p.push(format!("align layer {l} outside 1..={blocks}"));
            }
        }
        if corpus_len == 0 {
            p.push("corpus is empty".to_string());
        } else if self.steps_per_epoch(corpus_len) == 0 {
            p.push(format!(
                "corpus of {corpus_len} items is smaller than one step of {} samples",
                self.batch * self.grad_accum
            ));
        } else if self.warmup_steps >= self.total_steps(corpus_len) {
            p.push(format!(
                "warmup_steps {} must be below total steps {}",
                self.warmup_steps,
                self.total_steps(corpus_len)
            ));
        }
        p
    }
}

/// One paired training example.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub id: String,
    pub spectrogram: Spectrogram,
    /// Source audio; needed only when augmentation is on.
    pub waveform: Option<Waveform>,
    pub report: String,
}

/// One JSON-lines record per optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub align_loss: Option<f64>,
    pub ssm_loss: Option<f64>,
    pub total_loss: f64,
    pub cka: Option<f64>,
}

/// Encoder plus projection heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub encoder: EncoderParams,
    /// Audio heads keyed by their 1-based encoder block.
    pub audio_heads: Vec<(usize, ProjectionHead)>,
    pub language_head: ProjectionHead,
}

const AUDIO_PREFIX: &str = "head.audio.b";
const LANGUAGE_PREFIX: &str = "head.lang";

impl TrainedModel {
    /// Fresh heads for the given layers, seeded deterministically.
    pub fn with_new_heads(
        encoder: EncoderParams,
        layers: &[usize],
        teacher_dim: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self, AlignError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865_6164);
        let d = encoder.config.embed_dim;
        let audio_heads = layers
            .iter()
            .map(|&l| {
                ProjectionHead::new(&format!("{AUDIO_PREFIX}{l}"), d, HEAD_HIDDEN, SHARED_DIM, dropout, &mut rng)
                    .map(|h| (l, h))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let language_head = ProjectionHead::new(LANGUAGE_PREFIX, teacher_dim, HEAD_HIDDEN, SHARED_DIM, dropout, &mut rng)?;
        Ok(Self {
            encoder,
            audio_heads,
            language_head,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.encoder.params.clone();
        for (_, h) in &self.audio_heads {
            tensors.extend(h.params.clone()).expect("distinct prefixes");
        }
        tensors.extend(self.language_head.params.clone()).expect("distinct prefixes");
        Checkpoint {
            config: self.encoder.config.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dropout: f64) -> Result<Self, AlignError> {
        let encoder = ckpt.encoder()?;
        let mut layers: Vec<usize> = ckpt
            .tensors
            .iter()
            .filter_map(|(n, _)| n.strip_prefix(AUDIO_PREFIX)?.strip_suffix(".w1")?.parse().ok())
            .collect();
        layers.sort_unstable();
        if layers.is_empty() {
            return Err(AlignError::Config("checkpoint holds no audio projection head".into()));
        }
        let audio_heads = layers
            .iter()
            .map(|&l| ProjectionHead::from_tensors(&format!("{AUDIO_PREFIX}{l}"), &ckpt.tensors, dropout).map(|h| (l, h)))
            .collect::<Result<Vec<_>, _>>()?;
        let language_head = ProjectionHead::from_tensors(LANGUAGE_PREFIX, &ckpt.tensors, dropout)?;
        Ok(Self {
            encoder,
            audio_heads,
            language_head,
        })
    }

    /// The head of the deepest aligned block; defines the shared space.
    pub fn shared_head(&self) -> (usize, &ProjectionHead) {
        let (l, h) = self.audio_heads.last().expect("at least one head");
        (*l, h)
    }

    /// Full-visible eval pass.
    pub fn encode(&self, spec: &Spectrogram) -> Result<EncoderOutput, AlignError> {
        let (patches, _) = prepare_patches(spec, &self.encoder.config)?;
        Ok(embed(&self.encoder, &patches)?)
    }

    /// Pooled encoder embedding (`embed_dim` wide).
    pub fn embed_encoder(&self, spec: &Spectrogram) -> Result<Vec<f64>, AlignError> {
        Ok(self.encode(spec)?.pooled.into_data())
    }

    /// Shared-space embedding: the deepest aligned block through its head, eval mode.
    pub fn embed_shared(&self, spec: &Spectrogram) -> Result<Vec<f64>, AlignError> {
        let out = self.encode(spec)?;
        let (layer, head) = self.shared_head();
        Ok(head.project(&out.block_hiddens[layer - 1], None, false)?.into_data())
    }

    /// Language-head projection of teacher vectors (eval mode), one row each.
    pub fn project_text(&self, teacher_vectors: &Matrix) -> Result<Matrix, AlignError> {
        self.language_head.project(teacher_vectors, None, false)
    }

    /// Encoder and head tensors in tape registration order.
    pub fn param_set(&self) -> ParamSet {
        self.to_checkpoint().tensors
    }

    fn replace_params(&mut self, all: &ParamSet) {
        let refresh = |set: &mut ParamSet| {
            let names: Vec<String> = set.iter().map(|(n, _)| n.to_string()).collect();
            for n in names {
                *set.get_mut(&n).expect("own name") = all.get(&n).expect("combined set").clone();
            }
        };
        refresh(&mut self.encoder.params);
        for (_, h) in &mut self.audio_heads {
            refresh(&mut h.params);
        }
        refresh(&mut self.language_head.params);
    }
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub metrics: Vec<StepMetrics>,
    /// Mean alignment loss per epoch (empty entries when not computed).
    pub epoch_align_means: Vec<Option<f64>>,
    pub epoch_ssm_means: Vec<Option<f64>>,
}

struct Streams {
    shuffle: ChaCha8Rng,
    mask: ChaCha8Rng,
    augment: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let s = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k);
        Self {
            shuffle: s(1),
            mask: s(2),
            augment: s(3),
            dropout: s(4),
        }
    }
}

struct MicroOutcome {
    report: GradientReport,
    align: Option<f64>,
    ssm: Option<f64>,
    total: f64,
    cka: Option<f64>,
}

/// One sample of a micro-batch: its patches and reconstruction mask.
pub struct BatchSample {
    pub patches: Matrix,
    pub mask: PatchMask,
}

/// Explicit head dropout masks: one for the language head, one per audio head.
pub struct HeadMasks {
    pub language: Matrix,
    pub audio: Vec<Matrix>,
}

/// Tape handles for the weighted objective and its parts.
pub struct Objective {
    pub total: Var,
    pub align: Option<Var>,
    pub ssm: Option<Var>,
    /// Mean CKA between each audio head's output and the language head's output.
    pub cka: Option<f64>,
}

/// Builds `lambda_align * align + lambda_ssm * ssm` on `tape` for one micro-batch.
///
/// `vars` must be registered in the order of `all`, which holds the encoder and
/// head tensors of `model`. `teacher_rows` enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn objective_on_tape(
    tape: &mut Tape<'_>,
    cfg: &TrainConfig,
    model: &TrainedModel,
    all: &ParamSet,
    vars: &[Var],
    batch: &[BatchSample],
    teacher_rows: &Matrix,
    masks: Option<HeadMasks>,
) -> Result<Objective, AlignError> {
    let lookup = |n: &str| vars[all.position(n).expect("registered name")];
    let enc = BoundEncoder::from_vars(&model.encoder.config, all, vars);
    let want_ssm = cfg.lambda_ssm > 0.0;
    let want_align = cfg.lambda_align > 0.0;
    let b = batch.len();
    if b == 0 || teacher_rows.rows() != b {
        return Err(AlignError::Config(format!(
            "micro-batch has {b} samples and {} teacher rows",
            teacher_rows.rows()
        )));
    }
    let layers: Vec<usize> = model.audio_heads.iter().map(|(l, _)| *l).collect();

    let mut hidden: Vec<Vec<Var>> = vec![Vec::with_capacity(b); layers.len()];
    let mut ssm_terms = Vec::with_capacity(b);
    for sample in batch {
        let out = enc.forward_masked(tape, &sample.patches, &sample.mask, want_ssm)?;
        if let Some(recon) = out.recon {
            ssm_terms.push(ssm_loss_on_tape(tape, recon, &sample.patches, &sample.mask)?);
        }
        let source = if want_align && cfg.pooled_from_full_pass {
            enc.forward_full(tape, &sample.patches)?.block_hiddens
        } else {
            out.block_hiddens
        };
        for (slot, &l) in hidden.iter_mut().zip(&layers) {
            slot.push(source[l - 1]);
        }
    }

    let ssm = if ssm_terms.is_empty() {
        None
    } else {
        let mut acc = ssm_terms[0];
        for &t in &ssm_terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Some(tape.scalar_mul(acc, 1.0 / b as f64))
    };

    let mut cka_value = None;
    let mut align = None;
    if want_align {
        let (lang_mask, mut head_masks) = match masks {
            Some(m) => (Some(m.language), m.audio.into_iter().map(Some).collect()),
            None => (None, vec![None; layers.len()]),
        };
        if head_masks.len() != layers.len() {
            return Err(AlignError::Config(format!(
                "{} audio dropout masks for {} heads",
                head_masks.len(),
                layers.len()
            )));
        }
        let lang_in = tape.constant(teacher_rows.clone());
        let lang = model.language_head.apply_on_tape(tape, &lookup, lang_in, lang_mask)?;
        let mut terms = Vec::with_capacity(layers.len());
        let mut ckas = 0.0;
        for (((_, head), rows), mask) in model.audio_heads.iter().zip(&hidden).zip(head_masks.iter_mut()) {
            let a_in = tape.concat_rows(rows.clone())?;
            let a = head.apply_on_tape(tape, &lookup, a_in, mask.take())?;
            terms.push(align_loss_on_tape(tape, a, lang, cfg.cka_mode, cfg.loss_kind)?);
            ckas += cka(tape.value(a), tape.value(lang), cfg.cka_mode)?;
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        cka_value = Some(ckas / terms.len() as f64);
        align = Some(tape.scalar_mul(acc, 1.0 / terms.len() as f64));
    }

    let total = match (align, ssm) {
        (Some(a), Some(s)) => {
            let a = tape.scalar_mul(a, cfg.lambda_align);
            let s = tape.scalar_mul(s, cfg.lambda_ssm);
            tape.add(a, s)?
        }
        (Some(a), None) => tape.scalar_mul(a, cfg.lambda_align),
        (None, Some(s)) => tape.scalar_mul(s, cfg.lambda_ssm),
        (None, None) => return Err(AlignError::Config("both loss weights are zero".into())),
    };
    Ok(Objective {
        total,
        align,
        ssm,
        cka: cka_value,
    })
}

#[allow(clippy::too_many_arguments)]
fn micro_batch(
    cfg: &TrainConfig,
    model: &TrainedModel,
    all: &ParamSet,
    items: &[&TrainItem],
    teacher_rows: &Matrix,
    mel: &LogMel,
    streams: &mut Streams,
) -> Result<MicroOutcome, AlignError> {
    let enc_cfg = &model.encoder.config;
    let mut batch = Vec::with_capacity(items.len());
    for item in items {
        let spec = match (&item.waveform, cfg.augment) {
            (Some(w), true) => mel.compute(&augment(w, &mut streams.augment).0)?,
            _ => item.spectrogram.clone(),
        };
        let (patches, _) = prepare_patches(&spec, enc_cfg)?;
        let mask = PatchMask::random(patches.rows(), enc_cfg.mask_ratio, &mut streams.mask)?;
        batch.push(BatchSample { patches, mask });
    }
    let b = items.len();
    let masks = (cfg.lambda_align > 0.0 && cfg.head_dropout_in_training && cfg.head_dropout > 0.0).then(|| {
        let language = dropout_mask(b, HEAD_HIDDEN, cfg.head_dropout, &mut streams.dropout);
        let audio = (0..model.audio_heads.len())
            .map(|_| dropout_mask(b, HEAD_HIDDEN, cfg.head_dropout, &mut streams.dropout))
            .collect();
        HeadMasks { language, audio }
    });

    let mut tape = Tape::new();
    let vars = all.bind(&mut tape)?;
    let obj = objective_on_tape(&mut tape, cfg, model, all, &vars, &batch, teacher_rows, masks)?;
    let total_value = tape.value(obj.total).item();
    if !total_value.is_finite() {
        return Err(AlignError::NonFinite(format!("total loss {total_value}")));
    }
    let align = obj.align.map(|a| tape.value(a).item());
    let ssm = obj.ssm.map(|s| tape.value(s).item());
    let scaled = tape.scalar_mul(obj.total, 1.0 / cfg.grad_accum as f64);
    let report = tape.backward(scaled)?;
    Ok(MicroOutcome {
        report,
        align,
        ssm,
        total: total_value,
        cka: obj.cka,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs the joint alignment/reconstruction loop.
///
/// Teacher vectors are computed once per distinct report and enter the tape as
/// constants. Each optimizer step consumes `batch × grad_accum` samples in a
/// seeded order (drop-last). When `out_dir` is given, `metrics.jsonl` and one
/// `epoch_NNN.ckpt` per epoch are written there.
pub fn train(
    cfg: &TrainConfig,
    corpus: &[TrainItem],
    encoder: EncoderParams,
    teacher: &dyn TextEmbedder,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, AlignError> {
    let blocks = encoder.config.blocks;
    let problems = cfg.problems(corpus.len(), blocks);
    if !problems.is_empty() {
        return Err(AlignError::Config(problems.join("; ")));
    }
    let layers = cfg.resolved_layers(blocks);

    let mut vectors: HashMap<&str, Vec<f64>> = HashMap::new();
    for item in corpus {
        if !vectors.contains_key(item.report.as_str()) {
            vectors.insert(&item.report, teacher.embed(&item.report)?.vector);
        }
    }
    let teacher_dim = teacher.dim();

    let mut model = TrainedModel::with_new_heads(encoder, &layers, teacher_dim, cfg.head_dropout, cfg.seed)?;
    let mut all = model.param_set();
    let mut state = AdamState::new();
    let mut streams = Streams::new(cfg.seed);
    let mel = LogMel::new(cfg.mel.clone())?;

    let mut sink = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };

    let steps_per_epoch = cfg.steps_per_epoch(corpus.len());
    let total_steps = cfg.total_steps(corpus.len());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut metrics = Vec::with_capacity(total_steps);
    let mut epoch_align_means = Vec::with_capacity(cfg.epochs);
    let mut epoch_ssm_means = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut streams.shuffle);
        let first = metrics.len();
        for s in 0..steps_per_epoch {
            let lr = lr_at(step, cfg.lr, cfg.warmup_steps, total_steps);
            let mut acc: Option<GradientReport> = None;
            let mut parts = Vec::with_capacity(cfg.grad_accum);
            for m in 0..cfg.grad_accum {
                let start = (s * cfg.grad_accum + m) * cfg.batch;
                let items: Vec<&TrainItem> = order[start..start + cfg.batch].iter().map(|&i| &corpus[i]).collect();
                let rows: Vec<Vec<f64>> = items.iter().map(|it| vectors[it.report.as_str()].clone()).collect();
                let teacher_rows = Matrix::from_rows(&rows)?;
                let out = micro_batch(cfg, &model, &all, &items, &teacher_rows, &mel, &mut streams)?;
                match &mut acc {
                    Some(r) => r.accumulate(&out.report)?,
                    None => acc = Some(out.report.clone()),
                }
                parts.push((out.align, out.ssm, out.total, out.cka));
            }
            let report = acc.expect("grad_accum >= 1");
            let grads: Vec<(String, Matrix)> = report
                .grads
                .into_iter()
                .filter(|(n, _)| !report.disconnected.contains(n))
                .collect();
            adamw_step(&mut all, &grads, &mut state, lr, &cfg.optimizer)?;
            let k = parts.len() as f64;
            let record = StepMetrics {
                step,
                epoch,
                lr,
                align_loss: mean_of(parts.iter().map(|p| p.0)),
                ssm_loss: mean_of(parts.iter().map(|p| p.1)),
                total_loss: parts.iter().map(|p| p.2).sum::<f64>() / k,
                cka: mean_of(parts.iter().map(|p| p.3)),
            };
            if let Some(w) = sink.as_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(|e| AlignError::Io(e.into()))?;
                w.write_all(b"\n")?;
            }
            metrics.push(record);
            step += 1;
        }
        let epoch_metrics = &metrics[first..];
        epoch_align_means.push(mean_of(epoch_metrics.iter().map(|m| m.align_loss)));
        epoch_ssm_means.push(mean_of(epoch_metrics.iter().map(|m| m.ssm_loss)));
        log::info!(
            "epoch {} align {:?} ssm {:?}",
            epoch + 1,
            epoch_align_means.last().unwrap(),
            epoch_ssm_means.last().unwrap()
        );
        if let Some(dir) = out_dir {
            model.replace_params(&all);
            write_checkpoint(dir.join(format!("epoch_{:03}.ckpt", epoch + 1)), &model.to_checkpoint())?;
        }
    }
    if let Some(w) = sink.as_mut() {
        w.flush()?;
    }
    model.replace_params(&all);
    Ok(TrainOutcome {
        model,
        metrics,
        epoch_align_means,
        epoch_ssm_means,
    })
}
