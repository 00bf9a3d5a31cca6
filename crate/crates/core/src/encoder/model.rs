use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_checkpoint, EncoderConfig, EncoderError, PatchMask};
use crate::numerics::{Matrix, Tape, Var};
use crate::params::ParamSet;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    Random,
    FromCheckpoint(PathBuf),
}

/// Encoder weights (θ) together with the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

/// `(name, rows, cols, fan_in)` for every encoder tensor, in storage order.
pub(crate) fn param_layout(cfg: &EncoderConfig) -> Vec<(String, usize, usize, usize)> {
    let (d, p, dh) = (cfg.embed_dim, cfg.patch_len(), cfg.head_dim());
    let mut out = vec![
        ("enc.patch_w".to_string(), p, d, p),
        ("enc.patch_b".to_string(), 1, d, p),
        ("enc.pos".to_string(), cfg.max_patches, d, d),
    ];
    for b in 0..cfg.blocks {
        for h in 0..cfg.heads {
            for w in ["wq", "wk", "wv"] {
                out.push((format!("enc.b{b}.h{h}.{w}"), d, dh, d));
            }
            out.push((format!("enc.b{b}.h{h}.wo"), dh, d, d));
        }
        out.push((format!("enc.b{b}.attn_b"), 1, d, d));
        out.push((format!("enc.b{b}.ff1_w"), d, cfg.ffn_dim, d));
        out.push((format!("enc.b{b}.ff1_b"), 1, cfg.ffn_dim, d));
        out.push((format!("enc.b{b}.ff2_w"), cfg.ffn_dim, d, cfg.ffn_dim));
        out.push((format!("enc.b{b}.ff2_b"), 1, d, cfg.ffn_dim));
    }
    let dd = cfg.decoder_dim;
    out.extend([
        ("dec.ctx_w".to_string(), d, dd, d),
        ("dec.ctx_b".to_string(), 1, dd, d),
        ("dec.pos".to_string(), cfg.max_patches, dd, dd),
        ("dec.h_w".to_string(), dd, dd, dd),
        ("dec.h_b".to_string(), 1, dd, dd),
        ("dec.out_w".to_string(), dd, p, dd),
        ("dec.out_b".to_string(), 1, p, dd),
    ]);
    out
}

/// Random mode draws every tensor uniformly from ±1/√fan_in, deterministically per seed.
pub fn init_params(cfg: &EncoderConfig, seed: u64, mode: InitMode) -> Result<EncoderParams, EncoderError> {
    cfg.validate()?;
    match mode {
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParamSet::new();
            for (name, rows, cols, fan_in) in param_layout(cfg) {
                let bound = 1.0 / (fan_in as f64).sqrt();
                params.insert(name, Matrix::random_uniform(rows, cols, bound, &mut rng))?;
            }
            Ok(EncoderParams {
                config: cfg.clone(),
                params,
            })
        }
        InitMode::FromCheckpoint(path) => {
            let ckpt = read_checkpoint(&path)?;
            if &ckpt.config != cfg {
                return Err(EncoderError::Checkpoint(format!(
                    "config in {} differs from the requested config",
                    path.display()
                )));
            }
            EncoderParams::from_tensors(ckpt.config, &ckpt.tensors)
        }
    }
}

impl EncoderParams {
    /// Picks the encoder tensors out of a larger set, checking every shape.
    pub fn from_tensors(config: EncoderConfig, tensors: &ParamSet) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, rows, cols, _) in param_layout(&config) {
            let m = tensors
                .get(&name)
                .ok_or_else(|| EncoderError::Checkpoint(format!("missing tensor {name}")))?;
            if m.shape() != (rows, cols) {
                return Err(EncoderError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            params.insert(name, m.clone())?;
        }
        Ok(Self { config, params })
    }

    /// Registers θ on a tape, trainable or frozen.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Result<BoundEncoder, EncoderError> {
        let vars = if trainable {
            self.params.bind(tape)?
        } else {
            self.params.bind_frozen(tape)
        };
        Ok(BoundEncoder::from_vars(&self.config, &self.params, &vars))
    }
}

impl BoundEncoder {
    /// Wraps vars registered in the same order as `params`.
    pub fn from_vars(cfg: &EncoderConfig, params: &ParamSet, vars: &[Var]) -> BoundEncoder {
        let v = |name: &str| vars[params.position(name).expect("layout name")];
        let blocks = (0..cfg.blocks)
            .map(|b| BlockVars {
                wq: (0..cfg.heads).map(|h| v(&format!("enc.b{b}.h{h}.wq"))).collect(),
                wk: (0..cfg.heads).map(|h| v(&format!("enc.b{b}.h{h}.wk"))).collect(),
                wv: (0..cfg.heads).map(|h| v(&format!("enc.b{b}.h{h}.wv"))).collect(),
                wo: (0..cfg.heads).map(|h| v(&format!("enc.b{b}.h{h}.wo"))).collect(),
                attn_b: v(&format!("enc.b{b}.attn_b")),
                ff1_w: v(&format!("enc.b{b}.ff1_w")),
                ff1_b: v(&format!("enc.b{b}.ff1_b")),
                ff2_w: v(&format!("enc.b{b}.ff2_w")),
                ff2_b: v(&format!("enc.b{b}.ff2_b")),
            })
            .collect();
        BoundEncoder {
            config: cfg.clone(),
            vars: EncoderVars {
                patch_w: v("enc.patch_w"),
                patch_b: v("enc.patch_b"),
                pos: v("enc.pos"),
                blocks,
                dec_ctx_w: v("dec.ctx_w"),
                dec_ctx_b: v("dec.ctx_b"),
                dec_pos: v("dec.pos"),
                dec_h_w: v("dec.h_w"),
                dec_h_b: v("dec.h_b"),
                dec_out_w: v("dec.out_w"),
                dec_out_b: v("dec.out_b"),
            },
        }
    }
}

#[derive(Clone, Debug)]
struct BlockVars {
    wq: Vec<Var>,
    wk: Vec<Var>,
    wv: Vec<Var>,
    wo: Vec<Var>,
    attn_b: Var,
    ff1_w: Var,
    ff1_b: Var,
    ff2_w: Var,
    ff2_b: Var,
}

/// Tape handles for every encoder tensor.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    patch_w: Var,
    patch_b: Var,
    pos: Var,
    blocks: Vec<BlockVars>,
    dec_ctx_w: Var,
    dec_ctx_b: Var,
    dec_pos: Var,
    dec_h_w: Var,
    dec_h_b: Var,
    dec_out_w: Var,
    dec_out_b: Var,
}

/// Tape nodes produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct TapeOutput {
    /// `1 × embed_dim` mean of the final (layer-normed) visible-token states.
    pub pooled: Var,
    /// Mean-pooled states after each block; the last entry is `pooled`.
    pub block_hiddens: Vec<Var>,
    /// `masked × patch_len` predictions, present for masked passes with the decoder.
    pub recon: Option<Var>,
}

/// An encoder whose parameters are registered on a tape.
pub struct BoundEncoder {
    config: EncoderConfig,
    vars: EncoderVars,
}

impl BoundEncoder {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, tape: &mut Tape<'_>, patches: &Matrix, visible: &[usize]) -> Result<(Var, Vec<Var>), EncoderError> {
        let cfg = &self.config;
        if patches.cols() != cfg.patch_len() {
            return Err(EncoderError::Config(format!(
                "patch width {} != {}",
                patches.cols(),
                cfg.patch_len()
            )));
        }
        if patches.rows() > cfg.max_patches {
            return Err(EncoderError::Config(format!(
                "{} patches exceed max_patches {}",
                patches.rows(),
                cfg.max_patches
            )));
        }
        let v = &self.vars;
        let x = tape.constant(patches.select_rows(visible));
        let h = tape.matmul(x, v.patch_w)?;
        let h = tape.add_row(h, v.patch_b)?;
        let pos = tape.gather_rows(v.pos, visible.to_vec())?;
        let mut h = tape.add(h, pos)?;
        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        let mut hiddens = Vec::with_capacity(cfg.blocks);
        for block in &v.blocks {
            let a = tape.layer_norm_rows(h, LN_EPS);
            let mut attn: Option<Var> = None;
            for head in 0..cfg.heads {
                let q = tape.matmul(a, block.wq[head])?;
                let k = tape.matmul(a, block.wk[head])?;
                let val = tape.matmul(a, block.wv[head])?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scalar_mul(scores, scale);
                let weights = tape.softmax_rows(scores);
                let ctx = tape.matmul(weights, val)?;
                let out = tape.matmul(ctx, block.wo[head])?;
                attn = Some(match attn {
                    Some(acc) => tape.add(acc, out)?,
                    None => out,
                });
            }
            let attn = tape.add_row(attn.expect("heads > 0"), block.attn_b)?;
            h = tape.add(h, attn)?;
            let f = tape.layer_norm_rows(h, LN_EPS);
            let f = tape.matmul(f, block.ff1_w)?;
            let f = tape.add_row(f, block.ff1_b)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, block.ff2_w)?;
            let f = tape.add_row(f, block.ff2_b)?;
            h = tape.add(h, f)?;
            hiddens.push(tape.mean_rows(h)?);
        }
        let fin = tape.layer_norm_rows(h, LN_EPS);
        let pooled = tape.mean_rows(fin)?;
        *hiddens.last_mut().expect("blocks > 0") = pooled;
        Ok((pooled, hiddens))
    }

    /// Encodes the visible patches; with `decode`, also predicts the masked ones.
    pub fn forward_masked(
        &self,
        tape: &mut Tape<'_>,
        patches: &Matrix,
        mask: &PatchMask,
        decode: bool,
    ) -> Result<TapeOutput, EncoderError> {
        if mask.len() != patches.rows() {
            return Err(EncoderError::Mask(format!(
                "mask covers {} patches, input has {}",
                mask.len(),
                patches.rows()
            )));
        }
        let (pooled, block_hiddens) = self.encode(tape, patches, &mask.visible_indices())?;
        let recon = if decode {
            let v = &self.vars;
            let ctx = tape.matmul(pooled, v.dec_ctx_w)?;
            let ctx = tape.add_row(ctx, v.dec_ctx_b)?;
            let queries = tape.gather_rows(v.dec_pos, mask.masked_indices())?;
            let z = tape.add_row(queries, ctx)?;
            let z = tape.relu(z);
            let z = tape.matmul(z, v.dec_h_w)?;
            let z = tape.add_row(z, v.dec_h_b)?;
            let z = tape.relu(z);
            let out = tape.matmul(z, v.dec_out_w)?;
            Some(tape.add_row(out, v.dec_out_b)?)
        } else {
            None
        };
        Ok(TapeOutput {
            pooled,
            block_hiddens,
            recon,
        })
    }

    /// Full-visible pass without the decoder.
    pub fn forward_full(&self, tape: &mut Tape<'_>, patches: &Matrix) -> Result<TapeOutput, EncoderError> {
        if patches.rows() == 0 {
            return Err(EncoderError::EmptySpectrogram);
        }
        let all: Vec<usize> = (0..patches.rows()).collect();
        let (pooled, block_hiddens) = self.encode(tape, patches, &all)?;
        Ok(TapeOutput {
            pooled,
            block_hiddens,
            recon: None,
        })
    }
}

/// Concrete values of one encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub pooled: Matrix,
    pub block_hiddens: Vec<Matrix>,
    pub recon: Option<Matrix>,
}

fn collect(tape: &Tape<'_>, out: &TapeOutput) -> EncoderOutput {
    EncoderOutput {
        pooled: tape.value(out.pooled).clone(),
        block_hiddens: out.block_hiddens.iter().map(|&v| tape.value(v).clone()).collect(),
        recon: out.recon.map(|v| tape.value(v).clone()),
    }
}

/// Masked forward pass; `train` also runs the reconstruction decoder.
pub fn forward(
    params: &EncoderParams,
    patches: &Matrix,
    mask: &PatchMask,
    train: bool,
) -> Result<EncoderOutput, EncoderError> {
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false)?;
    let out = enc.forward_masked(&mut tape, patches, mask, train)?;
    Ok(collect(&tape, &out))
}

/// Evaluation embedding: every patch visible, no decoder.
pub fn embed(params: &EncoderParams, patches: &Matrix) -> Result<EncoderOutput, EncoderError> {
    let mut tape = Tape::new();
    let enc = params.bind(&mut tape, false)?;
    let out = enc.forward_full(&mut tape, patches)?;
    Ok(collect(&tape, &out))
}

fn masked_targets(recon_rows: usize, target_patches: &Matrix, mask: &PatchMask) -> Result<Matrix, EncoderError> {
    if mask.count_masked() == 0 {
        return Err(EncoderError::Mask("no masked patches".into()));
    }
    if target_patches.rows() != mask.len() || recon_rows != mask.count_masked() {
        return Err(EncoderError::Mask(format!(
            "recon has {recon_rows} rows, mask selects {} of {} target patches ({} given)",
            mask.count_masked(),
            mask.len(),
            target_patches.rows()
        )));
    }
    Ok(target_patches.select_rows(&mask.masked_indices()))
}

/// Mean squared error over the cells of masked patches only.
pub fn ssm_loss(recon: &Matrix, target_patches: &Matrix, mask: &PatchMask) -> Result<f64, EncoderError> {
    let target = masked_targets(recon.rows(), target_patches, mask)?;
    if target.shape() != recon.shape() {
        return Err(EncoderError::Mask(format!(
            "recon {:?} vs target {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let sum: f64 = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / recon.len() as f64)
}

pub fn ssm_loss_on_tape(
    tape: &mut Tape<'_>,
    recon: Var,
    target_patches: &Matrix,
    mask: &PatchMask,
) -> Result<Var, EncoderError> {
    let (rows, cols) = tape.value(recon).shape();
    let target = masked_targets(rows, target_patches, mask)?;
    Ok(tape.square_error_masked(recon, target, Matrix::filled(rows, cols, 1.0))?)
}
