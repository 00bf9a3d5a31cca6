//! Masked-autoencoder audio student over spectrogram patches.
//!
//! The encoder sees only the visible patches of a [`PatchMask`], mean-pools its
//! final states into one embedding, and a light decoder predicts the raw values
//! of the masked patches from that embedding plus positional queries.

mod checkpoint;
mod model;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use model::{
    embed, forward, init_params, ssm_loss, ssm_loss_on_tape, BoundEncoder, EncoderOutput,
    EncoderParams, EncoderVars, InitMode, TapeOutput,
};

use crate::numerics::{Matrix, NumericsError};
use crate::signal::Spectrogram;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("empty spectrogram")]
    EmptySpectrogram,
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Patch height in time frames.
    pub patch_h: usize,
    /// Patch width in mel bins.
    pub patch_w: usize,
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mask_ratio: f64,
    pub decoder_dim: usize,
    pub ffn_dim: usize,
    /// Size of the positional tables; 200 covers an 8 s, 64-bin spectrogram.
    pub max_patches: usize,
    /// Spectrograms are standardized as `(x - input_mean) / input_std` before patching.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_h: 16,
            patch_w: 16,
            embed_dim: 384,
            blocks: 4,
            heads: 4,
            mask_ratio: 0.7,
            decoder_dim: 128,
            ffn_dim: 768,
            max_patches: 200,
            input_mean: -6.0,
            input_std: 4.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.patch_h == 0 || self.patch_w == 0 {
            return bad("patch dims must be positive".into());
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.blocks == 0 || self.decoder_dim == 0 || self.ffn_dim == 0 || self.max_patches < 2 {
            return bad("blocks, decoder_dim, ffn_dim must be positive and max_patches >= 2".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        if !(self.input_std > 0.0) || !self.input_mean.is_finite() {
            return bad("input_std must be > 0".into());
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Patch grid dimensions: `(time patches, mel patches)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub time: usize,
    pub mel: usize,
}

impl PatchGrid {
    pub fn count(&self) -> usize {
        self.time * self.mel
    }
}

/// Splits a `T × F` matrix into patches in raster order, zero-padding both axes.
///
/// Row `i` of the result is the row-major flattening of patch `i`.
pub fn patchify_matrix(values: &Matrix, cfg: &EncoderConfig) -> Result<(Matrix, PatchGrid), EncoderError> {
    if values.rows() == 0 || values.cols() == 0 {
        return Err(EncoderError::EmptySpectrogram);
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let grid = PatchGrid {
        time: values.rows().div_ceil(ph),
        mel: values.cols().div_ceil(pw),
    };
    let mut out = Matrix::zeros(grid.count(), ph * pw);
    for gt in 0..grid.time {
        for gm in 0..grid.mel {
            let row = out.row_mut(gt * grid.mel + gm);
            for dt in 0..ph {
                let t = gt * ph + dt;
                if t >= values.rows() {
                    break;
                }
                for dm in 0..pw {
                    let m = gm * pw + dm;
                    if m < values.cols() {
                        row[dt * pw + dm] = values.get(t, m);
                    }
                }
            }
        }
    }
    Ok((out, grid))
}

pub fn patchify(spec: &Spectrogram, cfg: &EncoderConfig) -> Result<(Matrix, PatchGrid), EncoderError> {
    patchify_matrix(spec.values(), cfg)
}

/// Inverse of [`patchify_matrix`] on the padded region.
pub fn unpatchify(patches: &Matrix, grid: PatchGrid, cfg: &EncoderConfig) -> Matrix {
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let mut out = Matrix::zeros(grid.time * ph, grid.mel * pw);
    for gt in 0..grid.time {
        for gm in 0..grid.mel {
            let row = patches.row(gt * grid.mel + gm);
            for dt in 0..ph {
                for dm in 0..pw {
                    out.set(gt * ph + dt, gm * pw + dm, row[dt * pw + dm]);
                }
            }
        }
    }
    out
}

/// Standardizes with the config's input statistics, then patchifies.
pub fn prepare_patches(spec: &Spectrogram, cfg: &EncoderConfig) -> Result<(Matrix, PatchGrid), EncoderError> {
    let (mean, std) = (cfg.input_mean, cfg.input_std);
    let normalized = spec.values().map(|v| (v - mean) / std);
    let (patches, grid) = patchify_matrix(&normalized, cfg)?;
    if grid.count() > cfg.max_patches {
        return Err(EncoderError::Config(format!(
            "{} patches exceed max_patches {}",
            grid.count(),
            cfg.max_patches
        )));
    }
    Ok((patches, grid))
}

/// Which patches are hidden from the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchMask {
    masked: Vec<bool>,
    count_masked: usize,
}

impl PatchMask {
    /// Validates that at least one patch is masked and one is visible.
    pub fn from_flags(masked: Vec<bool>) -> Result<Self, EncoderError> {
        let count_masked = masked.iter().filter(|&&m| m).count();
        if count_masked == 0 {
            return Err(EncoderError::Mask("no masked patches".into()));
        }
        if count_masked == masked.len() {
            return Err(EncoderError::Mask("no visible patches".into()));
        }
        Ok(Self {
            masked,
            count_masked,
        })
    }

    /// Masks `round(ratio × patches)` patches (clamped to leave one of each kind).
    pub fn random<R: Rng + ?Sized>(patches: usize, ratio: f64, rng: &mut R) -> Result<Self, EncoderError> {
        if patches < 2 {
            return Err(EncoderError::Mask(format!("{patches} patches cannot be split")));
        }
        let count = ((ratio * patches as f64).round() as usize).clamp(1, patches - 1);
        let mut masked = vec![false; patches];
        for i in sample(rng, patches, count) {
            masked[i] = true;
        }
        Self::from_flags(masked)
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn count_masked(&self) -> usize {
        self.count_masked
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| !self.masked[i]).collect()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_arithmetic() {
        let cfg = EncoderConfig::default();
        let m = Matrix::filled(32, 64, 1.5);
        let (p, grid) = patchify_matrix(&m, &cfg).unwrap();
        assert_eq!(grid, PatchGrid { time: 2, mel: 4 });
        assert_eq!(p.rows(), 8);
        assert_eq!(p.cols(), 256);
        for r in 1..8 {
            assert_eq!(p.row(r), p.row(0));
        }
    }

    #[test]
    fn unpatchify_inverts_on_padded_region() {
        let cfg = EncoderConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Matrix::random_normal(37, 64, &mut rng);
        let (p, grid) = patchify_matrix(&m, &cfg).unwrap();
        let back = unpatchify(&p, grid, &cfg);
        assert_eq!(back.shape(), (48, 64));
        for t in 0..48 {
            for f in 0..64 {
                let want = if t < 37 { m.get(t, f) } else { 0.0 };
                assert_eq!(back.get(t, f), want);
            }
        }
    }

    #[test]
    fn empty_spectrogram_rejected() {
        assert!(matches!(
            patchify_matrix(&Matrix::zeros(0, 64), &EncoderConfig::default()),
            Err(EncoderError::EmptySpectrogram)
        ));
    }

    #[test]
    fn eight_second_clip_fits_default_tables() {
        let cfg = EncoderConfig::default();
        let spec = Spectrogram::new(Matrix::zeros(798, 64)).unwrap();
        let (p, grid) = prepare_patches(&spec, &cfg).unwrap();
        assert_eq!(grid.count(), 200);
        assert_eq!(p.rows(), cfg.max_patches);
    }

    #[test]
    fn random_mask_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PatchMask::random(200, 0.7, &mut rng).unwrap();
        assert_eq!(m.count_masked(), 140);
        assert_eq!(m.visible_indices().len(), 60);
        let tiny = PatchMask::random(2, 0.99, &mut rng).unwrap();
        assert_eq!(tiny.count_masked(), 1);
        assert!(PatchMask::from_flags(vec![true, true]).is_err());
        assert!(PatchMask::from_flags(vec![false, false]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::default();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::default();
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());
        assert!(EncoderConfig::default().validate().is_ok());
    }
}
