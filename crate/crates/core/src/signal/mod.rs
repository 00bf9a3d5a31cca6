//! Audio ingestion and the spectrogram frontend.

mod augment;
mod mel;
mod resample;
mod wav;

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use augment::{apply_augment, augment, AugmentKind, Biquad};
pub use mel::{frame_count, hz_to_mel, logmel, mel_filterbank, mel_to_hz, LogMel, LogMelConfig};
pub use resample::{resample, TAPS_PER_SIDE};
pub use wav::{encode_wav_pcm16, load_wav, parse_wav, write_wav_pcm16};

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedCodec(String),
    #[error("truncated WAV data: {0}")]
    Truncated(String),
    #[error("empty waveform")]
    Empty,
    #[error("waveform has {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad spectrogram file: {0}")]
    BadSpectrogramFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidArgument("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(SignalError::InvalidArgument("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Splits into non-overlapping windows of `seconds`, zero-padding the last one.
pub fn segment(w: &Waveform, seconds: f64) -> Result<Vec<Waveform>, SignalError> {
    if w.samples.is_empty() {
        return Err(SignalError::Empty);
    }
    let len = (seconds * w.sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(SignalError::InvalidArgument(format!("segment length {seconds} s")));
    }
    Ok(w
        .samples
        .chunks(len)
        .map(|chunk| {
            let mut s = chunk.to_vec();
            s.resize(len, 0.0);
            Waveform::from_trusted(s, w.sample_rate)
        })
        .collect())
}

/// Log-mel spectrogram: `frames × mel_bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Matrix,
}

const SPEC_MAGIC: &[u8; 8] = b"ACSPEC1\0";

impl Spectrogram {
    pub fn new(values: Matrix) -> Result<Self, SignalError> {
        if !values.is_finite() {
            return Err(SignalError::InvalidArgument("non-finite spectrogram".into()));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn mel_bins(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Flat binary layout: magic, u32 frames, u32 bins, f32 LE row-major values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        out.extend_from_slice(SPEC_MAGIC);
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.mel_bins() as u32).to_le_bytes());
        for &v in self.values.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SignalError> {
        if bytes.len() < 16 || &bytes[..8] != SPEC_MAGIC {
            return Err(SignalError::BadSpectrogramFile("bad magic".into()));
        }
        let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let f = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != t * f * 4 {
            return Err(SignalError::BadSpectrogramFile(format!(
                "{t}x{f} needs {} bytes, found {}",
                t * f * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let values = Matrix::new(t, f, data)
            .map_err(|e| SignalError::BadSpectrogramFile(e.to_string()))?;
        Ok(Self { values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SignalError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SignalError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
