//! Short-time Fourier transform and HTK-scale log-mel features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{SignalError, Spectrogram, Waveform};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            n_mels: 64,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-6,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of STFT frames for `n` samples (no centering).
pub fn frame_count(n: usize, win: usize, hop: usize) -> usize {
    if n < win {
        0
    } else {
        (n - win) / hop + 1
    }
}

/// Triangular mel filters: `n_mels × (n_fft/2 + 1)` weights on the FFT bin grid.
pub fn mel_filterbank(cfg: &LogMelConfig) -> Matrix {
    let bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.f_min);
    let mel_hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb.set(m, k, w.max(0.0));
        }
    }
    fb
}

/// Reusable log-mel extractor (FFT plan, window and filterbank built once).
pub struct LogMel {
    cfg: LogMelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Matrix,
}

impl LogMel {
    pub fn new(cfg: LogMelConfig) -> Result<Self, SignalError> {
        if cfg.win_length == 0 || cfg.hop_length == 0 || cfg.win_length > cfg.n_fft || cfg.n_mels == 0 {
            return Err(SignalError::InvalidArgument(format!("bad log-mel config {cfg:?}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        // Periodic Hann window.
        let window = (0..cfg.win_length)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.win_length as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg);
        Ok(Self {
            cfg,
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &LogMelConfig {
        &self.cfg
    }

    /// Power spectrogram, `frames × (n_fft/2 + 1)`.
    pub fn power_spectrogram(&self, w: &Waveform) -> Result<Matrix, SignalError> {
        let cfg = &self.cfg;
        if w.sample_rate() != cfg.sample_rate {
            return Err(SignalError::InvalidArgument(format!(
                "log-mel expects {} Hz input, got {}",
                cfg.sample_rate,
                w.sample_rate()
            )));
        }
        let frames = frame_count(w.samples().len(), cfg.win_length, cfg.hop_length);
        if frames == 0 {
            return Err(SignalError::TooShort {
                samples: w.samples().len(),
                needed: cfg.win_length,
            });
        }
        let bins = cfg.n_fft / 2 + 1;
        let mut power = Matrix::zeros(frames, bins);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < cfg.win_length {
                    Complex::new(w.samples()[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.row_mut(t).iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
        }
        Ok(power)
    }

    pub fn compute(&self, w: &Waveform) -> Result<Spectrogram, SignalError> {
        let power = self.power_spectrogram(w)?;
        let frames = power.rows();
        let n_mels = self.cfg.n_mels;
        let mut out = Matrix::zeros(frames, n_mels);
        for t in 0..frames {
            let p = power.row(t);
            for m in 0..n_mels {
                let e: f64 = self.filters.row(m).iter().zip(p).map(|(w, v)| w * v).sum();
                out.set(t, m, e.max(self.cfg.log_floor).ln());
            }
        }
        Spectrogram::new(out)
    }
}

/// One-shot log-mel extraction.
pub fn logmel(w: &Waveform, cfg: &LogMelConfig) -> Result<Spectrogram, SignalError> {
    LogMel::new(cfg.clone())?.compute(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 128_000], 16_000).unwrap();
        let s = logmel(&w, &LogMelConfig::default()).unwrap();
        assert_eq!(s.frames(), 798);
        assert_eq!(s.mel_bins(), 64);
        let floor = 1e-6f64.ln();
        assert!(s.values().data().iter().all(|&v| v == floor));
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(128_000, 400, 160), 798);
        assert_eq!(frame_count(400, 400, 160), 1);
        assert_eq!(frame_count(399, 400, 160), 0);
    }

    #[test]
    fn too_short_is_an_error() {
        let w = Waveform::new(vec![0.1; 300], 16_000).unwrap();
        assert!(matches!(
            logmel(&w, &LogMelConfig::default()),
            Err(SignalError::TooShort { .. })
        ));
    }

    #[test]
    fn wrong_rate_rejected() {
        let w = Waveform::new(vec![0.1; 3000], 8_000).unwrap();
        assert!(logmel(&w, &LogMelConfig::default()).is_err());
    }

    #[test]
    fn tone_lands_in_the_filter_covering_its_frequency() {
        let cfg = LogMelConfig::default();
        // Oracle: the filter whose triangle gives the largest weight at 1 kHz,
        // evaluated directly from the mel-scale edges.
        let mel_hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_hi * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let expected = (0..cfg.n_mels)
            .max_by(|&a, &b| {
                let tri = |m: usize| {
                    let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                    if 1000.0 <= c {
                        ((1000.0 - lo) / (c - lo)).max(0.0)
                    } else {
                        ((hi - 1000.0) / (hi - c)).max(0.0)
                    }
                };
                tri(a).partial_cmp(&tri(b)).unwrap()
            })
            .unwrap();
        let w = Waveform::new(
            (0..32_000)
                .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin() * 0.5)
                .collect(),
            16_000,
        )
        .unwrap();
        let s = logmel(&w, &cfg).unwrap();
        for t in 0..s.frames() {
            let row = s.values().row(t);
            let arg = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }
}
