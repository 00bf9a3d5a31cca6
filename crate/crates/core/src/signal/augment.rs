//! Waveform augmentations: one transform drawn uniformly per training sample.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentKind {
    GainPlus5dB,
    PeakNormalize,
    LowPass300Hz,
    HighPass3000Hz,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::GainPlus5dB,
        AugmentKind::PeakNormalize,
        AugmentKind::LowPass300Hz,
        AugmentKind::HighPass3000Hz,
    ];
}

/// Second-order IIR section, transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Butterworth (Q = 1/√2) low-pass.
    pub fn lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / SQRT_2;
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Butterworth (Q = 1/√2) high-pass.
    pub fn highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / SQRT_2;
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cos) / 2.0 / a0,
            b1: -(1.0 + cos) / a0,
            b2: (1.0 + cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + z1;
                z1 = self.b1 * x - self.a1 * y + z2;
                z2 = self.b2 * x - self.a2 * y;
                y
            })
            .collect()
    }
}

const GAIN_5DB: f64 = 1.778_279_410_038_922_8; // 10^(5/20)

/// Applies one augmentation. Silence is returned unchanged by peak normalization.
pub fn apply_augment(w: &Waveform, kind: AugmentKind) -> Waveform {
    let rate = w.sample_rate();
    let samples = match kind {
        AugmentKind::GainPlus5dB => w.samples().iter().map(|s| s * GAIN_5DB).collect(),
        AugmentKind::PeakNormalize => {
            let peak = w.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
            if peak == 0.0 {
                return w.clone();
            }
            w.samples().iter().map(|s| s / peak).collect()
        }
        AugmentKind::LowPass300Hz => Biquad::lowpass(300.0, rate as f64).process(w.samples()),
        AugmentKind::HighPass3000Hz => Biquad::highpass(3000.0, rate as f64).process(w.samples()),
    };
    Waveform::from_trusted(samples, rate)
}

/// Draws one augmentation uniformly and applies it.
pub fn augment<R: Rng + ?Sized>(w: &Waveform, rng: &mut R) -> (Waveform, AugmentKind) {
    let kind = AugmentKind::ALL[rng.gen_range(0..AugmentKind::ALL.len())];
    (apply_augment(w, kind), kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent bilinear-transform design of the same Butterworth sections.
    fn reference(cutoff: f64, fs: f64, high: bool) -> Biquad {
        let k = (PI * cutoff / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let (b0, b1, b2) = if high {
            (norm, -2.0 * norm, norm)
        } else {
            (k * k * norm, 2.0 * k * k * norm, k * k * norm)
        };
        Biquad {
            b0,
            b1,
            b2,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - SQRT_2 * k + k * k) * norm,
        }
    }

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / 16_000.0).sin() * 0.5).collect(),
            16_000,
        )
        .unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn gain_is_five_decibels() {
        let w = Waveform::new(vec![0.1], 16_000).unwrap();
        let out = apply_augment(&w, AugmentKind::GainPlus5dB);
        assert!((out.samples()[0] - 0.17783).abs() < 1e-5);
        assert!((GAIN_5DB - 10f64.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn peak_normalize() {
        let w = Waveform::new(vec![0.1, -0.25, 0.05], 16_000).unwrap();
        let out = apply_augment(&w, AugmentKind::PeakNormalize);
        let peak = out.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!((peak - 1.0).abs() < 1e-15);
        let silence = Waveform::new(vec![0.0; 10], 16_000).unwrap();
        assert_eq!(apply_augment(&silence, AugmentKind::PeakNormalize), silence);
    }

    #[test]
    fn coefficients_match_bilinear_reference() {
        for (got, want) in [
            (Biquad::lowpass(300.0, 16_000.0), reference(300.0, 16_000.0, false)),
            (Biquad::highpass(3000.0, 16_000.0), reference(3000.0, 16_000.0, true)),
        ] {
            for (a, b) in [
                (got.b0, want.b0),
                (got.b1, want.b1),
                (got.b2, want.b2),
                (got.a1, want.a1),
                (got.a2, want.a2),
            ] {
                assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn highpass_rejects_low_tone() {
        let w = tone(100.0, 16_000);
        let out = apply_augment(&w, AugmentKind::HighPass3000Hz);
        let reference_out = reference(3000.0, 16_000.0, true).process(w.samples());
        // Skip the start-up transient.
        let ratio = rms(&out.samples()[1600..]) / rms(&w.samples()[1600..]);
        let ref_ratio = rms(&reference_out[1600..]) / rms(&w.samples()[1600..]);
        assert!(ratio < 0.05, "{ratio}");
        assert!((ratio - ref_ratio).abs() < 1e-9);
    }

    #[test]
    fn lowpass_rejects_high_tone() {
        let w = tone(3000.0, 16_000);
        let out = apply_augment(&w, AugmentKind::LowPass300Hz);
        assert!(rms(&out.samples()[1600..]) / rms(&w.samples()[1600..]) < 0.05);
    }

    #[test]
    fn filters_are_stable() {
        let mut impulse = vec![0.0; 16_000];
        impulse[0] = 1.0;
        for f in [Biquad::lowpass(300.0, 16_000.0), Biquad::highpass(3000.0, 16_000.0)] {
            let h = f.process(&impulse);
            assert!(h[15_000..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn choice_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = Waveform::new(vec![0.1; 8], 16_000).unwrap();
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let (_, k) = augment(&w, &mut rng);
            counts[AugmentKind::ALL.iter().position(|&x| x == k).unwrap()] += 1;
        }
        let expected = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
