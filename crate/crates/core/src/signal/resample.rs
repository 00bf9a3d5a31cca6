//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use super::{SignalError, Waveform};

/// Input taps on each side of the interpolation point.
pub const TAPS_PER_SIDE: usize = 16;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(t: f64) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resamples to `target_hz`. When downsampling, the kernel cutoff drops to the
/// new Nyquist rate. Kernel weights are renormalized per output sample, so
/// constant signals pass through exactly, including near the edges.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform, SignalError> {
    if target_hz == 0 {
        return Err(SignalError::InvalidArgument("target rate must be > 0".into()));
    }
    let src = w.sample_rate();
    if src == target_hz {
        return Ok(w.clone());
    }
    let ratio = src as f64 / target_hz as f64;
    let cutoff = (target_hz as f64 / src as f64).min(1.0);
    let input = w.samples();
    let out_len = ((input.len() as f64) / ratio).round() as usize;
    let half = TAPS_PER_SIDE as f64;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let x = n as f64 * ratio;
        let base = x.floor() as isize;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in (base - TAPS_PER_SIDE as isize + 1)..=(base + TAPS_PER_SIDE as isize) {
            if k < 0 || k as usize >= input.len() {
                continue;
            }
            let tau = x - k as f64;
            let weight = cutoff * sinc(cutoff * tau) * kaiser(tau / half);
            acc += weight * input[k as usize];
            norm += weight;
        }
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }
    Waveform::new(out, target_hz)
}
