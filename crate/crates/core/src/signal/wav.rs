//! RIFF/WAVE reading (PCM16 and 32-bit float) and PCM16 writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SignalError, Waveform};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a WAV file and downmixes it to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, SignalError> {
    let bytes = fs::read(path.as_ref())?;
    parse_wav(&bytes)
}

/// Parses an in-memory WAV image. Stereo channels are averaged.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, SignalError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SignalError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(SignalError::MalformedHeader("fmt chunk too short".into()));
                }
                let mut format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format == FORMAT_EXTENSIBLE && size >= 40 && body + 26 <= bytes.len() {
                    format = u16_at(bytes, body + 24);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let (format, channels, rate, bits) = fmt.ok_or_else(|| {
                    SignalError::MalformedHeader("data chunk before fmt chunk".into())
                })?;
                if rate == 0 || channels == 0 {
                    return Err(SignalError::MalformedHeader(format!(
                        "sample rate {rate}, channels {channels}"
                    )));
                }
                if channels > 2 {
                    return Err(SignalError::UnsupportedCodec(format!("{channels} channels")));
                }
                let sample_bytes = match (format, bits) {
                    (FORMAT_PCM, 16) => 2,
                    (FORMAT_FLOAT, 32) => 4,
                    _ => {
                        return Err(SignalError::UnsupportedCodec(format!(
                            "format tag {format} with {bits} bits"
                        )))
                    }
                };
                let available = bytes.len().saturating_sub(body);
                if available < size {
                    return Err(SignalError::Truncated(format!(
                        "data chunk declares {size} bytes, {available} present"
                    )));
                }
                let frame = sample_bytes * channels as usize;
                if size % frame != 0 {
                    return Err(SignalError::Truncated(format!(
                        "data size {size} is not a whole number of {frame}-byte frames"
                    )));
                }
                let data = &bytes[body..body + size];
                let mut samples = Vec::with_capacity(size / frame);
                for f in data.chunks_exact(frame) {
                    let mut acc = 0.0;
                    for c in f.chunks_exact(sample_bytes) {
                        acc += if sample_bytes == 2 {
                            i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0
                        } else {
                            f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64
                        };
                    }
                    samples.push(acc / channels as f64);
                }
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    if fmt.is_none() {
        Err(SignalError::MalformedHeader("no fmt chunk".into()))
    } else {
        Err(SignalError::Truncated("no data chunk".into()))
    }
}

/// Encodes mono PCM16 with clipping to [-1, 1].
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples().len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<(), SignalError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_wav_pcm16(w))?;
    Ok(())
}
