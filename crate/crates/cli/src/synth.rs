//! Synthetic auscultation corpus.
//!
//! Each subject has a fixed diagnosis and a personal acoustic profile (breath
//! band, pitch factor, loudness, body hum). Each clip mixes breath noise with
//! the subject's hum and, depending on sampled findings, a wheeze tone and
//! crackle transients, plus a faint diagnosis-specific noise band. Findings and
//! diagnosis also drive the template report, so class information is present
//! in both the audio and the text.

use std::f64::consts::PI;

use auscult_core::reports::{MetaValue, MetadataRecord, Modality, SchemaRegistry};
use auscult_core::signal::{Biquad, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub subjects: usize,
    pub clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Scales every class-dependent component of the audio.
    pub class_strength: f64,
    /// Report schema; only respiratory (`icbhi`) corpora are synthesized.
    pub dataset: String,
    /// Prefix of clip and subject ids, so independent corpora stay disjoint.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            subjects: 40,
            clips: 2000,
            clip_seconds: 8.0,
            sample_rate: 16_000,
            seed: 0,
            class_strength: 1.0,
            dataset: "icbhi".into(),
            id_prefix: "clip".into(),
        }
    }
}

/// Per-diagnosis probability of wheezes and crackles in a clip.
const FINDING_RATES: [(f64, f64); 6] = [
    (0.05, 0.05), // Healthy
    (0.15, 0.85), // Pneumonia
    (0.85, 0.10), // Asthma
    (0.60, 0.60), // COPD
    (0.25, 0.25), // URTI
    (0.10, 0.70), // Bronchiectasis
];

const LOCATIONS: [&str; 5] = ["trachea", "left anterior chest", "right anterior chest", "left posterior chest", "right posterior chest"];
const DEVICES: [&str; 3] = ["Littmann 3200", "Meditron", "AKG C417L"];

impl SynthConfig {
    pub fn problems(&self, registry: &SchemaRegistry) -> Vec<String> {
        let mut p = Vec::new();
        match registry.get(&self.dataset) {
            Err(e) => p.push(e.to_string()),
            Ok(s) if s.modality != Modality::Respiratory => {
                p.push(format!("dataset {:?} is not respiratory; the generator only synthesizes lung sounds", self.dataset))
            }
            Ok(s) if self.classes > s.label.values.len() => {
                p.push(format!("{} classes requested, schema has {}", self.classes, s.label.values.len()))
            }
            Ok(_) => {}
        }
        if self.classes < 2 {
            p.push("need at least two classes".into());
        }
        if self.subjects < self.classes {
            p.push(format!("{} subjects cannot cover {} classes", self.subjects, self.classes));
        }
        if self.clips < self.subjects {
            p.push(format!("{} clips leave some of {} subjects empty", self.clips, self.subjects));
        }
        if !(self.clip_seconds >= 0.1) {
            p.push(format!("clip_seconds {} too short", self.clip_seconds));
        }
        if self.id_prefix.is_empty() || !self.id_prefix.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            p.push(format!("id_prefix {:?} must be non-empty ASCII alphanumerics", self.id_prefix));
        }
        if self.sample_rate != 16_000 {
            p.push("sample_rate must be 16000".into());
        }
        if !(self.class_strength >= 0.0) {
            p.push("class_strength must be non-negative".into());
        }
        p
    }
}

#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub class: usize,
    pitch: f64,
    band_hz: f64,
    gain: f64,
    hum_hz: f64,
    breath_hz: f64,
    age: f64,
    sex: &'static str,
    device: &'static str,
}

fn subject_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (0x5u64 << 56) ^ k as u64)
}

fn clip_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ (0xcu64 << 56) ^ i as u64)
}

pub fn subjects(cfg: &SynthConfig) -> Vec<Subject> {
    (0..cfg.subjects)
        .map(|k| {
            let mut rng = subject_rng(cfg.seed, k);
            Subject {
                id: format!("{}-S{k:03}", cfg.id_prefix),
                class: k % cfg.classes,
                pitch: rng.gen_range(0.9..1.1),
                band_hz: rng.gen_range(150.0..700.0),
                gain: 10f64.powf(rng.gen_range(-12.0..0.0) / 20.0),
                hum_hz: rng.gen_range(45.0..140.0),
                breath_hz: rng.gen_range(0.25..0.6),
                age: rng.gen_range(2..85) as f64,
                sex: if rng.gen_bool(0.5) { "M" } else { "F" },
                device: DEVICES[rng.gen_range(0..DEVICES.len())],
            }
        })
        .collect()
}

/// One generated recording and its metadata.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub id: String,
    pub subject: String,
    pub class: usize,
    pub waveform: Waveform,
    pub meta: MetadataRecord,
}

/// Unit-RMS white noise through `sections` cascaded low- and high-pass biquads.
fn band_noise(n: usize, lo: f64, hi: f64, sr: f64, sections: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..sections {
        out = Biquad::lowpass(hi.min(sr * 0.45), sr).process(&out);
        out = Biquad::highpass(lo.max(20.0), sr).process(&out);
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt().max(1e-12);
    out.iter_mut().for_each(|x| *x /= rms);
    out
}

pub fn generate_clip(cfg: &SynthConfig, subjects: &[Subject], labels: &[String], i: usize) -> SynthClip {
    let s = &subjects[i % subjects.len()];
    let mut rng = clip_rng(cfg.seed, i);
    let sr = cfg.sample_rate as f64;
    let n = (cfg.clip_seconds * sr).round() as usize;
    let k = cfg.class_strength;
    let (p_wheeze, p_crackle) = FINDING_RATES[s.class];
    let wheeze = rng.gen_bool(p_wheeze);
    let crackle = rng.gen_bool(p_crackle);

    let phase = rng.gen_range(0.0..1.0);
    let envelope: Vec<f64> = (0..n)
        .map(|t| 0.25 + 0.75 * (0.5 - 0.5 * (2.0 * PI * (s.breath_hz * t as f64 / sr + phase)).cos()))
        .collect();
    let breath = band_noise(n, s.band_hz * 0.5, s.band_hz * 2.5, sr, 1, &mut rng);
    let mut x: Vec<f64> = breath.iter().zip(&envelope).map(|(b, e)| 0.1 * b * e).collect();

    let hum_amp = 0.06 * rng.gen_range(0.5..1.5);
    for (t, v) in x.iter_mut().enumerate() {
        *v += hum_amp * (2.0 * PI * s.hum_hz * t as f64 / sr).sin();
    }

    let center = (300.0 + 220.0 * s.class as f64) * s.pitch;
    let class_band = band_noise(n, center * 0.85, center * 1.15, sr, 3, &mut rng);
    for ((v, c), e) in x.iter_mut().zip(&class_band).zip(&envelope) {
        *v += 0.08 * k * c * e;
    }

    if wheeze {
        let f0 = rng.gen_range(350.0..900.0) * s.pitch;
        let vib = rng.gen_range(3.0..7.0);
        let amp = 0.06 * k * rng.gen_range(0.6..1.4);
        let mut ph = 0.0;
        for (t, v) in x.iter_mut().enumerate() {
            let f = f0 * (1.0 + 0.02 * (2.0 * PI * vib * t as f64 / sr).sin());
            ph += 2.0 * PI * f / sr;
            *v += amp * envelope[t].powi(2) * ph.sin();
        }
    }

    if crackle {
        let count = Poisson::new(8.0 * cfg.clip_seconds).expect("positive rate").sample(&mut rng) as usize;
        let jitter: Normal<f64> = Normal::new(0.0, 0.15).expect("valid sigma");
        for _ in 0..count {
            let start = rng.gen_range(0..n);
            let f = rng.gen_range(700.0..1600.0);
            let amp = 0.24 * k * (1.0 + jitter.sample(&mut rng)).max(0.2);
            let decay = rng.gen_range(1.5e-3..5e-3);
            let len = ((decay * 5.0) * sr) as usize;
            for j in 0..len.min(n - start) {
                let t = j as f64 / sr;
                x[start + j] += amp * (-t / decay).exp() * (2.0 * PI * f * t).sin();
            }
        }
    }

    let gain = s.gain * 10f64.powf(rng.gen_range(-3.0..3.0) / 20.0);
    let samples: Vec<f64> = x.iter().map(|v| (v * gain * 3.0).clamp(-1.0, 1.0)).collect();
    let waveform = Waveform::new(samples, cfg.sample_rate).expect("finite samples");

    let yes_no = |b: bool| MetaValue::Text(if b { "Yes" } else { "No" }.into());
    let label = labels[s.class].clone();
    let meta = MetadataRecord {
        dataset: cfg.dataset.clone(),
        fields: vec![
            ("Wheezes".into(), yes_no(wheeze)),
            ("Crackles".into(), yes_no(crackle)),
            ("Age".into(), MetaValue::Number(s.age)),
            ("Sex".into(), MetaValue::Text(s.sex.into())),
            ("Chest_Location".into(), MetaValue::Text(LOCATIONS[rng.gen_range(0..LOCATIONS.len())].into())),
            ("Device".into(), MetaValue::Text(s.device.into())),
            ("Diagnosis".into(), MetaValue::Text(label.clone())),
        ],
        subject_id: Some(s.id.clone()),
        labels: vec![label],
        modality: Modality::Respiratory,
    };
    SynthClip {
        id: format!("{}{i:05}", cfg.id_prefix),
        subject: s.id.clone(),
        class: s.class,
        waveform,
        meta,
    }
}

/// Label names for `cfg.classes` classes, from the schema's label set.
pub fn class_labels(cfg: &SynthConfig, registry: &SchemaRegistry) -> Result<Vec<String>, CliError> {
    let schema = registry.get(&cfg.dataset)?;
    Ok(schema.label.values.iter().take(cfg.classes).cloned().collect())
}
