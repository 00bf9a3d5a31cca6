use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use auscult_core::reports::{
    export_corpus, generate_template_report, ClinicalRecord, CorpusRecord, MetadataRecord, SchemaRegistry,
};
use auscult_core::signal::{encode_wav_pcm16, parse_wav, LogMel};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{create_dir, write_json};
use crate::config::Config;
use crate::manifest::RunRecorder;
use crate::synth::{class_labels, generate_clip, subjects};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const METADATA_FILE: &str = "metadata.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenDataSummary {
    pub clips: usize,
    pub subjects: usize,
    pub labels: Vec<String>,
    /// Clips per label, in label order.
    pub class_counts: Vec<usize>,
}

#[derive(Serialize)]
struct MetadataLine<'a> {
    audio_id: &'a str,
    metadata: &'a MetadataRecord,
    record: &'a ClinicalRecord,
}

/// Report seed of one record: the corpus seed mixed with the record id.
pub fn report_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Synthesizes waveforms, spectrograms, metadata and template reports into
/// `out`, plus a manifest whose paths are relative to `out`.
pub fn cmd_gen_data(cfg: &Config, out: &Path) -> Result<GenDataSummary, CliError> {
    let data = &cfg.data;
    let registry = SchemaRegistry::default();
    let mut problems = data.problems(&registry);
    if cfg.align.train.mel.sample_rate != data.sample_rate {
        problems.push(format!(
            "mel sample rate {} differs from data sample rate {}",
            cfg.align.train.mel.sample_rate, data.sample_rate
        ));
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let mel = LogMel::new(cfg.align.train.mel.clone())?;
    let labels = class_labels(data, &registry)?;
    let people = subjects(data);
    let mut recorder = RunRecorder::start("gen-data", cfg, data.seed);
    for sub in ["wav", "spec"] {
        create_dir(&out.join(sub))?;
    }

    let generated = (0..data.clips)
        .into_par_iter()
        .map(|i| {
            let clip = generate_clip(data, &people, &labels, i);
            let wav_rel = PathBuf::from("wav").join(format!("{}.wav", clip.id));
            let spec_rel = PathBuf::from("spec").join(format!("{}.spec", clip.id));
            // The spectrogram is computed from the quantized file contents so
            // that recomputing it from the WAV gives the same values.
            let bytes = encode_wav_pcm16(&clip.waveform);
            fs::write(out.join(&wav_rel), &bytes)?;
            let spec = mel.compute(&parse_wav(&bytes)?)?;
            spec.save(out.join(&spec_rel))?;
            let record = generate_template_report(&clip.meta, &registry, report_seed(data.seed, &clip.id))?;
            let corpus = CorpusRecord {
                audio_id: clip.id.clone(),
                report: record.report.clone(),
                label: labels[clip.class].clone(),
                subject_id: Some(clip.subject.clone()),
                dataset: data.dataset.clone(),
                wav_path: Some(wav_rel),
            };
            Ok((clip, record, corpus, spec_rel))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let index: BTreeMap<String, PathBuf> = generated
        .iter()
        .map(|(clip, _, _, spec)| (clip.id.clone(), spec.clone()))
        .collect();
    let records: Vec<CorpusRecord> = generated.iter().map(|g| g.2.clone()).collect();
    export_corpus(&records, &index, &out.join(MANIFEST_FILE))?;

    let mut w = BufWriter::new(fs::File::create(out.join(METADATA_FILE))?);
    for (clip, record, _, _) in &generated {
        let line = MetadataLine {
            audio_id: &clip.id,
            metadata: &clip.meta,
            record,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let mut class_counts = vec![0; labels.len()];
    for (clip, ..) in &generated {
        class_counts[clip.class] += 1;
    }
    let summary = GenDataSummary {
        clips: generated.len(),
        subjects: people.len(),
        labels,
        class_counts,
    };
    write_json(&out.join("summary.json"), &summary)?;
    for a in [MANIFEST_FILE, METADATA_FILE, "summary.json", "wav/", "spec/"] {
        recorder.artifact(a);
    }
    recorder.finish(out)?;
    log::info!("gen-data: {} clips in {}", summary.clips, out.display());
    Ok(summary)
}
