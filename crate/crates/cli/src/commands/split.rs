use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use auscult_core::eval::subject_split;
use auscult_core::reports::ManifestEntry;
use serde::Serialize;

use super::{create_dir, read_manifest};
use crate::manifest::RunRecorder;
use crate::CliError;

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    pub test_subjects: Vec<String>,
}

#[derive(Serialize)]
struct SplitConfig {
    test_fraction: f64,
    seed: u64,
}

/// `path` relative to `base` when it lies below it, otherwise absolute.
fn relative_to(path: &Path, base: &Path) -> Result<PathBuf, CliError> {
    let abs = fs::canonicalize(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(abs.strip_prefix(base).map(Path::to_path_buf).unwrap_or(abs))
}

fn write_entries(path: &Path, entries: &[ManifestEntry], base: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        let mut e = e.clone();
        e.spectrogram_path = relative_to(&e.spectrogram_path, base)?;
        if let Some(p) = &e.wav_path {
            e.wav_path = Some(relative_to(p, base)?);
        }
        serde_json::to_writer(&mut w, &e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Subject-disjoint train/test manifests, written next to each other in
/// `out`. Entries without a subject id count as their own subject.
pub fn cmd_split(manifest: &Path, test_fraction: f64, seed: u64, out: &Path) -> Result<SplitSummary, CliError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CliError::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let entries = read_manifest(manifest)?;
    let subjects: Vec<String> = entries
        .iter()
        .map(|e| e.subject_id.clone().unwrap_or_else(|| e.audio_id.clone()))
        .collect();
    let (train, test) = subject_split(&subjects, test_fraction, seed)?;
    let mut recorder = RunRecorder::start("split", &SplitConfig { test_fraction, seed }, seed);
    recorder.input(manifest)?;
    create_dir(out)?;
    let base = fs::canonicalize(out)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| entries[i].clone()).collect::<Vec<_>>();
    write_entries(&out.join(TRAIN_MANIFEST), &pick(&train), &base)?;
    write_entries(&out.join(TEST_MANIFEST), &pick(&test), &base)?;
    let test_subjects: BTreeSet<String> = test.iter().map(|&i| subjects[i].clone()).collect();
    recorder.artifact(TRAIN_MANIFEST);
    recorder.artifact(TEST_MANIFEST);
    recorder.finish(out)?;
    Ok(SplitSummary {
        train: train.len(),
        test: test.len(),
        test_subjects: test_subjects.into_iter().collect(),
    })
}
