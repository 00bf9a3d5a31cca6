use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;

/// One line of the paired-corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_id: String,
    pub spectrogram_path: PathBuf,
    pub report: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub dataset: String,
    /// Source waveform, needed only for waveform augmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<PathBuf>,
}

/// A report awaiting a spectrogram path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub audio_id: String,
    pub report: String,
    pub label: String,
    pub subject_id: Option<String>,
    pub dataset: String,
    pub wav_path: Option<PathBuf>,
}

/// Links each record to its spectrogram file via `audio_index` and writes
/// a JSON-lines manifest to `out`. Relative index paths are kept as written
/// and resolved against the manifest's directory, as [`import_corpus`] does.
pub fn export_corpus(
    records: &[CorpusRecord],
    audio_index: &BTreeMap<String, PathBuf>,
    out: &Path,
) -> Result<Vec<ManifestEntry>, ReportError> {
    let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let entries = records
        .iter()
        .map(|r| {
            let path = audio_index
                .get(&r.audio_id)
                .filter(|p| base.join(p).is_file())
                .ok_or_else(|| ReportError::Dangling(r.audio_id.clone()))?;
            Ok(ManifestEntry {
                audio_id: r.audio_id.clone(),
                spectrogram_path: path.clone(),
                report: r.report.clone(),
                label: r.label.clone(),
                subject_id: r.subject_id.clone(),
                dataset: r.dataset.clone(),
                wav_path: r.wav_path.clone(),
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    for e in &entries {
        serde_json::to_writer(&mut w, e).map_err(|e| ReportError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(entries)
}

/// Reads a manifest. Relative spectrogram and waveform paths resolve against
/// the manifest's directory.
pub fn import_corpus(path: &Path) -> Result<Vec<ManifestEntry>, ReportError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(&line).map_err(|err| ReportError::Manifest {
            line: i + 1,
            detail: err.to_string(),
        })?;
        if e.spectrogram_path.is_relative() {
            e.spectrogram_path = base.join(&e.spectrogram_path);
        }
        if let Some(w) = e.wav_path.as_mut().filter(|w| w.is_relative()) {
            *w = base.join(&*w);
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> CorpusRecord {
        CorpusRecord {
            audio_id: id.into(),
            report: format!("Report for {id}."),
            label: "COPD".into(),
            subject_id: Some("s1".into()),
            dataset: "icbhi".into(),
            wav_path: None,
        }
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut index = BTreeMap::new();
        for id in ["a", "b", "c"] {
            let p = dir.path().join(format!("{id}.spec"));
            fs::write(&p, b"x").unwrap();
            index.insert(id.to_string(), p);
        }
        let records: Vec<_> = ["a", "b", "c"].iter().map(|id| record(id)).collect();
        let out = dir.path().join("manifest.jsonl");
        let written = export_corpus(&records, &index, &out).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
        assert_eq!(import_corpus(&out).unwrap(), written);
    }

    #[test]
    fn dangling_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = export_corpus(&[record("ghost")], &BTreeMap::new(), &dir.path().join("m.jsonl")).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn bad_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "\n{\"audio_id\": 1}\n").unwrap();
        assert!(matches!(import_corpus(&p), Err(ReportError::Manifest { line: 2, .. })));
    }
}
