//! The pipeline commands.

mod align;
mod embed;
mod gen_data;
mod probe;
mod split;
mod zeroshot;

use std::collections::BTreeSet;
use std::path::Path;

use auscult_core::reports::{import_corpus, ManifestEntry};
use auscult_core::signal::Spectrogram;
use rayon::prelude::*;

pub use align::{cmd_align, AlignSummary, FINAL_CHECKPOINT};
pub use embed::{cmd_embed, embed_entries, EmbedSpace, EMBEDDINGS_FILE};
pub use gen_data::{cmd_gen_data, report_seed, GenDataSummary, MANIFEST_FILE, METADATA_FILE};
pub use probe::{class_indices, cmd_probe, evaluate_features, ProbeSummary, RESULTS_CSV};
pub use split::{cmd_split, SplitSummary, TEST_MANIFEST, TRAIN_MANIFEST};
pub use zeroshot::{cmd_zeroshot, leakage_check, ZeroShotSummary, ZEROSHOT_JSON};

use crate::CliError;

/// Reads a corpus manifest and rejects duplicate ids.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let entries = import_corpus(path)?;
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.audio_id.as_str()) {
            return Err(CliError::invalid(format!(
                "{}: duplicate audio id {:?}",
                path.display(),
                e.audio_id
            )));
        }
    }
    Ok(entries)
}

/// Loads every entry's spectrogram, in manifest order.
pub fn load_spectrograms(entries: &[ManifestEntry]) -> Result<Vec<Spectrogram>, CliError> {
    entries
        .par_iter()
        .map(|e| {
            Spectrogram::load(&e.spectrogram_path).map_err(|err| {
                CliError::Runtime(format!(
                    "{}: spectrogram {}: {err}",
                    e.audio_id,
                    e.spectrogram_path.display()
                ))
            })
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
