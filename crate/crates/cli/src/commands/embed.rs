use std::path::Path;

use auscult_core::alignment::{TrainedModel, SHARED_DIM};
use auscult_core::encoder::read_checkpoint;
use auscult_core::reports::ManifestEntry;
use auscult_core::teacher::save_embeddings;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, load_spectrograms, read_manifest};
use crate::config::Config;
use crate::manifest::RunRecorder;
use crate::CliError;

pub const EMBEDDINGS_FILE: &str = "embeddings.acemb";

/// Which representation `embed` exports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum EmbedSpace {
    /// Mean-pooled final encoder states.
    #[serde(rename = "encoder-384")]
    #[value(name = "encoder-384")]
    Encoder,
    /// The deepest aligned block through its projection head.
    #[serde(rename = "shared-512")]
    #[value(name = "shared-512")]
    Shared,
}

/// Full-visible, dropout-free embeddings of `entries`, in order.
pub fn embed_entries(
    model: &TrainedModel,
    entries: &[ManifestEntry],
    space: EmbedSpace,
) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let specs = load_spectrograms(entries)?;
    entries
        .par_iter()
        .zip(specs.par_iter())
        .map(|(e, s)| {
            let v = match space {
                EmbedSpace::Encoder => model.embed_encoder(s)?,
                EmbedSpace::Shared => model.embed_shared(s)?,
            };
            Ok((e.audio_id.clone(), v))
        })
        .collect()
}

/// Writes one vector per manifest entry to `out/embeddings.acemb`.
pub fn cmd_embed(
    cfg: &Config,
    checkpoint: &Path,
    manifest: &Path,
    space: EmbedSpace,
    out: &Path,
) -> Result<usize, CliError> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(CliError::invalid(format!("{} has no entries", manifest.display())));
    }
    let mut recorder = RunRecorder::start("embed", &(cfg, space), 0);
    recorder.input(checkpoint)?;
    recorder.input(manifest)?;
    let model = TrainedModel::from_checkpoint(&read_checkpoint(checkpoint)?, 0.0)?;
    let vectors = embed_entries(&model, &entries, space)?;
    let dim = match space {
        EmbedSpace::Encoder => model.encoder.config.embed_dim,
        EmbedSpace::Shared => SHARED_DIM,
    };
    create_dir(out)?;
    save_embeddings(out.join(EMBEDDINGS_FILE), dim, &vectors)?;
    recorder.artifact(EMBEDDINGS_FILE);
    recorder.finish(out)?;
    Ok(vectors.len())
}
