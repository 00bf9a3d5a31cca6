//! Python bindings: numerics helpers, report generation, trained-model
//! embedding, an exact vector index and the batch commands.

use std::path::{Path, PathBuf};

use auscult_cli::commands::{self, EmbedSpace};
use auscult_cli::config::Config;
use auscult_core::alignment::{self, CkaMode, TrainedModel};
use auscult_core::encoder::read_checkpoint;
use auscult_core::eval;
use auscult_core::numerics::Matrix;
use auscult_core::reports::{self, MetadataRecord, SchemaRegistry};
use auscult_core::retrieval::{self, VectorIndex};
use auscult_core::signal::{LogMel, LogMelConfig, Spectrogram, Waveform};
use auscult_core::teacher;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn parse_space(space: &str) -> PyResult<EmbedSpace> {
    match space {
        "encoder-384" | "encoder" => Ok(EmbedSpace::Encoder),
        "shared-512" | "shared" => Ok(EmbedSpace::Shared),
        other => Err(PyValueError::new_err(format!("unknown space {other:?}"))),
    }
}

/// Linear CKA between two row-aligned batches; `mode` is "sample" or "feature".
#[pyfunction]
#[pyo3(signature = (a, b, mode = "sample"))]
fn cka(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "sample" => CkaMode::Sample,
        "feature" => CkaMode::Feature,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    alignment::cka(&matrix(a)?, &matrix(b)?, mode).map_err(err)
}

/// Unit-norm hashed text embedding.
#[pyfunction]
#[pyo3(signature = (text, dim = teacher::DEFAULT_TEACHER_DIM, seed = 0))]
fn hash_embed(text: &str, dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(teacher::hash_embed(text, dim, seed).map_err(err)?.vector)
}

/// Log-mel spectrogram (frames × mel bins) with the default front end.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16_000))]
fn logmel(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    let w = Waveform::new(samples, sample_rate).map_err(err)?;
    let spec = LogMel::new(LogMelConfig::default()).map_err(err)?.compute(&w).map_err(err)?;
    Ok(rows(spec.values()))
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::auroc(&scores, &labels).map_err(err)
}

/// Macro one-vs-rest AUROC of an N×C score matrix.
#[pyfunction]
fn auroc_macro(scores: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    eval::auroc_macro(&matrix(scores)?, &labels).map_err(err)
}

/// Template report for a metadata record given as JSON.
#[pyfunction]
#[pyo3(signature = (metadata_json, seed = 0))]
fn template_report(metadata_json: &str, seed: u64) -> PyResult<String> {
    let meta: MetadataRecord = serde_json::from_str(metadata_json).map_err(err)?;
    let record = reports::generate_template_report(&meta, &SchemaRegistry::default(), seed).map_err(err)?;
    Ok(record.report)
}

/// Validator findings as `(term, token position, reason)` tuples.
#[pyfunction]
fn validate_report(text: &str, metadata_json: &str) -> PyResult<Vec<(String, usize, String)>> {
    let meta: MetadataRecord = serde_json::from_str(metadata_json).map_err(err)?;
    let v = reports::validate_report(text, &meta, &reports::default_lexicon());
    Ok(v.violations.into_iter().map(|x| (x.term, x.position, x.reason)).collect())
}

/// A trained encoder with its projection heads, in eval mode.
#[pyclass(frozen)]
struct Model {
    inner: TrainedModel,
}

#[pymethods]
impl Model {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        let ckpt = read_checkpoint(&checkpoint).map_err(err)?;
        Ok(Self {
            inner: TrainedModel::from_checkpoint(&ckpt, 0.0).map_err(err)?,
        })
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.encoder.config.embed_dim
    }

    /// Embedding of a saved spectrogram file.
    #[pyo3(signature = (spectrogram_path, space = "shared-512"))]
    fn embed_file(&self, spectrogram_path: PathBuf, space: &str) -> PyResult<Vec<f64>> {
        let spec = Spectrogram::load(&spectrogram_path).map_err(err)?;
        self.embed_spec(&spec, parse_space(space)?)
    }

    /// Embedding of a log-mel matrix (frames × mel bins).
    #[pyo3(signature = (spectrogram, space = "shared-512"))]
    fn embed(&self, spectrogram: Vec<Vec<f64>>, space: &str) -> PyResult<Vec<f64>> {
        let spec = Spectrogram::new(matrix(spectrogram)?).map_err(err)?;
        self.embed_spec(&spec, parse_space(space)?)
    }

    /// Language-head projection of teacher vectors.
    fn project_text(&self, vectors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.project_text(&matrix(vectors)?).map_err(err)?))
    }
}

impl Model {
    fn embed_spec(&self, spec: &Spectrogram, space: EmbedSpace) -> PyResult<Vec<f64>> {
        match space {
            EmbedSpace::Encoder => self.inner.embed_encoder(spec),
            EmbedSpace::Shared => self.inner.embed_shared(spec),
        }
        .map_err(err)
    }
}

/// Exact cosine top-k index.
#[pyclass(frozen)]
struct Index {
    inner: VectorIndex,
}

#[pymethods]
impl Index {
    #[new]
    fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> PyResult<Self> {
        if ids.len() != vectors.len() {
            return Err(PyValueError::new_err("ids and vectors differ in length"));
        }
        let inner = retrieval::build_index(ids.into_iter().zip(vectors).collect()).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(id, cosine)` pairs, best first, ties by id.
    fn topk(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(String, f64)>> {
        self.inner.topk(&query, k).map_err(err)
    }
}

fn config(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Config> {
    Config::resolve(path.as_deref(), &overrides).map_err(err)
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(err)
}

/// Runs `gen-data`; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (out, config_path = None, overrides = Vec::new()))]
fn gen_data(py: Python<'_>, out: PathBuf, config_path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<String> {
    let cfg = config(config_path, overrides)?;
    let s = py.detach(|| commands::cmd_gen_data(&cfg, &out)).map_err(err)?;
    json(&s)
}

/// Runs `align`; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (manifest, out, config_path = None, overrides = Vec::new()))]
fn align(
    py: Python<'_>,
    manifest: PathBuf,
    out: PathBuf,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let cfg = config(config_path, overrides)?;
    let s = py.detach(|| commands::cmd_align(&cfg, &manifest, &out)).map_err(err)?;
    json(&s)
}

/// Runs `embed`; returns the number of vectors written.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, out, space = "shared-512", config_path = None, overrides = Vec::new()))]
fn embed(
    py: Python<'_>,
    checkpoint: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    space: &str,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<usize> {
    let cfg = config(config_path, overrides)?;
    let space = parse_space(space)?;
    py.detach(|| commands::cmd_embed(&cfg, &checkpoint, &manifest, space, &out))
        .map_err(err)
}

/// Runs `probe`; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (embeddings, manifest, out, config_path = None, overrides = Vec::new()))]
fn probe(
    py: Python<'_>,
    embeddings: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let cfg = config(config_path, overrides)?;
    let s = py.detach(|| commands::cmd_probe(&cfg, &embeddings, &manifest, &out)).map_err(err)?;
    json(&s)
}

/// Runs `zeroshot`; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (checkpoint, train_manifest, test_manifest, out, config_path = None, overrides = Vec::new()))]
fn zeroshot(
    py: Python<'_>,
    checkpoint: PathBuf,
    train_manifest: PathBuf,
    test_manifest: PathBuf,
    out: PathBuf,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let cfg = config(config_path, overrides)?;
    let s = py
        .detach(|| commands::cmd_zeroshot(&cfg, &checkpoint, &train_manifest, &test_manifest, &out))
        .map_err(err)?;
    json(&s)
}

/// Name of the manifest file that `gen_data` writes.
#[pyfunction]
fn manifest_path(dir: PathBuf) -> PathBuf {
    Path::new(&dir).join(commands::MANIFEST_FILE)
}

#[pymodule]
fn auscult(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cka, m)?)?;
    m.add_function(wrap_pyfunction!(hash_embed, m)?)?;
    m.add_function(wrap_pyfunction!(logmel, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auroc_macro, m)?)?;
    m.add_function(wrap_pyfunction!(template_report, m)?)?;
    m.add_function(wrap_pyfunction!(validate_report, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(zeroshot, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_path, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<Index>()?;
    m.add("SHARED_DIM", alignment::SHARED_DIM)?;
    Ok(())
}
