//! Clinical report text from structured recording metadata.
//!
//! Reports are produced by a seeded template engine over registered dataset
//! schemas, or by an external text-generation client. Every report can be
//! checked against its metadata with [`validate_report`], which flags clinical
//! terms that the metadata does not license.

mod corpus;
mod llm;
mod schema;
mod template;
mod validate;

pub use corpus::{export_corpus, import_corpus, CorpusRecord, ManifestEntry};
pub use llm::{generate_llm_report, parse_report_object, ReportClient};
pub use schema::{builtin_schemas, AttributeField, FindingField, LabelField, Schema, SchemaRegistry};
pub use template::{generate_template_report, sentence_count};
pub use validate::{default_lexicon, validate_report, LexiconEntry, Validation, Violation};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("unknown specialist {0:?}")]
    UnknownSpecialist(String),
    #[error("no schema registered for dataset {0:?}")]
    UnknownSchema(String),
    #[error("missing required field {0:?}")]
    MissingSlot(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unparseable generation output: {0}")]
    Parse(String),
    #[error("dangling reference: audio id {0:?} has no spectrogram")]
    Dangling(String),
    #[error("malformed manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A metadata value as it appears in a dataset record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl MetaValue {
    pub fn is_empty(&self) -> bool {
        matches!(self, MetaValue::Text(s) if s.trim().is_empty())
    }
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Bool(b) => write!(f, "{}", if *b { "True" } else { "False" }),
            // Whole numbers print without a decimal point so they never end a sentence.
            MetaValue::Number(x) if x.fract() == 0.0 && x.abs() < 1e15 => write!(f, "{}", *x as i64),
            MetaValue::Number(x) => write!(f, "{x}"),
            MetaValue::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Respiratory,
    Cough,
    Cardiac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Specialist {
    Pulmonologist,
    Cardiologist,
}

impl Specialist {
    fn title(self) -> &'static str {
        match self {
            Specialist::Pulmonologist => "Pulmonologist",
            Specialist::Cardiologist => "Cardiologist",
        }
    }

    fn domain(self) -> &'static str {
        match self {
            Specialist::Pulmonologist => "respiratory",
            Specialist::Cardiologist => "cardiac",
        }
    }

    pub fn for_modality(m: Modality) -> Self {
        match m {
            Modality::Cardiac => Specialist::Cardiologist,
            Modality::Respiratory | Modality::Cough => Specialist::Pulmonologist,
        }
    }
}

impl FromStr for Specialist {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pulmonologist" => Ok(Specialist::Pulmonologist),
            "cardiologist" => Ok(Specialist::Cardiologist),
            _ => Err(ReportError::UnknownSpecialist(s.to_string())),
        }
    }
}

/// Structured metadata for one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub dataset: String,
    /// Ordered key/value pairs.
    pub fields: Vec<(String, MetaValue)>,
    pub subject_id: Option<String>,
    pub labels: Vec<String>,
    pub modality: Modality,
}

impl MetadataRecord {
    pub fn get(&self, key: &str) -> Option<&MetaValue> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Keys unique and values non-empty.
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.fields.is_empty() {
            return Err(ReportError::Metadata("no fields".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, v) in &self.fields {
            if k.trim().is_empty() {
                return Err(ReportError::Metadata("empty key".into()));
            }
            if !seen.insert(k.as_str()) {
                return Err(ReportError::Metadata(format!("duplicate key {k:?}")));
            }
            if v.is_empty() {
                return Err(ReportError::Metadata(format!("empty value for {k:?}")));
            }
        }
        Ok(())
    }

    /// `Key: Value; Key: Value` rendering used in prompts.
    pub fn render(&self) -> String {
        self.fields
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("metadata serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    Template,
    Llm,
}

/// A generated report plus its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub report: String,
    pub source: ReportSource,
    pub metadata_digest: String,
    pub seed: u64,
    /// Validator findings; empty for clean reports.
    #[serde(default)]
    pub violations: Vec<Violation>,
}

impl ClinicalRecord {
    /// The single-key object form `{"report": ...}`.
    pub fn to_report_json(&self) -> String {
        serde_json::json!({ "report": self.report }).to_string()
    }

    pub fn flagged(&self) -> bool {
        !self.violations.is_empty()
    }
}

const PROMPT_TEMPLATE: &str = "You are a {title} tasked with interpreting {domain} auscultation findings. \
Based on the given conditions, write 2\u{2013}3 lines report covering all clinically relevant information. \
Only use the information given to write about conditions. \
Please do NOT mention anything about further evaluation or characterization.\n\n\
Your output should be JSON of the following format: {'report': ...}";

/// Fills the generation prompt for `specialist` and appends the conditions.
pub fn build_prompt(meta: &MetadataRecord, specialist: &str) -> Result<String, ReportError> {
    let sp: Specialist = specialist.parse()?;
    meta.validate()?;
    let head = PROMPT_TEMPLATE
        .replace("{title}", sp.title())
        .replace("{domain}", sp.domain());
    Ok(format!("{head}\n\nConditions: {}", meta.render()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn murmur_meta() -> MetadataRecord {
        MetadataRecord {
            dataset: "murmur".into(),
            fields: vec![
                ("Murmur".into(), MetaValue::Text("Present".into())),
                ("Timing".into(), MetaValue::Text("Holosystolic".into())),
            ],
            subject_id: Some("s1".into()),
            labels: vec!["Abnormal".into()],
            modality: Modality::Cardiac,
        }
    }

    #[test]
    fn cardiologist_prompt() {
        let p = build_prompt(&murmur_meta(), "cardiologist").unwrap();
        assert!(p.starts_with("You are a Cardiologist tasked with interpreting cardiac auscultation findings."));
        assert!(p.contains("Only use the information given"));
        assert!(p.contains("{'report': ...}"));
        assert!(p.ends_with("Conditions: Murmur: Present; Timing: Holosystolic"));
        assert_eq!(p, build_prompt(&murmur_meta(), "Cardiologist").unwrap());
    }

    #[test]
    fn prompt_errors() {
        assert!(matches!(
            build_prompt(&murmur_meta(), "dermatologist"),
            Err(ReportError::UnknownSpecialist(_))
        ));
        let mut empty = murmur_meta();
        empty.fields.clear();
        assert!(matches!(build_prompt(&empty, "cardiologist"), Err(ReportError::Metadata(_))));
    }

    #[test]
    fn numbers_render_without_decimal_point() {
        assert_eq!(MetaValue::Number(66.0).to_string(), "66");
        assert_eq!(MetaValue::Bool(false).to_string(), "False");
    }

    #[test]
    fn duplicate_keys_are_invalid() {
        let mut m = murmur_meta();
        m.fields.push(("Murmur".into(), MetaValue::Text("Absent".into())));
        assert!(m.validate().is_err());
    }
}
