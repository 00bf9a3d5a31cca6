//! Dataset schemas: which metadata fields exist and how each is phrased.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Modality, ReportError, Specialist};

/// A yes/no style clinical finding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindingField {
    pub key: String,
    /// Surface phrase used in reports, e.g. "wheezes".
    pub term: String,
    pub positive_values: Vec<String>,
    /// Values rendered as an explicit negation. Anything else is left unmentioned.
    pub negative_values: Vec<String>,
}

/// A descriptive field rendered with a phrase template containing `{v}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeField {
    pub key: String,
    pub phrase: String,
    #[serde(default)]
    pub keep_case: bool,
    /// Only rendered when this finding key holds a positive value.
    #[serde(default)]
    pub requires: Option<String>,
}

/// The label field and its closing-sentence variants (`{label}` placeholder).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelField {
    pub key: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub sentences: BTreeMap<String, Vec<String>>,
    pub default_sentences: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub tag: String,
    pub modality: Modality,
    pub specialist: Specialist,
    pub openings: Vec<String>,
    /// Used instead of a findings list when no finding is positive.
    pub normal_phrases: Vec<String>,
    pub findings: Vec<FindingField>,
    #[serde(default)]
    pub age_key: Option<String>,
    #[serde(default)]
    pub sex_key: Option<String>,
    #[serde(default)]
    pub attribute_intros: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<AttributeField>,
    pub label: LabelField,
    #[serde(default)]
    pub required: Vec<String>,
}

impl Schema {
    pub fn check(&self) -> Result<(), ReportError> {
        let bad = |m: String| Err(ReportError::Metadata(format!("schema {}: {m}", self.tag)));
        if self.openings.is_empty() || self.normal_phrases.is_empty() || self.label.default_sentences.is_empty() {
            return bad("openings, normal phrases and default label sentences must be non-empty".into());
        }
        if !self.attributes.is_empty() && self.attribute_intros.is_empty() {
            return bad("attributes need at least one intro".into());
        }
        if self.label.values.is_empty() {
            return bad("label set is empty".into());
        }
        let all = self
            .openings
            .iter()
            .chain(&self.normal_phrases)
            .chain(&self.attribute_intros)
            .chain(&self.label.default_sentences)
            .chain(self.label.sentences.values().flatten());
        for s in all {
            if s.contains('.') {
                return bad(format!("phrase {s:?} contains a period"));
            }
        }
        Ok(())
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn finding(key: &str, term: &str, pos: &[&str], neg: &[&str]) -> FindingField {
    FindingField {
        key: key.into(),
        term: term.into(),
        positive_values: strings(pos),
        negative_values: strings(neg),
    }
}

fn attr(key: &str, phrase: &str, keep_case: bool, requires: Option<&str>) -> AttributeField {
    AttributeField {
        key: key.into(),
        phrase: phrase.into(),
        keep_case,
        requires: requires.map(str::to_string),
    }
}

fn icbhi() -> Schema {
    let mut sentences = BTreeMap::new();
    sentences.insert(
        "Healthy".to_string(),
        strings(&[
            "The subject is recorded as healthy",
            "The recorded diagnostic status is healthy",
            "No disease is documented and the subject is listed as healthy",
        ]),
    );
    Schema {
        tag: "icbhi".into(),
        modality: Modality::Respiratory,
        specialist: Specialist::Pulmonologist,
        openings: strings(&[
            "Auscultation reveals",
            "Lung auscultation demonstrates",
            "Chest auscultation shows",
            "On auscultation there are",
        ]),
        normal_phrases: strings(&["clear vesicular breath sounds", "normal breath sounds"]),
        findings: vec![
            finding("Wheezes", "wheezes", &["Yes", "True"], &["No", "False"]),
            finding("Crackles", "crackles", &["Yes", "True"], &["No", "False"]),
        ],
        age_key: Some("Age".into()),
        sex_key: Some("Sex".into()),
        attribute_intros: strings(&["The recording was made", "Sounds were captured"]),
        attributes: vec![
            attr("Chest_Location", "over the {v}", false, None),
            attr("Device", "with a {v} stethoscope", true, None),
        ],
        label: LabelField {
            key: "Diagnosis".into(),
            values: strings(&["Healthy", "Pneumonia", "Asthma", "COPD", "URTI", "Bronchiectasis"]),
            sentences,
            default_sentences: strings(&[
                "These findings are consistent with the documented {label}",
                "The recorded diagnosis is {label}",
                "This presentation is in keeping with the documented diagnosis of {label}",
            ]),
        },
        required: strings(&["Wheezes", "Crackles", "Diagnosis"]),
    }
}

fn cough() -> Schema {
    let mut sentences = BTreeMap::new();
    sentences.insert(
        "Healthy".to_string(),
        strings(&["The recorded status is healthy", "The subject is listed as healthy"]),
    );
    Schema {
        tag: "cough".into(),
        modality: Modality::Cough,
        specialist: Specialist::Pulmonologist,
        openings: strings(&["The cough recording is accompanied by", "The submitted cough sample notes"]),
        normal_phrases: strings(&["an unremarkable symptom report", "no reported symptoms of note"]),
        findings: vec![
            finding("Respiratory_Condition", "a respiratory condition", &["True", "Yes"], &["False", "No"]),
            finding("Fever_Muscle_Pain", "fever or muscle pain", &["True", "Yes"], &["False", "No"]),
        ],
        age_key: Some("Age".into()),
        sex_key: Some("Gender".into()),
        attribute_intros: vec![],
        attributes: vec![],
        label: LabelField {
            key: "Status".into(),
            values: strings(&["Healthy", "Symptomatic", "COVID-19"]),
            sentences,
            default_sentences: strings(&["The recorded status is {label}", "The subject is listed as {label}"]),
        },
        required: strings(&["Status"]),
    }
}

fn murmur() -> Schema {
    Schema {
        tag: "murmur".into(),
        modality: Modality::Cardiac,
        specialist: Specialist::Cardiologist,
        openings: strings(&["Cardiac auscultation reveals", "Heart auscultation demonstrates"]),
        normal_phrases: strings(&["normal first and second heart sounds", "regular heart sounds"]),
        findings: vec![finding("Murmur", "a murmur", &["Present"], &["Absent"])],
        age_key: Some("Age".into()),
        sex_key: Some("Sex".into()),
        attribute_intros: strings(&["The murmur is", "The audible murmur is"]),
        attributes: vec![
            attr("Timing", "{v}", false, Some("Murmur")),
            attr("Pitch", "{v}-pitched", false, Some("Murmur")),
            attr("Quality", "{v} in quality", false, Some("Murmur")),
            attr("Grading", "graded {v}", true, Some("Murmur")),
            attr("Most_audible_location", "loudest at the {v} position", true, Some("Murmur")),
        ],
        label: LabelField {
            key: "Outcome".into(),
            values: strings(&["Normal", "Abnormal"]),
            sentences: BTreeMap::new(),
            default_sentences: strings(&["The overall outcome is {label}", "The recorded outcome is {label}"]),
        },
        required: strings(&["Murmur", "Outcome"]),
    }
}

fn normal_cardiac() -> Schema {
    Schema {
        tag: "normal_cardiac".into(),
        modality: Modality::Cardiac,
        specialist: Specialist::Cardiologist,
        openings: strings(&["Cardiac auscultation reveals", "Heart auscultation demonstrates"]),
        normal_phrases: strings(&[
            "normal heart sounds with a regular rhythm",
            "regular heart sounds with a normal rhythm",
        ]),
        findings: vec![],
        age_key: None,
        sex_key: None,
        attribute_intros: strings(&["The recording is of", "Signal capture is of"]),
        attributes: vec![attr("Data_Type", "{v} quality", false, None)],
        label: LabelField {
            key: "Diagnosis".into(),
            values: strings(&["Normal"]),
            sentences: BTreeMap::new(),
            default_sentences: strings(&[
                "These findings are consistent with a normal cardiac examination",
                "The cardiac examination is normal",
            ]),
        },
        required: strings(&["Diagnosis"]),
    }
}

/// The four shipped schemas: `icbhi`, `cough`, `murmur`, `normal_cardiac`.
pub fn builtin_schemas() -> Vec<Schema> {
    vec![icbhi(), cough(), murmur(), normal_cardiac()]
}

/// Schemas by dataset tag.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, Schema>,
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        let mut r = Self {
            schemas: BTreeMap::new(),
        };
        for s in builtin_schemas() {
            r.register(s).expect("built-in schemas are valid");
        }
        r
    }
}

impl SchemaRegistry {
    pub fn empty() -> Self {
        Self {
            schemas: BTreeMap::new(),
        }
    }

    /// Adds or replaces a schema.
    pub fn register(&mut self, schema: Schema) -> Result<(), ReportError> {
        schema.check()?;
        self.schemas.insert(schema.tag.clone(), schema);
        Ok(())
    }

    pub fn get(&self, tag: &str) -> Result<&Schema, ReportError> {
        self.schemas
            .get(tag)
            .ok_or_else(|| ReportError::UnknownSchema(tag.to_string()))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(String::as_str)
    }
}
