use serde::{Deserialize, Serialize};

use super::MetadataRecord;

/// Words that open a negation scope.
const NEGATION_CUES: &[&str] = &["no", "not", "without", "nor", "neither", "denies", "negative", "absence"];
/// Tokens after a cue that remain negated.
const NEGATION_WINDOW: usize = 4;

/// A clinical term family and the metadata that may license it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Token prefixes; multi-word stems match consecutive tokens.
    pub stem: String,
    /// `(key, positive values, negative values)`.
    pub licenses: Vec<(String, Vec<String>, Vec<String>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub term: String,
    /// Token offset in the report.
    pub position: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

fn entry(stem: &str, licenses: &[(&str, &[&str], &[&str])]) -> LexiconEntry {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    LexiconEntry {
        stem: stem.into(),
        licenses: licenses.iter().map(|(k, p, n)| (k.to_string(), v(p), v(n))).collect(),
    }
}

pub fn default_lexicon() -> Vec<LexiconEntry> {
    const YES: &[&str] = &["Yes", "True"];
    const NO: &[&str] = &["No", "False"];
    vec![
        entry("wheez", &[("Wheezes", YES, NO)]),
        entry("crackl", &[("Crackles", YES, NO)]),
        entry("rhonch", &[]),
        entry("stridor", &[]),
        entry("murmur", &[("Murmur", &["Present"], &["Absent"])]),
        entry("pneumonia", &[("Diagnosis", &["Pneumonia"], &[])]),
        entry("asthma", &[("Diagnosis", &["Asthma"], &[])]),
        entry("copd", &[("Diagnosis", &["COPD"], &[])]),
        entry("bronchiect", &[("Diagnosis", &["Bronchiectasis"], &[])]),
        entry("urti", &[("Diagnosis", &["URTI"], &[])]),
        entry("covid", &[("Status", &["COVID-19"], &[])]),
        entry("fever", &[("Fever_Muscle_Pain", YES, NO)]),
        entry("muscle pain", &[("Fever_Muscle_Pain", YES, NO)]),
        entry("respiratory condition", &[("Respiratory_Condition", YES, NO)]),
    ]
}

#[derive(Clone, Copy, PartialEq)]
enum License {
    None,
    Negative,
    Positive,
}

fn license_for(e: &LexiconEntry, meta: &MetadataRecord) -> License {
    let mut best = License::None;
    for (key, pos, neg) in &e.licenses {
        let Some(v) = meta.get(key) else { continue };
        let s = v.to_string();
        if pos.iter().any(|p| p.eq_ignore_ascii_case(&s)) {
            return License::Positive;
        }
        if neg.iter().any(|n| n.eq_ignore_ascii_case(&s)) {
            best = License::Negative;
        }
    }
    best
}

/// Lowercased alphanumeric tokens grouped by sentence.
fn sentences(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?'])
        .map(|s| {
            s.split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn matches_at(tokens: &[String], i: usize, stem: &[&str]) -> bool {
    stem.iter().enumerate().all(|(k, part)| {
        tokens.get(i + k).is_some_and(|t| t.starts_with(part))
    })
}

/// Flags clinical terms the metadata does not license. A term is fine when the
/// metadata asserts it, fine under negation when the metadata denies it, and
/// always flagged when the metadata is silent.
pub fn validate_report(text: &str, meta: &MetadataRecord, lexicon: &[LexiconEntry]) -> Validation {
    let mut violations = Vec::new();
    let mut offset = 0;
    for tokens in sentences(text) {
        for e in lexicon {
            let stem: Vec<&str> = e.stem.split_whitespace().collect();
            if stem.is_empty() {
                continue;
            }
            let license = license_for(e, meta);
            for i in 0..tokens.len() {
                if !matches_at(&tokens, i, &stem) {
                    continue;
                }
                let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i]
                    .iter()
                    .any(|t| NEGATION_CUES.contains(&t.as_str()));
                let reason = match (license, negated) {
                    (License::Positive, _) | (License::Negative, true) => continue,
                    (License::Negative, false) => "asserted but recorded as absent",
                    (License::None, _) => "not supported by the metadata",
                };
                violations.push(Violation {
                    term: tokens[i..i + stem.len()].join(" "),
                    position: offset + i,
                    reason: reason.into(),
                });
            }
        }
        offset += tokens.len();
    }
    violations.sort_by_key(|v| v.position);
    Validation {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reports::{MetaValue, Modality};

    fn meta(fields: &[(&str, &str)]) -> MetadataRecord {
        MetadataRecord {
            dataset: "icbhi".into(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), MetaValue::Text(v.to_string())))
                .collect(),
            subject_id: None,
            labels: vec![],
            modality: Modality::Respiratory,
        }
    }

    #[test]
    fn licensing_rules() {
        let lex = default_lexicon();
        let m = meta(&[("Wheezes", "Yes"), ("Crackles", "No")]);
        assert!(validate_report("Wheezes are heard without crackles.", &m, &lex).ok);
        let v = validate_report("Wheezes and crackles are heard.", &m, &lex);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].term, "crackles");
        let v = validate_report("Rhonchi are present.", &m, &lex);
        assert_eq!(v.violations[0].term, "rhonchi");
        let v = validate_report("There is no murmur.", &m, &lex);
        assert!(!v.ok, "unlicensed even when negated");
    }

    #[test]
    fn negation_scope_is_bounded() {
        let lex = default_lexicon();
        let m = meta(&[("Crackles", "No")]);
        assert!(validate_report("No sign of any crackles.", &m, &lex).ok);
        assert!(!validate_report("No wheeze is heard but loud basal crackles.", &m, &lex).ok);
        assert!(!validate_report("No change. Crackles are present.", &m, &lex).ok);
    }

    #[test]
    fn multi_word_terms() {
        let lex = default_lexicon();
        let m = meta(&[("Respiratory_Condition", "False"), ("Fever_Muscle_Pain", "True")]);
        assert!(validate_report("Fever or muscle pain without a respiratory condition.", &m, &lex).ok);
        let v = validate_report("A respiratory condition is noted.", &m, &lex);
        assert_eq!(v.violations[0].term, "respiratory condition");
    }
}
