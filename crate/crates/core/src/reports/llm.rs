use serde_json::Value;

use super::{
    build_prompt, default_lexicon, validate_report, ClinicalRecord, MetadataRecord, ReportError, ReportSource,
    Specialist,
};
use crate::teacher::{RemoteClient, TeacherError};

/// Anything that turns a prompt into generated text.
pub trait ReportClient {
    fn complete(&self, prompt: &str) -> Result<String, ReportError>;
}

impl ReportClient for RemoteClient {
    fn complete(&self, prompt: &str) -> Result<String, ReportError> {
        RemoteClient::complete(self, prompt).map_err(|e| match e {
            TeacherError::Transport(m) => ReportError::Transport(m),
            other => ReportError::Parse(other.to_string()),
        })
    }
}

/// Reads a quoted string starting at `chars[*i]`, which must be a quote.
fn quoted(chars: &[char], i: &mut usize) -> Option<String> {
    let q = *chars.get(*i)?;
    if q != '\'' && q != '"' {
        return None;
    }
    *i += 1;
    let mut out = String::new();
    while let Some(&c) = chars.get(*i) {
        *i += 1;
        match c {
            '\\' => {
                let n = *chars.get(*i)?;
                *i += 1;
                out.push(match n {
                    'n' => '\n',
                    't' => '\t',
                    other => other,
                });
            }
            c if c == q => return Some(out),
            c => out.push(c),
        }
    }
    None
}

fn skip_ws(chars: &[char], i: &mut usize) {
    while chars.get(*i).is_some_and(|c| c.is_whitespace()) {
        *i += 1;
    }
}

/// `{'k': 'v'}` with either quote style.
fn single_pair(body: &str) -> Option<(String, String)> {
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    skip_ws(&chars, &mut i);
    if chars.get(i) != Some(&'{') {
        return None;
    }
    i += 1;
    skip_ws(&chars, &mut i);
    let key = quoted(&chars, &mut i)?;
    skip_ws(&chars, &mut i);
    if chars.get(i) != Some(&':') {
        return None;
    }
    i += 1;
    skip_ws(&chars, &mut i);
    let value = quoted(&chars, &mut i)?;
    skip_ws(&chars, &mut i);
    if chars.get(i) == Some(&',') {
        i += 1;
        skip_ws(&chars, &mut i);
    }
    (chars.get(i) == Some(&'}')).then_some((key, value))
}

/// Extracts the report text from a `{"report": ...}` object, tolerating
/// surrounding prose, code fences and single-quoted keys.
pub fn parse_report_object(response: &str) -> Result<String, ReportError> {
    let (start, end) = match (response.find('{'), response.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(ReportError::Parse("no object in response".into())),
    };
    let body = &response[start..=end];
    let report = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => match map.get("report") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(ReportError::Parse("\"report\" is not a string".into())),
            None => return Err(ReportError::Parse("object lacks a \"report\" key".into())),
        },
        Ok(_) => return Err(ReportError::Parse("not an object".into())),
        Err(_) => match single_pair(body) {
            Some((k, v)) if k == "report" => v,
            Some(_) => return Err(ReportError::Parse("object lacks a \"report\" key".into())),
            None => return Err(ReportError::Parse("malformed object".into())),
        },
    };
    let report = report.trim().to_string();
    if report.is_empty() {
        return Err(ReportError::Parse("empty report".into()));
    }
    Ok(report)
}

/// Prompts `client` for a report. Unparseable responses are retried up to
/// `max_attempts` times in total; the returned record carries any validator
/// violations rather than failing on them.
pub fn generate_llm_report(
    meta: &MetadataRecord,
    client: &dyn ReportClient,
    max_attempts: usize,
    seed: u64,
) -> Result<ClinicalRecord, ReportError> {
    let specialist = match Specialist::for_modality(meta.modality) {
        Specialist::Pulmonologist => "pulmonologist",
        Specialist::Cardiologist => "cardiologist",
    };
    let prompt = build_prompt(meta, specialist)?;
    let mut last = ReportError::Parse("no attempts made".into());
    for attempt in 0..max_attempts.max(1) {
        let raw = client.complete(&prompt)?;
        match parse_report_object(&raw) {
            Ok(report) => {
                let violations = validate_report(&report, meta, &default_lexicon()).violations;
                if !violations.is_empty() {
                    log::warn!("generated report for {} has {} violations", meta.digest(), violations.len());
                }
                return Ok(ClinicalRecord {
                    report,
                    source: ReportSource::Llm,
                    metadata_digest: meta.digest(),
                    seed,
                    violations,
                });
            }
            Err(e) => {
                log::warn!("attempt {} returned an unparseable response: {e}", attempt + 1);
                last = e;
            }
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;

    use super::*;
    use crate::reports::{MetaValue, Modality};

    struct Scripted(RefCell<Vec<Result<String, ReportError>>>, RefCell<Vec<String>>);

    impl Scripted {
        fn new(replies: Vec<Result<String, ReportError>>) -> Self {
            Self(RefCell::new(replies.into_iter().rev().collect()), RefCell::new(vec![]))
        }
    }

    impl ReportClient for Scripted {
        fn complete(&self, prompt: &str) -> Result<String, ReportError> {
            self.1.borrow_mut().push(prompt.to_string());
            self.0.borrow_mut().pop().unwrap_or_else(|| Err(ReportError::Transport("exhausted".into())))
        }
    }

    fn meta() -> MetadataRecord {
        MetadataRecord {
            dataset: "icbhi".into(),
            fields: vec![
                ("Wheezes".into(), MetaValue::Text("No".into())),
                ("Crackles".into(), MetaValue::Text("Yes".into())),
                ("Diagnosis".into(), MetaValue::Text("COPD".into())),
            ],
            subject_id: None,
            labels: vec!["COPD".into()],
            modality: Modality::Respiratory,
        }
    }

    #[test]
    fn parses_both_quote_styles() {
        assert_eq!(parse_report_object(r#"{"report": "Crackles. COPD."}"#).unwrap(), "Crackles. COPD.");
        assert_eq!(
            parse_report_object("Sure!\n```json\n{'report': 'It\\'s crackles.'}\n```").unwrap(),
            "It's crackles."
        );
        assert!(matches!(parse_report_object(r#"{"text": "x"}"#), Err(ReportError::Parse(_))));
        assert!(matches!(parse_report_object("{'summary': 'x'}"), Err(ReportError::Parse(_))));
        assert!(matches!(parse_report_object("plain text"), Err(ReportError::Parse(_))));
    }

    #[test]
    fn happy_path_uses_pulmonologist_prompt() {
        let c = Scripted::new(vec![Ok(
            r#"{"report": "Crackles are present without wheezes. Findings fit COPD."}"#.into()
        )]);
        let r = generate_llm_report(&meta(), &c, 3, 7).unwrap();
        assert_eq!(r.source, ReportSource::Llm);
        assert!(!r.flagged());
        assert!(c.1.borrow()[0].starts_with("You are a Pulmonologist"));
    }

    #[test]
    fn retries_parse_failures_then_gives_up() {
        let c = Scripted::new(vec![Ok("garbage".into()), Ok("{'report': 'Crackles in COPD.'}".into())]);
        assert!(generate_llm_report(&meta(), &c, 3, 0).is_ok());
        let c = Scripted::new(vec![Ok("garbage".into()), Ok("{}".into()), Ok("x".into())]);
        assert!(matches!(generate_llm_report(&meta(), &c, 2, 0), Err(ReportError::Parse(_))));
        assert_eq!(c.1.borrow().len(), 2);
        let c = Scripted::new(vec![Err(ReportError::Transport("down".into()))]);
        assert!(matches!(generate_llm_report(&meta(), &c, 3, 0), Err(ReportError::Transport(_))));
    }

    #[test]
    fn hallucinated_finding_is_flagged() {
        let c = Scripted::new(vec![Ok("{'report': 'Crackles with stridor and wheezes suggest pneumonia.'}".into())]);
        let r = generate_llm_report(&meta(), &c, 1, 0).unwrap();
        let terms: Vec<&str> = r.violations.iter().map(|v| v.term.as_str()).collect();
        assert_eq!(terms, ["stridor", "wheezes", "pneumonia"]);
    }
}
