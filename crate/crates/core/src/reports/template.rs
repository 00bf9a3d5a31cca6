use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    default_lexicon, validate_report, ClinicalRecord, MetaValue, MetadataRecord, ReportError, ReportSource, Schema,
    SchemaRegistry,
};

/// Sentences are period-terminated clauses.
pub fn sentence_count(text: &str) -> usize {
    text.split('.').filter(|s| !s.trim().is_empty()).count()
}

fn pick<'a>(options: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
    options.choose(rng).map(String::as_str).unwrap_or("")
}

/// Value text safe to place mid-sentence.
fn clean(v: &MetaValue) -> String {
    match v {
        MetaValue::Number(x) => format!("{}", x.round() as i64),
        other => other.to_string().replace('.', ""),
    }
}

fn matches_any(v: &MetaValue, options: &[String]) -> bool {
    let s = v.to_string();
    options.iter().any(|o| o.eq_ignore_ascii_case(&s))
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn sex_word(v: &MetaValue) -> String {
    match v.to_string().trim().to_ascii_lowercase().as_str() {
        "m" | "male" => "male".into(),
        "f" | "female" => "female".into(),
        other => other.replace('.', ""),
    }
}

fn demographics(schema: &Schema, meta: &MetadataRecord) -> String {
    let age = schema.age_key.as_deref().and_then(|k| meta.get(k));
    let sex = schema.sex_key.as_deref().and_then(|k| meta.get(k)).map(sex_word);
    match (age, sex) {
        (Some(a @ MetaValue::Number(_)), Some(s)) => format!(" in this {}-year-old {s}", clean(a)),
        (Some(a @ MetaValue::Number(_)), None) => format!(" in this {}-year-old patient", clean(a)),
        (Some(a), Some(s)) => format!(" in this {s} patient aged {}", clean(a)),
        (Some(a), None) => format!(" in this patient aged {}", clean(a)),
        (None, Some(s)) => format!(" in this {s} patient"),
        (None, None) => String::new(),
    }
}

fn check_meta(schema: &Schema, meta: &MetadataRecord) -> Result<String, ReportError> {
    meta.validate()?;
    for key in &schema.required {
        if meta.get(key).is_none() {
            return Err(ReportError::MissingSlot(key.clone()));
        }
    }
    let label = meta
        .get(&schema.label.key)
        .map(|v| v.to_string())
        .ok_or_else(|| ReportError::MissingSlot(schema.label.key.clone()))?;
    if !schema.label.values.iter().any(|v| v == &label) {
        return Err(ReportError::Metadata(format!(
            "label {label:?} is not in the {} label set",
            schema.tag
        )));
    }
    Ok(label)
}

/// Assembles a 2-3 sentence report: findings with demographics, optional
/// recording attributes, and the label statement. Synonym choices come from `seed`.
pub fn generate_template_report(
    meta: &MetadataRecord,
    registry: &SchemaRegistry,
    seed: u64,
) -> Result<ClinicalRecord, ReportError> {
    let schema = registry.get(&meta.dataset)?;
    let label = check_meta(schema, meta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for f in &schema.findings {
        if let Some(v) = meta.get(&f.key) {
            if matches_any(v, &f.positive_values) {
                positives.push(f.term.clone());
            } else if matches_any(v, &f.negative_values) {
                negatives.push(f.term.clone());
            }
        }
    }
    let mut first = format!("{} ", pick(&schema.openings, &mut rng));
    if positives.is_empty() {
        first.push_str(pick(&schema.normal_phrases, &mut rng));
    } else {
        first.push_str(&join_list(&positives));
    }
    for (i, n) in negatives.iter().enumerate() {
        let cue = match (i, ["without", "with no"].choose(&mut rng).copied().unwrap()) {
            (0, c) => c,
            _ => "and no",
        };
        first.push_str(&format!(" {cue} {n}"));
    }
    first.push_str(&demographics(schema, meta));

    let mut sentences = vec![first];

    let phrases: Vec<String> = schema
        .attributes
        .iter()
        .filter(|a| match &a.requires {
            Some(k) => schema
                .findings
                .iter()
                .find(|f| &f.key == k)
                .zip(meta.get(k))
                .is_some_and(|(f, v)| matches_any(v, &f.positive_values)),
            None => true,
        })
        .filter_map(|a| {
            let v = clean(meta.get(&a.key)?);
            let v = if a.keep_case { v } else { v.to_lowercase() };
            Some(a.phrase.replace("{v}", &v))
        })
        .collect();
    if !phrases.is_empty() {
        sentences.push(format!("{} {}", pick(&schema.attribute_intros, &mut rng), join_list(&phrases)));
    }

    let variants = schema
        .label
        .sentences
        .get(&label)
        .unwrap_or(&schema.label.default_sentences);
    let shown = if label.chars().any(|c| c.is_ascii_lowercase()) {
        label.to_lowercase()
    } else {
        label.clone()
    };
    sentences.push(pick(variants, &mut rng).replace("{label}", &shown.replace('.', "")));

    let report = sentences
        .iter()
        .map(|s| format!("{}.", capitalize(s.trim())))
        .collect::<Vec<_>>()
        .join(" ");
    let violations = validate_report(&report, meta, &default_lexicon()).violations;
    Ok(ClinicalRecord {
        report,
        source: ReportSource::Template,
        metadata_digest: meta.digest(),
        seed,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reports::Modality;

    fn text(s: &str) -> MetaValue {
        MetaValue::Text(s.into())
    }

    fn icbhi_meta() -> MetadataRecord {
        MetadataRecord {
            dataset: "icbhi".into(),
            fields: vec![
                ("Wheezes".into(), text("Yes")),
                ("Crackles".into(), text("No")),
                ("Age".into(), MetaValue::Number(66.0)),
                ("Sex".into(), text("M")),
                ("Diagnosis".into(), text("Pneumonia")),
            ],
            subject_id: Some("101".into()),
            labels: vec!["Pneumonia".into()],
            modality: Modality::Respiratory,
        }
    }

    #[test]
    fn icbhi_example_mentions_wheezes_and_negates_crackles() {
        let r = generate_template_report(&icbhi_meta(), &SchemaRegistry::default(), 0).unwrap();
        let lower = r.report.to_lowercase();
        assert!(lower.contains("wheezes"), "{}", r.report);
        assert!(lower.contains("without crackles") || lower.contains("with no crackles"), "{}", r.report);
        assert!(lower.contains("66-year-old male"), "{}", r.report);
        assert!(lower.contains("pneumonia"), "{}", r.report);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert_eq!(sentence_count(&r.report), 2);
    }

    #[test]
    fn normal_cardiac_has_no_murmur_terms() {
        let meta = MetadataRecord {
            dataset: "normal_cardiac".into(),
            fields: vec![("Diagnosis".into(), text("Normal")), ("Data_Type".into(), text("Clean"))],
            subject_id: None,
            labels: vec!["Normal".into()],
            modality: Modality::Cardiac,
        };
        for seed in 0..10 {
            let r = generate_template_report(&meta, &SchemaRegistry::default(), seed).unwrap();
            let lower = r.report.to_lowercase();
            assert!(lower.contains("normal") && lower.contains("heart sounds"), "{}", r.report);
            assert!(!lower.contains("murmur"));
            assert_eq!(sentence_count(&r.report), 3);
        }
    }

    #[test]
    fn deterministic_and_diverse() {
        let reg = SchemaRegistry::default();
        let a = generate_template_report(&icbhi_meta(), &reg, 5).unwrap();
        let b = generate_template_report(&icbhi_meta(), &reg, 5).unwrap();
        assert_eq!(a, b);
        let forms: std::collections::HashSet<String> = (0..10)
            .map(|s| generate_template_report(&icbhi_meta(), &reg, s).unwrap().report)
            .collect();
        assert!(forms.len() >= 2);
    }

    #[test]
    fn errors() {
        let reg = SchemaRegistry::default();
        let mut m = icbhi_meta();
        m.dataset = "unknown".into();
        assert!(matches!(generate_template_report(&m, &reg, 0), Err(ReportError::UnknownSchema(_))));
        let mut m = icbhi_meta();
        m.fields.retain(|(k, _)| k != "Wheezes");
        assert!(matches!(generate_template_report(&m, &reg, 0), Err(ReportError::MissingSlot(k)) if k == "Wheezes"));
        let mut m = icbhi_meta();
        m.fields[4].1 = text("Flu");
        assert!(matches!(generate_template_report(&m, &reg, 0), Err(ReportError::Metadata(_))));
    }

    #[test]
    fn murmur_attributes_follow_presence() {
        let reg = SchemaRegistry::default();
        let mut meta = MetadataRecord {
            dataset: "murmur".into(),
            fields: vec![
                ("Murmur".into(), text("Present")),
                ("Timing".into(), text("Holosystolic")),
                ("Grading".into(), text("II/VI")),
                ("Pitch".into(), text("Medium")),
                ("Quality".into(), text("Harsh")),
                ("Outcome".into(), text("Abnormal")),
            ],
            subject_id: None,
            labels: vec!["Abnormal".into()],
            modality: Modality::Cardiac,
        };
        let r = generate_template_report(&meta, &reg, 1).unwrap();
        assert!(r.report.contains("holosystolic") && r.report.contains("II/VI"), "{}", r.report);
        assert_eq!(sentence_count(&r.report), 3);
        meta.fields[0].1 = text("Absent");
        let r = generate_template_report(&meta, &reg, 1).unwrap();
        assert!(!r.report.contains("holosystolic"));
        assert!(r.violations.is_empty(), "{:?} {}", r.violations, r.report);
    }
}
