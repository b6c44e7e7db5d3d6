//! Line-delimited record parsing, validation and serialization.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    type_mapping, AnnotatedSentence, DomainId, EntitySpan, LabelVocabulary, RelationAnnotation,
    Violation,
};
use crate::error::{Error, Result};

/// One corpus record as it appears on disk: one JSON object per line with
/// `doc_key`, `sentence`, `ner` (`[start, end, fine_type]` triples, token
/// indexed with inclusive ends) and `relations`
/// (`[head_start, head_end, tail_start, tail_end, label, explanation,
/// uncertain, syntax_ambiguity]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub doc_key: String,
    pub sentence: Vec<String>,
    pub ner: Vec<(usize, usize, String)>,
    pub relations: Vec<(usize, usize, usize, usize, String, String, bool, bool)>,
}

/// Which vocabularies `validate_record` enforces. `None` disables the check.
#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub fine_types: Option<BTreeSet<String>>,
    pub labels: Option<BTreeSet<String>>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            fine_types: Some(type_mapping::default_fine_types().iter().cloned().collect()),
            labels: Some(
                LabelVocabulary::canonical()
                    .labels()
                    .iter()
                    .cloned()
                    .collect(),
            ),
        }
    }
}

impl ValidationOptions {
    /// Checks structure only (span bounds and entity references), accepting
    /// any entity type or relation label.
    pub fn permissive() -> Self {
        ValidationOptions {
            fine_types: None,
            labels: None,
        }
    }
}

/// Structural validation of one parsed record. Returns every violation found;
/// an empty list means the record is well-formed.
pub fn validate_record(record: &RawRecord, options: &ValidationOptions) -> Vec<Violation> {
    let mut violations = Vec::new();
    let len = record.sentence.len();

    if len == 0 {
        violations.push(Violation::new("sentence", "empty sentence"));
    }

    for (i, (start, end, fine_type)) in record.ner.iter().enumerate() {
        let field = format!("ner[{i}]");
        if end < start {
            violations.push(Violation::new(&field, "inverted span"));
        }
        if *start >= len || *end >= len {
            violations.push(Violation::new(&field, "span out of bounds"));
        }
        if let Some(fine_types) = &options.fine_types {
            if !fine_types.contains(fine_type) {
                violations.push(Violation::new(
                    &field,
                    format!("unknown entity type `{fine_type}`"),
                ));
            }
        }
    }

    let spans: Vec<(usize, usize)> = record.ner.iter().map(|(s, e, _)| (*s, *e)).collect();
    for (i, (hs, he, ts, te, label, _, _, _)) in record.relations.iter().enumerate() {
        let field = format!("relations[{i}]");
        if !spans.contains(&(*hs, *he)) {
            violations.push(Violation::new(&field, "head span does not match a listed entity"));
        }
        if !spans.contains(&(*ts, *te)) {
            violations.push(Violation::new(&field, "tail span does not match a listed entity"));
        }
        if let Some(labels) = &options.labels {
            if !labels.contains(label) {
                violations.push(Violation::new(&field, format!("unknown label `{label}`")));
            }
        }
    }

    violations
}

fn sentence_from_record(record: RawRecord, domain: DomainId) -> AnnotatedSentence {
    let spans: Vec<(usize, usize)> = record.ner.iter().map(|(s, e, _)| (*s, *e)).collect();
    let entity_index = |s: usize, e: usize| {
        spans
            .iter()
            .position(|&(a, b)| (a, b) == (s, e))
            .expect("validated relation references a listed entity")
    };

    let entities = record
        .ner
        .into_iter()
        .map(|(start, end, fine_type)| EntitySpan {
            start,
            end,
            fine_type,
        })
        .collect();

    let relations = record
        .relations
        .into_iter()
        .map(
            |(hs, he, ts, te, label, explanation, uncertain, syntax_ambiguity)| {
                RelationAnnotation {
                    head: entity_index(hs, he),
                    tail: entity_index(ts, te),
                    label,
                    explanation,
                    uncertain,
                    syntax_ambiguity,
                }
            },
        )
        .collect();

    AnnotatedSentence {
        doc_key: record.doc_key,
        tokens: record.sentence,
        domain,
        entities,
        relations,
    }
}

fn record_from_sentence(sentence: &AnnotatedSentence) -> RawRecord {
    RawRecord {
        doc_key: sentence.doc_key.clone(),
        sentence: sentence.tokens.clone(),
        ner: sentence
            .entities
            .iter()
            .map(|e| (e.start, e.end, e.fine_type.clone()))
            .collect(),
        relations: sentence
            .relations
            .iter()
            .map(|r| {
                let head = &sentence.entities[r.head];
                let tail = &sentence.entities[r.tail];
                (
                    head.start,
                    head.end,
                    tail.start,
                    tail.end,
                    r.label.clone(),
                    r.explanation.clone(),
                    r.uncertain,
                    r.syntax_ambiguity,
                )
            })
            .collect(),
    }
}

/// Loads one line-delimited corpus file, validating every record. Record
/// order is preserved; the first invalid record rejects the whole file.
pub fn load_corpus_file(
    path: impl AsRef<Path>,
    domain: DomainId,
    options: &ValidationOptions,
) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut sentences = Vec::new();

    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let violations = validate_record(&record, options);
        if !violations.is_empty() {
            return Err(Error::InvalidRecord {
                path: path.to_path_buf(),
                line: line_no,
                violations,
            });
        }
        sentences.push(sentence_from_record(record, domain));
    }

    Ok(sentences)
}

/// Serializes sentences back to the line-delimited record format.
/// `load_corpus_file` followed by this function reproduces the original
/// records field-for-field.
pub fn serialize_sentences(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        let record = record_from_sentence(sentence);
        out.push_str(&serde_json::to_string(&record).expect("record serialization"));
        out.push('\n');
    }
    out
}
