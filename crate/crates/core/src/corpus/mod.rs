//! The six-domain relation classification corpus: parsing, validation,
//! vocabularies and the fine-to-coarse entity type mapping.

mod io;
mod manifest;
mod type_mapping;

pub use io::{load_corpus_file, serialize_sentences, validate_record, RawRecord, ValidationOptions};
pub use manifest::{
    corpus_stats, Corpus, CorpusSource, CorpusStats, Manifest, ManifestSource, SplitCounts,
    StatsRow,
};
pub use type_mapping::{default_fine_types, map_fine_to_coarse, MappingSource, TypeMapping};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the six text domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainId {
    News,
    Politics,
    Science,
    Music,
    Literature,
    Ai,
}

impl DomainId {
    pub const ALL: [DomainId; 6] = [
        DomainId::News,
        DomainId::Politics,
        DomainId::Science,
        DomainId::Music,
        DomainId::Literature,
        DomainId::Ai,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainId::News => "news",
            DomainId::Politics => "politics",
            DomainId::Science => "science",
            DomainId::Music => "music",
            DomainId::Literature => "literature",
            DomainId::Ai => "ai",
        }
    }

    /// Stable index used for dataset-embedding rows and report columns.
    pub fn index(self) -> usize {
        match self {
            DomainId::News => 0,
            DomainId::Politics => 1,
            DomainId::Science => 2,
            DomainId::Music => 3,
            DomainId::Literature => 4,
            DomainId::Ai => 5,
        }
    }

    /// The domain marker surface form, e.g. `[MUSIC]`.
    pub fn marker(self) -> String {
        format!("[{}]", self.name().to_uppercase())
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "news" => Ok(DomainId::News),
            "politics" => Ok(DomainId::Politics),
            "science" => Ok(DomainId::Science),
            "music" => Ok(DomainId::Music),
            "literature" => Ok(DomainId::Literature),
            "ai" => Ok(DomainId::Ai),
            other => Err(Error::UnknownDomain(other.to_string())),
        }
    }
}

/// Corpus split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, dev or test)"
            ))),
        }
    }
}

/// A token-indexed entity span with an end-inclusive boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    /// Inclusive index of the last token of the span.
    pub end: usize,
    pub fine_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, fine_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            fine_type: fine_type.into(),
        }
    }
}

/// A gold relation between two entity spans of the same sentence.
///
/// `head` and `tail` are indices into the sentence's entity list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub head: usize,
    pub tail: usize,
    pub label: String,
    pub explanation: String,
    pub uncertain: bool,
    pub syntax_ambiguity: bool,
}

/// A tokenized, domain-tagged sentence with entity and relation annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub doc_key: String,
    pub tokens: Vec<String>,
    pub domain: DomainId,
    pub entities: Vec<EntitySpan>,
    pub relations: Vec<RelationAnnotation>,
}

/// One classification unit: a sentence with an ordered entity pair and its
/// gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub domain: DomainId,
    pub tokens: Vec<String>,
    pub head: EntitySpan,
    pub tail: EntitySpan,
    pub label: String,
}

/// One `RelationInstance` per relation annotation, in annotation order.
pub fn extract_relation_instances(sentence: &AnnotatedSentence) -> Vec<RelationInstance> {
    sentence
        .relations
        .iter()
        .enumerate()
        .map(|(i, rel)| RelationInstance {
            id: format!("{}#{}", sentence.doc_key, i),
            domain: sentence.domain,
            tokens: sentence.tokens.clone(),
            head: sentence.entities[rel.head].clone(),
            tail: sentence.entities[rel.tail].clone(),
            label: rel.label.clone(),
        })
        .collect()
}

/// Ordered relation-label vocabulary with lexicographic, duplicate-free
/// ordering for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    labels: Vec<String>,
}

impl LabelVocabulary {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        LabelVocabulary {
            labels: set.into_iter().collect(),
        }
    }

    /// The canonical 17-label vocabulary of the released corpus.
    pub fn canonical() -> Self {
        LabelVocabulary::from_labels(
            include_str!("../../data/relation_labels.txt")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }
}

/// Sorted, deduplicated vocabulary of all gold labels in the given sentences.
///
/// Errors on a corpus with no relation annotations at all.
pub fn build_label_vocabulary<'a, I>(sentences: I) -> Result<LabelVocabulary>
where
    I: IntoIterator<Item = &'a AnnotatedSentence>,
{
    let vocab = LabelVocabulary::from_labels(
        sentences
            .into_iter()
            .flat_map(|s| s.relations.iter().map(|r| r.label.clone())),
    );
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus(
            "no relation labels found; cannot build a label vocabulary".to_string(),
        ));
    }
    Ok(vocab)
}

/// A single validation failure: which field is wrong and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_sentence() -> AnnotatedSentence {
        AnnotatedSentence {
            doc_key: "music-train-0".to_string(),
            tokens: vec!["Lennon", "founded", "the", "Beatles"]
                .into_iter()
                .map(String::from)
                .collect(),
            domain: DomainId::Music,
            entities: vec![
                EntitySpan::new(0, 0, "musicalartist"),
                EntitySpan::new(3, 3, "band"),
            ],
            relations: vec![
                RelationAnnotation {
                    head: 0,
                    tail: 1,
                    label: "social".to_string(),
                    explanation: String::new(),
                    uncertain: false,
                    syntax_ambiguity: false,
                },
                RelationAnnotation {
                    head: 1,
                    tail: 0,
                    label: "role".to_string(),
                    explanation: "founder".to_string(),
                    uncertain: true,
                    syntax_ambiguity: false,
                },
                RelationAnnotation {
                    head: 0,
                    tail: 1,
                    label: "physical".to_string(),
                    explanation: String::new(),
                    uncertain: false,
                    syntax_ambiguity: true,
                },
            ],
        }
    }

    #[test]
    fn domain_roundtrip_and_markers() {
        for d in DomainId::ALL {
            assert_eq!(DomainId::from_str(d.name()).unwrap(), d);
        }
        assert_eq!(DomainId::Music.marker(), "[MUSIC]");
        assert_eq!(DomainId::News.marker(), "[NEWS]");
        assert!(DomainId::from_str("sports").is_err());
    }

    #[test]
    fn extract_preserves_annotation_order() {
        let s = sample_sentence();
        let instances = extract_relation_instances(&s);
        assert_eq!(instances.len(), 3);
        assert_eq!(instances[0].label, "social");
        assert_eq!(instances[1].label, "role");
        assert_eq!(instances[2].label, "physical");
        assert_eq!(instances[0].id, "music-train-0#0");
        assert_eq!(instances[1].head, EntitySpan::new(3, 3, "band"));
    }

    #[test]
    fn extract_empty_relations() {
        let mut s = sample_sentence();
        s.relations.clear();
        assert!(extract_relation_instances(&s).is_empty());
    }

    #[test]
    fn label_vocabulary_sorted_and_deduplicated() {
        let v = LabelVocabulary::from_labels(["b", "a", "b", "c", "a"]);
        assert_eq!(v.labels(), &["a", "b", "c"]);
        assert_eq!(v.index_of("b"), Some(1));
        assert_eq!(v.index_of("z"), None);
    }

    #[test]
    fn canonical_labels_has_17_entries() {
        let v = LabelVocabulary::canonical();
        assert_eq!(v.len(), 17);
        assert!(v.contains("related-to"));
        assert!(v.contains("win-defeat"));
    }

    #[test]
    fn build_vocabulary_unions_splits() {
        let mut a = sample_sentence();
        a.relations.truncate(1); // social
        let mut b = sample_sentence();
        b.relations = vec![RelationAnnotation {
            head: 0,
            tail: 1,
            label: "artifact".to_string(),
            explanation: String::new(),
            uncertain: false,
            syntax_ambiguity: false,
        }];
        let v = build_label_vocabulary([&a, &b]).unwrap();
        assert_eq!(v.labels(), &["artifact", "social"]);
    }

    #[test]
    fn build_vocabulary_rejects_empty_corpus() {
        assert!(build_label_vocabulary([]).is_err());
        let mut s = sample_sentence();
        s.relations.clear();
        assert!(build_label_vocabulary([&s]).is_err());
    }
}
