//! Marker-augmented model inputs.
//!
//! A `RelationInstance` is turned into a subword-aligned input for one of the
//! six experimental setups: entity markers always surround the two spans,
//! typed setups carry the (fine or coarse) entity type inside the markers,
//! and domain-marker setups prepend a special domain token.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainId, LabelVocabulary, RelationInstance, TypeMapping};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// The six experimental setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingStrategy {
    Baseline,
    DatasetEmbedding,
    DomainMarker,
    FineType,
    CoarseType,
    MarkerPlusCoarse,
}

/// How entity markers are typed under a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerTyping {
    Untyped,
    Fine,
    Coarse,
}

impl EncodingStrategy {
    pub const ALL: [EncodingStrategy; 6] = [
        EncodingStrategy::Baseline,
        EncodingStrategy::DatasetEmbedding,
        EncodingStrategy::DomainMarker,
        EncodingStrategy::FineType,
        EncodingStrategy::CoarseType,
        EncodingStrategy::MarkerPlusCoarse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncodingStrategy::Baseline => "baseline",
            EncodingStrategy::DatasetEmbedding => "dataset_embedding",
            EncodingStrategy::DomainMarker => "domain_marker",
            EncodingStrategy::FineType => "fine_type",
            EncodingStrategy::CoarseType => "coarse_type",
            EncodingStrategy::MarkerPlusCoarse => "marker_plus_coarse",
        }
    }

    /// Display name used in results tables.
    pub fn display_name(self) -> &'static str {
        match self {
            EncodingStrategy::Baseline => "Baseline",
            EncodingStrategy::DatasetEmbedding => "Dataset Emb.",
            EncodingStrategy::DomainMarker => "Domain Mark.",
            EncodingStrategy::FineType => "Fine-grain.",
            EncodingStrategy::CoarseType => "Coarse-grain.",
            EncodingStrategy::MarkerPlusCoarse => "Dom. + Coarse",
        }
    }

    pub fn uses_domain_marker(self) -> bool {
        matches!(
            self,
            EncodingStrategy::DomainMarker | EncodingStrategy::MarkerPlusCoarse
        )
    }

    pub fn uses_dataset_embedding(self) -> bool {
        self == EncodingStrategy::DatasetEmbedding
    }

    pub fn marker_typing(self) -> MarkerTyping {
        match self {
            EncodingStrategy::Baseline
            | EncodingStrategy::DatasetEmbedding
            | EncodingStrategy::DomainMarker => MarkerTyping::Untyped,
            EncodingStrategy::FineType => MarkerTyping::Fine,
            EncodingStrategy::CoarseType | EncodingStrategy::MarkerPlusCoarse => {
                MarkerTyping::Coarse
            }
        }
    }
}

impl std::fmt::Display for EncodingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EncodingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncodingStrategy::ALL
            .iter()
            .find(|strategy| strategy.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy `{s}` (expected one of: {})",
                    EncodingStrategy::ALL
                        .iter()
                        .map(|s| s.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }
}

/// The four marker roles around an entity pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerRole {
    E1Start,
    E1End,
    E2Start,
    E2End,
}

impl MarkerRole {
    fn token(self, entity_type: Option<&str>) -> String {
        let tag = match self {
            MarkerRole::E1Start => "E1",
            MarkerRole::E1End => "/E1",
            MarkerRole::E2Start => "E2",
            MarkerRole::E2End => "/E2",
        };
        match entity_type {
            Some(t) => format!("[{tag}:{t}]"),
            None => format!("[{tag}]"),
        }
    }
}

/// Every marker a strategy can emit: the four base entity markers, typed
/// variants for typed setups, and one domain marker per domain for
/// domain-marker setups.
#[derive(Debug, Clone)]
pub struct MarkerVocabulary {
    base: Vec<String>,
    typed: Vec<String>,
    domain: Vec<String>,
    all: HashSet<String>,
}

impl MarkerVocabulary {
    pub fn base_markers(&self) -> &[String] {
        &self.base
    }

    pub fn typed_markers(&self) -> &[String] {
        &self.typed
    }

    pub fn domain_markers(&self) -> &[String] {
        &self.domain
    }

    /// All markers in registration order.
    pub fn all(&self) -> impl Iterator<Item = &str> {
        self.base
            .iter()
            .chain(self.typed.iter())
            .chain(self.domain.iter())
            .map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.all.contains(token)
    }

    /// Removes every marker token, recovering the original sentence.
    pub fn strip<'a>(&self, tokens: &'a [String]) -> Vec<&'a str> {
        tokens
            .iter()
            .filter(|t| !self.contains(t))
            .map(String::as_str)
            .collect()
    }
}

/// Registers every marker `strategy` can emit. Deterministic and idempotent:
/// the same inputs always produce the same vocabulary in the same order.
pub fn build_marker_vocabulary(
    strategy: EncodingStrategy,
    mapping: &TypeMapping,
) -> MarkerVocabulary {
    let roles = [
        MarkerRole::E1Start,
        MarkerRole::E1End,
        MarkerRole::E2Start,
        MarkerRole::E2End,
    ];

    let base: Vec<String> = roles.iter().map(|r| r.token(None)).collect();

    let mut type_set: Vec<String> = match strategy.marker_typing() {
        MarkerTyping::Untyped => Vec::new(),
        MarkerTyping::Fine => mapping.fine_types().map(String::from).collect(),
        MarkerTyping::Coarse => mapping.coarse_types().to_vec(),
    };
    type_set.sort();
    let typed: Vec<String> = type_set
        .iter()
        .flat_map(|t| roles.iter().map(move |r| r.token(Some(t))))
        .collect();

    let domain: Vec<String> = if strategy.uses_domain_marker() {
        DomainId::ALL.iter().map(|d| d.marker()).collect()
    } else {
        Vec::new()
    };

    let all = base
        .iter()
        .chain(typed.iter())
        .chain(domain.iter())
        .cloned()
        .collect();

    MarkerVocabulary {
        base,
        typed,
        domain,
        all,
    }
}

/// Token-level positions of the four markers in an augmented token list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerPositions {
    pub e1_start: usize,
    pub e1_end: usize,
    pub e2_start: usize,
    pub e2_end: usize,
}

impl MarkerPositions {
    fn shift(&mut self, by: usize) {
        self.e1_start += by;
        self.e1_end += by;
        self.e2_start += by;
        self.e2_end += by;
    }
}

/// Surrounds the head span with e1 markers and the tail span with e2
/// markers, preserving the original tokens as a subsequence. Typed setups
/// render the entity's fine or coarse type inside the markers.
///
/// Markers are inserted back-to-front; at equal insertion points the order
/// is e1-start, e2-start for starts and e2-end, e1-end for ends, so identical
/// spans nest properly as `[E1 [E2 span /E2] /E1]`.
pub fn insert_entity_markers(
    instance: &RelationInstance,
    strategy: EncodingStrategy,
    mapping: &TypeMapping,
) -> Result<(Vec<String>, MarkerPositions)> {
    let type_of = |span: &crate::corpus::EntitySpan| -> Result<Option<String>> {
        Ok(match strategy.marker_typing() {
            MarkerTyping::Untyped => None,
            MarkerTyping::Fine => Some(span.fine_type.clone()),
            MarkerTyping::Coarse => Some(mapping.map(&span.fine_type)?.to_string()),
        })
    };
    let head_type = type_of(&instance.head)?;
    let tail_type = type_of(&instance.tail)?;

    // (insertion index, same-index priority, role, token)
    let mut items = [
        (
            instance.head.start,
            2u8,
            MarkerRole::E1Start,
            MarkerRole::E1Start.token(head_type.as_deref()),
        ),
        (
            instance.head.end + 1,
            1,
            MarkerRole::E1End,
            MarkerRole::E1End.token(head_type.as_deref()),
        ),
        (
            instance.tail.start,
            3,
            MarkerRole::E2Start,
            MarkerRole::E2Start.token(tail_type.as_deref()),
        ),
        (
            instance.tail.end + 1,
            0,
            MarkerRole::E2End,
            MarkerRole::E2End.token(tail_type.as_deref()),
        ),
    ];
    items.sort_by_key(|(idx, prio, _, _)| (*idx, *prio));

    let mut positions = MarkerPositions {
        e1_start: 0,
        e1_end: 0,
        e2_start: 0,
        e2_end: 0,
    };
    for (rank, (idx, _, role, _)) in items.iter().enumerate() {
        let final_pos = idx + rank;
        match role {
            MarkerRole::E1Start => positions.e1_start = final_pos,
            MarkerRole::E1End => positions.e1_end = final_pos,
            MarkerRole::E2Start => positions.e2_start = final_pos,
            MarkerRole::E2End => positions.e2_end = final_pos,
        }
    }

    let mut tokens = instance.tokens.clone();
    for (idx, _, _, token) in items.into_iter().rev() {
        tokens.insert(idx, token);
    }

    Ok((tokens, positions))
}

/// Prepends the domain's marker token: `output = [marker] ++ tokens`.
pub fn prepend_domain_marker(tokens: &[String], domain: DomainId) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.push(domain.marker());
    out.extend_from_slice(tokens);
    out
}

/// Subword positions of the four markers in the encoded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubwordPositions {
    pub e1_start: usize,
    pub e1_end: usize,
    pub e2_start: usize,
    pub e2_end: usize,
}

/// Encodes an augmented token list to subword ids, wrapped in the sequence
/// start/end tokens, and locates the marker subwords. Sequences longer than
/// `max_len` are truncated only when all four markers survive; otherwise the
/// instance must be skipped.
pub fn tokenize_and_align(
    aug_tokens: &[String],
    positions: &MarkerPositions,
    tokenizer: &Tokenizer,
    max_len: usize,
    instance_id: &str,
) -> Result<(Vec<u32>, SubwordPositions)> {
    let (ids, ranges) = tokenizer.encode_tokens(aug_tokens);

    let subword_of = |token_pos: usize| -> Result<usize> {
        let (start, end) = ranges[token_pos];
        let token = &aug_tokens[token_pos];
        let registered = tokenizer.id_of(token).filter(|id| tokenizer.is_special(*id));
        if end - start != 1 || registered != Some(ids[start]) {
            return Err(Error::Model(format!(
                "marker token `{token}` did not encode to its own single subword; \
                 is it registered with the tokenizer?"
            )));
        }
        // +1 for the sequence-start token.
        Ok(start + 1)
    };

    let subword_positions = SubwordPositions {
        e1_start: subword_of(positions.e1_start)?,
        e1_end: subword_of(positions.e1_end)?,
        e2_start: subword_of(positions.e2_start)?,
        e2_end: subword_of(positions.e2_end)?,
    };

    let mut sequence = Vec::with_capacity(ids.len() + 2);
    sequence.push(tokenizer.cls_id());
    sequence.extend(ids);
    sequence.push(tokenizer.sep_id());

    if sequence.len() > max_len {
        let cutoff = max_len - 1; // last position is reserved for [SEP]
        let last_marker = subword_positions
            .e1_start
            .max(subword_positions.e1_end)
            .max(subword_positions.e2_start)
            .max(subword_positions.e2_end);
        if last_marker >= cutoff {
            return Err(Error::MarkerTruncated {
                instance_id: instance_id.to_string(),
                max_len,
            });
        }
        sequence.truncate(cutoff);
        sequence.push(tokenizer.sep_id());
    }

    Ok((sequence, subword_positions))
}

/// A fully encoded classification input.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedInstance {
    pub instance_id: String,
    /// Augmented token list; stripping all markers recovers the sentence.
    pub tokens: Vec<String>,
    pub subword_ids: Vec<u32>,
    pub domain: DomainId,
    pub e1_start_pos: usize,
    pub e2_start_pos: usize,
    pub gold_label: usize,
}

/// Everything needed to encode instances under one strategy: the tokenizer
/// (with markers registered), the marker vocabulary, the type mapping and the
/// label vocabulary.
#[derive(Debug, Clone)]
pub struct EncodingContext {
    pub strategy: EncodingStrategy,
    pub tokenizer: Tokenizer,
    pub markers: MarkerVocabulary,
    pub mapping: TypeMapping,
    pub labels: LabelVocabulary,
    pub max_seq_len: usize,
}

impl EncodingContext {
    /// Builds the marker vocabulary for `strategy` and registers it with the
    /// tokenizer.
    pub fn new(
        strategy: EncodingStrategy,
        mut tokenizer: Tokenizer,
        mapping: TypeMapping,
        labels: LabelVocabulary,
        max_seq_len: usize,
    ) -> EncodingContext {
        let markers = build_marker_vocabulary(strategy, &mapping);
        let marker_tokens: Vec<&str> = markers.all().collect();
        tokenizer.add_special_tokens(&marker_tokens);
        EncodingContext {
            strategy,
            tokenizer,
            markers,
            mapping,
            labels,
            max_seq_len,
        }
    }

    /// Composes marker insertion, optional domain-marker prepending and
    /// subword alignment. Deterministic.
    pub fn encode(&self, instance: &RelationInstance) -> Result<AugmentedInstance> {
        let gold_label = self
            .labels
            .index_of(&instance.label)
            .ok_or_else(|| Error::UnknownLabel(instance.label.clone()))?;

        let (mut tokens, mut positions) =
            insert_entity_markers(instance, self.strategy, &self.mapping)?;
        if self.strategy.uses_domain_marker() {
            tokens = prepend_domain_marker(&tokens, instance.domain);
            positions.shift(1);
        }

        let (subword_ids, subword_positions) = tokenize_and_align(
            &tokens,
            &positions,
            &self.tokenizer,
            self.max_seq_len,
            &instance.id,
        )?;

        Ok(AugmentedInstance {
            instance_id: instance.id.clone(),
            tokens,
            subword_ids,
            domain: instance.domain,
            e1_start_pos: subword_positions.e1_start,
            e2_start_pos: subword_positions.e2_start,
            gold_label,
        })
    }

    /// Encodes a batch, skipping instances whose markers would be lost to
    /// truncation. Returns the encoded instances and the skipped count.
    pub fn encode_all(&self, instances: &[RelationInstance]) -> Result<(Vec<AugmentedInstance>, usize)> {
        let mut encoded = Vec::with_capacity(instances.len());
        let mut skipped = 0;
        for instance in instances {
            match self.encode(instance) {
                Ok(aug) => encoded.push(aug),
                Err(Error::MarkerTruncated { .. }) => skipped += 1,
                Err(other) => return Err(other),
            }
        }
        Ok((encoded, skipped))
    }
}
