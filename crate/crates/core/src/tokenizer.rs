//! Greedy longest-match subword tokenizer (WordPiece-style).
//!
//! Vocabularies are either built from a corpus (frequent words stay whole,
//! everything else falls back to character pieces) or read from a plain
//! `vocab.txt` with `##` continuation pieces. Special tokens are atomic:
//! they always map to exactly one id and are never split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pieces: IndexMap<String, u32>,
    special_ids: HashSet<u32>,
}

impl Tokenizer {
    /// Builds a vocabulary from corpus words. Words occurring at least
    /// `min_word_freq` times become whole pieces; all seen characters are
    /// added as single-character pieces (word-initial and continuation), so
    /// any in-alphabet word remains encodable.
    pub fn from_words<'a, I>(words: I, min_word_freq: usize) -> Tokenizer
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for word in words {
            *counts.entry(word).or_insert(0) += 1;
        }

        let chars: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();

        let mut tokenizer = Tokenizer {
            pieces: IndexMap::new(),
            special_ids: HashSet::new(),
        };
        for special in [PAD, UNK, CLS, SEP] {
            tokenizer.push_special(special.to_string());
        }
        for c in &chars {
            tokenizer.push_piece(c.to_string());
        }
        for c in &chars {
            tokenizer.push_piece(format!("{CONTINUATION}{c}"));
        }
        for (word, count) in &counts {
            if *count >= min_word_freq && word.chars().count() > 1 {
                tokenizer.push_piece((*word).to_string());
            }
        }
        tokenizer
    }

    /// Reads a plain vocabulary file, one piece per line, in id order.
    /// Bracketed tokens such as `[CLS]` or `[MUSIC]` are treated as special.
    pub fn from_vocab_file(path: impl AsRef<Path>) -> Result<Tokenizer> {
        let path = path.as_ref();
        let contents =
            fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut tokenizer = Tokenizer {
            pieces: IndexMap::new(),
            special_ids: HashSet::new(),
        };
        for line in contents.lines() {
            let piece = line.trim_end_matches(['\r', '\n']);
            if piece.is_empty() {
                continue;
            }
            if piece.starts_with('[') && piece.ends_with(']') {
                tokenizer.push_special(piece.to_string());
            } else {
                tokenizer.push_piece(piece.to_string());
            }
        }
        for required in [PAD, UNK, CLS, SEP] {
            if tokenizer.id_of(required).is_none() {
                return Err(Error::Config(format!(
                    "vocabulary {} is missing the required token {required}",
                    path.display()
                )));
            }
        }
        Ok(tokenizer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for piece in self.pieces.keys() {
            out.push_str(piece);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    fn push_piece(&mut self, piece: String) -> u32 {
        let next = self.pieces.len() as u32;
        *self.pieces.entry(piece).or_insert(next)
    }

    fn push_special(&mut self, piece: String) -> u32 {
        let id = self.push_piece(piece);
        self.special_ids.insert(id);
        id
    }

    /// Registers atomic tokens, appending ids for the new ones. Idempotent.
    /// Returns the number of tokens actually added.
    pub fn add_special_tokens<S: AsRef<str>>(&mut self, tokens: &[S]) -> usize {
        let before = self.pieces.len();
        for token in tokens {
            self.push_special(token.as_ref().to_string());
        }
        self.pieces.len() - before
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.pieces.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get_index(id as usize).map(|(p, _)| p.as_str())
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn pad_id(&self) -> u32 {
        self.id_of(PAD).expect("pad token registered")
    }

    pub fn unk_id(&self) -> u32 {
        self.id_of(UNK).expect("unk token registered")
    }

    pub fn cls_id(&self) -> u32 {
        self.id_of(CLS).expect("cls token registered")
    }

    pub fn sep_id(&self) -> u32 {
        self.id_of(SEP).expect("sep token registered")
    }

    /// Subword ids of one word. Special tokens map to their single id;
    /// other words are split greedily, longest piece first, with `[UNK]`
    /// for anything not covered by the vocabulary.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        if let Some(id) = self.id_of(word) {
            if self.is_special(id) {
                return vec![id];
            }
        }
        if word.chars().count() > MAX_WORD_CHARS {
            return vec![self.unk_id()];
        }

        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut matched = None;
            let mut end = chars.len();
            while end > start {
                let substr: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    substr
                } else {
                    format!("{CONTINUATION}{substr}")
                };
                if let Some(id) = self.id_of(&candidate) {
                    if !self.is_special(id) {
                        matched = Some(id);
                        break;
                    }
                }
                end -= 1;
            }
            match matched {
                Some(id) => {
                    ids.push(id);
                    start = end;
                }
                None => return vec![self.unk_id()],
            }
        }
        ids
    }

    /// Encodes a token sequence; returns flat subword ids plus, per input
    /// token, its subword range `[start, end)`.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<u32>, Vec<(usize, usize)>) {
        let mut ids = Vec::new();
        let mut ranges = Vec::with_capacity(tokens.len());
        for token in tokens {
            let start = ids.len();
            ids.extend(self.encode_word(token.as_ref()));
            ranges.push((start, ids.len()));
        }
        (ids, ranges)
    }
}
