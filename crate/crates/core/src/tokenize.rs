//! Word tokenization, greedy longest-match wordpiece segmentation, and the
//! word → subword alignment that coreference ids are projected through.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

/// A word with character (not byte) offsets into the source text; `char_end` is exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subword {
    pub text: String,
    pub id: usize,
    pub word_index: usize,
}

/// Splits on whitespace; every punctuation character is its own word and
/// alphanumeric runs form the remaining words.
pub fn word_tokenize(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let flush = |current: &mut Option<(usize, String)>, words: &mut Vec<Word>, end: usize| {
        if let Some((start, text)) = current.take() {
            words.push(Word {
                text,
                char_start: start,
                char_end: end,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, &mut words, i);
        } else if c.is_alphanumeric() {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        } else {
            flush(&mut current, &mut words, i);
            words.push(Word {
                text: c.to_string(),
                char_start: i,
                char_end: i + 1,
            });
        }
    }
    let n = text.chars().count();
    flush(&mut current, &mut words, n);
    words
}

/// Slices `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut idx = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()));
    let b_start = idx.nth(start).unwrap_or(text.len());
    let b_end = if end > start {
        idx.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b_start
    };
    &text[b_start..b_end]
}

/// Subword vocabulary; line number in the vocab file is the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_pieces<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            pieces: Vec::new(),
            index: HashMap::new(),
        };
        for special in [PAD, UNK, CLS, SEP] {
            vocab.insert(special.to_string());
        }
        for p in pieces {
            vocab.insert(p.into());
        }
        vocab
    }

    fn insert(&mut self, piece: String) {
        if !self.index.contains_key(&piece) {
            self.index.insert(piece.clone(), self.pieces.len());
            self.pieces.push(piece);
        }
    }

    /// Builds a vocabulary from word texts: every character (plain and as a
    /// continuation piece), the `max_words` most frequent words, and the
    /// `max_suffixes` most frequent 2–4 character continuation suffixes.
    /// Ties break lexicographically so the result is deterministic.
    pub fn build<'a, I>(words: I, max_words: usize, max_suffixes: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut word_freq: HashMap<&str, usize> = HashMap::new();
        for w in words {
            *word_freq.entry(w).or_default() += 1;
        }
        let mut chars: Vec<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();

        let mut suffix_freq: HashMap<String, usize> = HashMap::new();
        for (w, &f) in &word_freq {
            let cs: Vec<char> = w.chars().collect();
            for len in 2..=4.min(cs.len().saturating_sub(1)) {
                let suffix: String = cs[cs.len() - len..].iter().collect();
                *suffix_freq.entry(suffix).or_default() += f;
            }
        }

        let mut ranked: Vec<(&str, usize)> = word_freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut suffixes: Vec<(String, usize)> = suffix_freq.into_iter().collect();
        suffixes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut pieces: Vec<String> = Vec::new();
        for c in &chars {
            pieces.push(c.to_string());
        }
        for c in &chars {
            pieces.push(format!("{CONTINUATION}{c}"));
        }
        pieces.extend(
            ranked
                .into_iter()
                .take(max_words)
                .map(|(w, _)| w.to_string()),
        );
        pieces.extend(
            suffixes
                .into_iter()
                .take(max_suffixes)
                .map(|(s, _)| format!("{CONTINUATION}{s}")),
        );
        Vocab::from_pieces(pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn unk_id(&self) -> usize {
        self.index[UNK]
    }

    pub fn cls_id(&self) -> usize {
        self.index[CLS]
    }

    pub fn sep_id(&self) -> usize {
        self.index[SEP]
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn to_file_contents(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_contents())?;
        Ok(())
    }

    /// Parses a vocab file. Special tokens must be present; their position is free.
    pub fn parse(contents: &str) -> Result<Self> {
        let mut vocab = Vocab {
            pieces: Vec::new(),
            index: HashMap::new(),
        };
        for (line_no, line) in contents.lines().enumerate() {
            if vocab.index.contains_key(line) {
                return Err(Error::Validation(format!(
                    "duplicate vocab entry {line:?} on line {}",
                    line_no + 1
                )));
            }
            vocab.insert(line.to_string());
        }
        for special in [PAD, UNK, CLS, SEP] {
            if !vocab.index.contains_key(special) {
                return Err(Error::Validation(format!("vocab lacks {special}")));
            }
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Greedy longest-match segmentation of each word. Continuation pieces carry
/// the `##` marker; a character with no matching piece becomes its own
/// subword (mapped to `[UNK]` if even the bare character is unknown).
pub fn subword_tokenize(words: &[Word], vocab: &Vocab) -> Vec<Subword> {
    let mut out = Vec::new();
    for (wi, word) in words.iter().enumerate() {
        let chars: Vec<char> = word.text.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let prefix = if start == 0 { "" } else { CONTINUATION };
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let candidate: String = prefix
                    .chars()
                    .chain(chars[start..end].iter().copied())
                    .collect();
                if let Some(id) = vocab.id(&candidate) {
                    matched = Some((end, candidate, id));
                    break;
                }
            }
            let (end, text, id) = matched.unwrap_or_else(|| {
                let text: String = prefix
                    .chars()
                    .chain(std::iter::once(chars[start]))
                    .collect();
                (start + 1, text, vocab.unk_id())
            });
            out.push(Subword {
                text,
                id,
                word_index: wi,
            });
            start = end;
        }
    }
    out
}

/// Words, their subwords, and for each word the contiguous range of subword indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub words: Vec<Word>,
    pub subwords: Vec<Subword>,
    pub word_to_subwords: Vec<Range<usize>>,
}

pub fn align(words: Vec<Word>, subwords: Vec<Subword>) -> Result<TokenAlignment> {
    let mut ranges: Vec<Range<usize>> = Vec::with_capacity(words.len());
    let mut i = 0;
    for (wi, word) in words.iter().enumerate() {
        let start = i;
        let mut rebuilt = String::new();
        while i < subwords.len() && subwords[i].word_index == wi {
            rebuilt.push_str(
                subwords[i]
                    .text
                    .strip_prefix(CONTINUATION)
                    .unwrap_or(&subwords[i].text),
            );
            i += 1;
        }
        if start == i {
            return Err(Error::Alignment(format!(
                "word {wi} ({:?}) has no subwords at position {start}",
                word.text
            )));
        }
        if rebuilt != word.text {
            return Err(Error::Alignment(format!(
                "subwords of word {wi} spell {rebuilt:?}, expected {:?}",
                word.text
            )));
        }
        ranges.push(start..i);
    }
    if i != subwords.len() {
        return Err(Error::Alignment(format!(
            "subword {i} has word index {} beyond {} words or out of order",
            subwords[i].word_index,
            words.len()
        )));
    }
    Ok(TokenAlignment {
        words,
        subwords,
        word_to_subwords: ranges,
    })
}

impl TokenAlignment {
    pub fn from_text(text: &str, vocab: &Vocab) -> Self {
        let words = word_tokenize(text);
        let subwords = subword_tokenize(&words, vocab);
        align(words, subwords).expect("subword_tokenize output always aligns")
    }

    pub fn subword_ids(&self) -> Vec<usize> {
        self.subwords.iter().map(|s| s.id).collect()
    }

    /// Word indices overlapping the character span `[start, end)`.
    pub fn words_in_char_span(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let mut hit = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.char_start < end && w.char_end > start)
            .map(|(i, _)| i);
        let first = hit.next()?;
        let last = hit.next_back().unwrap_or(first);
        Some((first, last))
    }

    /// Character span covering subwords `start..=end`.
    pub fn char_span_of_subwords(&self, start: usize, end: usize) -> (usize, usize) {
        let ws = self.subwords[start].word_index;
        let we = self.subwords[end].word_index;
        (self.words[ws].char_start, self.words[we].char_end)
    }
}
