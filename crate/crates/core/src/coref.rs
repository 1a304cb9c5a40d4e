//! Mention clusters: ingestion from annotation files and a deterministic
//! rule-based resolver for hermetic runs.
//!
//! A cluster is a list of word spans (inclusive on both ends) that refer to
//! the same entity. Cluster `i` in the list carries id `i + 1` downstream.
//! Overall answer quality is bounded by cluster quality, whichever source
//! supplies them.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Word;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start_word: usize,
    pub end_word: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Mention {
    pub fn new(start_word: usize, end_word: usize) -> Self {
        Self {
            start_word,
            end_word,
            text: None,
        }
    }

    pub fn width(&self) -> usize {
        self.end_word - self.start_word + 1
    }

    pub fn contains(&self, word: usize) -> bool {
        self.start_word <= word && word <= self.end_word
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefClusters {
    pub clusters: Vec<Vec<Mention>>,
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

impl CorefClusters {
    pub fn new(clusters: Vec<Vec<Mention>>) -> Self {
        Self { clusters }
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    /// Checks every invariant against a document of `words`: at least two
    /// mentions per cluster, ordered in-range spans, and advisory mention
    /// text (whitespace-insensitive) when present.
    pub fn validate(&self, words: &[Word]) -> Result<()> {
        for (ci, cluster) in self.clusters.iter().enumerate() {
            if cluster.len() < 2 {
                return Err(Error::Validation(format!(
                    "cluster {} has {} mention(s); at least 2 required",
                    ci + 1,
                    cluster.len()
                )));
            }
            for (mi, m) in cluster.iter().enumerate() {
                if m.start_word > m.end_word || m.end_word >= words.len() {
                    return Err(Error::Validation(format!(
                        "cluster {} mention {}: span {}..={} outside document of {} words",
                        ci + 1,
                        mi,
                        m.start_word,
                        m.end_word,
                        words.len()
                    )));
                }
                if let Some(text) = &m.text {
                    let doc: String = words[m.start_word..=m.end_word]
                        .iter()
                        .map(|w| w.text.as_str())
                        .collect();
                    if squash(text) != squash(&doc) {
                        return Err(Error::Validation(format!(
                            "cluster {} mention {}: text {:?} does not match words {}..={} ({:?})",
                            ci + 1,
                            mi,
                            text,
                            m.start_word,
                            m.end_word,
                            doc
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fills every mention's `text` from the document.
    pub fn with_texts(mut self, words: &[Word]) -> Self {
        for m in self.clusters.iter_mut().flatten() {
            if m.end_word < words.len() && m.start_word <= m.end_word {
                let t: Vec<&str> = words[m.start_word..=m.end_word]
                    .iter()
                    .map(|w| w.text.as_str())
                    .collect();
                m.text = Some(t.join(" "));
            }
        }
        self
    }
}

/// Parses the cluster JSON schema and validates it against the document.
pub fn parse_clusters(json: &str, words: &[Word]) -> Result<CorefClusters> {
    let clusters: CorefClusters = serde_json::from_str(json)
        .map_err(|e| Error::Validation(format!("malformed cluster file: {e}")))?;
    clusters.validate(words)?;
    Ok(clusters)
}

pub fn load_clusters(path: impl AsRef<Path>, words: &[Word]) -> Result<CorefClusters> {
    parse_clusters(&fs::read_to_string(path)?, words)
}

const PRONOUNS: &[&str] = &[
    "he", "she", "his", "her", "him", "they", "them", "their", "it", "its",
];

/// Capitalized words that open sentences or clauses but never name an entity.
const FUNCTION_WORDS: &[&str] = &[
    "A",
    "After",
    "Afterwards",
    "Also",
    "An",
    "And",
    "At",
    "Before",
    "But",
    "Eventually",
    "Finally",
    "First",
    "Here",
    "How",
    "I",
    "In",
    "Later",
    "Meanwhile",
    "My",
    "Next",
    "On",
    "Or",
    "Our",
    "So",
    "Soon",
    "That",
    "The",
    "Then",
    "There",
    "These",
    "This",
    "Those",
    "We",
    "What",
    "When",
    "Where",
    "Which",
    "While",
    "Who",
    "Why",
    "You",
    "Your",
];

pub fn is_pronoun(word: &str) -> bool {
    PRONOUNS.contains(&word.to_lowercase().as_str())
}

fn is_candidate(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
        && word.chars().all(char::is_alphabetic)
        && !is_pronoun(word)
        && !FUNCTION_WORDS.contains(&word)
}

/// Deterministic fallback resolver over single-word mentions.
///
/// Repeated capitalized words (names) form one cluster per distinct string;
/// each third-person pronoun joins the cluster of the nearest preceding
/// capitalized word. Pronouns with no such antecedent stay unclustered, as do
/// names left with a single mention.
pub fn rule_resolve(words: &[Word]) -> CorefClusters {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut last_name: Option<&str> = None;
    for (i, w) in words.iter().enumerate() {
        let text = w.text.as_str();
        if is_candidate(text) {
            members
                .entry(text)
                .or_insert_with(|| {
                    order.push(text);
                    Vec::new()
                })
                .push(i);
            last_name = Some(text);
        } else if is_pronoun(text) {
            if let Some(name) = last_name {
                members.get_mut(name).expect("seen name").push(i);
            }
        }
    }
    let clusters = order
        .into_iter()
        .filter_map(|name| {
            let idx = &members[name];
            (idx.len() >= 2).then(|| idx.iter().map(|&i| Mention::new(i, i)).collect())
        })
        .collect();
    CorefClusters::new(clusters)
}
