//! SQuAD-style datasets, extended with optional per-paragraph coreference
//! clusters and a per-question `coref_dependent` flag.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coref::{CorefClusters, Mention};
use crate::error::{Error, Result};
use crate::model::CharAnswer;
use crate::tokenize::{char_slice, word_tokenize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SquadFile {
    #[serde(default)]
    pub version: String,
    pub data: Vec<SquadArticle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquadArticle {
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquadParagraph {
    pub context: String,
    /// Clusters as lists of inclusive `[start_word, end_word]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<[usize; 2]>>>,
    pub qas: Vec<SquadQuestion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquadQuestion {
    pub id: String,
    pub question: String,
    pub answers: Vec<SquadAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coref_dependent: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

/// One question with its paragraph, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<CharAnswer>,
    pub clusters: Option<CorefClusters>,
    pub coref_dependent: Option<bool>,
}

impl QaExample {
    pub fn answer_texts(&self) -> Vec<String> {
        self.answers.iter().map(|a| a.text.clone()).collect()
    }
}

/// Parses and validates a dataset: every answer text must equal the context
/// substring at its character offset, clusters must fit the paragraph, and
/// question ids must be unique.
pub fn parse_dataset(json: &str) -> Result<Vec<QaExample>> {
    if json.trim().is_empty() {
        return Ok(Vec::new());
    }
    let file: SquadFile = serde_json::from_str(json)?;
    flatten(file)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn flatten(file: SquadFile) -> Result<Vec<QaExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for article in file.data {
        for para in article.paragraphs {
            let clusters = match &para.clusters {
                Some(raw) => {
                    let words = word_tokenize(&para.context);
                    let c = CorefClusters::new(
                        raw.iter()
                            .map(|cl| cl.iter().map(|&[s, e]| Mention::new(s, e)).collect())
                            .collect(),
                    );
                    c.validate(&words)?;
                    Some(c.with_texts(&words))
                }
                None => None,
            };
            for qa in para.qas {
                if !seen.insert(qa.id.clone()) {
                    return Err(Error::Validation(format!(
                        "duplicate question id {}",
                        qa.id
                    )));
                }
                let mut answers = Vec::with_capacity(qa.answers.len());
                for a in qa.answers {
                    let end = a.answer_start + a.text.chars().count();
                    let found = char_slice(&para.context, a.answer_start, end);
                    if found != a.text {
                        return Err(Error::Validation(format!(
                            "question {}: answer {:?} does not match context at {} (found {:?})",
                            qa.id, a.text, a.answer_start, found
                        )));
                    }
                    answers.push(CharAnswer {
                        text: a.text,
                        char_start: a.answer_start,
                    });
                }
                out.push(QaExample {
                    id: qa.id,
                    question: qa.question,
                    context: para.context.clone(),
                    answers,
                    clusters: clusters.clone(),
                    coref_dependent: qa.coref_dependent,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, file: &SquadFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"version": "1.1", "data": [{"title": "t", "paragraphs": [
        {"context": "Anna met Bea. She smiled.",
         "clusters": [[[0, 0], [4, 4]]],
         "qas": [{"id": "q1", "question": "Who smiled?",
                  "answers": [{"text": "Anna", "answer_start": 0}],
                  "coref_dependent": true}]}]}]}"#;

    #[test]
    fn parses_clusters_and_flags() {
        let ex = parse_dataset(GOOD).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].coref_dependent, Some(true));
        let c = ex[0].clusters.as_ref().unwrap();
        assert_eq!(c.clusters[0][1].text.as_deref(), Some("She"));
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset(r#"{"data": []}"#).unwrap().is_empty());
    }

    #[test]
    fn mismatched_offset_names_the_question() {
        let bad = GOOD.replace("\"answer_start\": 0", "\"answer_start\": 1");
        match parse_dataset(&bad) {
            Err(Error::Validation(msg)) => assert!(msg.contains("q1")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dup = GOOD.replace(
            r#""coref_dependent": true}]"#,
            r#""coref_dependent": true}, {"id": "q1", "question": "x", "answers": []}]"#,
        );
        assert!(parse_dataset(&dup).is_err());
    }

    #[test]
    fn non_ascii_offsets_are_characters() {
        let json = r#"{"data": [{"paragraphs": [{"context": "Zoë met Ana.",
            "qas": [{"id": "a", "question": "Who?", "answers": [{"text": "Ana", "answer_start": 8}]}]}]}]}"#;
        assert_eq!(parse_dataset(json).unwrap()[0].answers[0].char_start, 8);
    }
}
