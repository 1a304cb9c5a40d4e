//! Exact match and token F1 after SQuAD answer normalization, with a
//! one-to-one alignment for questions that have several gold answers.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, drop punctuation, drop the articles `a`/`an`/`the`, and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Token-level F1 over the bag of normalized tokens.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt == gt { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores a predicted answer set against a gold set.
///
/// Pairs are matched greedily by F1 (each prediction and gold used at most
/// once) and the matched scores are averaged over the predictions, so an
/// unmatched extra prediction scores zero. A single prediction therefore gets
/// the usual max-over-golds score.
pub fn question_scores(preds: &[String], golds: &[String]) -> (f64, f64) {
    if preds.is_empty() || golds.is_empty() {
        return if preds.is_empty() && golds.is_empty() {
            (1.0, 1.0)
        } else {
            (0.0, 0.0)
        };
    }
    let mut pairs = Vec::with_capacity(preds.len() * golds.len());
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in golds.iter().enumerate() {
            pairs.push((token_f1(p, g), exact_match(p, g), i, j));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; golds.len()];
    let (mut em, mut f1) = (0.0, 0.0);
    for (f, e, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            em += e;
            f1 += f;
        }
    }
    let denom = preds.len() as f64;
    (em / denom, f1 / denom)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percentages in `[0, 100]`.
    pub em: f64,
    pub f1: f64,
    pub n_questions: usize,
    /// `coref_dependent` and `control` when the gold data carries the flag.
    pub splits: BTreeMap<String, SplitScores>,
}

/// Gold answers for one question, with its optional split flag.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldQuestion {
    pub id: String,
    pub answers: Vec<String>,
    pub coref_dependent: Option<bool>,
}

/// Averages per-question scores over all gold questions. A gold question
/// without a prediction scores zero; a prediction for an unknown id is an error.
pub fn evaluate_predictions(
    predictions: &BTreeMap<String, Vec<String>>,
    golds: &[GoldQuestion],
) -> Result<MetricsReport> {
    let known: HashMap<&str, ()> = golds.iter().map(|g| (g.id.as_str(), ())).collect();
    if let Some(id) = predictions
        .keys()
        .find(|id| !known.contains_key(id.as_str()))
    {
        return Err(Error::UnknownQuestion(id.clone()));
    }
    let mut total = SplitScores::default();
    let mut splits: BTreeMap<String, SplitScores> = BTreeMap::new();
    for g in golds {
        let preds = predictions.get(&g.id).map(Vec::as_slice).unwrap_or(&[]);
        let (em, f1) = question_scores(preds, &g.answers);
        for s in std::iter::once(&mut total).chain(g.coref_dependent.map(|dep| {
            let key = if dep { "coref_dependent" } else { "control" };
            splits.entry(key.to_string()).or_default()
        })) {
            s.em += em;
            s.f1 += f1;
            s.n += 1;
        }
    }
    let finish = |s: SplitScores| {
        let n = s.n.max(1) as f64;
        SplitScores {
            em: 100.0 * s.em / n,
            f1: 100.0 * s.f1 / n,
            n: s.n,
        }
    };
    let total = finish(total);
    Ok(MetricsReport {
        em: total.em,
        f1: total.f1,
        n_questions: total.n,
        splits: splits.into_iter().map(|(k, v)| (k, finish(v))).collect(),
    })
}
