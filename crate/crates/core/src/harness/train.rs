//! Training loop, evaluation, prediction and attention dumps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ResolverChoice, RunConfig};
use super::data::{load_dataset, QaExample};
use super::metrics::{evaluate_predictions, GoldQuestion, MetricsReport};
use crate::backbone::BackboneConfig;
use crate::checkpoint::{self, Checkpoint, Manifest};
use crate::error::{Error, Result};
use crate::model::{featurize, Features, Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Adam, AdamState};
use crate::tokenize::{word_tokenize, Vocab};

/// Vocabulary over every context and question word of `examples`.
pub fn build_vocab(examples: &[QaExample], max_words: usize, max_suffixes: usize) -> Vocab {
    let words: Vec<String> = examples
        .iter()
        .flat_map(|e| {
            word_tokenize(&e.context)
                .into_iter()
                .chain(word_tokenize(&e.question))
        })
        .map(|w| w.text)
        .collect();
    Vocab::build(words.iter().map(String::as_str), max_words, max_suffixes)
}

pub fn model_config(cfg: &RunConfig, vocab: &Vocab) -> ModelConfig {
    let backbone = BackboneConfig {
        layers: cfg.layers,
        width: cfg.width,
        heads: cfg.heads,
        ff_width: cfg.ff_width,
        max_len: cfg.max_len,
        vocab_size: vocab.len(),
    };
    let mut m = ModelConfig::new(cfg.variant, backbone);
    m.coref_weight = cfg.coref_weight();
    m.n_max = cfg.n_max;
    m.gnn_width = cfg.gnn_width.unwrap_or(cfg.width);
    m.gnn_layers = cfg.gnn_layers;
    m.basis_count = cfg.basis_count;
    m.topology = cfg.topology;
    m.max_span_len = cfg.max_span_len;
    m
}

pub fn featurize_example(
    ex: &QaExample,
    vocab: &Vocab,
    max_len: usize,
    resolver: ResolverChoice,
) -> Result<Features> {
    let clusters = match resolver {
        ResolverChoice::File => ex.clusters.as_ref(),
        ResolverChoice::Rule => None,
    };
    featurize(
        &ex.id,
        &ex.question,
        &ex.context,
        &ex.answers,
        clusters,
        vocab,
        max_len,
    )
}

pub fn featurize_all(
    examples: &[QaExample],
    vocab: &Vocab,
    max_len: usize,
    resolver: ResolverChoice,
) -> Result<Vec<Features>> {
    examples
        .iter()
        .map(|e| featurize_example(e, vocab, max_len, resolver))
        .collect()
}

/// Answer strings for one featurized example.
pub fn predict_answers(model: &Model, ex: &QaExample, f: &Features) -> Result<Vec<String>> {
    let pred = model.predict(f)?;
    Ok(pred
        .spans
        .iter()
        .filter(|s| {
            f.input.context_range.contains(&s.start) && f.input.context_range.contains(&s.end)
        })
        .map(|s| f.span_text(&ex.context, s.start, s.end).to_string())
        .collect())
}

pub fn predict_all(
    model: &Model,
    examples: &[QaExample],
    features: &[Features],
) -> Result<BTreeMap<String, Vec<String>>> {
    examples
        .iter()
        .zip(features)
        .map(|(ex, f)| Ok((ex.id.clone(), predict_answers(model, ex, f)?)))
        .collect()
}

pub fn gold_questions(examples: &[QaExample]) -> Vec<GoldQuestion> {
    examples
        .iter()
        .map(|e| GoldQuestion {
            id: e.id.clone(),
            answers: e.answer_texts(),
            coref_dependent: e.coref_dependent,
        })
        .collect()
}

pub fn evaluate_features(
    model: &Model,
    examples: &[QaExample],
    features: &[Features],
) -> Result<MetricsReport> {
    let preds = predict_all(model, examples, features)?;
    evaluate_predictions(&preds, &gold_questions(examples))
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    examples: &[QaExample],
    resolver: ResolverChoice,
) -> Result<MetricsReport> {
    let features = featurize_all(
        examples,
        &ck.vocab,
        ck.model.config.backbone.max_len,
        resolver,
    )?;
    evaluate_features(&ck.model, examples, &features)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<MetricsReport>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: Model,
    pub vocab: Vocab,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev: Option<MetricsReport>,
    pub manifest: Manifest,
    /// Training questions dropped because no gold span survived packing or
    /// they had more answers than `n_max`.
    pub skipped: usize,
}

fn better(a: &MetricsReport, b: &MetricsReport) -> bool {
    a.f1 > b.f1 || (a.f1 == b.f1 && a.em > b.em)
}

/// Trains from the dataset paths in `cfg`, then writes the checkpoint and log
/// when their paths are set.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let train_path = cfg
        .train_path
        .as_ref()
        .ok_or_else(|| Error::Config("train_path is required".into()))?;
    let train_set = load_dataset(train_path)?;
    let dev_set = match &cfg.dev_path {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    let outcome = train_on(cfg, &train_set, &dev_set)?;
    if let Some(path) = &cfg.checkpoint_path {
        checkpoint::save(
            path,
            &outcome.model,
            &outcome.vocab,
            outcome.manifest.training.clone(),
        )?;
    }
    if let Some(path) = &cfg.log_path {
        let mut f = fs::File::create(path)?;
        for entry in &outcome.log {
            writeln!(f, "{}", serde_json::to_string(entry)?)?;
        }
    }
    Ok(outcome)
}

/// Seeded minibatch Adam. Gradients are summed in example order within a
/// batch and averaged; the epoch with the best dev F1 (ties on EM) is kept,
/// or the last epoch when there is no dev set.
pub fn train_on(
    cfg: &RunConfig,
    train_set: &[QaExample],
    dev_set: &[QaExample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = build_vocab(train_set, cfg.vocab_words, cfg.vocab_suffixes);
    let mut model = Model::new(model_config(cfg, &vocab), cfg.seed)?;
    let max_len = cfg.max_len;
    let train_features = featurize_all(train_set, &vocab, max_len, cfg.resolver)?;
    let dev_features = featurize_all(dev_set, &vocab, max_len, cfg.resolver)?;
    let usable: Vec<usize> = train_features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.gold.as_ref().is_some_and(|g| g.count() <= cfg.n_max))
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::Validation(
            "no training question has a usable gold span".into(),
        ));
    }
    let skipped = train_features.len() - usable.len();

    let adam = Adam::new(cfg.lr);
    let mut states: Vec<AdamState> = model
        .store
        .iter()
        .map(|(_, t)| AdamState::for_tensor(t))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order = usable;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<MetricsReport>, ParamStore)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = model
                .store
                .iter()
                .map(|(_, t)| vec![0.0; t.numel()])
                .collect();
            for &i in batch {
                let f = &train_features[i];
                let (loss, grads) = model.loss_and_grads(f)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        value: loss,
                        epoch,
                        step,
                        example_id: f.id.clone(),
                    });
                }
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((t, g), s) in model
                .store
                .tensors_mut()
                .iter_mut()
                .zip(&mut acc)
                .zip(&mut states)
            {
                g.iter_mut().for_each(|x| *x *= scale);
                adam.step(t, g, s)?;
            }
            step += 1;
        }
        let dev = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate_features(&model, dev_set, &dev_features)?)
        };
        let improved = match (&best, &dev) {
            (None, _) => true,
            (Some((_, Some(b), _)), Some(d)) => better(d, b),
            (Some(_), None) => true,
            (Some((_, None, _)), Some(_)) => true,
        };
        if improved {
            best = Some((epoch, dev.clone(), model.store.clone()));
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            dev,
        });
    }

    let (best_epoch, best_dev) = match best {
        Some((e, d, store)) => {
            model.store = store;
            (e, d)
        }
        None => (0, None),
    };
    let training = serde_json::json!({
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "best_epoch": best_epoch,
        "best_dev": best_dev,
    });
    let manifest = checkpoint::manifest(&model, &vocab, training);
    Ok(TrainOutcome {
        model,
        vocab,
        log,
        best_epoch,
        best_dev,
        manifest,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub question_id: String,
    pub layer: String,
    pub tokens: Vec<String>,
    /// `heads[h][i][j]`: attention of token `i` to token `j` in head `h`.
    pub heads: Vec<Vec<Vec<f64>>>,
    pub average: Vec<Vec<f64>>,
}

pub fn dump_attention(
    model: &Model,
    vocab: &Vocab,
    ex: &QaExample,
    resolver: ResolverChoice,
) -> Result<AttentionDump> {
    let f = featurize_example(ex, vocab, model.config.backbone.max_len, resolver)?;
    let (layer, maps) = model.attention_maps(&f)?;
    let k = f.input.len();
    let heads: Vec<Vec<Vec<f64>>> = maps
        .iter()
        .map(|m| (0..k).map(|i| m.row(i).to_vec()).collect())
        .collect();
    let h = heads.len().max(1) as f64;
    let average = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| heads.iter().map(|m| m[i][j]).sum::<f64>() / h)
                .collect()
        })
        .collect();
    let tokens = f
        .input
        .ids
        .iter()
        .map(|&id| vocab.piece(id).unwrap_or("[UNK]").to_string())
        .collect();
    Ok(AttentionDump {
        question_id: ex.id.clone(),
        layer,
        tokens,
        heads,
        average,
    })
}
