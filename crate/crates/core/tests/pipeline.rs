mod common;

use std::collections::BTreeMap;

use corefmrc::harness::data::{flatten, parse_dataset};
use corefmrc::harness::metrics::evaluate_predictions;
use corefmrc::harness::synthetic::{generate_synthetic, SyntheticConfig};
use corefmrc::harness::train::{build_vocab, featurize_all, gold_questions, predict_all};
use corefmrc::harness::{train, train_on, ResolverChoice, RunConfig};
use corefmrc::model::{Model, ModelConfig, Variant};
use corefmrc::tensor::{Adam, AdamState};
use corefmrc::{checkpoint, Error};

const TWO_QUESTIONS: &str = r#"{"data": [{"title": "t", "paragraphs": [{
    "context": "Anna met Bea at the park. Later she called Cleo. Anna and Bea went home.",
    "clusters": [[[0, 0], [8, 8]]],
    "qas": [
      {"id": "a", "question": "Who called Cleo?", "answers": [{"text": "Anna", "answer_start": 0}], "coref_dependent": true},
      {"id": "b", "question": "Who went home?", "answers": [{"text": "Anna", "answer_start": 49}, {"text": "Bea", "answer_start": 58}], "coref_dependent": false}
    ]}]}]}"#;

#[test]
fn one_paragraph_two_questions_share_context() {
    let ex = parse_dataset(TWO_QUESTIONS).unwrap();
    assert_eq!(ex.len(), 2);
    assert_eq!(ex[0].context, ex[1].context);
    assert_eq!(ex[1].answers.len(), 2);
}

#[test]
fn repeated_example_loss_goes_to_zero() {
    let ex = parse_dataset(TWO_QUESTIONS).unwrap();
    let vocab = build_vocab(&ex, 100, 10);
    for (variant, idx) in [(Variant::AddAtt, 0), (Variant::Gnn, 1)] {
        let mut model = common::tiny_model(variant, vocab.len(), 1);
        let f = &featurize_all(&ex, &vocab, 64, ResolverChoice::File).unwrap()[idx];
        let first = model.loss(f).unwrap();
        let adam = Adam::new(0.02);
        let mut states: Vec<AdamState> = model
            .store
            .iter()
            .map(|(_, t)| AdamState::for_tensor(t))
            .collect();
        for _ in 0..200 {
            let (_, grads) = model.loss_and_grads(f).unwrap();
            for ((t, g), s) in model
                .store
                .tensors_mut()
                .iter_mut()
                .zip(&grads)
                .zip(&mut states)
            {
                adam.step(t, g, s).unwrap();
            }
        }
        // Two gold spans share one start and one end softmax, so each of those
        // four terms is at least ln 2.
        let floor = if f.gold.as_ref().unwrap().answers.len() == 2 {
            4.0 * 2f64.ln() / 5.0
        } else {
            0.0
        };
        let last = model.loss(f).unwrap();
        assert!(
            last - floor < 0.05 && last < first,
            "{variant}: {first} -> {last}, floor {floor}"
        );
    }
}

#[test]
fn always_empty_predictor_scores_zero() {
    let ex = flatten(generate_synthetic(&SyntheticConfig::new(3, 30))).unwrap();
    let preds: BTreeMap<String, Vec<String>> = ex
        .iter()
        .map(|e| (e.id.clone(), vec![String::new()]))
        .collect();
    let r = evaluate_predictions(&preds, &gold_questions(&ex)).unwrap();
    assert_eq!((r.em, r.f1), (0.0, 0.0));
}

#[test]
fn overall_is_weighted_mean_of_splits() {
    let data = flatten(generate_synthetic(&SyntheticConfig::new(8, 40))).unwrap();
    let cfg = RunConfig {
        variant: Variant::MultAtt,
        epochs: 2,
        width: 8,
        ff_width: 8,
        ..RunConfig::synthetic()
    };
    let out = train_on(&cfg, &data, &data).unwrap();
    let r = out.best_dev.unwrap();
    let (dep, ctl) = (&r.splits["coref_dependent"], &r.splits["control"]);
    assert_eq!(dep.n + ctl.n, r.n_questions);
    let weighted = (dep.em * dep.n as f64 + ctl.em * ctl.n as f64) / r.n_questions as f64;
    assert!((weighted - r.em).abs() < 1e-9);
}

#[test]
fn same_seed_same_metrics_different_seed_different_weights() {
    let data = flatten(generate_synthetic(&SyntheticConfig::new(6, 30))).unwrap();
    let cfg = |seed| RunConfig {
        variant: Variant::Gnn,
        seed,
        epochs: 2,
        width: 8,
        ff_width: 8,
        ..RunConfig::synthetic()
    };
    let a = train_on(&cfg(1), &data, &data).unwrap();
    let b = train_on(&cfg(1), &data, &data).unwrap();
    let c = train_on(&cfg(2), &data, &data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.manifest.payload_sha256, b.manifest.payload_sha256);
    assert_ne!(a.manifest.payload_sha256, c.manifest.payload_sha256);
}

#[test]
fn config_driven_run_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let file = generate_synthetic(&SyntheticConfig::new(2, 10));
    corefmrc::harness::data::write_dataset(dir.path().join("d.json"), &file).unwrap();
    let cfg_text = "profile = synthetic\nepochs = 1\nwidth = 8\nff_width = 8\n\
                    train_path = d.json\ndev_path = d.json\ncheckpoint_path = m.ckpt\nlog_path = log.jsonl\n";
    std::fs::write(dir.path().join("run.cfg"), cfg_text).unwrap();
    let cfg = RunConfig::load(dir.path().join("run.cfg")).unwrap();
    let out = train(&cfg).unwrap();
    let ck = checkpoint::load(dir.path().join("m.ckpt")).unwrap();
    assert_eq!(ck.manifest, out.manifest);
    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn missing_parameters_are_a_checkpoint_error() {
    let data = flatten(generate_synthetic(&SyntheticConfig::new(2, 5))).unwrap();
    let vocab = build_vocab(&data, 100, 10);
    let model = common::tiny_model(Variant::Gnn, vocab.len(), 0);
    let mut manifest = checkpoint::manifest(&model, &vocab, serde_json::Value::Null);
    manifest.tensors.pop();
    let header = manifest.to_json().unwrap();
    let good = checkpoint::to_bytes(&model, &vocab, serde_json::Value::Null).unwrap();
    let old_len = u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
    let mut bytes = good[..8].to_vec();
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(&good[16 + old_len..]);
    assert!(matches!(
        checkpoint::from_bytes(&bytes),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn third_answer_is_out_of_reach_with_two_count_classes() {
    // With two count classes a three-answer question cannot be trained on and
    // never gets more than two predicted answers.
    let json = r#"{"data": [{"paragraphs": [{
        "context": "Anna, Bea and Cleo went home.",
        "qas": [{"id": "t", "question": "Who went home?", "answers": [
            {"text": "Anna", "answer_start": 0}, {"text": "Bea", "answer_start": 6}, {"text": "Cleo", "answer_start": 14}]}]}]}]}"#;
    let ex = parse_dataset(json).unwrap();
    let vocab = build_vocab(&ex, 100, 10);
    let model = Model::new(
        ModelConfig::new(
            Variant::Baseline,
            common::tiny_model(Variant::Baseline, vocab.len(), 0)
                .config
                .backbone,
        ),
        0,
    )
    .unwrap();
    let features = featurize_all(&ex, &vocab, 64, ResolverChoice::Rule).unwrap();
    assert!(model.loss(&features[0]).is_err());
    let preds = predict_all(&model, &ex, &features).unwrap();
    assert!(preds["t"].len() <= 2);
    let cfg = RunConfig {
        epochs: 1,
        width: 8,
        ff_width: 8,
        ..RunConfig::synthetic()
    };
    assert!(matches!(
        train_on(&cfg, &ex, &[]),
        Err(Error::Validation(_))
    ));
}
