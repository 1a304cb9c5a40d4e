//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the code it is used to check.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use corefmrc::backbone::BackboneConfig;
use corefmrc::model::{Model, ModelConfig, Variant};
use corefmrc::rgcn::{CorefGraph, Relation};
use corefmrc::tensor::MASKED_LOGIT;
use corefmrc::Tensor;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Like [`random_tensor`] but with every entry at least 0.1 away from zero,
/// so ReLU kinks stay outside the finite-difference stencil.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in &mut t.data {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

pub fn matmul_naive(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    assert_eq!(b.shape[0], k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data[i * k + p] * b.data[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

pub fn softmax_naive(row: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// One RGCN layer computed node by node straight from the edge list:
/// `relu(h_i W0 + Σ_r Σ_{j→i} h_j W_r / c_{i,r})`, `W_r = Σ_b a_rb V_b`.
pub fn rgcn_oracle(
    graph: &CorefGraph,
    h: &Tensor,
    w_self: &Tensor,
    bases: &[Tensor],
    coeffs: &Tensor,
) -> Tensor {
    let n = graph.node_count;
    let din = h.shape[1];
    let dout = w_self.shape[1];
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        let mut acc = vec![0.0; dout];
        for p in 0..din {
            for o in 0..dout {
                acc[o] += h.data[i * din + p] * w_self.data[p * dout + o];
            }
        }
        for (r, relation) in [Relation::Coreference, Relation::Global]
            .into_iter()
            .enumerate()
        {
            let sources: Vec<usize> = graph
                .edges
                .iter()
                .filter(|e| e.dst == i && e.relation == relation)
                .map(|e| e.src)
                .collect();
            if sources.is_empty() {
                continue;
            }
            let c = sources.len() as f64;
            for &j in &sources {
                for p in 0..din {
                    for o in 0..dout {
                        let mut w = 0.0;
                        for (b, basis) in bases.iter().enumerate() {
                            w += coeffs.data[r * bases.len() + b] * basis.data[p * dout + o];
                        }
                        acc[o] += h.data[j * din + p] * w / c;
                    }
                }
            }
        }
        for o in 0..dout {
            out[i * dout + o] = acc[o].max(0.0);
        }
    }
    Tensor::new(vec![n, dout], out).unwrap()
}

/// Best total score and span set over every legal set of exactly `count`
/// pairwise disjoint spans, found by plain recursion.
pub fn decode_exhaustive(
    start: &[f64],
    end: &[f64],
    count: usize,
    max_span_len: usize,
) -> Option<(f64, Vec<(usize, usize)>)> {
    let k = start.len();
    let legal = |i: usize| start[i] > MASKED_LOGIT / 2.0 && end[i] > MASKED_LOGIT / 2.0;
    let mut spans = Vec::new();
    for s in 0..k {
        for e in s..k.min(s + max_span_len) {
            if (s..=e).all(legal) {
                spans.push((s, e));
            }
        }
    }
    fn go(
        spans: &[(usize, usize)],
        from: usize,
        after: usize,
        left: usize,
        start: &[f64],
        end: &[f64],
        chosen: &mut Vec<(usize, usize)>,
        best: &mut Option<(f64, Vec<(usize, usize)>)>,
    ) {
        if left == 0 {
            let score: f64 = chosen.iter().map(|&(s, e)| start[s] + end[e]).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                *best = Some((score, chosen.clone()));
            }
            return;
        }
        for idx in from..spans.len() {
            let (s, e) = spans[idx];
            if s >= after {
                chosen.push((s, e));
                go(spans, idx + 1, e + 1, left - 1, start, end, chosen, best);
                chosen.pop();
            }
        }
    }
    let mut best = None;
    go(&spans, 0, 0, count, start, end, &mut Vec::new(), &mut best);
    best
}

/// Hand-computed metric cases: (predictions, golds, EM, F1).
pub fn metric_table() -> Vec<(Vec<&'static str>, Vec<&'static str>, f64, f64)> {
    vec![
        (vec!["Frankie Bono"], vec!["Frankie Bono"], 1.0, 1.0),
        // precision 1, recall 1/2: 2·0.5/1.5
        (vec!["Frankie"], vec!["Frankie Bono"], 0.0, 2.0 / 3.0),
        (vec!["the Frankie"], vec!["Frankie"], 1.0, 1.0),
        (vec!["FRANKIE, bono!"], vec!["Frankie Bono"], 1.0, 1.0),
        (vec![""], vec!["Frankie"], 0.0, 0.0),
        (vec!["his employers"], vec!["employers"], 0.0, 2.0 / 3.0),
        // precision 1/2, recall 1/3: 2·(1/6)/(5/6)
        (vec!["Bono said"], vec!["Frankie Bono himself"], 0.0, 0.4),
        (vec!["Anna"], vec!["Bea", "Anna"], 1.0, 1.0),
        (vec!["Anna", "Bea"], vec!["Bea", "Anna"], 1.0, 1.0),
        // matched Anna, unmatched extra prediction
        (vec!["Anna", "Cleo"], vec!["Anna"], 0.5, 0.5),
        (vec!["a cat sat"], vec!["the  cat   sat."], 1.0, 1.0),
    ]
}

pub fn tiny_model(variant: Variant, vocab_size: usize, seed: u64) -> Model {
    let backbone = BackboneConfig {
        layers: 1,
        width: 4,
        heads: 2,
        ff_width: 6,
        max_len: 64,
        vocab_size,
    };
    let mut cfg = ModelConfig::new(variant, backbone);
    cfg.gnn_width = 3;
    Model::new(cfg, seed).unwrap()
}

/// The running example sentence and its two clusters, as a cluster file.
pub const FIGURE_SENTENCE: &str =
    "Losing his nerve, Frankie calls up his employers to tell them he wants to quit the job.";

pub const FIGURE_CLUSTERS: &str = r#"{"clusters": [
  [{"start_word": 1, "end_word": 1, "text": "his"},
   {"start_word": 4, "end_word": 4, "text": "Frankie"},
   {"start_word": 7, "end_word": 7, "text": "his"},
   {"start_word": 12, "end_word": 12, "text": "he"}],
  [{"start_word": 7, "end_word": 8, "text": "his employers"},
   {"start_word": 11, "end_word": 11, "text": "them"}]
]}"#;
