//! Span and answer-count heads, the multi-answer loss, and span decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Var, MASKED_LOGIT};

#[derive(Clone, Debug)]
pub struct SpanHeadParams {
    pub w_start: ParamId,
    pub b_start: ParamId,
    pub w_end: ParamId,
    pub b_end: ParamId,
}

impl SpanHeadParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_start: store.uniform(format!("{prefix}.w_start"), &[width, 1], rng)?,
            b_start: store.zeros(format!("{prefix}.b_start"), &[1])?,
            w_end: store.uniform(format!("{prefix}.w_end"), &[width, 1], rng)?,
            b_end: store.zeros(format!("{prefix}.b_end"), &[1])?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CountHeadParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_max: usize,
}

impl CountHeadParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        n_max: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(Self {
            weight: store.uniform(format!("{prefix}.w"), &[width, n_max], rng)?,
            bias: store.zeros(format!("{prefix}.b"), &[n_max])?,
            n_max,
        })
    }
}

/// Start and end logits (length `k` each). Positions with `masked[i]` set
/// are pinned to [`MASKED_LOGIT`] and receive no gradient.
pub fn span_logits(
    tape: &mut Tape,
    bound: &Bound,
    p: &SpanHeadParams,
    e: Var,
    masked: &[bool],
) -> Result<(Var, Var)> {
    let k = tape.shape(e)[0];
    if masked.len() != k {
        return Err(Error::shape(
            "span_logits mask",
            tape.shape(e),
            &[masked.len()],
        ));
    }
    let mut out = [None, None];
    for (slot, (w, b)) in out
        .iter_mut()
        .zip([(p.w_start, p.b_start), (p.w_end, p.b_end)])
    {
        let col = tape.linear(e, bound.var(w), bound.var(b))?;
        let flat = tape.reshape(col, &[k])?;
        *slot = Some(tape.mask_fill(flat, masked)?);
    }
    Ok((out[0].unwrap(), out[1].unwrap()))
}

/// Mean-pooled representation mapped to `n_max` logits; class `c` means `c + 1` answers.
pub fn answer_count_logits(
    tape: &mut Tape,
    bound: &Bound,
    p: &CountHeadParams,
    e: Var,
) -> Result<Var> {
    let pooled = tape.mean_rows(e)?;
    let logits = tape.linear(pooled, bound.var(p.weight), bound.var(p.bias))?;
    tape.reshape(logits, &[p.n_max])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswerSet {
    pub answers: Vec<GoldSpan>,
}

impl GoldAnswerSet {
    pub fn new(answers: Vec<GoldSpan>) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::Validation("gold answer set is empty".into()));
        }
        Ok(Self { answers })
    }

    pub fn count(&self) -> usize {
        self.answers.len()
    }
}

/// `(Σ CE(start, s_i) + Σ CE(end, e_i) + CE(count, n - 1)) / (2n + 1)`.
pub fn qa_loss(
    tape: &mut Tape,
    start_logits: Var,
    end_logits: Var,
    count_logits: Var,
    gold: &GoldAnswerSet,
) -> Result<Var> {
    let k = tape.value(start_logits).numel();
    let n_max = tape.value(count_logits).numel();
    let n = gold.count();
    if n == 0 || n > n_max {
        return Err(Error::Validation(format!(
            "gold answer count {n} outside 1..={n_max}"
        )));
    }
    let mut terms = Vec::with_capacity(2 * n + 1);
    for a in &gold.answers {
        if a.start > a.end || a.end >= k {
            return Err(Error::Validation(format!(
                "gold span {}..={} outside {k} positions",
                a.start, a.end
            )));
        }
        terms.push(tape.cross_entropy(start_logits, a.start)?);
        terms.push(tape.cross_entropy(end_logits, a.end)?);
    }
    terms.push(tape.cross_entropy(count_logits, n - 1)?);
    let rows = terms
        .iter()
        .map(|&t| tape.reshape(t, &[1, 1]))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&rows)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, 1.0 / (2 * n + 1) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    /// Non-overlapping spans in position order.
    pub spans: Vec<ScoredSpan>,
    pub predicted_count: usize,
}

fn is_legal(x: f64) -> bool {
    x > MASKED_LOGIT / 2.0
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Picks `argmax(count) + 1` pairwise non-overlapping spans maximizing the
/// total of `start_logit + end_logit`, each of length at most `max_span_len`
/// and covering only unmasked positions.
///
/// Uses a right-to-left dynamic program over positions, which is exact. The
/// count is capped at the number of unmasked positions; with none at all the
/// best single token is returned.
pub fn decode_spans(
    start: &[f64],
    end: &[f64],
    count_logits: &[f64],
    max_span_len: usize,
) -> SpanPrediction {
    let k = start.len().min(end.len());
    let legal: Vec<bool> = (0..k)
        .map(|i| is_legal(start[i]) && is_legal(end[i]))
        .collect();
    let legal_count = legal.iter().filter(|&&l| l).count();
    let wanted = if count_logits.is_empty() {
        1
    } else {
        argmax(count_logits) + 1
    };
    let count = wanted.min(legal_count);
    if count == 0 || max_span_len == 0 {
        let best = (0..k)
            .max_by(|&a, &b| {
                (start[a] + end[a])
                    .total_cmp(&(start[b] + end[b]))
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        return SpanPrediction {
            spans: if k == 0 {
                vec![]
            } else {
                vec![ScoredSpan {
                    start: best,
                    end: best,
                    score: start[best] + end[best],
                }]
            },
            predicted_count: k.min(1),
        };
    }

    // best[i][c]: max total using `c` spans within positions i..k.
    const NONE: f64 = f64::NEG_INFINITY;
    let mut best = vec![vec![NONE; count + 1]; k + 1];
    let mut choice: Vec<Vec<Option<usize>>> = vec![vec![None; count + 1]; k + 1];
    for row in best.iter_mut() {
        row[0] = 0.0;
    }
    for i in (0..k).rev() {
        for c in 1..=count {
            let mut val = best[i + 1][c];
            let mut pick = None;
            if legal[i] {
                let mut e = i;
                while e < k && legal[e] && e - i < max_span_len {
                    let rest = best[e + 1][c - 1];
                    if rest > NONE {
                        let cand = start[i] + end[e] + rest;
                        if cand > val {
                            val = cand;
                            pick = Some(e);
                        }
                    }
                    e += 1;
                }
            }
            best[i][c] = val;
            choice[i][c] = pick;
        }
    }

    let mut spans = Vec::with_capacity(count);
    let (mut i, mut c) = (0, count);
    while c > 0 && i < k {
        match choice[i][c] {
            Some(e) => {
                spans.push(ScoredSpan {
                    start: i,
                    end: e,
                    score: start[i] + end[e],
                });
                i = e + 1;
                c -= 1;
            }
            None => i += 1,
        }
    }
    SpanPrediction {
        predicted_count: spans.len(),
        spans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn loss_of(start: &[f64], end: &[f64], count: &[f64], gold: &GoldAnswerSet) -> f64 {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(start.to_vec()));
        let e = tape.constant(Tensor::vector(end.to_vec()));
        let c = tape.constant(Tensor::vector(count.to_vec()));
        let l = qa_loss(&mut tape, s, e, c, gold).unwrap();
        tape.value(l).item()
    }

    fn gold(spans: &[(usize, usize)]) -> GoldAnswerSet {
        GoldAnswerSet::new(
            spans
                .iter()
                .map(|&(start, end)| GoldSpan {
                    start,
                    end,
                    text: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn delta_logits_give_near_zero_loss() {
        let mut s = vec![-30.0; 6];
        let mut e = vec![-30.0; 6];
        s[2] = 30.0;
        e[3] = 30.0;
        let l = loss_of(&s, &e, &[30.0, -30.0], &gold(&[(2, 3)]));
        assert!(l < 1e-6, "{l}");
        assert!(l >= 0.0);
    }

    #[test]
    fn uniform_logits_analytic() {
        let k = 7;
        let l = loss_of(&vec![0.0; k], &vec![0.0; k], &[0.0, 0.0], &gold(&[(1, 4)]));
        let expected = (2.0 * (k as f64).ln() + 2f64.ln()) / 3.0;
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn single_class_count_head_costs_nothing() {
        let l1 = loss_of(&[0.0, 0.0], &[0.0, 0.0], &[5.0], &gold(&[(0, 1)]));
        assert!((l1 - 2.0 * 2f64.ln() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_validation() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(vec![0.0; 3]));
        let c = tape.constant(Tensor::vector(vec![0.0; 2]));
        assert!(qa_loss(&mut tape, s, s, c, &gold(&[(0, 3)])).is_err());
        assert!(qa_loss(&mut tape, s, s, c, &gold(&[(0, 0), (1, 1), (2, 2)])).is_err());
        assert!(GoldAnswerSet::new(vec![]).is_err());
    }

    #[test]
    fn decode_single_peak() {
        let s = [0.0, 5.0, 0.0, 0.0];
        let e = [0.0, 0.0, 5.0, 0.0];
        let p = decode_spans(&s, &e, &[1.0, 0.0], 4);
        assert_eq!(p.predicted_count, 1);
        assert_eq!((p.spans[0].start, p.spans[0].end), (1, 2));
    }

    #[test]
    fn decode_two_peaks_in_order() {
        let s = [0.0, 0.0, 0.0, 0.0, 0.0, 6.0, 0.0, 4.0];
        let e = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 6.0, 4.0];
        let p = decode_spans(&s, &e, &[0.0, 1.0], 3);
        let spans: Vec<_> = p.spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(5, 6), (7, 7)]);
    }

    #[test]
    fn decode_avoids_overlap() {
        // Best span (1,2); the runner-up (2,2) overlaps it; (0,0) is the best disjoint one.
        let s = [1.0, 5.0, 4.5, -3.0];
        let e = [0.5, -6.0, 5.0, -3.0];
        let p = decode_spans(&s, &e, &[0.0, 1.0], 2);
        let spans: Vec<_> = p.spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn masked_positions_never_chosen() {
        let m = MASKED_LOGIT;
        let s = [m, m, 0.1, 0.0];
        let e = [m, m, 0.0, 0.2];
        let p = decode_spans(&s, &e, &[0.0, 9.0], 4);
        assert!(p.spans.iter().all(|sp| sp.start >= 2));
        assert_eq!(p.predicted_count, 2);
        let all_masked = decode_spans(&[m, m], &[m, m], &[1.0], 3);
        assert_eq!(all_masked.spans.len(), 1);
    }

    #[test]
    fn start_shift_is_harmless() {
        let s = [0.3, -1.0, 2.0, 0.5, 0.0];
        let e = [0.0, 1.0, -0.5, 2.5, 0.1];
        let base = decode_spans(&s, &e, &[0.2, 0.1], 3);
        let shifted: Vec<f64> = s.iter().map(|x| x + 7.5).collect();
        let moved = decode_spans(&shifted, &e, &[0.2, 0.1], 3);
        let pos = |p: &SpanPrediction| p.spans.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>();
        assert_eq!(pos(&base), pos(&moved));
    }
}
