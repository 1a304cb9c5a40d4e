//! Multi-head attention with a coreference bias on the pre-softmax scores,
//! and the post-norm encoder layer built around it.
//!
//! Additive mode computes `softmax(QKᵀ/√d_k + M)V`; multiplicative mode
//! computes `softmax((QKᵀ/√d_k) ⊙ M)V`. In multiplicative mode a weight above 1
//! scales a negative logit further down, so it can lower attention to a
//! same-cluster token; that is the formula as written and is kept.

use rand::Rng;

use crate::bias::{BiasMode, CorefBiasMatrix};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub width: usize,
    pub head_width: usize,
}

impl EncoderLayerParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        head_count: usize,
        ff_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if head_count == 0 || !width.is_multiple_of(head_count) {
            return Err(Error::Config(format!(
                "width {width} is not divisible by head count {head_count}"
            )));
        }
        let dk = width / head_count;
        let mut heads = Vec::with_capacity(head_count);
        for h in 0..head_count {
            heads.push(HeadParams {
                wq: store.uniform(format!("{prefix}.head{h}.wq"), &[width, dk], rng)?,
                bq: store.zeros(format!("{prefix}.head{h}.bq"), &[dk])?,
                wk: store.uniform(format!("{prefix}.head{h}.wk"), &[width, dk], rng)?,
                bk: store.zeros(format!("{prefix}.head{h}.bk"), &[dk])?,
                wv: store.uniform(format!("{prefix}.head{h}.wv"), &[width, dk], rng)?,
                bv: store.zeros(format!("{prefix}.head{h}.bv"), &[dk])?,
            });
        }
        Ok(Self {
            heads,
            wo: store.uniform(format!("{prefix}.wo"), &[width, width], rng)?,
            bo: store.zeros(format!("{prefix}.bo"), &[width])?,
            ln1_gamma: store.ones(format!("{prefix}.ln1.gamma"), &[width])?,
            ln1_beta: store.zeros(format!("{prefix}.ln1.beta"), &[width])?,
            ff_w1: store.uniform(format!("{prefix}.ff.w1"), &[width, ff_width], rng)?,
            ff_b1: store.zeros(format!("{prefix}.ff.b1"), &[ff_width])?,
            ff_w2: store.uniform(format!("{prefix}.ff.w2"), &[ff_width, width], rng)?,
            ff_b2: store.zeros(format!("{prefix}.ff.b2"), &[width])?,
            ln2_gamma: store.ones(format!("{prefix}.ln2.gamma"), &[width])?,
            ln2_beta: store.zeros(format!("{prefix}.ln2.beta"), &[width])?,
            width,
            head_width: dk,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }
}

/// A bias matrix recorded on the tape once and shared by every head.
#[derive(Clone, Copy, Debug)]
pub struct BiasVar {
    pub mode: BiasMode,
    pub var: Var,
}

impl BiasVar {
    pub fn record(tape: &mut Tape, m: &CorefBiasMatrix) -> Self {
        Self {
            mode: m.mode,
            var: tape.constant(m.values.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic `k×k` attention weights.
    pub weights: Var,
}

/// Scaled dot-product attention over `k` tokens with an optional coreference bias.
pub fn coref_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<BiasVar>,
) -> Result<AttentionOutput> {
    let dk = *tape
        .shape(q)
        .get(1)
        .ok_or_else(|| Error::shape("coref_attention", tape.shape(q), &[]))?;
    if tape.shape(k) != tape.shape(q) || tape.shape(v)[0] != tape.shape(q)[0] {
        return Err(Error::shape(
            "coref_attention",
            tape.shape(q),
            tape.shape(k),
        ));
    }
    let raw = tape.matmul_bt(q, k)?;
    let mut scores = tape.scale(raw, 1.0 / (dk as f64).sqrt());
    if let Some(b) = bias {
        let n = tape.shape(q)[0];
        if tape.shape(b.var) != [n, n] {
            return Err(Error::shape(
                "coref_attention bias",
                tape.shape(b.var),
                &[n, n],
            ));
        }
        scores = match b.mode {
            BiasMode::Additive => tape.add(scores, b.var)?,
            BiasMode::Multiplicative => tape.hadamard(scores, b.var)?,
        };
    }
    let weights = tape.softmax_rows(scores)?;
    let output = tape.matmul(weights, v)?;
    Ok(AttentionOutput { output, weights })
}

#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub output: Var,
    /// Attention weights, one `k×k` matrix per head.
    pub head_weights: Vec<Var>,
}

/// Post-norm transformer encoder layer; every head sees the same bias.
/// Passing `None` gives the plain (vanilla) layer.
pub fn coref_encoder_layer(
    tape: &mut Tape,
    bound: &Bound,
    p: &EncoderLayerParams,
    h: Var,
    bias: Option<&CorefBiasMatrix>,
) -> Result<LayerOutput> {
    let shape = tape.shape(h).to_vec();
    if shape.len() != 2 || shape[1] != p.width {
        return Err(Error::shape("coref_encoder_layer", &shape, &[p.width]));
    }
    let bias = bias.map(|m| BiasVar::record(tape, m));
    let mut outputs = Vec::with_capacity(p.heads.len());
    let mut head_weights = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let q = tape.linear(h, bound.var(head.wq), bound.var(head.bq))?;
        let k = tape.linear(h, bound.var(head.wk), bound.var(head.bk))?;
        let v = tape.linear(h, bound.var(head.wv), bound.var(head.bv))?;
        let att = coref_attention(tape, q, k, v, bias)?;
        outputs.push(att.output);
        head_weights.push(att.weights);
    }
    let merged = tape.concat_cols(&outputs)?;
    let projected = tape.linear(merged, bound.var(p.wo), bound.var(p.bo))?;
    let res1 = tape.add(h, projected)?;
    let x = tape.layer_norm(res1, bound.var(p.ln1_gamma), bound.var(p.ln1_beta))?;
    let hidden = tape.linear(x, bound.var(p.ff_w1), bound.var(p.ff_b1))?;
    let hidden = tape.relu(hidden);
    let ff = tape.linear(hidden, bound.var(p.ff_w2), bound.var(p.ff_b2))?;
    let res2 = tape.add(x, ff)?;
    let output = tape.layer_norm(res2, bound.var(p.ln2_gamma), bound.var(p.ln2_beta))?;
    Ok(LayerOutput {
        output,
        head_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::{build_bias_matrix, CorefArray};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let mut t = Tensor::zeros(&[r, c]);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    fn attend(q: &Tensor, k: &Tensor, v: &Tensor, m: Option<&CorefBiasMatrix>) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let (qv, kv, vv) = (
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
        );
        let b = m.map(|m| BiasVar::record(&mut tape, m));
        let out = coref_attention(&mut tape, qv, kv, vv, b).unwrap();
        (
            tape.value(out.output).clone(),
            tape.value(out.weights).clone(),
        )
    }

    #[test]
    fn neutral_bias_is_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (
            rand_mat(&mut rng, 5, 4),
            rand_mat(&mut rng, 5, 4),
            rand_mat(&mut rng, 5, 4),
        );
        let (vanilla, _) = attend(&q, &k, &v, None);
        for mode in [BiasMode::Additive, BiasMode::Multiplicative] {
            let (out, _) = attend(&q, &k, &v, Some(&CorefBiasMatrix::neutral(5, mode)));
            assert!(out.max_abs_diff(&vanilla) <= 1e-12);
        }
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (
            rand_mat(&mut rng, 1, 3),
            rand_mat(&mut rng, 1, 3),
            rand_mat(&mut rng, 1, 3),
        );
        let m = CorefBiasMatrix {
            mode: BiasMode::Additive,
            values: Tensor::full(&[1, 1], 7.0),
        };
        let (out, _) = attend(&q, &k, &v, Some(&m));
        assert!(out.max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn additive_weight_raises_pair_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (
            rand_mat(&mut rng, 4, 4),
            rand_mat(&mut rng, 4, 4),
            rand_mat(&mut rng, 4, 4),
        );
        let a = CorefArray {
            ids: vec![1, 0, 1, 0],
        };
        let (_, w0) = attend(
            &q,
            &k,
            &v,
            Some(&build_bias_matrix(&a, 0.0, BiasMode::Additive).unwrap()),
        );
        let (_, w5) = attend(
            &q,
            &k,
            &v,
            Some(&build_bias_matrix(&a, 5.0, BiasMode::Additive).unwrap()),
        );
        assert!(w5.get2(0, 2) > w0.get2(0, 2));
        // Mass moves away from every token outside the cluster.
        for j in [1, 3] {
            assert!(w5.get2(0, j) <= w0.get2(0, j));
        }
        for i in 0..4 {
            let s: f64 = w5.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_shape_checked() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[3, 2]));
        let b = BiasVar {
            mode: BiasMode::Additive,
            var: tape.constant(Tensor::zeros(&[2, 2])),
        };
        assert!(coref_attention(&mut tape, q, q, q, Some(b)).is_err());
    }

    #[test]
    fn width_must_divide_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(EncoderLayerParams::init(&mut store, "l", 10, 3, 8, &mut rng).is_err());
    }
}
