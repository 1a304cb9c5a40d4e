//! Small from-scratch transformer encoder standing in for a pre-trained
//! language model. Input is packed as `[CLS] question [SEP] context [SEP]`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{coref_encoder_layer, EncoderLayerParams};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Var};
use crate::tokenize::Vocab;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 64,
            heads: 4,
            ff_width: 128,
            max_len: 128,
            vocab_size: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.max_len < 4 || self.vocab_size == 0 {
            return Err(Error::Config(format!(
                "max_len {} / vocab_size {} too small",
                self.max_len, self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Token ids ready for the encoder, with the context's position range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedInput {
    pub ids: Vec<usize>,
    pub context_range: Range<usize>,
    /// How many context subwords survived truncation.
    pub context_kept: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True for every non-context position (specials and question).
    pub fn non_context_mask(&self) -> Vec<bool> {
        (0..self.ids.len())
            .map(|i| !self.context_range.contains(&i))
            .collect()
    }
}

/// Packs question and context, cutting context subwords from the right when
/// the total would exceed `max_len`. The question is never cut.
pub fn pack(
    question: &[usize],
    context: &[usize],
    vocab: &Vocab,
    max_len: usize,
) -> Result<PackedInput> {
    let fixed = question.len() + 3;
    if fixed >= max_len {
        return Err(Error::Contract(format!(
            "question of {} subwords leaves no room for context within max_len {max_len}",
            question.len()
        )));
    }
    let kept = context.len().min(max_len - fixed);
    let mut ids = Vec::with_capacity(fixed + kept);
    ids.push(vocab.cls_id());
    ids.extend_from_slice(question);
    ids.push(vocab.sep_id());
    let start = ids.len();
    ids.extend_from_slice(&context[..kept]);
    let end = ids.len();
    ids.push(vocab.sep_id());
    Ok(PackedInput {
        ids,
        context_range: start..end,
        context_kept: kept,
    })
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub emb_gamma: ParamId,
    pub emb_beta: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

impl BackboneParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: &BackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let token_embedding =
            store.uniform(format!("{prefix}.tok_emb"), &[config.vocab_size, d], rng)?;
        let position_embedding =
            store.uniform(format!("{prefix}.pos_emb"), &[config.max_len, d], rng)?;
        let emb_gamma = store.ones(format!("{prefix}.emb_ln.gamma"), &[d])?;
        let emb_beta = store.zeros(format!("{prefix}.emb_ln.beta"), &[d])?;
        let layers = (0..config.layers)
            .map(|l| {
                EncoderLayerParams::init(
                    store,
                    &format!("{prefix}.layer{l}"),
                    d,
                    config.heads,
                    config.ff_width,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            emb_gamma,
            emb_beta,
            layers,
        })
    }
}

/// Token + position embeddings, layer norm, then the encoder stack. Returns
/// one `width`-dimensional row per input position.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    p: &BackboneParams,
    input: &PackedInput,
) -> Result<Var> {
    Ok(encode_with_attention(tape, bound, p, input)?.0)
}

/// Like [`encode`], also returning each layer's per-head attention weights.
pub fn encode_with_attention(
    tape: &mut Tape,
    bound: &Bound,
    p: &BackboneParams,
    input: &PackedInput,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let k = input.ids.len();
    if k > p.config.max_len {
        return Err(Error::Contract(format!(
            "packed length {k} exceeds max_len {}",
            p.config.max_len
        )));
    }
    let tokens = tape.gather_rows(bound.var(p.token_embedding), &input.ids)?;
    let positions: Vec<usize> = (0..k).collect();
    let pos = tape.gather_rows(bound.var(p.position_embedding), &positions)?;
    let summed = tape.add(tokens, pos)?;
    let mut h = tape.layer_norm(summed, bound.var(p.emb_gamma), bound.var(p.emb_beta))?;
    let mut attention = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let out = coref_encoder_layer(tape, bound, layer, h, None)?;
        h = out.output;
        attention.push(out.head_weights);
    }
    Ok((h, attention))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::from_pieces(["a", "b", "c", "d", "e"])
    }

    #[test]
    fn pack_layout_and_truncation() {
        let v = vocab();
        let p = pack(&[4, 5], &[6, 7, 8], &v, 16).unwrap();
        assert_eq!(
            p.ids,
            vec![v.cls_id(), 4, 5, v.sep_id(), 6, 7, 8, v.sep_id()]
        );
        assert_eq!(p.context_range, 4..7);
        let t = pack(&[4, 5], &[6, 7, 8], &v, 7).unwrap();
        assert_eq!(t.context_kept, 2);
        assert_eq!(t.ids.len(), 7);
        assert_eq!(&t.ids[1..3], &[4, 5]);
        assert!(pack(&[4, 5, 6, 7], &[8], &v, 7).is_err());
    }

    #[test]
    fn output_shape_and_tied_position_equivariance() {
        let v = vocab();
        let cfg = BackboneConfig {
            layers: 2,
            width: 8,
            heads: 2,
            ff_width: 12,
            max_len: 10,
            vocab_size: v.len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let p = BackboneParams::init(&mut store, "bb", &cfg, &mut rng).unwrap();
        // Tie every position embedding to the first row.
        let pos = store.get(p.position_embedding).clone();
        let row0 = pos.row(0).to_vec();
        let tied = Tensor::new(pos.shape.clone(), row0.repeat(cfg.max_len)).unwrap();
        store.set("bb.pos_emb", tied).unwrap();

        let run = |ids: &[usize]| {
            let input = pack(&[4], ids, &v, cfg.max_len).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let out = encode(&mut tape, &bound, &p, &input).unwrap();
            tape.value(out).clone()
        };
        let a = run(&[5, 6, 7, 8]);
        assert_eq!(a.shape, vec![8, 8]);
        let b = run(&[5, 7, 6, 8]);
        // Context starts at 3; positions 4 and 5 swapped.
        for (ra, rb) in [(4, 5), (5, 4), (3, 3), (6, 6), (0, 0)] {
            for j in 0..8 {
                assert!((a.get2(ra, j) - b.get2(rb, j)).abs() < 1e-12);
            }
        }
    }
}
