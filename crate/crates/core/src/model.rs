//! End-to-end reader: backbone, one of four coreference-injection stages,
//! and the span/count heads.
//!
//! | variant    | stage after the backbone                                |
//! |------------|---------------------------------------------------------|
//! | `baseline` | one extra encoder layer, no bias                        |
//! | `add_att`  | the same layer with an additive coreference bias        |
//! | `mult_att` | the same layer with a multiplicative coreference bias   |
//! | `gnn`      | RGCN over the coreference graph, fused with the backbone |
//!
//! Everything else is shared, so variant differences isolate the injection.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{coref_encoder_layer, EncoderLayerParams};
use crate::backbone::{
    encode, encode_with_attention, pack, BackboneConfig, BackboneParams, PackedInput,
};
use crate::bias::{build_bias_matrix, build_coref_array, BiasMode, CorefArray, CorefBiasMatrix};
use crate::coref::{rule_resolve, CorefClusters};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::qa::{
    answer_count_logits, decode_spans, qa_loss, span_logits, CountHeadParams, GoldAnswerSet,
    GoldSpan, SpanHeadParams, SpanPrediction,
};
use crate::rgcn::{build_graph, fuse, rgcn_forward, CorefGraph, FuseParams, RgcnParams, Topology};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenize::{align, subword_tokenize, word_tokenize, TokenAlignment, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    AddAtt,
    MultAtt,
    Gnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::AddAtt,
        Variant::MultAtt,
        Variant::Gnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AddAtt => "add_att",
            Variant::MultAtt => "mult_att",
            Variant::Gnn => "gnn",
        }
    }

    pub fn bias_mode(self) -> Option<BiasMode> {
        match self {
            Variant::AddAtt => Some(BiasMode::Additive),
            Variant::MultAtt => Some(BiasMode::Multiplicative),
            _ => None,
        }
    }

    pub fn default_coref_weight(self) -> f64 {
        match self {
            Variant::MultAtt => 2.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "add_att" | "add" => Ok(Variant::AddAtt),
            "mult_att" | "mult" => Ok(Variant::MultAtt),
            "gnn" => Ok(Variant::Gnn),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected baseline, add_att, mult_att or gnn)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub coref_weight: f64,
    pub n_max: usize,
    pub gnn_width: usize,
    /// Number of RGCN layers (one hidden layer means two).
    pub gnn_layers: usize,
    pub basis_count: usize,
    pub topology: Topology,
    pub max_span_len: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, backbone: BackboneConfig) -> Self {
        let gnn_width = backbone.width;
        Self {
            variant,
            backbone,
            coref_weight: variant.default_coref_weight(),
            n_max: 2,
            gnn_width,
            gnn_layers: 2,
            basis_count: 2,
            topology: Topology::Star,
            max_span_len: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        if self.variant == Variant::Gnn
            && (self.gnn_layers == 0 || self.basis_count == 0 || self.gnn_width == 0)
        {
            return Err(Error::Config(
                "gnn variant needs gnn_layers, basis_count and gnn_width > 0".into(),
            ));
        }
        if let Some(mode) = self.variant.bias_mode() {
            build_bias_matrix(&CorefArray::zeros(0), self.coref_weight, mode)?;
        }
        Ok(())
    }
}

/// One question packed for the model, with coreference structure over the
/// packed sequence (non-context positions carry id 0).
#[derive(Clone, Debug)]
pub struct Features {
    pub id: String,
    pub input: PackedInput,
    pub context: TokenAlignment,
    pub coref: CorefArray,
    /// Gold spans as packed-sequence positions; `None` when no gold answer
    /// survives truncation (or none was given).
    pub gold: Option<GoldAnswerSet>,
}

impl Features {
    pub fn mask(&self) -> Vec<bool> {
        self.input.non_context_mask()
    }

    /// Context text covered by packed positions `start..=end`.
    pub fn span_text<'a>(&self, context: &'a str, start: usize, end: usize) -> &'a str {
        let off = self.input.context_range.start;
        let (cs, ce) = self.context.char_span_of_subwords(start - off, end - off);
        crate::tokenize::char_slice(context, cs, ce)
    }
}

/// A gold answer as a character span of the context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharAnswer {
    pub text: String,
    pub char_start: usize,
}

/// Tokenizes, resolves (or takes) clusters, packs, and maps gold character
/// spans to packed positions.
pub fn featurize(
    id: &str,
    question: &str,
    context: &str,
    answers: &[CharAnswer],
    clusters: Option<&CorefClusters>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Features> {
    let words = word_tokenize(context);
    let sub = subword_tokenize(&words, vocab);
    let alignment = align(words, sub)?;
    let resolved;
    let clusters = match clusters {
        Some(c) => c,
        None => {
            resolved = rule_resolve(&alignment.words);
            &resolved
        }
    };
    let ctx_coref = build_coref_array(&alignment, clusters)?;
    let q_ids = TokenAlignment::from_text(question, vocab).subword_ids();
    let input = pack(&q_ids, &alignment.subword_ids(), vocab, max_len)?;
    let coref = ctx_coref.embed(input.context_range.start, input.len());
    let off = input.context_range.start;
    let mut spans = Vec::new();
    for a in answers {
        let end_char = a.char_start + a.text.chars().count();
        let Some((w0, w1)) = alignment.words_in_char_span(a.char_start, end_char) else {
            continue;
        };
        let s = alignment.word_to_subwords[w0].start;
        let e = alignment.word_to_subwords[w1].end - 1;
        if e < input.context_kept {
            spans.push(GoldSpan {
                start: off + s,
                end: off + e,
                text: a.text.clone(),
            });
        }
    }
    let gold = if spans.is_empty() || spans.len() < answers.len() {
        None
    } else {
        Some(GoldAnswerSet::new(spans)?)
    };
    Ok(Features {
        id: id.to_string(),
        input,
        context: alignment,
        coref,
        gold,
    })
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: BackboneParams,
    /// Extra encoder layer (baseline and attention variants).
    pub extra_layer: Option<EncoderLayerParams>,
    pub rgcn: Option<RgcnParams>,
    pub fuse: Option<FuseParams>,
    pub span_head: SpanHeadParams,
    pub count_head: CountHeadParams,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub start_logits: Var,
    pub end_logits: Var,
    pub count_logits: Var,
    /// Per-head attention of the extra layer, or of the last backbone layer for `gnn`.
    pub head_attention: Vec<Var>,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = BackboneParams::init(&mut store, "backbone", &config.backbone, &mut rng)?;
        let d = config.backbone.width;
        let (extra_layer, rgcn, fuse) = match config.variant {
            Variant::Gnn => {
                let mut widths = vec![d];
                widths.extend(std::iter::repeat_n(config.gnn_width, config.gnn_layers));
                let rgcn =
                    RgcnParams::init(&mut store, "rgcn", &widths, config.basis_count, &mut rng)?;
                let fuse = FuseParams::init(&mut store, "fuse", d, config.gnn_width, &mut rng)?;
                (None, Some(rgcn), Some(fuse))
            }
            _ => {
                let layer = EncoderLayerParams::init(
                    &mut store,
                    "coref_layer",
                    d,
                    config.backbone.heads,
                    config.backbone.ff_width,
                    &mut rng,
                )?;
                (Some(layer), None, None)
            }
        };
        let span_head = SpanHeadParams::init(&mut store, "span", d, &mut rng)?;
        let count_head = CountHeadParams::init(&mut store, "count", d, config.n_max, &mut rng)?;
        Ok(Self {
            config,
            store,
            backbone,
            extra_layer,
            rgcn,
            fuse,
            span_head,
            count_head,
        })
    }

    pub fn bias_matrix(&self, f: &Features) -> Result<Option<CorefBiasMatrix>> {
        self.config
            .variant
            .bias_mode()
            .map(|mode| build_bias_matrix(&f.coref, self.config.coref_weight, mode))
            .transpose()
    }

    pub fn graph(&self, f: &Features) -> CorefGraph {
        build_graph(&f.coref, self.config.topology)
    }

    /// Runs the backbone on `f`; exposed so callers can share it across variants.
    pub fn backbone_forward(&self, tape: &mut Tape, bound: &Bound, f: &Features) -> Result<Var> {
        encode(tape, bound, &self.backbone, &f.input)
    }

    /// The coreference-injection stage followed by both heads.
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        f: &Features,
        e_lm: Var,
    ) -> Result<ForwardOutput> {
        let (e, head_attention) = match self.config.variant {
            Variant::Gnn => {
                let rgcn = self.rgcn.as_ref().expect("gnn params");
                let global = tape.mean_rows(e_lm)?;
                let nodes = tape.concat_rows(&[e_lm, global])?;
                let graph = self.graph(f);
                let out = rgcn_forward(tape, bound, &graph, nodes, rgcn)?;
                let k = f.input.len();
                let tokens = tape.slice_rows(out, 0, k)?;
                let fused = fuse(
                    tape,
                    bound,
                    e_lm,
                    tokens,
                    self.fuse.as_ref().expect("fuse params"),
                )?;
                (fused, Vec::new())
            }
            _ => {
                let bias = self.bias_matrix(f)?;
                let layer = self.extra_layer.as_ref().expect("extra layer params");
                let out = coref_encoder_layer(tape, bound, layer, e_lm, bias.as_ref())?;
                (out.output, out.head_weights)
            }
        };
        let (start_logits, end_logits) = span_logits(tape, bound, &self.span_head, e, &f.mask())?;
        let count_logits = answer_count_logits(tape, bound, &self.count_head, e_lm)?;
        Ok(ForwardOutput {
            start_logits,
            end_logits,
            count_logits,
            head_attention,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: &Features) -> Result<ForwardOutput> {
        let e_lm = self.backbone_forward(tape, bound, f)?;
        self.head_forward(tape, bound, f, e_lm)
    }

    /// Loss and per-parameter gradients (store order) for one example.
    pub fn loss_and_grads(&self, f: &Features) -> Result<(f64, Vec<Vec<f64>>)> {
        let gold = f.gold.as_ref().ok_or_else(|| {
            Error::Validation(format!("example {} has no usable gold span", f.id))
        })?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, true);
        let out = self.forward(&mut tape, &bound, f)?;
        let loss = qa_loss(
            &mut tape,
            out.start_logits,
            out.end_logits,
            out.count_logits,
            gold,
        )?;
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        Ok((value, bound.grads(&tape)))
    }

    pub fn loss(&self, f: &Features) -> Result<f64> {
        let gold = f.gold.as_ref().ok_or_else(|| {
            Error::Validation(format!("example {} has no usable gold span", f.id))
        })?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, f)?;
        let loss = qa_loss(
            &mut tape,
            out.start_logits,
            out.end_logits,
            out.count_logits,
            gold,
        )?;
        Ok(tape.value(loss).item())
    }

    /// Per-head attention weights of the extra layer, or of the last backbone
    /// layer for `gnn`, with the name of the layer they came from.
    pub fn attention_maps(&self, f: &Features) -> Result<(String, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let (e_lm, mut backbone_maps) =
            encode_with_attention(&mut tape, &bound, &self.backbone, &f.input)?;
        let (layer, vars) = if self.config.variant == Variant::Gnn {
            let last = backbone_maps.len().saturating_sub(1);
            (
                format!("backbone.layer{last}"),
                backbone_maps.pop().unwrap_or_default(),
            )
        } else {
            let out = self.head_forward(&mut tape, &bound, f, e_lm)?;
            ("coref_layer".to_string(), out.head_attention)
        };
        Ok((
            layer,
            vars.into_iter().map(|v| tape.value(v).clone()).collect(),
        ))
    }

    pub fn predict(&self, f: &Features) -> Result<SpanPrediction> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, f)?;
        Ok(decode_spans(
            &tape.value(out.start_logits).data,
            &tape.value(out.end_logits).data,
            &tape.value(out.count_logits).data,
            self.config.max_span_len,
        ))
    }
}
