//! Hybrid contextualization: embeddings, positional encoding, the
//! feed-forward-first Transformer layers and the learned α blend.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::tensor::{positional_encoding, Tensor};
use crate::text::TokenSequence;

use super::{ForwardOptions, LayerIds, TkModel};

/// All stages of a contextualized sequence, each `len × d_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRepresentation {
    pub raw: Tensor,
    pub positioned: Tensor,
    pub contextual: Tensor,
    pub hybrid: Tensor,
    /// `true` for real tokens, `false` for padding.
    pub mask: Vec<bool>,
    pub true_length: usize,
}

/// Tape handles of an encoded sequence.
#[derive(Debug, Clone)]
pub(crate) struct EncodedVars {
    pub raw: Var,
    pub positioned: Var,
    pub contextual: Var,
    pub hybrid: Var,
    pub len: usize,
    pub true_length: usize,
}

impl EncodedVars {
    pub fn mask(&self) -> Vec<bool> {
        (0..self.len).map(|i| i < self.true_length).collect()
    }
}

/// `MultiHead(FF(x)) + FF(x)` with FF evaluated once.
///
/// `key_padding[j]` marks key positions excluded from attention.
pub(crate) fn layer_on_tape(
    tape: &mut Tape,
    layer: &LayerIds,
    head_size: usize,
    x: Var,
    key_padding: &[bool],
) -> Var {
    let n = key_padding.len();
    let w1 = tape.param(layer.ff_w1);
    let b1 = tape.param(layer.ff_b1);
    let w2 = tape.param(layer.ff_w2);
    let b2 = tape.param(layer.ff_b2);
    let hidden = tape.matmul(x, w1);
    let hidden = tape.add(hidden, b1);
    let hidden = tape.relu(hidden);
    let f = tape.matmul(hidden, w2);
    let f = tape.add(f, b2);

    let logit_mask: Vec<bool> = (0..n * n).map(|idx| key_padding[idx % n]).collect();
    let inv_sqrt = 1.0 / (head_size as f64).sqrt();
    let mut heads = Vec::with_capacity(layer.query.len());
    for h in 0..layer.query.len() {
        let wq = tape.param(layer.query[h]);
        let wk = tape.param(layer.key[h]);
        let wv = tape.param(layer.value[h]);
        let q = tape.matmul(f, wq);
        let k = tape.matmul(f, wk);
        let v = tape.matmul(f, wv);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, inv_sqrt);
        let logits = tape.masked_fill(logits, &logit_mask, f64::NEG_INFINITY);
        let attn = tape.softmax_rows(logits);
        heads.push(tape.matmul(attn, v));
    }
    let concat = tape.concat(&heads);
    let wo = tape.param(layer.output);
    let multi = tape.matmul(concat, wo);
    tape.add(multi, f)
}

pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    model: &TkModel,
    seq: &TokenSequence,
    options: ForwardOptions,
) -> Result<EncodedVars> {
    let len = seq.ids.len();
    if len == 0 || seq.true_length == 0 {
        return Err(Error::Empty(
            "cannot contextualize an empty sequence".into(),
        ));
    }
    if seq.true_length > len {
        return Err(Error::InvalidArgument(format!(
            "true length {} exceeds {} ids",
            seq.true_length, len
        )));
    }
    let vocab_size = model.vocab.len();
    if let Some(bad) = seq.ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::UnknownId(format!(
            "token id {bad} outside vocabulary of {vocab_size}"
        )));
    }
    let config = &model.config;
    let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
    let raw = tape.gather(model.ids.embedding, &ids);
    let pe = tape.constant(positional_encoding(len, config.d_emb));
    let positioned = tape.add(raw, pe);

    let padding: Vec<bool> = (0..len).map(|i| i >= seq.true_length).collect();
    let mut x = positioned;
    for layer in &model.ids.layers {
        x = layer_on_tape(tape, layer, config.head_size, x, &padding);
    }
    let contextual = x;

    let alpha = match options.alpha_override {
        Some(a) => tape.constant(Tensor::scalar(a)),
        None => {
            let raw_alpha = tape.param(model.ids.alpha_raw);
            tape.sigmoid(raw_alpha)
        }
    };
    let neg_alpha = tape.scale(alpha, -1.0);
    let one_minus = tape.add_scalar(neg_alpha, 1.0);
    let kept = tape.mul(raw, alpha);
    let mixed = tape.mul(contextual, one_minus);
    let hybrid = tape.add(kept, mixed);
    let row_padding: Vec<bool> = (0..len * config.d_emb)
        .map(|idx| padding[idx / config.d_emb])
        .collect();
    let hybrid = tape.masked_fill(hybrid, &row_padding, 0.0);

    Ok(EncodedVars {
        raw,
        positioned,
        contextual,
        hybrid,
        len,
        true_length: seq.true_length,
    })
}

/// Runs one contextualization layer outside of training.
///
/// `mask[j]` is `true` for real tokens.
pub fn transformer_layer(
    params: &ParamSet,
    layer: &LayerIds,
    head_size: usize,
    p: &Tensor,
    mask: &[bool],
) -> Tensor {
    let mut tape = Tape::new(params);
    let x = tape.constant(p.clone());
    let padding: Vec<bool> = mask.iter().map(|m| !m).collect();
    let out = layer_on_tape(&mut tape, layer, head_size, x, &padding);
    tape.value(out).clone()
}

/// Contextualizes a sequence on its own.
pub fn contextualize(
    model: &TkModel,
    seq: &TokenSequence,
    options: ForwardOptions,
) -> Result<SequenceRepresentation> {
    let mut tape = Tape::new(&model.params);
    let enc = encode_on_tape(&mut tape, model, seq, options)?;
    Ok(SequenceRepresentation {
        raw: tape.value(enc.raw).clone(),
        positioned: tape.value(enc.positioned).clone(),
        contextual: tape.value(enc.contextual).clone(),
        hybrid: tape.value(enc.hybrid).clone(),
        mask: enc.mask(),
        true_length: enc.true_length,
    })
}
