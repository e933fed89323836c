//! Dual-channel character-aware encoder.
//!
//! The token channel runs pre-norm transformer layers; the character
//! channel embeds raw bytes, runs one BiGRU over the whole char stream,
//! and projects each token's first/last hidden states to the hidden width.
//! After every transformer layer the two channels are fused by windowed
//! 1-D convolutions and divided back with GELU projections, residuals and
//! layer norm; the per-layer (T, H) pairs are all recorded for the head.

use crate::error::{Error, Result};
use crate::model::Bound;
use crate::rng::Rng;
use crate::tape::{GruWeights, Padding, Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::tokenizer::{TokenSequence, PAD};

/// Attention-logit offset for masked (PAD) key positions. Kept finite so
/// the non-finite guard stays meaningful.
const MASK_NEG: f64 = -1e9;

/// x @ w + b
fn affine<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// LayerNorm over the feature axis followed by the learned affine.
fn ln_affine<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let axis = tape.value(x).rank() - 1;
    let n = tape.layer_norm(x, axis, 1e-5)?;
    let scaled = tape.mul(n, gamma)?;
    tape.add(scaled, beta)
}

/// Character embedding lookup: row j of the output is the embedding-table
/// row for char id j.
pub fn embed_chars<T: Real>(tape: &mut Tape<T>, char_embed: Var, char_ids: &[u32]) -> Result<Var> {
    let ids: Vec<usize> = char_ids.iter().map(|&c| c as usize).collect();
    tape.gather_rows(char_embed, &ids)
}

/// Bidirectional GRU over the full char stream; output width 2g with the
/// forward state in the first half.
pub fn bigru<T: Real>(
    tape: &mut Tape<T>,
    e: Var,
    fwd: GruWeights,
    bwd: GruWeights,
) -> Result<Var> {
    let hf = tape.gru(e, fwd, false)?;
    let hb = tape.gru(e, bwd, true)?;
    tape.concat(&[hf, hb], 1)
}

fn gru_weights<T: Real>(bound: &Bound<T>, dir: &str) -> GruWeights {
    GruWeights {
        wz: bound.var(&format!("gru.{dir}.wz")),
        wr: bound.var(&format!("gru.{dir}.wr")),
        wh: bound.var(&format!("gru.{dir}.wh")),
        uz: bound.var(&format!("gru.{dir}.uz")),
        ur: bound.var(&format!("gru.{dir}.ur")),
        uh: bound.var(&format!("gru.{dir}.uh")),
        bz: bound.var(&format!("gru.{dir}.bz")),
        br: bound.var(&format!("gru.{dir}.br")),
        bh: bound.var(&format!("gru.{dir}.bh")),
    }
}

/// Per-token char embedding: concatenate the bidirectional states at each
/// token's first and last character and project to the hidden width.
pub fn char_token_embed<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    spans: &[(usize, usize)],
    proj_w: Var,
    proj_b: Var,
) -> Result<Var> {
    let mut firsts = Vec::with_capacity(spans.len());
    let mut lasts = Vec::with_capacity(spans.len());
    for &(start, len) in spans {
        if len == 0 {
            return Err(Error::EmptySpan);
        }
        firsts.push(start);
        lasts.push(start + len - 1);
    }
    let hf = tape.gather_rows(h, &firsts)?;
    let hl = tape.gather_rows(h, &lasts)?;
    let cat = tape.concat(&[hf, hl], 1)?;
    affine(tape, cat, proj_w, proj_b)
}

/// One pre-norm transformer layer on the token channel. `mask` is a
/// (positions,) constant with 0 at real keys and a large negative value at
/// PAD keys.
#[allow(clippy::too_many_arguments)]
pub fn transformer_layer<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    layer: usize,
    x: Var,
    mask: Var,
    train: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let cfg = bound.config();
    let p = |s: &str| format!("layer{layer:02}.{s}");
    let heads = cfg.n_heads;
    let dh = cfg.hidden / heads;
    let rate = if train { cfg.dropout } else { 0.0 };

    let a = ln_affine(tape, x, bound.var(&p("ln1.g")), bound.var(&p("ln1.b")))?;
    let q = affine(tape, a, bound.var(&p("attn.wq")), bound.var(&p("attn.bq")))?;
    let k = affine(tape, a, bound.var(&p("attn.wk")), bound.var(&p("attn.bk")))?;
    let v = affine(tape, a, bound.var(&p("attn.wv")), bound.var(&p("attn.bv")))?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        let kt = tape.permute(kh, vec![1, 0])?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let masked = tape.add(scaled, mask)?;
        let probs = tape.softmax(masked, 1)?;
        let probs = tape.dropout(probs, rate, rng)?;
        head_outputs.push(tape.matmul(probs, vh)?);
    }
    let concat = tape.concat(&head_outputs, 1)?;
    let o = affine(tape, concat, bound.var(&p("attn.wo")), bound.var(&p("attn.bo")))?;
    let o = tape.dropout(o, rate, rng)?;
    let x1 = tape.add(x, o)?;

    let b = ln_affine(tape, x1, bound.var(&p("ln2.g")), bound.var(&p("ln2.b")))?;
    let f1 = affine(tape, b, bound.var(&p("ff.w1")), bound.var(&p("ff.b1")))?;
    let f1 = tape.gelu(f1)?;
    let f2 = affine(tape, f1, bound.var(&p("ff.w2")), bound.var(&p("ff.b2")))?;
    let f2 = tape.dropout(f2, rate, rng)?;
    tape.add(x1, f2)
}

/// Fuse-then-divide interaction: per-channel affines, concatenation,
/// windowed tanh convolutions back to width C, GELU division maps, then
/// residual + layer norm per channel.
pub fn heterogeneous_interaction<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    layer: usize,
    t: Var,
    h: Var,
) -> Result<(Var, Var)> {
    let cfg = bound.config();
    let p = |s: &str| format!("layer{layer:02}.{s}");
    let tt = affine(tape, t, bound.var(&p("inter.wt")), bound.var(&p("inter.bt")))?;
    let hh = affine(tape, h, bound.var(&p("inter.wh")), bound.var(&p("inter.bh")))?;
    let w = tape.concat(&[tt, hh], 1)?;
    let mut fused = Vec::with_capacity(cfg.windows.len());
    for &win in &cfg.windows {
        let conv = tape.conv1d(w, bound.var(&p(&format!("inter.conv{win}.w"))), 1, Padding::Same)?;
        let conv = tape.add(conv, bound.var(&p(&format!("inter.conv{win}.b"))))?;
        fused.push(tape.tanh(conv)?);
    }
    let m = tape.concat(&fused, 1)?;
    let mt = affine(tape, m, bound.var(&p("inter.wdt")), bound.var(&p("inter.bdt")))?;
    let mt = tape.gelu(mt)?;
    let mh = affine(tape, m, bound.var(&p("inter.wdh")), bound.var(&p("inter.bdh")))?;
    let mh = tape.gelu(mh)?;
    let t_res = tape.add(t, mt)?;
    let h_res = tape.add(h, mh)?;
    let t_out = ln_affine(tape, t_res, bound.var(&p("inter.lnt.g")), bound.var(&p("inter.lnt.b")))?;
    let h_out = ln_affine(tape, h_res, bound.var(&p("inter.lnh.g")), bound.var(&p("inter.lnh.b")))?;
    Ok((t_out, h_out))
}

/// Positions the encoder processes for `seq`: the real tokens (PAD tail
/// trimmed) unless the config fixes the width, but never fewer than the
/// head's minimum pooling width.
pub fn processed_positions(cfg: &crate::model::ModelConfig, seq: &TokenSequence) -> usize {
    if cfg.fixed_width {
        seq.token_count()
    } else {
        seq.real_len().max(cfg.min_positions()).min(seq.token_count())
    }
}

/// Run the full dual-channel encoder, returning the per-layer (T_l, H_l)
/// pairs in layer order.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    seq: &TokenSequence,
    train: bool,
    rng: &mut Rng,
) -> Result<Vec<(Var, Var)>> {
    let cfg = bound.config();
    let positions = processed_positions(cfg, seq);
    if positions == 0 {
        return Err(Error::EmptyInput);
    }
    if positions > cfg.max_len {
        return Err(Error::ShapeMismatch {
            op: "encode",
            details: format!("{positions} positions exceed max_len {}", cfg.max_len),
        });
    }
    let rate = if train { cfg.dropout } else { 0.0 };

    // char channel: BiGRU over real chars only; PAD positions get zero states
    let real_chars = seq.real_char_len();
    let spans = &seq.spans[..positions];
    let chars_len = {
        let (start, len) = spans[positions - 1];
        start + len
    };
    let gru_chars = real_chars.min(chars_len);
    let e = embed_chars(tape, bound.var("char_embed"), &seq.char_ids[..gru_chars])?;
    let h_real = bigru(tape, e, gru_weights(bound, "fwd"), gru_weights(bound, "bwd"))?;
    let h_chars = if chars_len > gru_chars {
        let zeros = tape.constant(Tensor::zeros(&[chars_len - gru_chars, 2 * cfg.gru_hidden]));
        tape.concat(&[h_real, zeros], 0)?
    } else {
        h_real
    };
    let mut h = char_token_embed(
        tape,
        h_chars,
        spans,
        bound.var("char_proj.w"),
        bound.var("char_proj.b"),
    )?;

    // token channel input: subword + position embeddings
    let ids: Vec<usize> = seq.subword_ids[..positions].iter().map(|&i| i as usize).collect();
    let tok = tape.gather_rows(bound.var("tok_embed"), &ids)?;
    let pos_ids: Vec<usize> = (0..positions).collect();
    let pos = tape.gather_rows(bound.var("pos_embed"), &pos_ids)?;
    let mut t = tape.add(tok, pos)?;
    t = tape.dropout(t, rate, rng)?;

    // PAD key mask
    let mask_vals: Vec<f64> = seq.subword_ids[..positions]
        .iter()
        .map(|&id| if id == PAD { MASK_NEG } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::from_f64(&[positions], &mask_vals)?);

    let mut outputs = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let t_attn = transformer_layer(tape, bound, layer, t, mask, train, rng)?;
        let (t_next, h_next) = heterogeneous_interaction(tape, bound, layer, t_attn, h)?;
        outputs.push((t_next, h_next));
        t = t_next;
        h = h_next;
    }
    Ok(outputs)
}
