//! Autodiff graph construction for the transformer forward pass.
//! Generic over the scalar type so the same expression can be evaluated
//! under a double-precision finite-difference referee.

use super::{Backbone, BlockWeights, LoraAdapters, LoraPair, ModelConfig};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Visual projection: `affine2(relu(affine1(features)))`, one output row
/// per input frame.
pub fn project_visual<T: Scalar>(bb: &Backbone<T>, feats: &Tensor<T>) -> Result<Tensor<T>> {
    let expected = bb.proj1_w.shape()[0];
    let got = *feats.shape().last().unwrap();
    if got != expected {
        return Err(Error::shape(
            "project_visual",
            format!("feature dim {got}, expected {expected}"),
        ));
    }
    feats
        .matmul(&bb.proj1_w)?
        .add_rowwise(&bb.proj1_b)?
        .relu()
        .matmul(&bb.proj2_w)?
        .add_rowwise(&bb.proj2_b)
}

fn lora_delta<T: Scalar>(h: &Tensor<T>, pair: &LoraPair<T>, scaling: f64) -> Result<Tensor<T>> {
    // h: [t x in], A: [r x in], B: [out x r] -> (h A^T) B^T * (alpha/r)
    Ok(h.matmul_nt(&pair.a)?.matmul_nt(&pair.b)?.scale(T::of(scaling)))
}

fn affine_rows<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.layer_norm(T::of(LN_EPS)).mul_rowwise(g)?.add_rowwise(b)
}

fn block_forward<T: Scalar>(
    cfg: &ModelConfig,
    x: &Tensor<T>,
    blk: &BlockWeights<T>,
    lora: Option<(&LoraPair<T>, f64)>,
    lora_v: Option<(&LoraPair<T>, f64)>,
) -> Result<Tensor<T>> {
    let hd = cfg.head_dim();
    let h = affine_rows(x, &blk.ln1_g, &blk.ln1_b)?;

    let mut q = h.matmul(&blk.wq)?.add_rowwise(&blk.bq)?;
    if let Some((pair, scaling)) = lora {
        q = q.add(&lora_delta(&h, pair, scaling)?)?;
    }
    let k = h.matmul(&blk.wk)?.add_rowwise(&blk.bk)?;
    let mut v = h.matmul(&blk.wv)?.add_rowwise(&blk.bv)?;
    if let Some((pair, scaling)) = lora_v {
        v = v.add(&lora_delta(&h, pair, scaling)?)?;
    }

    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for i in 0..cfg.num_heads {
        let (c0, c1) = (i * hd, (i + 1) * hd);
        let qh = q.slice_cols(c0, c1)?;
        let kh = k.slice_cols(c0, c1)?;
        let vh = v.slice_cols(c0, c1)?;
        let att = qh
            .matmul_nt(&kh)?
            .scale(scale)
            .causal_mask()?
            .softmax_rows();
        heads.push(att.matmul(&vh)?);
    }
    let o = Tensor::concat_cols(&heads)?
        .matmul(&blk.wo)?
        .add_rowwise(&blk.bo)?;
    let x = x.add(&o)?;

    let h2 = affine_rows(&x, &blk.ln2_g, &blk.ln2_b)?;
    let m = h2
        .matmul(&blk.w1)?
        .add_rowwise(&blk.b1)?
        .relu()
        .matmul(&blk.w2)?
        .add_rowwise(&blk.b2)?;
    x.add(&m)
}

/// Final hidden states `[seq x dim]` for a visual prefix followed by
/// text tokens. Either part may be absent, but not both.
pub fn backbone_hidden<T: Scalar>(
    cfg: &ModelConfig,
    bb: &Backbone<T>,
    lora: Option<&LoraAdapters<T>>,
    visual: Option<&Tensor<T>>,
    tokens: &[usize],
) -> Result<Tensor<T>> {
    let mut parts = Vec::new();
    if let Some(feats) = visual {
        parts.push(project_visual(bb, feats)?);
    }
    if !tokens.is_empty() {
        parts.push(bb.tok_emb.embedding(tokens)?);
    }
    if parts.is_empty() {
        return Err(Error::Contract(
            "backbone_hidden: empty prefix and empty token sequence".into(),
        ));
    }
    let emb = Tensor::concat_rows(&parts)?;
    let seq_len = emb.shape()[0];
    if seq_len > cfg.max_sequence_length {
        return Err(Error::Contract(format!(
            "sequence length {seq_len} exceeds max {}",
            cfg.max_sequence_length
        )));
    }
    let positions: Vec<usize> = (0..seq_len).collect();
    let mut x = emb.add(&bb.pos_emb.embedding(&positions)?)?;

    let scaling = lora.map(|l| l.cfg.scaling());
    for (i, blk) in bb.blocks.iter().enumerate() {
        let (lq, lv) = match (lora, scaling) {
            (Some(l), Some(s)) => (
                l.blocks[i].q.as_ref().map(|p| (p, s)),
                l.blocks[i].v.as_ref().map(|p| (p, s)),
            ),
            _ => (None, None),
        };
        x = block_forward(cfg, &x, blk, lq, lv)?;
    }
    affine_rows(&x, &bb.ln_f_g, &bb.ln_f_b)
}

/// Vocabulary logits for hidden rows `r0..r1`.
pub fn logits_for_rows<T: Scalar>(
    hidden: &Tensor<T>,
    lm_head: &Tensor<T>,
    r0: usize,
    r1: usize,
) -> Result<Tensor<T>> {
    hidden.slice_rows(r0, r1)?.matmul(lm_head)
}

/// Scalar-head outputs for hidden rows `r0..r1`, shape `[r1-r0]`.
pub fn scalar_head_rows<T: Scalar>(
    hidden: &Tensor<T>,
    head_w: &Tensor<T>,
    head_b: &Tensor<T>,
    r0: usize,
    r1: usize,
) -> Result<Tensor<T>> {
    let rows = hidden.slice_rows(r0, r1)?;
    let n = r1 - r0;
    rows.matmul(head_w)?.add_rowwise(head_b)?.reshape(&[n])
}
