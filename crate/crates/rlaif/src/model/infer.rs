//! Detached inference: a plain-buffer snapshot of a model (adapters
//! folded in) that runs without graph bookkeeping, is `Send + Sync` for
//! per-sample parallelism, and keeps a KV cache for generation.
//!
//! The full-sequence path reuses the same kernels in the same order as
//! the graph path, so the two agree to float rounding.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::LN_EPS;
use super::{GenParams, ModelConfig, PolicyModel, RewardModel};
use crate::tensor::kernels;
use crate::{Error, Result};

struct IBlock {
    ln1_g: Vec<f32>,
    ln1_b: Vec<f32>,
    wq: Vec<f32>,
    bq: Vec<f32>,
    wk: Vec<f32>,
    bk: Vec<f32>,
    wv: Vec<f32>,
    bv: Vec<f32>,
    wo: Vec<f32>,
    bo: Vec<f32>,
    ln2_g: Vec<f32>,
    ln2_b: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

enum Head {
    Vocab(Vec<f32>),
    Scalar { w: Vec<f32>, b: f32 },
}

/// Immutable inference snapshot of a policy or reward model.
pub struct InferModel {
    pub cfg: ModelConfig,
    tok_emb: Vec<f32>,
    pos_emb: Vec<f32>,
    proj1_w: Vec<f32>,
    proj1_b: Vec<f32>,
    proj2_w: Vec<f32>,
    proj2_b: Vec<f32>,
    blocks: Vec<IBlock>,
    ln_f_g: Vec<f32>,
    ln_f_b: Vec<f32>,
    head: Head,
}

/// Generated tokens with their sampling-distribution log-probabilities.
#[derive(Clone, Debug)]
pub struct GenOutput {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f32>,
}

fn effective_weight(
    w: &crate::tensor::Tensor<f32>,
    pair: Option<&super::LoraPair<f32>>,
    scaling: f32,
) -> Vec<f32> {
    let mut out = w.to_vec();
    if let Some(p) = pair {
        let (r, d_in) = (p.a.shape()[0], p.a.shape()[1]);
        let d_out = p.b.shape()[0];
        let a = p.a.data();
        let b = p.b.data();
        for i in 0..d_in {
            for o in 0..d_out {
                let mut acc = 0.0f32;
                for k in 0..r {
                    acc += a[k * d_in + i] * b[o * r + k];
                }
                out[i * d_out + o] += scaling * acc;
            }
        }
    }
    out
}

fn snapshot_blocks(
    backbone: &super::Backbone<f32>,
    lora: Option<&super::LoraAdapters<f32>>,
) -> Vec<IBlock> {
    let scaling = lora.map(|l| l.cfg.scaling() as f32).unwrap_or(0.0);
    backbone
        .blocks
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            let (lq, lv) = match lora {
                Some(l) => (l.blocks[i].q.as_ref(), l.blocks[i].v.as_ref()),
                None => (None, None),
            };
            IBlock {
                ln1_g: blk.ln1_g.to_vec(),
                ln1_b: blk.ln1_b.to_vec(),
                wq: effective_weight(&blk.wq, lq, scaling),
                bq: blk.bq.to_vec(),
                wk: blk.wk.to_vec(),
                bk: blk.bk.to_vec(),
                wv: effective_weight(&blk.wv, lv, scaling),
                bv: blk.bv.to_vec(),
                wo: blk.wo.to_vec(),
                bo: blk.bo.to_vec(),
                ln2_g: blk.ln2_g.to_vec(),
                ln2_b: blk.ln2_b.to_vec(),
                w1: blk.w1.to_vec(),
                b1: blk.b1.to_vec(),
                w2: blk.w2.to_vec(),
                b2: blk.b2.to_vec(),
            }
        })
        .collect()
}

impl InferModel {
    pub fn from_policy(m: &PolicyModel) -> Self {
        InferModel {
            cfg: m.cfg.clone(),
            tok_emb: m.backbone.tok_emb.to_vec(),
            pos_emb: m.backbone.pos_emb.to_vec(),
            proj1_w: m.backbone.proj1_w.to_vec(),
            proj1_b: m.backbone.proj1_b.to_vec(),
            proj2_w: m.backbone.proj2_w.to_vec(),
            proj2_b: m.backbone.proj2_b.to_vec(),
            blocks: snapshot_blocks(&m.backbone, m.lora.as_ref()),
            ln_f_g: m.backbone.ln_f_g.to_vec(),
            ln_f_b: m.backbone.ln_f_b.to_vec(),
            head: Head::Vocab(m.lm_head.to_vec()),
        }
    }

    pub fn from_reward(m: &RewardModel) -> Self {
        InferModel {
            cfg: m.cfg.clone(),
            tok_emb: m.backbone.tok_emb.to_vec(),
            pos_emb: m.backbone.pos_emb.to_vec(),
            proj1_w: m.backbone.proj1_w.to_vec(),
            proj1_b: m.backbone.proj1_b.to_vec(),
            proj2_w: m.backbone.proj2_w.to_vec(),
            proj2_b: m.backbone.proj2_b.to_vec(),
            blocks: snapshot_blocks(&m.backbone, m.lora.as_ref()),
            ln_f_g: m.backbone.ln_f_g.to_vec(),
            ln_f_b: m.backbone.ln_f_b.to_vec(),
            head: Head::Scalar {
                w: m.head_w.to_vec(),
                b: m.head_b.to_vec()[0],
            },
        }
    }

    fn dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// Projected visual prefix rows `[F x dim]`.
    pub fn project_visual(&self, feats: &[Vec<f32>]) -> Result<Vec<f32>> {
        let d = self.dim();
        let vd = self.cfg.visual_feature_dim;
        let f = feats.len();
        if f == 0 {
            return Err(Error::Contract("project_visual: no frames".into()));
        }
        let mut flat = Vec::with_capacity(f * vd);
        for row in feats {
            if row.len() != vd {
                return Err(Error::shape(
                    "project_visual",
                    format!("feature dim {}, expected {vd}", row.len()),
                ));
            }
            flat.extend_from_slice(row);
        }
        let mut h = kernels::matmul(&flat, &self.proj1_w, f, vd, d);
        add_bias_rows(&mut h, &self.proj1_b);
        for v in h.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut out = kernels::matmul(&h, &self.proj2_w, f, d, d);
        add_bias_rows(&mut out, &self.proj2_b);
        Ok(out)
    }

    /// Input embeddings: projected prefix rows followed by token rows,
    /// plus position embeddings.
    fn embed_sequence(&self, prefix: Option<&[Vec<f32>]>, tokens: &[usize]) -> Result<Vec<f32>> {
        let d = self.dim();
        let mut x = match prefix {
            Some(feats) => self.project_visual(feats)?,
            None => Vec::new(),
        };
        for &t in tokens {
            if t >= self.cfg.vocab_size {
                return Err(Error::Index(format!("token id {t} out of vocab")));
            }
            x.extend_from_slice(&self.tok_emb[t * d..(t + 1) * d]);
        }
        let seq = x.len() / d;
        if seq == 0 {
            return Err(Error::Contract("empty prefix and token sequence".into()));
        }
        if seq > self.cfg.max_sequence_length {
            return Err(Error::Contract(format!(
                "sequence length {seq} exceeds max {}",
                self.cfg.max_sequence_length
            )));
        }
        for r in 0..seq {
            let pos = &self.pos_emb[r * d..(r + 1) * d];
            for (xv, &pv) in x[r * d..(r + 1) * d].iter_mut().zip(pos) {
                *xv += pv;
            }
        }
        Ok(x)
    }

    /// Full-sequence hidden states; when `caches` is given, per-block K/V
    /// matrices are stored so generation can continue incrementally.
    fn hidden_full(
        &self,
        prefix: Option<&[Vec<f32>]>,
        tokens: &[usize],
        mut caches: Option<&mut Vec<KvCache>>,
    ) -> Result<Vec<f32>> {
        let d = self.dim();
        let hd = self.cfg.head_dim();
        let nh = self.cfg.num_heads;
        let mut x = self.embed_sequence(prefix, tokens)?;
        let seq = x.len() / d;
        let scale = 1.0 / (hd as f32).sqrt();

        for (bi, blk) in self.blocks.iter().enumerate() {
            let mut h = x.clone();
            layer_norm_affine(&mut h, d, &blk.ln1_g, &blk.ln1_b);
            let mut q = kernels::matmul(&h, &blk.wq, seq, d, d);
            add_bias_rows(&mut q, &blk.bq);
            let mut k = kernels::matmul(&h, &blk.wk, seq, d, d);
            add_bias_rows(&mut k, &blk.bk);
            let mut v = kernels::matmul(&h, &blk.wv, seq, d, d);
            add_bias_rows(&mut v, &blk.bv);

            if let Some(c) = caches.as_deref_mut() {
                c[bi].k[..seq * d].copy_from_slice(&k);
                c[bi].v[..seq * d].copy_from_slice(&v);
                c[bi].len = seq;
            }

            let mut o = vec![0.0f32; seq * d];
            for head in 0..nh {
                let qh = split_head(&q, seq, d, head, hd);
                let kh = split_head(&k, seq, d, head, hd);
                let vh = split_head(&v, seq, d, head, hd);
                let mut att = kernels::matmul_nt(&qh, &kh, seq, hd, seq);
                for val in att.iter_mut() {
                    *val *= scale;
                }
                for r in 0..seq {
                    for c in (r + 1)..seq {
                        att[r * seq + c] = -1.0e9;
                    }
                }
                kernels::softmax_rows_inplace(&mut att, seq);
                let oh = kernels::matmul(&att, &vh, seq, seq, hd);
                for r in 0..seq {
                    o[r * d + head * hd..r * d + (head + 1) * hd]
                        .copy_from_slice(&oh[r * hd..(r + 1) * hd]);
                }
            }
            let mut proj = kernels::matmul(&o, &blk.wo, seq, d, d);
            add_bias_rows(&mut proj, &blk.bo);
            for (xv, &pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }

            let mut h2 = x.clone();
            layer_norm_affine(&mut h2, d, &blk.ln2_g, &blk.ln2_b);
            let md = self.cfg.mlp_dim();
            let mut m = kernels::matmul(&h2, &blk.w1, seq, d, md);
            add_bias_rows(&mut m, &blk.b1);
            for vv in m.iter_mut() {
                if *vv < 0.0 {
                    *vv = 0.0;
                }
            }
            let mut m2 = kernels::matmul(&m, &blk.w2, seq, md, d);
            add_bias_rows(&mut m2, &blk.b2);
            for (xv, &mv) in x.iter_mut().zip(&m2) {
                *xv += mv;
            }
        }
        layer_norm_affine(&mut x, d, &self.ln_f_g, &self.ln_f_b);
        Ok(x)
    }

    fn vocab_head(&self) -> Result<&[f32]> {
        match &self.head {
            Head::Vocab(w) => Ok(w),
            Head::Scalar { .. } => Err(Error::Contract(
                "vocabulary head requested on a scalar-head model".into(),
            )),
        }
    }

    /// Causal logits. One row per token position; with an empty token
    /// sequence, a single row for the next-token-after-prefix position.
    pub fn forward_logits(
        &self,
        prefix: Option<&[Vec<f32>]>,
        tokens: &[usize],
    ) -> Result<Vec<Vec<f32>>> {
        let d = self.dim();
        let head = self.vocab_head()?;
        let hidden = self.hidden_full(prefix, tokens, None)?;
        let seq = hidden.len() / d;
        let rows: Vec<usize> = if tokens.is_empty() {
            vec![seq - 1]
        } else {
            (seq - tokens.len()..seq).collect()
        };
        Ok(rows
            .into_iter()
            .map(|r| kernels::matmul(&hidden[r * d..(r + 1) * d], head, 1, d, self.cfg.vocab_size))
            .collect())
    }

    /// Per-token log-probabilities of `response` given prefix and prompt,
    /// under softmax(logits / temperature).
    pub fn response_logprobs(
        &self,
        prefix: Option<&[Vec<f32>]>,
        prompt: &[usize],
        response: &[usize],
        temperature: f64,
    ) -> Result<Vec<f32>> {
        if response.is_empty() {
            return Err(Error::Contract("response_logprobs: empty response".into()));
        }
        if prompt.is_empty() && prefix.is_none() {
            return Err(Error::Contract("response_logprobs: empty context".into()));
        }
        let d = self.dim();
        let head = self.vocab_head()?;
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(response);
        let hidden = self.hidden_full(prefix, &tokens, None)?;
        let seq = hidden.len() / d;
        let first_resp = seq - response.len();
        let mut out = Vec::with_capacity(response.len());
        for (i, &tok) in response.iter().enumerate() {
            let row = first_resp + i - 1; // position predicting this token
            let logits =
                kernels::matmul(&hidden[row * d..(row + 1) * d], head, 1, d, self.cfg.vocab_size);
            out.push(logprob_of(&logits, tok, temperature));
        }
        Ok(out)
    }

    /// Scalar reward read from the hidden state at the final response
    /// token through the scalar head.
    pub fn reward(
        &self,
        prefix: Option<&[Vec<f32>]>,
        prompt: &[usize],
        response: &[usize],
    ) -> Result<f32> {
        if response.is_empty() {
            return Err(Error::Contract("reward: empty response".into()));
        }
        let (w, b) = match &self.head {
            Head::Scalar { w, b } => (w, *b),
            Head::Vocab(_) => {
                return Err(Error::Contract("reward requested on a vocab-head model".into()))
            }
        };
        let d = self.dim();
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(response);
        let hidden = self.hidden_full(prefix, &tokens, None)?;
        let seq = hidden.len() / d;
        let row = &hidden[(seq - 1) * d..seq * d];
        let mut acc = b;
        for (x, wv) in row.iter().zip(w) {
            acc += x * wv;
        }
        Ok(acc)
    }

    /// Scalar-head output at every response position (the value path).
    pub fn values(
        &self,
        prefix: Option<&[Vec<f32>]>,
        prompt: &[usize],
        response: &[usize],
    ) -> Result<Vec<f32>> {
        if response.is_empty() {
            return Err(Error::Contract("values: empty response".into()));
        }
        let (w, b) = match &self.head {
            Head::Scalar { w, b } => (w, *b),
            Head::Vocab(_) => {
                return Err(Error::Contract("values requested on a vocab-head model".into()))
            }
        };
        let d = self.dim();
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(response);
        let hidden = self.hidden_full(prefix, &tokens, None)?;
        let seq = hidden.len() / d;
        let first_resp = seq - response.len();
        Ok((0..response.len())
            .map(|i| {
                let row = &hidden[(first_resp + i) * d..(first_resp + i + 1) * d];
                let mut acc = b;
                for (x, wv) in row.iter().zip(w) {
                    acc += x * wv;
                }
                acc
            })
            .collect())
    }

    /// Autoregressive sampling. Greedy at temperature 0 (ties to the
    /// lowest index); otherwise a pure function of `seed`. The stop token
    /// is included in the output when emitted.
    pub fn generate(
        &self,
        prefix: Option<&[Vec<f32>]>,
        prompt: &[usize],
        params: &GenParams,
        seed: u64,
    ) -> Result<GenOutput> {
        if params.max_new_tokens == 0 {
            return Err(Error::Generation("max_new_tokens must be >= 1".into()));
        }
        if params.temperature < 0.0 {
            return Err(Error::Generation("temperature must be >= 0".into()));
        }
        let d = self.dim();
        let head_w = self.vocab_head()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut caches: Vec<KvCache> = self
            .blocks
            .iter()
            .map(|_| KvCache::new(self.cfg.max_sequence_length, d))
            .collect();
        let hidden = self.hidden_full(prefix, prompt, Some(&mut caches))?;
        let seq = hidden.len() / d;
        let mut logits =
            kernels::matmul(&hidden[(seq - 1) * d..seq * d], head_w, 1, d, self.cfg.vocab_size);

        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut pos = seq;
        for _ in 0..params.max_new_tokens {
            let (tok, lp) = sample_token(&logits, params.temperature, &mut rng);
            tokens.push(tok);
            logprobs.push(lp);
            if tok == params.stop_token {
                break;
            }
            if pos >= self.cfg.max_sequence_length {
                break;
            }
            logits = self.step(tok, pos, &mut caches)?;
            pos += 1;
        }
        Ok(GenOutput { tokens, logprobs })
    }

    /// One incremental decode step at sequence position `pos`.
    fn step(&self, token: usize, pos: usize, caches: &mut [KvCache]) -> Result<Vec<f32>> {
        let d = self.dim();
        let hd = self.cfg.head_dim();
        let nh = self.cfg.num_heads;
        if token >= self.cfg.vocab_size {
            return Err(Error::Index(format!("token id {token} out of vocab")));
        }
        let head_w = self.vocab_head()?;
        let scale = 1.0 / (hd as f32).sqrt();

        let mut x = self.tok_emb[token * d..(token + 1) * d].to_vec();
        for (xv, &pv) in x.iter_mut().zip(&self.pos_emb[pos * d..(pos + 1) * d]) {
            *xv += pv;
        }

        for (bi, blk) in self.blocks.iter().enumerate() {
            let mut h = x.clone();
            layer_norm_affine(&mut h, d, &blk.ln1_g, &blk.ln1_b);
            let mut q = kernels::matmul(&h, &blk.wq, 1, d, d);
            add_bias_rows(&mut q, &blk.bq);
            let mut k = kernels::matmul(&h, &blk.wk, 1, d, d);
            add_bias_rows(&mut k, &blk.bk);
            let mut v = kernels::matmul(&h, &blk.wv, 1, d, d);
            add_bias_rows(&mut v, &blk.bv);

            let cache = &mut caches[bi];
            let t = cache.len;
            cache.k[t * d..(t + 1) * d].copy_from_slice(&k);
            cache.v[t * d..(t + 1) * d].copy_from_slice(&v);
            cache.len += 1;

            let mut o = vec![0.0f32; d];
            let ctx = cache.len;
            for headi in 0..nh {
                let q_h = &q[headi * hd..(headi + 1) * hd];
                let mut att = vec![0.0f32; ctx];
                for (j, a) in att.iter_mut().enumerate() {
                    let k_j = &cache.k[j * d + headi * hd..j * d + (headi + 1) * hd];
                    let mut acc = 0.0f32;
                    for (qv, kv) in q_h.iter().zip(k_j) {
                        acc += qv * kv;
                    }
                    *a = acc * scale;
                }
                kernels::softmax_rows_inplace(&mut att, ctx);
                let o_h = &mut o[headi * hd..(headi + 1) * hd];
                for (j, &a) in att.iter().enumerate() {
                    let v_j = &cache.v[j * d + headi * hd..j * d + (headi + 1) * hd];
                    for (ov, &vv) in o_h.iter_mut().zip(v_j) {
                        *ov += a * vv;
                    }
                }
            }
            let mut proj = kernels::matmul(&o, &blk.wo, 1, d, d);
            add_bias_rows(&mut proj, &blk.bo);
            for (xv, &pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }

            let mut h2 = x.clone();
            layer_norm_affine(&mut h2, d, &blk.ln2_g, &blk.ln2_b);
            let md = self.cfg.mlp_dim();
            let mut m = kernels::matmul(&h2, &blk.w1, 1, d, md);
            add_bias_rows(&mut m, &blk.b1);
            for vv in m.iter_mut() {
                if *vv < 0.0 {
                    *vv = 0.0;
                }
            }
            let mut m2 = kernels::matmul(&m, &blk.w2, 1, md, d);
            add_bias_rows(&mut m2, &blk.b2);
            for (xv, &mv) in x.iter_mut().zip(&m2) {
                *xv += mv;
            }
        }
        layer_norm_affine(&mut x, d, &self.ln_f_g, &self.ln_f_b);
        Ok(kernels::matmul(&x, head_w, 1, d, self.cfg.vocab_size))
    }
}

struct KvCache {
    k: Vec<f32>,
    v: Vec<f32>,
    len: usize,
}

impl KvCache {
    fn new(max_len: usize, dim: usize) -> Self {
        KvCache {
            k: vec![0.0; max_len * dim],
            v: vec![0.0; max_len * dim],
            len: 0,
        }
    }
}

fn add_bias_rows(x: &mut [f32], bias: &[f32]) {
    let w = bias.len();
    for row in x.chunks_mut(w) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn layer_norm_affine(x: &mut [f32], cols: usize, gain: &[f32], bias: &[f32]) {
    kernels::layer_norm_rows_inplace(x, cols, LN_EPS as f32);
    for row in x.chunks_mut(cols) {
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
}

fn split_head(x: &[f32], seq: usize, d: usize, head: usize, hd: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; seq * hd];
    for r in 0..seq {
        out[r * hd..(r + 1) * hd].copy_from_slice(&x[r * d + head * hd..r * d + (head + 1) * hd]);
    }
    out
}

/// Log-probability of `token` under `softmax(logits / temperature)`;
/// temperature 0 falls back to the untempered distribution.
fn logprob_of(logits: &[f32], token: usize, temperature: f64) -> f32 {
    let mut scaled: Vec<f32> = if temperature > 0.0 {
        logits.iter().map(|&v| v / temperature as f32).collect()
    } else {
        logits.to_vec()
    };
    let n = scaled.len();
    kernels::log_softmax_rows_inplace(&mut scaled, n);
    scaled[token]
}

fn sample_token(logits: &[f32], temperature: f64, rng: &mut ChaCha8Rng) -> (usize, f32) {
    if temperature == 0.0 {
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return (best, logprob_of(logits, best, 0.0));
    }
    let mut scaled: Vec<f32> = logits.iter().map(|&v| v / temperature as f32).collect();
    let n = scaled.len();
    kernels::log_softmax_rows_inplace(&mut scaled, n);
    let u: f64 = rng.gen::<f64>();
    let mut cum = 0.0f64;
    let mut pick = scaled.len() - 1;
    for (i, &lp) in scaled.iter().enumerate() {
        cum += (lp as f64).exp();
        if u < cum {
            pick = i;
            break;
        }
    }
    (pick, scaled[pick])
}
