//! Policy / reference / reward networks: a small decoder-only
//! transformer that consumes a projected visual prefix followed by text
//! tokens, with optional low-rank adapters and, for reward models, a
//! scalar head in place of the vocabulary layer.
//!
//! Two forward paths share one set of kernels: [`graph`] builds the
//! autodiff graph for training, [`infer`] runs detached snapshots with a
//! KV cache for generation. `graph` is generic over the scalar type so
//! gradients can be checked against a double-precision referee.

pub mod graph;
pub mod infer;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Weight initialization scale, and the scale for fresh LoRA A matrices.
const INIT_STD: f64 = 0.02;

/// MLP hidden width factor.
pub const MLP_FACTOR: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_sequence_length: usize,
    pub visual_feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // desk defaults: small enough for CPU, big enough to learn the world
        ModelConfig {
            vocab_size: 512,
            embed_dim: 128,
            num_layers: 4,
            num_heads: 4,
            max_sequence_length: 256,
            visual_feature_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("max_sequence_length", self.max_sequence_length),
            ("visual_feature_dim", self.visual_feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * MLP_FACTOR
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoraTarget {
    #[serde(rename = "attn_q")]
    AttnQ,
    #[serde(rename = "attn_v")]
    AttnV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraConfig {
    /// SFT defaults keep the reference alpha/rank ratio of 1.0.
    pub fn sft_default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 8.0,
            targets: vec![LoraTarget::AttnQ, LoraTarget::AttnV],
        }
    }

    /// RL defaults keep the reference alpha/rank ratio of 0.25.
    pub fn rl_default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 2.0,
            targets: vec![LoraTarget::AttnQ, LoraTarget::AttnV],
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("lora.rank must be positive".into()));
        }
        if !(self.alpha > 0.0) || !self.scaling().is_finite() {
            return Err(Error::Config("lora.alpha must be positive and finite".into()));
        }
        if self.rank > cfg.embed_dim {
            return Err(Error::Config(format!(
                "lora.rank {} exceeds target dimension {}",
                self.rank, cfg.embed_dim
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("lora.targets must not be empty".into()));
        }
        Ok(())
    }
}

// ── Weight containers ───────────────────────────────────────────────

/// Per-layer transformer weights. Linear weights are stored `[in x out]`
/// so the forward pass is `x @ W + b`.
pub struct BlockWeights<T: Scalar> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Everything below the output head: embeddings, projection, blocks,
/// final layer norm.
pub struct Backbone<T: Scalar> {
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub proj1_w: Tensor<T>,
    pub proj1_b: Tensor<T>,
    pub proj2_w: Tensor<T>,
    pub proj2_b: Tensor<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub ln_f_g: Tensor<T>,
    pub ln_f_b: Tensor<T>,
}

/// Low-rank adapter pair for one target matrix: `A: [r x in]`,
/// `B: [out x r]`, effective weight `W + (alpha/r) * (B A)^T` in the
/// `[in x out]` storage convention.
pub struct LoraPair<T: Scalar> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
}

pub struct LoraBlock<T: Scalar> {
    pub q: Option<LoraPair<T>>,
    pub v: Option<LoraPair<T>>,
}

pub struct LoraAdapters<T: Scalar> {
    pub cfg: LoraConfig,
    pub blocks: Vec<LoraBlock<T>>,
}

// ── Named parameter walking ─────────────────────────────────────────

fn walk_backbone<T: Scalar>(bb: &Backbone<T>, mut f: impl FnMut(String, &Tensor<T>)) {
    f("tok_emb".into(), &bb.tok_emb);
    f("pos_emb".into(), &bb.pos_emb);
    f("proj1.w".into(), &bb.proj1_w);
    f("proj1.b".into(), &bb.proj1_b);
    f("proj2.w".into(), &bb.proj2_w);
    f("proj2.b".into(), &bb.proj2_b);
    for (i, blk) in bb.blocks.iter().enumerate() {
        for (suffix, t) in [
            ("ln1.g", &blk.ln1_g),
            ("ln1.b", &blk.ln1_b),
            ("wq", &blk.wq),
            ("bq", &blk.bq),
            ("wk", &blk.wk),
            ("bk", &blk.bk),
            ("wv", &blk.wv),
            ("bv", &blk.bv),
            ("wo", &blk.wo),
            ("bo", &blk.bo),
            ("ln2.g", &blk.ln2_g),
            ("ln2.b", &blk.ln2_b),
            ("w1", &blk.w1),
            ("b1", &blk.b1),
            ("w2", &blk.w2),
            ("b2", &blk.b2),
        ] {
            f(format!("blk{i}.{suffix}"), t);
        }
    }
    f("ln_f.g".into(), &bb.ln_f_g);
    f("ln_f.b".into(), &bb.ln_f_b);
}

fn walk_lora<T: Scalar>(lora: &LoraAdapters<T>, mut f: impl FnMut(String, &Tensor<T>)) {
    for (i, blk) in lora.blocks.iter().enumerate() {
        if let Some(p) = &blk.q {
            f(format!("lora.blk{i}.q.a"), &p.a);
            f(format!("lora.blk{i}.q.b"), &p.b);
        }
        if let Some(p) = &blk.v {
            f(format!("lora.blk{i}.v.a"), &p.a);
            f(format!("lora.blk{i}.v.b"), &p.b);
        }
    }
}

impl<T: Scalar> Backbone<T> {
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        walk_backbone(self, |n, t| out.push((n, t.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        walk_backbone(self, |_, t| n += t.numel());
        n
    }

    pub fn set_requires_grad(&self, flag: bool) {
        walk_backbone(self, |_, t| t.set_requires_grad(flag));
    }

    /// Deep copy with a precision change; used by the gradient referee.
    pub fn convert<U: Scalar>(&self) -> Backbone<U> {
        let conv = |t: &Tensor<T>| {
            let data: Vec<U> = t.data().iter().map(|&v| U::of(v.f64())).collect();
            let out = Tensor::from_vec(&t.shape(), data).expect("same shape");
            out.set_requires_grad(t.requires_grad());
            out
        };
        Backbone {
            tok_emb: conv(&self.tok_emb),
            pos_emb: conv(&self.pos_emb),
            proj1_w: conv(&self.proj1_w),
            proj1_b: conv(&self.proj1_b),
            proj2_w: conv(&self.proj2_w),
            proj2_b: conv(&self.proj2_b),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    ln1_g: conv(&b.ln1_g),
                    ln1_b: conv(&b.ln1_b),
                    wq: conv(&b.wq),
                    bq: conv(&b.bq),
                    wk: conv(&b.wk),
                    bk: conv(&b.bk),
                    wv: conv(&b.wv),
                    bv: conv(&b.bv),
                    wo: conv(&b.wo),
                    bo: conv(&b.bo),
                    ln2_g: conv(&b.ln2_g),
                    ln2_b: conv(&b.ln2_b),
                    w1: conv(&b.w1),
                    b1: conv(&b.b1),
                    w2: conv(&b.w2),
                    b2: conv(&b.b2),
                })
                .collect(),
            ln_f_g: conv(&self.ln_f_g),
            ln_f_b: conv(&self.ln_f_b),
        }
    }
}

impl<T: Scalar> LoraAdapters<T> {
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        walk_lora(self, |n, t| out.push((n, t.clone())));
        out
    }

    pub fn set_requires_grad(&self, flag: bool) {
        walk_lora(self, |_, t| t.set_requires_grad(flag));
    }
}

// ── Initialization ──────────────────────────────────────────────────

fn gauss_tensor<T: Scalar>(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
    let mut rng = rng_for(seed, name, 0);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            T::of(g * std)
        })
        .collect();
    let t = Tensor::from_vec(shape, data).expect("gauss shape");
    t.set_requires_grad(true);
    t
}

fn const_tensor<T: Scalar>(shape: &[usize], v: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let t = Tensor::from_vec(shape, vec![T::of(v); n]).expect("const shape");
    t.set_requires_grad(true);
    t
}

fn init_backbone<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Backbone<T> {
    let d = cfg.embed_dim;
    let blocks = (0..cfg.num_layers)
        .map(|i| {
            let p = |s: &str| format!("blk{i}.{s}");
            BlockWeights {
                ln1_g: const_tensor(&[d], 1.0),
                ln1_b: const_tensor(&[d], 0.0),
                wq: gauss_tensor(seed, &p("wq"), &[d, d], INIT_STD),
                bq: const_tensor(&[d], 0.0),
                wk: gauss_tensor(seed, &p("wk"), &[d, d], INIT_STD),
                bk: const_tensor(&[d], 0.0),
                wv: gauss_tensor(seed, &p("wv"), &[d, d], INIT_STD),
                bv: const_tensor(&[d], 0.0),
                wo: gauss_tensor(seed, &p("wo"), &[d, d], INIT_STD),
                bo: const_tensor(&[d], 0.0),
                ln2_g: const_tensor(&[d], 1.0),
                ln2_b: const_tensor(&[d], 0.0),
                w1: gauss_tensor(seed, &p("w1"), &[d, cfg.mlp_dim()], INIT_STD),
                b1: const_tensor(&[cfg.mlp_dim()], 0.0),
                w2: gauss_tensor(seed, &p("w2"), &[cfg.mlp_dim(), d], INIT_STD),
                b2: const_tensor(&[d], 0.0),
            }
        })
        .collect();
    Backbone {
        tok_emb: gauss_tensor(seed, "tok_emb", &[cfg.vocab_size, d], INIT_STD),
        pos_emb: gauss_tensor(seed, "pos_emb", &[cfg.max_sequence_length, d], INIT_STD),
        proj1_w: gauss_tensor(seed, "proj1.w", &[cfg.visual_feature_dim, d], INIT_STD),
        proj1_b: const_tensor(&[d], 0.0),
        proj2_w: gauss_tensor(seed, "proj2.w", &[d, d], INIT_STD),
        proj2_b: const_tensor(&[d], 0.0),
        blocks,
        ln_f_g: const_tensor(&[d], 1.0),
        ln_f_b: const_tensor(&[d], 0.0),
    }
}

// ── Policy model ────────────────────────────────────────────────────

pub struct PolicyModel {
    pub cfg: ModelConfig,
    pub backbone: Backbone<f32>,
    pub lm_head: Tensor<f32>,
    pub lora: Option<LoraAdapters<f32>>,
}

/// Deterministic model initialization: two calls with the same
/// `(config, seed)` produce bit-identical weights.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<PolicyModel> {
    cfg.validate()?;
    Ok(PolicyModel {
        cfg: cfg.clone(),
        backbone: init_backbone(cfg, seed),
        lm_head: gauss_tensor(seed, "lm_head", &[cfg.embed_dim, cfg.vocab_size], INIT_STD),
        lora: None,
    })
}

fn init_lora_adapters<T: Scalar>(
    cfg: &ModelConfig,
    lora_cfg: &LoraConfig,
    seed: u64,
) -> LoraAdapters<T> {
    let d = cfg.embed_dim;
    let r = lora_cfg.rank;
    let blocks = (0..cfg.num_layers)
        .map(|i| {
            let pair = |tag: &str| LoraPair {
                a: gauss_tensor(seed, &format!("lora.blk{i}.{tag}.a"), &[r, d], INIT_STD),
                b: const_tensor(&[d, r], 0.0),
            };
            LoraBlock {
                q: lora_cfg.targets.contains(&LoraTarget::AttnQ).then(|| pair("q")),
                v: lora_cfg.targets.contains(&LoraTarget::AttnV).then(|| pair("v")),
            }
        })
        .collect();
    LoraAdapters {
        cfg: lora_cfg.clone(),
        blocks,
    }
}

impl PolicyModel {
    /// Attaches fresh adapters: `A` seeded small-variance, `B` zero, so
    /// the forward output is unchanged until training moves `B`.
    pub fn apply_lora(&mut self, cfg: &LoraConfig, seed: u64) -> Result<()> {
        cfg.validate(&self.cfg)?;
        self.lora = Some(init_lora_adapters(&self.cfg, cfg, seed));
        Ok(())
    }

    /// Folds `(alpha/r) * (B A)^T` into the base weights and drops the
    /// adapters. Outputs change only by float rounding.
    pub fn merge_lora(&mut self) -> Result<()> {
        let lora = match self.lora.take() {
            Some(l) => l,
            None => return Ok(()),
        };
        let scale = lora.cfg.scaling() as f32;
        for (blk, ad) in self.backbone.blocks.iter_mut().zip(&lora.blocks) {
            if let Some(pair) = &ad.q {
                merge_pair(&blk.wq, pair, scale);
            }
            if let Some(pair) = &ad.v {
                merge_pair(&blk.wv, pair, scale);
            }
        }
        Ok(())
    }

    /// All parameters, including adapters and the vocabulary head.
    pub fn named_params(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.backbone.named_params();
        out.push(("lm_head".into(), self.lm_head.clone()));
        if let Some(l) = &self.lora {
            out.extend(l.named_params());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn adapter_params(&self) -> Vec<(String, Tensor<f32>)> {
        self.lora.as_ref().map(|l| l.named_params()).unwrap_or_default()
    }

    /// Marks only the adapters trainable; the base stays frozen.
    pub fn freeze_base(&self) {
        self.backbone.set_requires_grad(false);
        self.lm_head.set_requires_grad(false);
        if let Some(l) = &self.lora {
            l.set_requires_grad(true);
        }
    }

    pub fn unfreeze_all(&self) {
        self.backbone.set_requires_grad(true);
        self.lm_head.set_requires_grad(true);
        if let Some(l) = &self.lora {
            l.set_requires_grad(true);
        }
    }
}

fn merge_pair(w: &Tensor<f32>, pair: &LoraPair<f32>, scale: f32) {
    // W[in x out] += scale * A^T B^T where A: [r x in], B: [out x r]
    let (r, d_in) = (pair.a.shape()[0], pair.a.shape()[1]);
    let d_out = pair.b.shape()[0];
    let a = pair.a.to_vec();
    let b = pair.b.to_vec();
    w.update_data(|wd| {
        for i in 0..d_in {
            for o in 0..d_out {
                let mut acc = 0.0f32;
                for k in 0..r {
                    acc += a[k * d_in + i] * b[o * r + k];
                }
                wd[i * d_out + o] += scale * acc;
            }
        }
    });
}

// ── Reward model ────────────────────────────────────────────────────

/// Same backbone as the policy with the vocabulary layer removed and a
/// scalar head over the final hidden state. Also used as the value
/// network during PPO.
pub struct RewardModel {
    pub cfg: ModelConfig,
    pub backbone: Backbone<f32>,
    pub head_w: Tensor<f32>,
    pub head_b: Tensor<f32>,
    pub lora: Option<LoraAdapters<f32>>,
}

impl RewardModel {
    /// Builds a reward model from a policy: vocabulary layer dropped,
    /// scalar head initialized to zero (the indifference point).
    pub fn from_policy(policy: &PolicyModel) -> RewardModel {
        let backbone = policy.backbone.convert::<f32>();
        let head_w = const_tensor(&[policy.cfg.embed_dim, 1], 0.0);
        let head_b = const_tensor(&[1], 0.0);
        RewardModel {
            cfg: policy.cfg.clone(),
            backbone,
            head_w,
            head_b,
            lora: None,
        }
    }

    pub fn apply_lora(&mut self, cfg: &LoraConfig, seed: u64) -> Result<()> {
        cfg.validate(&self.cfg)?;
        self.lora = Some(init_lora_adapters(&self.cfg, cfg, seed));
        Ok(())
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self.backbone.named_params();
        out.push(("reward_head.w".into(), self.head_w.clone()));
        out.push(("reward_head.b".into(), self.head_b.clone()));
        if let Some(l) = &self.lora {
            out.extend(l.named_params());
        }
        out
    }

    /// Adapter and head parameters: the trainable set during reward
    /// model training (the backbone stays frozen).
    pub fn trainable_params(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = self
            .lora
            .as_ref()
            .map(|l| l.named_params())
            .unwrap_or_default();
        out.push(("reward_head.w".into(), self.head_w.clone()));
        out.push(("reward_head.b".into(), self.head_b.clone()));
        out
    }

    pub fn freeze_backbone(&self) {
        self.backbone.set_requires_grad(false);
        if let Some(l) = &self.lora {
            l.set_requires_grad(true);
        }
        self.head_w.set_requires_grad(true);
        self.head_b.set_requires_grad(true);
    }
}

/// Rebuilds a backbone from tensors laid out in `named_params` order.
/// Used by gradient checks that treat all weights as probe points.
pub fn backbone_from_slice<T: Scalar>(
    cfg: &ModelConfig,
    params: &[Tensor<T>],
) -> (Backbone<T>, usize) {
    let mut it = params.iter().cloned();
    let mut next = || it.next().expect("enough params for backbone");
    let tok_emb = next();
    let pos_emb = next();
    let proj1_w = next();
    let proj1_b = next();
    let proj2_w = next();
    let proj2_b = next();
    let blocks = (0..cfg.num_layers)
        .map(|_| BlockWeights {
            ln1_g: next(),
            ln1_b: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln2_g: next(),
            ln2_b: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        })
        .collect();
    let ln_f_g = next();
    let ln_f_b = next();
    let used = 8 + 16 * cfg.num_layers;
    (
        Backbone {
            tok_emb,
            pos_emb,
            proj1_w,
            proj1_b,
            proj2_w,
            proj2_b,
            blocks,
            ln_f_g,
            ln_f_b,
        },
        used,
    )
}

/// Analytic parameter count for a config; the `init_model` result must
/// match this.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim;
    let m = cfg.mlp_dim();
    let per_block = 2 * d          // ln1
        + 3 * (d * d + d)          // q,k,v
        + d * d + d                // o
        + 2 * d                    // ln2
        + d * m + m                // w1,b1
        + m * d + d; // w2,b2
    cfg.vocab_size * d             // tok_emb
        + cfg.max_sequence_length * d // pos_emb
        + cfg.visual_feature_dim * d + d // proj1
        + d * d + d                // proj2
        + cfg.num_layers * per_block
        + 2 * d                    // ln_f
        + d * cfg.vocab_size // lm_head
}

/// Sampling parameters for [`infer::InferModel::generate`].
#[derive(Clone, Debug)]
pub struct GenParams {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub stop_token: usize,
}

impl GenParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        GenParams {
            temperature: 0.0,
            max_new_tokens,
            stop_token: crate::tokenizer::EOS,
        }
    }

    pub fn sampled(temperature: f64, max_new_tokens: usize) -> Self {
        GenParams {
            temperature,
            max_new_tokens,
            stop_token: crate::tokenizer::EOS,
        }
    }
}

#[cfg(test)]
mod tests;
