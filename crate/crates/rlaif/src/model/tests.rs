use super::graph;
use super::infer::InferModel;
use super::*;
use crate::tensor::{cross_entropy, grad_check_f32_vs_f64, grad_check_f32_vs_f64_sampled, GradFn};
use crate::tokenizer::EOS;
use crate::world;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 48,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 2,
        max_sequence_length: 48,
        visual_feature_dim: 12,
    }
}

fn feats(n: usize, dim: usize, scale: f32) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| (0..dim).map(|j| ((i * 31 + j * 7) % 13) as f32 * 0.1 * scale - 0.5 * scale).collect())
        .collect()
}

fn weight_fingerprint(m: &PolicyModel) -> Vec<f32> {
    m.named_params()
        .iter()
        .map(|(_, t)| t.to_vec().iter().sum::<f32>())
        .collect()
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = tiny_cfg();
    let a = init_model(&cfg, 7).unwrap();
    let b = init_model(&cfg, 7).unwrap();
    assert_eq!(weight_fingerprint(&a), weight_fingerprint(&b));
    let c = init_model(&cfg, 8).unwrap();
    assert_ne!(weight_fingerprint(&a), weight_fingerprint(&c));
}

#[test]
fn init_rejects_bad_head_split() {
    let mut cfg = tiny_cfg();
    cfg.num_heads = 3;
    assert!(matches!(init_model(&cfg, 0), Err(crate::Error::Config(_))));
}

#[test]
fn param_count_matches_analytic_formula_and_desk_budget() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 1).unwrap();
    assert_eq!(m.param_count(), expected_param_count(&cfg));

    let desk = ModelConfig::default();
    let dm = init_model(&desk, 1).unwrap();
    assert_eq!(dm.param_count(), expected_param_count(&desk));
    assert!(dm.param_count() < 5_000_000, "params {}", dm.param_count());
}

#[test]
fn project_visual_zero_features_zero_output() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 3).unwrap();
    let im = InferModel::from_policy(&m);
    let zeros = vec![vec![0.0f32; cfg.visual_feature_dim]; 4];
    let out = im.project_visual(&zeros).unwrap();
    // biases are zero at init, so relu(0) @ W + 0 = 0
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn project_visual_one_row_per_frame() {
    let cfg = ModelConfig::default();
    let m = init_model(&cfg, 3).unwrap();
    let im = InferModel::from_policy(&m);
    let video = world::gen_video(1, 0, 50).unwrap();
    let f = world::render_frame_features(&video, cfg.visual_feature_dim);
    let out = im.project_visual(&f).unwrap();
    assert_eq!(out.len(), 50 * cfg.embed_dim);

    let bad = vec![vec![0.0f32; cfg.visual_feature_dim + 1]; 2];
    assert!(im.project_visual(&bad).is_err());
}

#[test]
fn project_visual_grad_check() {
    struct ProjFn {
        cfg: ModelConfig,
    }
    impl GradFn for ProjFn {
        fn call<T: crate::tensor::Scalar>(
            &self,
            p: &[crate::tensor::Tensor<T>],
        ) -> crate::Result<crate::tensor::Tensor<T>> {
            let m32 = init_model(&self.cfg, 5).unwrap();
            let bb = m32.backbone.convert::<T>();
            Ok(graph::project_visual(&bb, &p[0])?.sum_all())
        }
    }
    let cfg = tiny_cfg();
    let data: Vec<f64> = (0..2 * cfg.visual_feature_dim)
        .map(|i| (i as f64 * 0.7).sin())
        .collect();
    let err = grad_check_f32_vs_f64(
        &ProjFn { cfg: cfg.clone() },
        &[(vec![2, cfg.visual_feature_dim], data)],
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-3, "rel err {err}");
}

#[test]
fn forward_logits_causal_and_deterministic() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 11).unwrap();
    let im = InferModel::from_policy(&m);
    let f = feats(4, cfg.visual_feature_dim, 1.0);
    let tokens = vec![5usize, 9, 14, 3, 8];

    let a = im.forward_logits(Some(&f), &tokens).unwrap();
    let b = im.forward_logits(Some(&f), &tokens).unwrap();
    assert_eq!(a, b, "same inputs must give bit-identical logits");

    // perturb the token at position 3: logits at positions < 3 unchanged
    let mut tokens2 = tokens.clone();
    tokens2[3] = 20;
    let c = im.forward_logits(Some(&f), &tokens2).unwrap();
    for t in 0..3 {
        assert_eq!(a[t], c[t], "position {t} should be unaffected");
    }
    assert_ne!(a[3], c[3]);
}

#[test]
fn forward_logits_empty_tokens_gives_one_row() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 11).unwrap();
    let im = InferModel::from_policy(&m);
    let f = feats(3, cfg.visual_feature_dim, 1.0);
    let rows = im.forward_logits(Some(&f), &[]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].len(), cfg.vocab_size);
    assert!(im.forward_logits(None, &[]).is_err());
}

#[test]
fn forward_rejects_overlong_sequence() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 11).unwrap();
    let im = InferModel::from_policy(&m);
    let tokens = vec![1usize; cfg.max_sequence_length + 1];
    assert!(matches!(
        im.forward_logits(None, &tokens),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn graph_and_infer_paths_agree() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 13).unwrap();
    let im = InferModel::from_policy(&m);
    let f = feats(3, cfg.visual_feature_dim, 1.0);
    let tokens = vec![2usize, 7, 1, 30];

    let flat: Vec<f32> = f.iter().flatten().copied().collect();
    let feats_t = crate::tensor::Tensor::from_vec(&[3, cfg.visual_feature_dim], flat).unwrap();
    let hidden = graph::backbone_hidden(&cfg, &m.backbone, None, Some(&feats_t), &tokens).unwrap();
    let seq = 3 + tokens.len();
    let logits_g = graph::logits_for_rows(&hidden, &m.lm_head, seq - tokens.len(), seq).unwrap();
    let logits_i = im.forward_logits(Some(&f), &tokens).unwrap();

    let gv = logits_g.to_vec();
    for (t, row) in logits_i.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let diff = (v - gv[t * cfg.vocab_size + c]).abs();
            assert!(diff < 1e-5, "t={t} c={c} diff={diff}");
        }
    }
}

#[test]
fn generate_greedy_and_seeded_determinism() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 17).unwrap();
    let im = InferModel::from_policy(&m);
    let f = feats(4, cfg.visual_feature_dim, 1.0);
    let prompt = vec![4usize, 9];

    let g1 = im.generate(Some(&f), &prompt, &GenParams::greedy(8), 0).unwrap();
    let g2 = im.generate(Some(&f), &prompt, &GenParams::greedy(8), 99).unwrap();
    assert_eq!(g1.tokens, g2.tokens, "greedy ignores the seed");

    let s1 = im.generate(Some(&f), &prompt, &GenParams::sampled(1.0, 8), 42).unwrap();
    let s2 = im.generate(Some(&f), &prompt, &GenParams::sampled(1.0, 8), 42).unwrap();
    assert_eq!(s1.tokens, s2.tokens);
    assert_eq!(s1.logprobs, s2.logprobs);

    assert!(im.generate(Some(&f), &prompt, &GenParams::greedy(0), 0).is_err());
}

#[test]
fn generate_logprobs_match_teacher_forced_recompute() {
    let cfg = tiny_cfg();
    let m = init_model(&cfg, 19).unwrap();
    let im = InferModel::from_policy(&m);
    let f = feats(4, cfg.visual_feature_dim, 1.0);
    let prompt = vec![4usize, 9, 22];

    for (temp, seed) in [(1.0, 7u64), (0.7, 8u64)] {
        let gen = im
            .generate(Some(&f), &prompt, &GenParams::sampled(temp, 10), seed)
            .unwrap();
        assert!(!gen.tokens.is_empty());
        let recomputed = im
            .response_logprobs(Some(&f), &prompt, &gen.tokens, temp)
            .unwrap();
        for (a, b) in gen.logprobs.iter().zip(&recomputed) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn lora_is_neutral_at_init_and_merge_matches() {
    let cfg = tiny_cfg();
    let mut m = init_model(&cfg, 23).unwrap();
    let f = feats(3, cfg.visual_feature_dim, 1.0);
    let tokens = vec![1usize, 2, 3];

    let base = InferModel::from_policy(&m).forward_logits(Some(&f), &tokens).unwrap();
    m.apply_lora(&LoraConfig::sft_default(), 31).unwrap();
    let with_fresh = InferModel::from_policy(&m).forward_logits(Some(&f), &tokens).unwrap();
    assert_eq!(base, with_fresh, "fresh adapters must be bit-neutral");

    // one gradient step on the adapters changes outputs
    m.freeze_base();
    let flat: Vec<f32> = f.iter().flatten().copied().collect();
    let feats_t = crate::tensor::Tensor::from_vec(&[3, cfg.visual_feature_dim], flat).unwrap();
    let hidden =
        graph::backbone_hidden(&cfg, &m.backbone, m.lora.as_ref(), Some(&feats_t), &tokens).unwrap();
    let logits = graph::logits_for_rows(&hidden, &m.lm_head, 3, 6).unwrap();
    let loss = cross_entropy(&logits, &[5, 6, 7]).unwrap();
    loss.backward().unwrap();
    let mut opt = crate::optim::Adam::new(m.adapter_params(), crate::optim::AdamConfig::with_lr(0.05));
    opt.step();

    let trained = InferModel::from_policy(&m).forward_logits(Some(&f), &tokens).unwrap();
    assert_ne!(base, trained, "adapter update must change outputs");

    // merged weights reproduce the unmerged forward within tolerance
    let unmerged = trained.clone();
    m.merge_lora().unwrap();
    assert!(m.lora.is_none());
    let merged = InferModel::from_policy(&m).forward_logits(Some(&f), &tokens).unwrap();
    for (ru, rm) in unmerged.iter().zip(&merged) {
        for (a, b) in ru.iter().zip(rm) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn lora_rejects_oversized_rank() {
    let cfg = tiny_cfg();
    let mut m = init_model(&cfg, 23).unwrap();
    let bad = LoraConfig {
        rank: cfg.embed_dim + 1,
        alpha: 8.0,
        targets: vec![LoraTarget::AttnQ],
    };
    assert!(matches!(m.apply_lora(&bad, 0), Err(crate::Error::Config(_))));
}

#[test]
fn reward_deterministic_zero_head_and_padding_invariance() {
    let cfg = tiny_cfg();
    let policy = init_model(&cfg, 29).unwrap();
    let mut rm = RewardModel::from_policy(&policy);
    let f = feats(3, cfg.visual_feature_dim, 1.0);
    let prompt = vec![4usize, 6];
    let resp = vec![9usize, 2, EOS];

    // zero head weights: reward equals the head bias for any input
    rm.head_b.set_data(&[0.625]);
    let im = InferModel::from_reward(&rm);
    assert_eq!(im.reward(Some(&f), &prompt, &resp).unwrap(), 0.625);
    assert_eq!(im.reward(Some(&f), &[7], &[1, EOS]).unwrap(), 0.625);

    // non-degenerate head
    let mut hw = vec![0.0f32; cfg.embed_dim];
    for (i, v) in hw.iter_mut().enumerate() {
        *v = ((i as f32) * 0.1).sin() * 0.2;
    }
    rm.head_w.set_data(&hw);
    let im = InferModel::from_reward(&rm);
    let r1 = im.reward(Some(&f), &prompt, &resp).unwrap();
    let r2 = im.reward(Some(&f), &prompt, &resp).unwrap();
    assert_eq!(r1, r2);

    // padding appended after the final response token leaves the
    // read-out position untouched (causality)
    let mut padded = resp.clone();
    padded.extend([crate::tokenizer::PAD; 4]);
    let vals = im.values(Some(&f), &prompt, &padded).unwrap();
    assert!((vals[resp.len() - 1] - r1).abs() < 1e-6);

    assert!(im.reward(Some(&f), &prompt, &[]).is_err());
}

/// Full transformer loss as a function of the input features: the
/// backward pass traverses every layer to reach them.
#[test]
fn whole_model_loss_grad_check_wrt_inputs() {
    struct LossFn {
        cfg: ModelConfig,
        tokens: Vec<usize>,
        targets: Vec<usize>,
        seed: u64,
    }
    impl GradFn for LossFn {
        fn call<T: crate::tensor::Scalar>(
            &self,
            p: &[crate::tensor::Tensor<T>],
        ) -> crate::Result<crate::tensor::Tensor<T>> {
            let bb = init_model(&self.cfg, self.seed).unwrap().backbone.convert::<T>();
            let lm_head = {
                let m = init_model(&self.cfg, self.seed).unwrap();
                let data: Vec<T> = m.lm_head.to_vec().iter().map(|&v| T::of(v as f64)).collect();
                crate::tensor::Tensor::from_vec(&m.lm_head.shape(), data)?
            };
            let frames = p[0].shape()[0];
            let hidden = graph::backbone_hidden(&self.cfg, &bb, None, Some(&p[0]), &self.tokens)?;
            let seq = frames + self.tokens.len();
            let logits = graph::logits_for_rows(&hidden, &lm_head, seq - self.tokens.len(), seq)?;
            cross_entropy(&logits.slice_rows(0, self.targets.len())?, &self.targets)
        }
    }

    let cfg = tiny_cfg();
    let f = LossFn {
        cfg: cfg.clone(),
        tokens: vec![3, 1, 7],
        targets: vec![1, 7],
        seed: 37,
    };
    let feats: Vec<f64> = (0..2 * cfg.visual_feature_dim)
        .map(|i| (i as f64 * 0.9).cos() * 0.5)
        .collect();
    let err =
        grad_check_f32_vs_f64(&f, &[(vec![2, cfg.visual_feature_dim], feats)], 1e-4).unwrap();
    assert!(err < 1e-3, "rel err {err}");
}

/// Same loss as a function of every weight, entirely in f64 where the
/// finite-difference oracle is sharp.
#[test]
fn whole_model_loss_grad_check_wrt_weights_f64() {
    let cfg = ModelConfig {
        vocab_size: 12,
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        max_sequence_length: 12,
        visual_feature_dim: 4,
    };
    let m = init_model(&cfg, 41).unwrap();
    let mut points: Vec<crate::tensor::Tensor<f64>> = m
        .backbone
        .convert::<f64>()
        .named_params()
        .into_iter()
        .map(|(_, t)| {
            t.set_requires_grad(true);
            t
        })
        .collect();
    let lm64: Vec<f64> = m.lm_head.to_vec().iter().map(|&v| v as f64).collect();
    points.push(crate::tensor::Tensor::param(&m.lm_head.shape(), lm64).unwrap());

    let tokens = vec![3usize, 1, 7, 2];
    let targets = vec![1usize, 7, 2];
    let feats: Vec<f64> = (0..2 * cfg.visual_feature_dim)
        .map(|i| (i as f64 * 0.9).cos() * 0.5)
        .collect();
    let cfg2 = cfg.clone();
    let loss_fn = move |p: &[crate::tensor::Tensor<f64>]| {
        let (bb, used) = backbone_from_slice(&cfg2, p);
        let lm_head = p[used].clone();
        let feats_t =
            crate::tensor::Tensor::from_vec(&[2, cfg2.visual_feature_dim], feats.clone())?;
        let hidden = graph::backbone_hidden(&cfg2, &bb, None, Some(&feats_t), &tokens)?;
        let seq = 2 + tokens.len();
        let logits = graph::logits_for_rows(&hidden, &lm_head, seq - tokens.len(), seq)?;
        cross_entropy(&logits.slice_rows(0, targets.len())?, &targets)
    };

    // Per-component check. Components at ~1e-6 magnitude sit near the
    // finite-difference rounding floor eps*|f|/h, so the bound is looser
    // than the per-primitive 1e-6 checks; a wrong backward formula shows
    // up orders of magnitude above it.
    let err = crate::tensor::grad_check_sampled(&loss_fn, &points, 1e-5, 400, 99).unwrap();
    assert!(err < 5e-4, "rel err {err}");

    // Directional-derivative probes aggregate the full gradient and are
    // insensitive to individual tiny components.
    for p in &points {
        p.zero_grad();
    }
    let loss0 = loss_fn(&points).unwrap();
    loss0.backward().unwrap();
    let grads: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let mut rng = crate::rng::rng_for(7, "dir-probe", 0);
    for probe in 0..8 {
        use rand::Rng;
        let dirs: Vec<Vec<f64>> = points
            .iter()
            .map(|p| (0..p.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let analytic_dd: f64 = grads
            .iter()
            .zip(&dirs)
            .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let h = 1e-6;
        let shift = |sign: f64| {
            for (p, d) in points.iter().zip(&dirs) {
                p.update_data(|data| {
                    for (x, dv) in data.iter_mut().zip(d) {
                        *x += sign * h * dv;
                    }
                });
            }
        };
        shift(1.0);
        let plus = loss_fn(&points).unwrap().item();
        shift(-2.0);
        let minus = loss_fn(&points).unwrap().item();
        shift(1.0);
        let numeric_dd = (plus - minus) / (2.0 * h);
        let rel = (analytic_dd - numeric_dd).abs() / analytic_dd.abs().max(numeric_dd.abs()).max(1e-8);
        assert!(rel < 1e-6, "probe {probe}: dd rel err {rel}");
    }
}
