//! Gradient-descent optimizer with adaptive first/second moment
//! estimates, linear warm-up to a constant rate, and optional global
//! gradient-norm clipping.

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    /// Global L2 clip threshold; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            max_grad_norm: 0.0,
        }
    }
}

struct Slot {
    tensor: Tensor<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

pub struct Adam {
    cfg: AdamConfig,
    slots: Vec<Slot>,
    step_count: usize,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor<f32>)>, cfg: AdamConfig) -> Self {
        let slots = params
            .into_iter()
            .map(|(_, tensor)| {
                let n = tensor.numel();
                Slot {
                    tensor,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            })
            .collect();
        Adam {
            cfg,
            slots,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.cfg.warmup_steps > 0 && step <= self.cfg.warmup_steps {
            self.cfg.lr * step as f64 / self.cfg.warmup_steps as f64
        } else {
            self.cfg.lr
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self) {
        self.step_count += 1;
        let t = self.step_count;

        let clip_scale = if self.cfg.max_grad_norm > 0.0 {
            let mut sq = 0.0f64;
            for slot in &self.slots {
                if let Some(g) = slot.tensor.grad() {
                    for v in g {
                        sq += (v as f64) * (v as f64);
                    }
                }
            }
            let norm = sq.sqrt();
            if norm > self.cfg.max_grad_norm {
                self.cfg.max_grad_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };

        let lr = self.lr_at(t);
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);

        for slot in &mut self.slots {
            let grad = match slot.tensor.grad() {
                Some(g) => g,
                None => continue,
            };
            let m_buf = &mut slot.m;
            let v_buf = &mut slot.v;
            slot.tensor.update_data(|data| {
                for i in 0..data.len() {
                    let g = grad[i] as f64 * clip_scale;
                    let m = b1 * m_buf[i] as f64 + (1.0 - b1) * g;
                    let v = b2 * v_buf[i] as f64 + (1.0 - b2) * g * g;
                    m_buf[i] = m as f32;
                    v_buf[i] = v as f32;
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    data[i] -= (lr * m_hat / (v_hat.sqrt() + self.cfg.eps)) as f32;
                }
            });
            slot.tensor.zero_grad();
        }
    }

    pub fn zero_grads(&self) {
        for slot in &self.slots {
            slot.tensor.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let x = Tensor::<f32>::param(&[1], vec![5.0]).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], AdamConfig::with_lr(0.1));
        for _ in 0..200 {
            x.zero_grad();
            let loss = x.mul(&x).unwrap();
            loss.backward().unwrap();
            opt.step();
        }
        assert!(x.to_vec()[0].abs() < 0.1);
    }

    #[test]
    fn warmup_scales_first_steps() {
        let cfg = AdamConfig {
            warmup_steps: 10,
            ..AdamConfig::with_lr(1.0)
        };
        let x = Tensor::<f32>::param(&[1], vec![0.0]).unwrap();
        let opt = Adam::new(vec![("x".into(), x)], cfg);
        assert!((opt.lr_at(1) - 0.1).abs() < 1e-12);
        assert!((opt.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((opt.lr_at(50) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_without_grads_stay_put() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], AdamConfig::with_lr(0.5));
        opt.step();
        assert_eq!(x.to_vec(), vec![1.0, 2.0]);
    }
}
