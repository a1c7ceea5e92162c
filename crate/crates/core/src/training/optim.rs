use crate::model::{Real, Weights};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Weights<F>,
    v: Weights<F>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> Adam<F> {
    pub fn new(like: &Weights<F>) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, weights: &mut Weights<F>, grads: &Weights<F>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - self.beta1), F::lit(1.0 - self.beta2));
        let step = F::lit(lr / c1);
        let inv_c2 = F::lit(1.0 / c2);
        let eps = F::lit(self.eps);
        let g = grads.params();
        for (((w, (_, _, g)), m), v) in weights
            .params_mut()
            .into_iter()
            .zip(g)
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                w[i] -= step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup from `base / warmup` to `base` over the first `warmup`
/// steps, constant afterwards. `step` counts from 0.
pub fn lr_at(step: usize, base: f64, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base
    }
}

/// Rescales `grads` so that its global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut Weights<F>, max_norm: f64) -> f64 {
    let norm = grads.norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        let s = F::lit(max_norm / norm);
        for t in grads.params_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
