//! AdamW with decoupled weight decay and per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Encoder parameters are left untouched when false.
    pub train_encoder: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 2e-5,
            lr_head: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            train_encoder: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(store: &ParamStore<F>, config: AdamWConfig) -> Self {
        let zeros = |s: &ParamStore<F>| {
            s.iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let eps = F::of(c.eps);
        let bc1 = F::one() - F::of(c.beta1.powi(t));
        let bc2 = F::one() - F::of(c.beta2.powi(t));
        for (id, p) in store.iter_mut() {
            let lr = match p.group {
                ParamGroup::Encoder if !c.train_encoder => continue,
                ParamGroup::Encoder => F::of(c.lr_encoder),
                ParamGroup::Head => F::of(c.lr_head),
            };
            let decay = F::one() - lr * F::of(c.weight_decay);
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let w = p.value.data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = b1 * *m + (F::one() - b1) * g;
                        *v = b2 * *v + (F::one() - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                None => {
                    // zero gradient: moments still decay
                    for ((w, m), v) in w.iter_mut().zip(m).zip(v) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_vec(1, 2, vec![1.0, -1.0]), ParamGroup::Head);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                lr_head: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        let mut g = Gradients::new(&store);
        g.accumulate(id, &Tensor::from_vec(1, 2, vec![3.0, -0.5]));
        opt.step(&mut store, &g);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_encoder_is_untouched() {
        let mut store = ParamStore::<f32>::new();
        let e = store.add("enc", Tensor::filled(2, 2, 0.5), ParamGroup::Encoder);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                train_encoder: false,
                ..Default::default()
            },
        );
        let mut g = Gradients::new(&store);
        g.accumulate(e, &Tensor::filled(2, 2, 1.0));
        opt.step(&mut store, &g);
        assert_eq!(store.get(e).data(), &[0.5; 4]);
    }
}
